#pragma once

#include <algorithm>
#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dlmlab/common.hpp"
#include "dlmlab/pii.hpp"
#include "dlmlab/rng.hpp"
#include "dlmlab/vocab.hpp"

namespace dlmlab {

// ----------------------------- types -----------------------------

struct Document {
    TokenSeq tokens;
    std::vector<PiiSpan> spans;  // token offsets == byte offsets (byte vocab)
};

struct ChatRecord {
    TokenSeq prompt;
    TokenSeq response;
    TokenSeq templated;  // BOS USER_OPEN prompt USER_CLOSE ASSIST_OPEN response ASSIST_CLOSE EOS
};

struct Corpus {
    std::vector<Document> docs;
    std::vector<ChatRecord> chats;
};

struct CorpusSpec {
    int64_t doc_count = 200;
    int64_t doc_len_min = 64;  // exact byte lengths drawn uniformly from [min, max]
    int64_t doc_len_max = 96;
    double email_rate = 1.0;  // probability a document carries one planted email
    double phone_rate = 0.0;  // ditto for one phone number
    // optional byte window [plant_lo, plant_hi) every planted span must fall
    // inside; -1/-1 disables the constraint
    int64_t plant_lo = -1;
    int64_t plant_hi = -1;
    uint64_t seed = 1;
};

struct ChatSpec {
    int64_t pair_count = 100;
    int64_t max_prompt_len = 64;
    int64_t max_response_len = 64;
    double email_rate = 1.0;  // planted email in the response
    uint64_t seed = 1;
};

struct Snippet {
    TokenSeq tokens;
    std::vector<PiiSpan> pii_spans;  // rebased to snippet offsets
    int64_t source_doc = 0;
    int64_t offset = 0;
};

// Window-eligibility constraints for sample_snippets. A window is never
// eligible if a document span straddles its boundary.
struct SnippetFilter {
    // when non-empty (length n, 1 = masked): every span must sit entirely on
    // masked positions and at least one span must be present
    std::vector<char> masked_region;
    bool require_pii = false;          // at least one span fully inside the window
    bool forbid_pii_at_start = false;  // first span must not begin at offset 0
};

// ----------------------------- pools -----------------------------

namespace pools {

inline const std::vector<std::string>& words() {
    static const std::vector<std::string> v{
        "report", "update", "review", "ledger", "budget", "meeting", "notes", "draft",
        "summary", "metrics", "volume", "signal", "branch", "office", "vendor", "invoice",
        "orders", "stock", "market", "survey", "filing", "policy", "permit", "charter",
        "agenda", "minutes", "roster", "payroll", "audit", "basin", "pipeline", "turbine",
        "storage", "transfer", "credit", "margin", "quota", "target", "forecast", "outage",
        "repair", "upgrade", "rollout", "backlog", "ticket", "queue", "batch", "stream",
        "harbor", "depot", "plant", "grid", "field", "sector", "region", "zone",
        "north", "south", "east", "west", "upper", "lower", "central", "coastal",
        "quarterly", "annual", "weekly", "daily", "interim", "final", "initial", "revised",
        "pending", "approved", "deferred", "closed", "open", "urgent", "routine", "standby",
        "copper", "granite", "cedar", "willow", "maple", "juniper", "basalt", "quartz",
        "amber", "cobalt", "crimson", "ivory", "olive", "russet", "sable", "teal",
        "anchor", "beacon", "compass", "derrick", "engine", "flange", "gasket", "hopper",
        "intake", "jetty", "keel", "lantern", "manifold", "nozzle", "outlet", "piston",
        "heron", "osprey", "plover", "curlew", "gannet", "petrel", "skimmer", "tern",
        "alloy", "bearing", "casing", "damper", "fitting", "gauge", "hoist", "impeller",
        "journal", "kiln", "louver", "mill", "notch", "orifice", "pulley", "rotor",
        "seal", "tappet", "union", "valve", "weir", "yoke", "zinc", "arbor",
        "bracket", "clamp", "dowel", "eyelet", "ferrule", "grommet", "hinge", "insert",
        "jig", "knurl", "lathe", "mandrel", "nipple", "oiler", "pawl", "quill",
        "rivet", "shim", "trunnion", "upright", "vane", "washer", "expander", "yield",
        "carton", "pallet", "crate", "drum", "satchel", "binder", "folder", "sleeve",
        "docket", "manifest", "waybill", "receipt", "voucher", "stub", "coupon", "tally",
        "canal", "levee", "sluice", "lock", "berth", "quay", "wharf", "mole",
        "tundra", "mesa", "butte", "arroyo", "gulch", "hollow", "ridge", "saddle"};
    return v;
}

inline const std::vector<std::string>& first_names() {
    static const std::vector<std::string> v{
        "ada",    "bruno",  "clara",  "dmitri", "elena",  "felix",  "greta",  "hugo",
        "irene",  "jonas",  "karin",  "lars",   "mara",   "nils",   "odette", "piotr",
        "quincy", "rosa",   "stefan", "tilda",  "ulrich", "vera",   "wendel", "xenia",
        "yusuf",  "zelda",  "amos",   "beata",  "casimir", "dagny",  "edvard", "freya",
        "gideon", "hanna",  "ivo",    "jutta",  "kai",    "lieke",  "marek",  "nadia",
        "otto",   "paloma", "ragnar", "silje",  "tomas",  "uma",    "viktor", "wanda"};
    return v;
}

inline const std::vector<std::string>& last_names() {
    static const std::vector<std::string> v{
        "abbot",   "becker",  "calder",  "draper",  "eaton",   "farrow", "gable",  "holt",
        "ibsen",   "jarvis",  "keller",  "lindell", "mercer",  "norwood", "ostrom", "paxton",
        "quill",   "rowan",   "sutter",  "thorne",  "unger",   "vance",  "welles", "yates",
        "zander",  "barlow",  "crane",   "dalton",  "ellert",  "fenwick", "garrow", "hollis"};
    return v;
}

inline const std::vector<std::string>& domains() {
    static const std::vector<std::string> v{
        "oakmail.net",    "bluepeak.org",   "stonegate.com", "riverpost.net",
        "ironbark.org",   "seawall.com",    "highfield.net", "graymarsh.org",
        "coppermine.com", "northquay.net",  "eastbank.org",  "millrace.com",
        "saltfork.net",   "drybrook.org",   "kilnhouse.com", "lowgate.net",
        "redshale.org",   "paleharbor.com", "wrenfield.net", "glasswork.org",
        "tinridge.com",   "mossvale.net",   "fernhollow.org", "larkspur.com",
        "zb.net",         "qv.org",         "wk.com",        "xr.net",
        "ty.org",         "pm.com",         "gd.net",        "hs.org"};
    return v;
}

}  // namespace pools

// ----------------------------- text assembly -----------------------------

namespace detail_corpus {

// exactly `len` bytes of space-separated pool words (last word may be cut)
inline std::string filler(Rng& rng, int64_t len) {
    if (len <= 0) return "";
    const auto& pool = pools::words();
    std::string out;
    while (static_cast<int64_t>(out.size()) < len) {
        if (!out.empty()) out.push_back(' ');
        out += pool[static_cast<size_t>(rng.randint(pool.size()))];
    }
    out.resize(static_cast<size_t>(len));
    if (out.back() == ' ') out.back() = 'x';
    return out;
}

// Surface drawn until it fits max_len (shortest pool combination is 8 bytes).
inline int64_t min_email_len() {
    static const int64_t v = [] {
        size_t name = SIZE_MAX, dom = SIZE_MAX;
        for (const auto& s : pools::first_names()) name = std::min(name, s.size());
        for (const auto& s : pools::domains()) dom = std::min(dom, s.size());
        return static_cast<int64_t>(name + 1 + dom);
    }();
    return v;
}

inline std::string make_email(Rng& rng, int64_t max_len = 1 << 20) {
    require(max_len >= min_email_len(), "make_email: need at least ", min_email_len(),
            " bytes, have ", max_len);
    const auto& fn = pools::first_names();
    const auto& ln = pools::last_names();
    const auto& dom = pools::domains();
    for (int attempt = 0; attempt < 256; ++attempt) {
        std::string local = fn[static_cast<size_t>(rng.randint(fn.size()))];
        if (rng.uniform01() < 0.5) {
            local += ".";
            local += ln[static_cast<size_t>(rng.randint(ln.size()))];
        }
        std::string s = local + "@" + dom[static_cast<size_t>(rng.randint(dom.size()))];
        if (static_cast<int64_t>(s.size()) <= max_len) return s;
    }
    fail("make_email: cannot draw an address of at most ", max_len, " bytes");
}

inline std::string make_phone(Rng& rng, int64_t max_len = 1 << 20) {
    require(max_len >= 12, "make_phone: need at least 12 bytes, have ", max_len);
    auto digits = [&rng](int count, bool lead_nonzero) {
        std::string s;
        for (int i = 0; i < count; ++i) {
            int lo = (i == 0 && lead_nonzero) ? 2 : 0;
            s.push_back(static_cast<char>('0' + lo + static_cast<int>(rng.randint(
                                                         static_cast<uint64_t>(10 - lo)))));
        }
        return s;
    };
    const std::string area = digits(3, true), mid = digits(3, false), tail = digits(4, false);
    if (max_len >= 14 && rng.uniform01() < 0.5) return "(" + area + ") " + mid + "-" + tail;
    return area + "-" + mid + "-" + tail;
}

struct Phrase {
    std::string pre, post;
};

inline const std::vector<Phrase>& email_phrases() {
    static const std::vector<Phrase> v{
        {"contact ", " for details"}, {"mail ", " before friday"}, {"send notes to ", " today"},
        {"reach ", " with updates"},  {"ask ", " about this"},
    };
    return v;
}

inline const std::vector<Phrase>& phone_phrases() {
    static const std::vector<Phrase> v{
        {"call ", " for details"},   {"dial ", " before noon"}, {"the desk line is ", " now"},
        {"phone ", " with updates"}, {"ring ", " about this"},
    };
    return v;
}

}  // namespace detail_corpus

// ----------------------------- generation -----------------------------

// One document, fully determined by its own rng stream. Planted entities are
// wrapped in carrier phrases and padded with filler to the exact target
// length; when a plant window is set, every span lands inside it.
inline Document gen_document(const CorpusSpec& spec, Rng& rng) {
    const int64_t len = spec.doc_len_min +
                        static_cast<int64_t>(rng.randint(static_cast<uint64_t>(
                            spec.doc_len_max - spec.doc_len_min + 1)));

    const int64_t window_lo = spec.plant_lo >= 0 ? spec.plant_lo : 0;
    const int64_t window_hi = spec.plant_hi >= 0 ? std::min(spec.plant_hi, len) : len;
    const bool windowed = spec.plant_lo >= 0 || spec.plant_hi >= 0;

    struct Plant {
        std::string type, surface;
        detail_corpus::Phrase phrase;
        int64_t min_surface;  // smallest drawable surface of this type
    };
    std::vector<Plant> plants;
    const bool want_email = rng.uniform01() < spec.email_rate;
    const bool want_phone = rng.uniform01() < spec.phone_rate;
    if (want_email) {
        auto& phrases = detail_corpus::email_phrases();
        plants.push_back({"email", "",
                          phrases[static_cast<size_t>(rng.randint(phrases.size()))],
                          detail_corpus::min_email_len()});
    }
    if (want_phone) {
        auto& phrases = detail_corpus::phone_phrases();
        plants.push_back({"phone", "",
                          phrases[static_cast<size_t>(rng.randint(phrases.size()))], 12});
    }
    // Draw surfaces left to right under exact feasibility budgets: assume every
    // span sits at its leftmost legal start and reserve the minimum surface for
    // plants not drawn yet. Spans must land inside the window; carrier phrases
    // and filler only have to fit in the document.
    int64_t min_cursor = 0;
    for (size_t pi = 0; pi < plants.size(); ++pi) {
        auto& p = plants[pi];
        const int64_t pre_len = static_cast<int64_t>(p.phrase.pre.size());
        const int64_t post_len = static_cast<int64_t>(p.phrase.post.size());
        const int64_t min_start = std::max(min_cursor + pre_len, window_lo);
        int64_t tail_doc = 0;     // bytes later plants need before end of document
        int64_t tail_window = 0;  // bytes later plants need before end of window
        for (size_t pj = pi + 1; pj < plants.size(); ++pj) {
            const auto& q = plants[pj];
            tail_doc += static_cast<int64_t>(q.phrase.pre.size()) + q.min_surface +
                        static_cast<int64_t>(q.phrase.post.size());
            tail_window += static_cast<int64_t>(q.phrase.pre.size()) + q.min_surface;
            if (pj + 1 < plants.size())
                tail_window += static_cast<int64_t>(q.phrase.post.size());
        }
        if (pi + 1 < plants.size()) tail_window += post_len;
        int64_t budget = len - min_start - post_len - tail_doc;
        if (windowed) budget = std::min(budget, window_hi - min_start - tail_window);
        require(budget >= p.min_surface, "gen_document: a ", len,
                "-byte document cannot carry its planted ", p.type,
                " (carrier phrases and the plant window leave ", budget,
                " bytes, need at least ", p.min_surface, ")");
        p.surface = p.type == "email" ? detail_corpus::make_email(rng, budget)
                                      : detail_corpus::make_phone(rng, budget);
        min_cursor = min_start + static_cast<int64_t>(p.surface.size()) + post_len;
    }

    Document doc;
    std::string text;
    std::vector<PiiSpan> spans;
    int64_t cursor = 0;  // next free byte
    for (size_t pi = 0; pi < plants.size(); ++pi) {
        const auto& p = plants[pi];
        const int64_t span_len = static_cast<int64_t>(p.surface.size());
        const int64_t pre_len = static_cast<int64_t>(p.phrase.pre.size());
        const int64_t post_len = static_cast<int64_t>(p.phrase.post.size());
        // room the remaining spans and their phrases still need, against the
        // end of the document and against the end of the plant window
        int64_t tail_doc = 0, tail_window = 0;
        for (size_t pj = pi + 1; pj < plants.size(); ++pj) {
            const auto& q = plants[pj];
            tail_doc += static_cast<int64_t>(q.phrase.pre.size() + q.surface.size() +
                                             q.phrase.post.size());
            tail_window += static_cast<int64_t>(q.phrase.pre.size() + q.surface.size());
            if (pj + 1 < plants.size())
                tail_window += static_cast<int64_t>(q.phrase.post.size());
        }
        if (pi + 1 < plants.size()) tail_window += post_len;
        const int64_t lo = std::max(window_lo, cursor + pre_len);
        const int64_t hi = std::min(window_hi - span_len - (windowed ? tail_window : 0),
                                    len - span_len - post_len - tail_doc);
        require(hi >= lo, "gen_document: cannot place ", p.type, " of ", span_len,
                " bytes inside window [", window_lo, ",", window_hi, ") of a ", len,
                "-byte document");
        const int64_t start = lo + static_cast<int64_t>(rng.randint(static_cast<uint64_t>(hi - lo + 1)));
        text += detail_corpus::filler(rng, start - pre_len - cursor);
        text += p.phrase.pre;
        text += p.surface;
        text += p.phrase.post;
        spans.push_back(PiiSpan{start, start + span_len, p.type, p.surface});
        cursor = static_cast<int64_t>(text.size());
    }
    text += detail_corpus::filler(rng, len - cursor);
    // filler never touches the spans; keep phrases separated from filler by
    // their own leading/trailing words, so recognizers see clean boundaries
    doc.tokens = encode(text);
    doc.spans = std::move(spans);
    return doc;
}

inline Corpus gen_corpus(const CorpusSpec& spec) {
    require(spec.doc_count > 0, "gen_corpus: doc_count must be positive, got ", spec.doc_count);
    require(spec.doc_len_min > 0 && spec.doc_len_max >= spec.doc_len_min,
            "gen_corpus: bad length range [", spec.doc_len_min, ",", spec.doc_len_max, "]");
    require(spec.email_rate >= 0 && spec.email_rate <= 1, "gen_corpus: email_rate ",
            spec.email_rate, " outside [0,1]");
    require(spec.phone_rate >= 0 && spec.phone_rate <= 1, "gen_corpus: phone_rate ",
            spec.phone_rate, " outside [0,1]");
    Corpus c;
    c.docs.reserve(static_cast<size_t>(spec.doc_count));
    for (int64_t i = 0; i < spec.doc_count; ++i) {
        Rng rng(derive_seed(spec.seed, "doc", static_cast<uint64_t>(i)));
        c.docs.push_back(gen_document(spec, rng));
    }
    return c;
}

inline ChatRecord make_chat_record(TokenSeq prompt, TokenSeq response) {
    ChatRecord r;
    r.templated.reserve(prompt.size() + response.size() + 6);
    r.templated.push_back(BOS_ID);
    r.templated.push_back(USER_OPEN_ID);
    r.templated.insert(r.templated.end(), prompt.begin(), prompt.end());
    r.templated.push_back(USER_CLOSE_ID);
    r.templated.push_back(ASSIST_OPEN_ID);
    r.templated.insert(r.templated.end(), response.begin(), response.end());
    r.templated.push_back(ASSIST_CLOSE_ID);
    r.templated.push_back(EOS_ID);
    r.prompt = std::move(prompt);
    r.response = std::move(response);
    return r;
}

// Prompt/response pairs with distinct (name, topic) combinations; responses
// optionally carry a planted email.
inline std::vector<ChatRecord> gen_chat_corpus(const ChatSpec& spec) {
    require(spec.pair_count > 0, "gen_chat_corpus: pair_count must be positive");
    const auto& names = pools::first_names();
    const auto& topics = pools::words();
    const size_t combos = names.size() * topics.size();
    require(static_cast<size_t>(spec.pair_count) <= combos,
            "gen_chat_corpus: pair_count ", spec.pair_count, " exceeds ", combos,
            " distinct prompts");
    Rng pick_rng(derive_seed(spec.seed, "chat-combos"));
    auto picks = pick_rng.sample_without_replacement(combos, static_cast<size_t>(spec.pair_count));
    // shuffle so record order is not sorted by combo index
    pick_rng.shuffle(picks);

    std::vector<ChatRecord> out;
    out.reserve(static_cast<size_t>(spec.pair_count));
    for (int64_t i = 0; i < spec.pair_count; ++i) {
        Rng rng(derive_seed(spec.seed, "chat", static_cast<uint64_t>(i)));
        const size_t combo = picks[static_cast<size_t>(i)];
        const std::string& name = names[combo % names.size()];
        const std::string& topic = topics[combo / names.size()];
        std::string prompt = "who handles the " + topic + " desk for " + name + "?";
        std::string response;
        if (rng.uniform01() < spec.email_rate) {
            response = name + " does. reach them at " + detail_corpus::make_email(rng) + ".";
        } else {
            const auto& w = pools::words();
            response = name + " does. see the " + w[static_cast<size_t>(rng.randint(w.size()))] +
                       " " + w[static_cast<size_t>(rng.randint(w.size()))] + ".";
        }
        require(static_cast<int64_t>(prompt.size()) <= spec.max_prompt_len,
                "gen_chat_corpus: prompt of ", prompt.size(), " bytes exceeds max ",
                spec.max_prompt_len);
        require(static_cast<int64_t>(response.size()) <= spec.max_response_len,
                "gen_chat_corpus: response of ", response.size(), " bytes exceeds max ",
                spec.max_response_len);
        out.push_back(make_chat_record(encode(prompt), encode(response)));
    }
    return out;
}

// ----------------------------- snippets -----------------------------

inline std::vector<Snippet> sample_snippets(const Corpus& corpus, int64_t n,
                                            const SnippetFilter& filter, int64_t count,
                                            uint64_t seed) {
    require(!corpus.docs.empty(), "sample_snippets: empty corpus");
    require(n > 0, "sample_snippets: n must be positive");
    require(filter.masked_region.empty() ||
                static_cast<int64_t>(filter.masked_region.size()) == n,
            "sample_snippets: masked_region length ", filter.masked_region.size(),
            " does not match n=", n);

    struct Window {
        int64_t doc, offset;
        std::vector<PiiSpan> spans;
    };
    std::vector<Window> eligible;
    for (size_t d = 0; d < corpus.docs.size(); ++d) {
        const auto& doc = corpus.docs[d];
        const int64_t len = static_cast<int64_t>(doc.tokens.size());
        for (int64_t o = 0; o + n <= len; ++o) {
            bool straddles = false;
            std::vector<PiiSpan> inside;
            for (const auto& s : doc.spans) {
                if (s.end <= o || s.start >= o + n) continue;  // fully outside
                if (s.start < o || s.end > o + n) {
                    straddles = true;  // cut by the window edge
                    break;
                }
                PiiSpan rebased = s;
                rebased.start -= o;
                rebased.end -= o;
                inside.push_back(std::move(rebased));
            }
            if (straddles) continue;
            if ((filter.require_pii || !filter.masked_region.empty()) && inside.empty()) continue;
            if (!filter.masked_region.empty()) {
                bool ok = true;
                for (const auto& s : inside) {
                    for (int64_t p = s.start; p < s.end; ++p) {
                        if (!filter.masked_region[static_cast<size_t>(p)]) {
                            ok = false;
                            break;
                        }
                    }
                    if (!ok) break;
                }
                if (!ok) continue;
            }
            if (filter.forbid_pii_at_start && !inside.empty() && inside.front().start == 0)
                continue;
            eligible.push_back(Window{static_cast<int64_t>(d), o, std::move(inside)});
        }
    }

    require(count <= static_cast<int64_t>(eligible.size()), "sample_snippets: requested ", count,
            " snippets but only ", eligible.size(), " eligible windows of length ", n, " exist");

    Rng rng(derive_seed(seed, "snippets"));
    auto picks = rng.sample_without_replacement(eligible.size(), static_cast<size_t>(count));
    std::vector<Snippet> out;
    out.reserve(static_cast<size_t>(count));
    for (size_t p : picks) {
        const auto& w = eligible[p];
        const auto& doc = corpus.docs[static_cast<size_t>(w.doc)];
        Snippet s;
        s.tokens.assign(doc.tokens.begin() + w.offset, doc.tokens.begin() + w.offset + n);
        s.pii_spans = w.spans;
        s.source_doc = w.doc;
        s.offset = w.offset;
        out.push_back(std::move(s));
    }
    return out;
}

// ----------------------------- redaction -----------------------------

// MASK out exactly the PII-span positions; the redaction threat model's input.
inline std::pair<TokenSeq, std::vector<char>> redact(const Snippet& snippet) {
    require(!snippet.pii_spans.empty(), "redact: snippet has no PII spans");
    TokenSeq redacted = snippet.tokens;
    std::vector<char> mask(snippet.tokens.size(), 0);
    for (const auto& s : snippet.pii_spans) {
        require(s.start >= 0 && s.end <= static_cast<int64_t>(snippet.tokens.size()) &&
                    s.start < s.end,
                "redact: span [", s.start, ",", s.end, ") out of bounds for snippet of ",
                snippet.tokens.size(), " tokens");
        for (int64_t p = s.start; p < s.end; ++p) {
            redacted[static_cast<size_t>(p)] = MASK_ID;
            mask[static_cast<size_t>(p)] = 1;
        }
    }
    return {std::move(redacted), std::move(mask)};
}

// ----------------------------- ingest / save -----------------------------

inline Corpus ingest(const std::string& path, const std::string& format) {
    require(format == "plain" || format == "jsonl", "ingest: unknown format '", format,
            "' (expected plain or jsonl)");
    const std::string contents = read_file(path);
    Corpus corpus;
    int64_t line_no = 0;
    std::istringstream is(contents);
    std::string line;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (format == "plain") {
            Document doc;
            doc.tokens = encode(line);
            doc.spans = find_pii_spans(line);
            corpus.docs.push_back(std::move(doc));
            continue;
        }
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            fail("ingest: ", path, " line ", line_no, ": invalid JSON: ", e.what());
        }
        if (!rec.is_object()) {
            fail("ingest: ", path, " line ", line_no, ": expected a JSON object");
        }
        if (rec.contains("prompt") || rec.contains("response")) {
            if (!rec.contains("prompt") || !rec["prompt"].is_string() ||
                !rec.contains("response") || !rec["response"].is_string()) {
                fail("ingest: ", path, " line ", line_no,
                     ": chat record needs string fields prompt and response");
            }
            corpus.chats.push_back(make_chat_record(
                encode(rec["prompt"].get<std::string>()),
                encode(rec["response"].get<std::string>())));
        } else if (rec.contains("text") && rec["text"].is_string()) {
            const std::string text = rec["text"].get<std::string>();
            Document doc;
            doc.tokens = encode(text);
            doc.spans = find_pii_spans(text);  // spans recomputed, stored ones ignored
            corpus.docs.push_back(std::move(doc));
        } else {
            fail("ingest: ", path, " line ", line_no, ": record needs a string field text");
        }
    }
    return corpus;
}

inline std::string corpus_to_jsonl(const Corpus& corpus) {
    std::string out;
    for (const auto& doc : corpus.docs) {
        nlohmann::json spans = nlohmann::json::array();
        for (const auto& s : doc.spans) {
            spans.push_back(nlohmann::json::array({s.start, s.end, s.type}));
        }
        nlohmann::json rec{{"text", decode(doc.tokens)}, {"spans", spans}};
        out += rec.dump();
        out += "\n";
    }
    return out;
}

inline std::string chats_to_jsonl(const std::vector<ChatRecord>& chats) {
    std::string out;
    for (const auto& c : chats) {
        nlohmann::json rec{{"prompt", decode(c.prompt)}, {"response", decode(c.response)}};
        out += rec.dump();
        out += "\n";
    }
    return out;
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
    write_file(path, corpus_to_jsonl(corpus));
}

inline void save_chats(const std::vector<ChatRecord>& chats, const std::string& path) {
    write_file(path, chats_to_jsonl(chats));
}

}  // namespace dlmlab
