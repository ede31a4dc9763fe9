// dlmlab: experiment driver for the masked-diffusion extraction lab.
//
// Subcommands: gen-corpus, train, attack, sweep, trajectory, compare,
// report, verify. Every config-driven subcommand accepts --config FILE
// (TOML or JSON) plus repeatable --set key=value overrides applied to the
// parsed config before canonicalization/digesting.
//
// Exit codes: 0 success, 1 config error, 2 runtime failure, 3 acceptance
// check failure (verify only).

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dlmlab/acceptance.hpp"
#include "dlmlab/config.hpp"
#include "dlmlab/corpus.hpp"
#include "dlmlab/harness.hpp"
#include "dlmlab/metrics.hpp"

namespace {

using dlmlab::config_fail;
using dlmlab::config_require;

// Apply one "path=value" override onto the parsed config. The path is
// dot-separated; numeric components index arrays ("train.0.lr=0.001").
// The value is parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& root, const std::string& expr) {
    const auto eq = expr.find('=');
    config_require(eq != std::string::npos && eq > 0, "override '", expr,
                   "' is not of the form key=value");
    const std::string path = expr.substr(0, eq);
    const std::string raw = expr.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;  // unquoted strings come through here

    std::vector<std::string> parts;
    size_t from = 0;
    while (true) {
        const auto dot = path.find('.', from);
        parts.push_back(path.substr(from, dot - from));
        if (dot == std::string::npos) break;
        from = dot + 1;
    }
    nlohmann::json* node = &root;
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
        const std::string& p = parts[i];
        config_require(!p.empty(), "override '", expr, "' has an empty path component");
        if (node->is_array()) {
            size_t idx = 0;
            try {
                idx = static_cast<size_t>(std::stoul(p));
            } catch (const std::exception&) {
                config_fail("override '", expr, "': '", p, "' must index an array");
            }
            config_require(idx < node->size(), "override '", expr, "': index ", idx,
                           " is out of range (array has ", node->size(), " entries)");
            node = &(*node)[idx];
        } else {
            if (!node->is_object()) config_fail("override '", expr, "': '", p,
                                                "' does not address a table");
            node = &(*node)[p];  // creates intermediate tables as needed
        }
    }
    const std::string& leaf = parts.back();
    config_require(!leaf.empty(), "override '", expr, "' has an empty key");
    if (node->is_array()) {
        size_t idx = 0;
        try {
            idx = static_cast<size_t>(std::stoul(leaf));
        } catch (const std::exception&) {
            config_fail("override '", expr, "': '", leaf, "' must index an array");
        }
        config_require(idx < node->size(), "override '", expr, "': index ", idx,
                       " is out of range (array has ", node->size(), " entries)");
        (*node)[idx] = value;
    } else {
        config_require(node->is_object(), "override '", expr, "' addresses a scalar");
        (*node)[leaf] = value;
    }
}

nlohmann::json load_with_overrides(const std::string& config_path,
                                   const std::vector<std::string>& sets) {
    config_require(!config_path.empty(), "--config is required");
    nlohmann::json root = dlmlab::load_config_file(config_path);
    for (const auto& s : sets) apply_override(root, s);
    return root;
}

void print_cells(const dlmlab::ExperimentResult& res, std::ostream& os) {
    os << "run " << res.run_dir << " (digest " << res.digest << ")\n";
    for (const auto& c : res.cells) {
        os << "  " << c.cell << " seed " << c.seed;
        const auto& r = c.report;
        auto put = [&os](const char* name, const std::optional<double>& v) {
            if (v) os << "  " << name << "=" << dlmlab::fmt_float(*v);
        };
        put("asr", r.asr);
        put("ter", r.ter);
        put("recall", r.recall);
        if (r.precision)
            os << "  precision=" << dlmlab::fmt_float(*r.precision);
        else if (!r.precision_defined)
            os << "  precision=undefined";
        for (const auto& [k, v] : r.recall_k)
            os << "  recall_" << k << "=" << dlmlab::fmt_float(v);
        os << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"masked-diffusion extraction lab"};
    app.require_subcommand(1);

    std::string config_path, out_path, run_dir, cell, kind = "docs";
    std::vector<std::string> sets, report_paths;
    std::vector<int> only;
    uint64_t seed_arg = 0;
    bool have_seed = false;
    std::string work_dir = "acceptance_runs";

    auto add_config = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "TOML or JSON config file")->required();
        cmd->add_option("--set", sets,
                        "override a config key, e.g. --set model.dim=128 or "
                        "--set train.0.lr=0.001 (repeatable)");
    };

    auto* gen = app.add_subcommand("gen-corpus", "generate a corpus and write it as JSONL");
    add_config(gen);
    gen->add_option("--out", out_path, "output JSONL path")->required();
    gen->add_option("--kind", kind, "docs (from [corpus]) or chat (from [chat])")
        ->check(CLI::IsMember({"docs", "chat"}));

    auto* train = app.add_subcommand("train", "run the training stages, no attacks");
    add_config(train);

    auto* attack = app.add_subcommand("attack", "full run: corpus, stages, attack cells");
    add_config(attack);

    auto* sweep = app.add_subcommand("sweep", "expand [sweep] over one decode parameter");
    add_config(sweep);

    auto* traj = app.add_subcommand(
        "trajectory", "print step,recall for one cell's per_step metric as CSV");
    add_config(traj);
    traj->add_option("--cell", cell, "attack cell name")->required();
    traj->add_option("--seed", seed_arg, "seed of the cell (default: first in [run])");

    auto* compare =
        app.add_subcommand("compare", "side-by-side metric table with deltas, as CSV");
    compare->add_option("reports", report_paths, "report JSON files")->required();

    auto* report = app.add_subcommand("report", "rebuild summary.csv from a run's reports");
    report->add_option("--run", run_dir, "run directory (runs/<digest>)")->required();

    auto* verify = app.add_subcommand("verify", "run the acceptance suite");
    verify->add_option("--work-dir", work_dir, "scratch directory for acceptance runs");
    verify->add_option("--only", only, "criterion ids to run (default: all)");

    CLI11_PARSE(app, argc, argv);
    have_seed = traj->count("--seed") > 0;

    try {
        if (*gen) {
            // only the relevant section is read, so a snippet config works
            const nlohmann::json root = load_with_overrides(config_path, sets);
            if (kind == "chat") {
                config_require(root.contains("chat"), "gen-corpus --kind chat needs [chat]");
                const auto spec = dlmlab::chat_spec_from_json(root.at("chat"));
                dlmlab::write_file(out_path,
                                   dlmlab::chats_to_jsonl(dlmlab::gen_chat_corpus(spec)));
            } else {
                config_require(root.contains("corpus"), "gen-corpus needs [corpus]");
                const auto spec = dlmlab::corpus_spec_from_json(root.at("corpus"));
                dlmlab::save_corpus(dlmlab::gen_corpus(spec), out_path);
            }
            std::cout << out_path << "\n";
        } else if (*train || *attack) {
            nlohmann::json root = load_with_overrides(config_path, sets);
            auto cfg = dlmlab::experiment_from_json(root);
            if (*train) cfg.attacks.clear();  // canonical stays: same digest as a full run
            const auto res = dlmlab::run_experiment(cfg);
            print_cells(res, std::cout);
            if (res.any_stage_diverged) {
                std::cerr << "error: a training stage diverged\n";
                return 2;
            }
        } else if (*sweep) {
            nlohmann::json root = load_with_overrides(config_path, sets);
            config_require(root.contains("sweep"), "sweep needs a [sweep] section");
            const auto spec = dlmlab::sweep_from_json(root.at("sweep"));
            const auto cfg = dlmlab::experiment_from_json(root);
            const auto res = dlmlab::run_sweep(cfg, spec);
            print_cells(res.run, std::cout);
            std::cout << "sweep summary: " << res.summary_path << "\n";
        } else if (*traj) {
            const nlohmann::json root = load_with_overrides(config_path, sets);
            const auto cfg = dlmlab::experiment_from_json(root);
            const uint64_t seed = have_seed ? seed_arg : cfg.seeds.at(0);
            const std::string digest = dlmlab::config_digest_hex(cfg.canonical);
            const std::string path = dlmlab::strcat_all(cfg.output_dir, "/", digest,
                                                        "/reports/", cell, "_seed", seed,
                                                        ".json");
            config_require(std::filesystem::exists(path), "no report at ", path,
                           " (run `dlmlab attack` first)");
            const auto rep = dlmlab::MetricsReport::from_json(
                nlohmann::json::parse(dlmlab::read_file(path)));
            config_require(!rep.per_step.empty(), "cell ", cell,
                           " has no per_step metric; add \"per_step\" to its metrics");
            std::cout << "step,recall\n";
            for (size_t i = 0; i < rep.per_step.size(); ++i)
                std::cout << i + 1 << "," << dlmlab::fmt_float(rep.per_step[i]) << "\n";
        } else if (*compare) {
            std::vector<dlmlab::MetricsReport> reports;
            for (const auto& p : report_paths)
                reports.push_back(dlmlab::MetricsReport::from_json(
                    nlohmann::json::parse(dlmlab::read_file(p))));
            std::cout << dlmlab::compare_reports(reports).to_csv();
        } else if (*report) {
            const std::string csv = dlmlab::summary_from_reports(run_dir);
            dlmlab::write_file(run_dir + "/summary.csv", csv);
            std::cout << csv;
        } else if (*verify) {
            dlmlab::AcceptanceOptions opt;
            opt.work_dir = work_dir;
            opt.only = only;
            opt.progress = &std::cout;
            const auto results = dlmlab::run_acceptance(opt);
            if (!dlmlab::acceptance_passed(results)) return 3;
        }
    } catch (const dlmlab::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
