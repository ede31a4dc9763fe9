#pragma once

// Checkpoint format (little-endian):
//   magic   8 bytes  "DLMLABCK"
//   version u32      currently 1
//   digest  u64      FNV-1a of the canonical model-config JSON
//   count   u32      number of parameter blobs
// then per parameter:
//   name    u32 length + bytes
//   rank    u32
//   dims    u64 each
//   values  f32 each, row-major
// Adapters are never written; callers fold them first (merge_lora).

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "dlmlab/common.hpp"
#include "dlmlab/model.hpp"

#include "json.hpp"

namespace dlmlab {

inline constexpr char CHECKPOINT_MAGIC[8] = {'D', 'L', 'M', 'L', 'A', 'B', 'C', 'K'};
inline constexpr uint32_t CHECKPOINT_VERSION = 1;

inline nlohmann::json config_to_json(const ModelConfig& c) {
    return nlohmann::json{{"layers", c.layers},   {"dim", c.dim},
                          {"heads", c.heads},     {"ffn", c.ffn},
                          {"vocab", c.vocab},     {"max_seq", c.max_seq},
                          {"attention_mode", attention_mode_name(c.attention_mode)}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.layers = j.at("layers").get<int64_t>();
    c.dim = j.at("dim").get<int64_t>();
    c.heads = j.at("heads").get<int64_t>();
    c.ffn = j.at("ffn").get<int64_t>();
    c.vocab = j.at("vocab").get<int64_t>();
    c.max_seq = j.at("max_seq").get<int64_t>();
    c.attention_mode = parse_attention_mode(j.at("attention_mode").get<std::string>());
    c.validate();
    return c;
}

// nlohmann serializes objects with sorted keys, so dump() is canonical
inline uint64_t config_digest(const ModelConfig& c) {
    return fnv1a64(config_to_json(c).dump());
}

template <class Real>
void save_checkpoint(const std::string& path, ModelParams<Real>& params) {
    require(!params.lora, "save_checkpoint: merge the adapter before saving");
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "save_checkpoint: cannot open ", path);
    os.write(CHECKPOINT_MAGIC, 8);
    write_u32(os, CHECKPOINT_VERSION);
    write_u64(os, config_digest(params.config));
    auto named = params.named_params();
    write_u32(os, static_cast<uint32_t>(named.size()));
    for (auto& [name, t] : named) {
        write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<uint32_t>(t.rank()));
        for (int64_t d = 0; d < t.rank(); ++d) write_u64(os, static_cast<uint64_t>(t.dim(d)));
        for (Real v : t.data()) write_f32(os, static_cast<float>(v));
    }
    require(os.good(), "save_checkpoint: write failed for ", path);
}

template <class Real>
ModelParams<Real> load_checkpoint(const std::string& path, const ModelConfig& config) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), "load_checkpoint: cannot open ", path);
    char magic[8];
    is.read(magic, 8);
    require(is.good() && std::equal(magic, magic + 8, CHECKPOINT_MAGIC),
            "load_checkpoint: ", path, " is not a checkpoint file");
    const uint32_t version = read_u32(is);
    require(version == CHECKPOINT_VERSION, "load_checkpoint: unsupported version ", version);
    const uint64_t digest = read_u64(is);
    require(digest == config_digest(config), "load_checkpoint: config digest mismatch (file ",
            hex64(digest), ", expected ", hex64(config_digest(config)), ")");

    struct Blob {
        Shape shape;
        std::vector<float> values;
    };
    std::map<std::string, Blob> blobs;
    const uint32_t count = read_u32(is);
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        require(is.good(), "load_checkpoint: truncated name in ", path);
        Blob b;
        const uint32_t rank = read_u32(is);
        int64_t numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            b.shape.push_back(static_cast<int64_t>(read_u64(is)));
            numel *= b.shape.back();
        }
        b.values.resize(static_cast<size_t>(numel));
        for (auto& v : b.values) v = read_f32(is);
        require(blobs.emplace(name, std::move(b)).second,
                "load_checkpoint: duplicate parameter \"", name, "\"");
    }

    ModelParams<Real> params = init_model<Real>(config, 0);
    auto named = params.named_params();
    require(named.size() == blobs.size(), "load_checkpoint: expected ", named.size(),
            " parameters, file has ", blobs.size());
    for (auto& [name, t] : named) {
        auto it = blobs.find(name);
        require(it != blobs.end(), "load_checkpoint: missing parameter \"", name, "\"");
        require(it->second.shape == t.shape(), "load_checkpoint: shape mismatch for \"", name,
                "\": file ", shape_str(it->second.shape), ", model ", shape_str(t.shape()));
        auto& dst = t.mutable_data();
        for (size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Real>(it->second.values[i]);
    }
    return params;
}

}  // namespace dlmlab
