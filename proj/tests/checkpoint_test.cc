#include "dlmlab/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "dlmlab/model.hpp"

namespace dlmlab {
namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/dlmlab_ckpt_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

ModelConfig tiny_config() {
    ModelConfig c;
    c.layers = 1;
    c.dim = 8;
    c.heads = 2;
    c.ffn = 16;
    c.vocab = VOCAB_SIZE;
    c.max_seq = 16;
    return c;
}

TEST(ConfigJson, RoundTripPreservesEveryField) {
    ModelConfig c = tiny_config();
    c.attention_mode = AttentionMode::causal;
    ModelConfig d = config_from_json(config_to_json(c));
    EXPECT_EQ(d.layers, c.layers);
    EXPECT_EQ(d.dim, c.dim);
    EXPECT_EQ(d.heads, c.heads);
    EXPECT_EQ(d.ffn, c.ffn);
    EXPECT_EQ(d.vocab, c.vocab);
    EXPECT_EQ(d.max_seq, c.max_seq);
    EXPECT_EQ(d.attention_mode, c.attention_mode);
}

TEST(ConfigJson, DigestSeparatesDifferentConfigs) {
    ModelConfig a = tiny_config();
    ModelConfig b = tiny_config();
    b.ffn = 32;
    EXPECT_NE(config_digest(a), config_digest(b));
    EXPECT_EQ(config_digest(a), config_digest(tiny_config()));
}

TEST(Checkpoint, RoundTripIsBitExactInFloat) {
    TempFile f("roundtrip.bin");
    auto params = init_model<float>(tiny_config(), 42);
    save_checkpoint(f.path, params);
    auto loaded = load_checkpoint<float>(f.path, tiny_config());
    auto a = params.named_params(), b = loaded.named_params();
    ASSERT_EQ(a.size(), b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].first, b[i].first);
        ASSERT_EQ(a[i].second.shape(), b[i].second.shape());
        EXPECT_EQ(a[i].second.data(), b[i].second.data()) << a[i].first;
    }
}

TEST(Checkpoint, ConfigDigestMismatchRejected) {
    TempFile f("digest.bin");
    auto params = init_model<float>(tiny_config(), 42);
    save_checkpoint(f.path, params);
    ModelConfig other = tiny_config();
    other.ffn = 32;
    try {
        load_checkpoint<float>(f.path, other);
        FAIL() << "expected digest mismatch error";
    } catch (const error& e) {
        EXPECT_NE(std::string(e.what()).find("digest"), std::string::npos);
    }
}

TEST(Checkpoint, GarbageFileRejected) {
    TempFile f("garbage.bin");
    std::ofstream(f.path) << "this is not a checkpoint";
    EXPECT_THROW(load_checkpoint<float>(f.path, tiny_config()), error);
}

TEST(Checkpoint, TruncatedFileRejected) {
    TempFile f("trunc.bin");
    auto params = init_model<float>(tiny_config(), 42);
    save_checkpoint(f.path, params);
    std::ifstream is(f.path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    is.close();
    std::ofstream(f.path, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    EXPECT_THROW(load_checkpoint<float>(f.path, tiny_config()), error);
}

TEST(Checkpoint, AttachedAdapterRefusesToSave) {
    TempFile f("lora.bin");
    auto params = init_model<float>(tiny_config(), 42);
    attach_lora(params, 2, 4.0, 7);
    EXPECT_THROW(save_checkpoint(f.path, params), error);
    merge_lora(params);
    save_checkpoint(f.path, params);  // fine once folded
    auto loaded = load_checkpoint<float>(f.path, tiny_config());
    EXPECT_FALSE(loaded.lora.has_value());
}

TEST(Checkpoint, MissingFileErrorNamesPath) {
    try {
        load_checkpoint<float>("/tmp/dlmlab_ckpt_nonexistent.bin", tiny_config());
        FAIL() << "expected open error";
    } catch (const error& e) {
        EXPECT_NE(std::string(e.what()).find("nonexistent"), std::string::npos);
    }
}

}  // namespace
}  // namespace dlmlab
