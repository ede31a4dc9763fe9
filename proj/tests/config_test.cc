// Config parsing, canonicalization, and digesting.

#include "dlmlab/config.hpp"

#include <gtest/gtest.h>

#include <filesystem>

#include "dlmlab/common.hpp"

namespace dlmlab {
namespace {

nlohmann::json parse_toml(const std::string& text) {
    return parse_config_text(text, "test.toml");
}

TEST(TomlParse, ScalarsTablesAndComments) {
    const auto j = parse_toml(R"(# header comment
title = "ab\"c\\d\n"   # trailing comment
count = 42
neg = -7
rate = 0.25
sci = 3e-4
on = true
off = false
tags = ["a", "b"]
mixed = [1, 2, 3]
empty = []

[inner]
x = 1

[[rows]]
y = 1

[[rows]]
y = 2
)");
    EXPECT_EQ(j.at("title").get<std::string>(), "ab\"c\\d\n");
    EXPECT_EQ(j.at("count").get<int64_t>(), 42);
    EXPECT_EQ(j.at("neg").get<int64_t>(), -7);
    EXPECT_DOUBLE_EQ(j.at("rate").get<double>(), 0.25);
    EXPECT_DOUBLE_EQ(j.at("sci").get<double>(), 3e-4);
    EXPECT_TRUE(j.at("on").get<bool>());
    EXPECT_FALSE(j.at("off").get<bool>());
    EXPECT_EQ(j.at("tags"), nlohmann::json({"a", "b"}));
    EXPECT_EQ(j.at("mixed"), nlohmann::json({1, 2, 3}));
    EXPECT_TRUE(j.at("empty").is_array());
    EXPECT_TRUE(j.at("empty").empty());
    EXPECT_EQ(j.at("inner").at("x").get<int64_t>(), 1);
    ASSERT_EQ(j.at("rows").size(), 2u);
    EXPECT_EQ(j.at("rows")[1].at("y").get<int64_t>(), 2);
}

TEST(TomlParse, IntegerStaysIntegerFloatStaysFloat) {
    const auto j = parse_toml("a = 3\nb = 3.0\n");
    EXPECT_TRUE(j.at("a").is_number_integer());
    EXPECT_TRUE(j.at("b").is_number_float());
}

TEST(TomlParse, RejectsUnsupportedSyntaxLoudly) {
    // each rejected construct names the line it failed on
    EXPECT_THROW(parse_toml("a.b = 1\n"), config_error);
    EXPECT_THROW(parse_toml("[a.b]\nx = 1\n"), config_error);
    EXPECT_THROW(parse_toml("a = [[1, 2], [3]]\n"), config_error);
    EXPECT_THROW(parse_toml("a = \"unterminated\n"), config_error);
    EXPECT_THROW(parse_toml("a = \"bad \\q escape\"\n"), config_error);
    EXPECT_THROW(parse_toml("a 1\n"), config_error);
    EXPECT_THROW(parse_toml("a = \n"), config_error);
    EXPECT_THROW(parse_toml("a = 1 b = 2\n"), config_error);
    EXPECT_THROW(parse_toml("a = 1\na = 2\n"), config_error);
    EXPECT_THROW(parse_toml("[t]\nx = 1\n[t]\ny = 2\n"), config_error);
    EXPECT_THROW(parse_toml("a = nonsense\n"), config_error);
    EXPECT_THROW(parse_toml("a = [1, 2\n"), config_error);
}

TEST(TomlParse, ErrorsCarryTheLineNumber) {
    try {
        parse_toml("ok = 1\nalso_ok = 2\nbroken = zzz\n");
        FAIL() << "expected config_error";
    } catch (const config_error& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
}

TEST(TomlParse, TableAndArrayOfTablesNameCollision) {
    EXPECT_THROW(parse_toml("[t]\nx = 1\n\n[[t]]\ny = 2\n"), config_error);
}

TEST(ConfigText, JsonAndTomlAgree) {
    const auto from_toml = parse_toml(R"(
name = "run"
[corpus]
doc_count = 8
rate = 0.5
[[attack]]
budget = 4
)");
    const auto from_json = parse_config_text(
        R"({"name": "run", "corpus": {"doc_count": 8, "rate": 0.5},
            "attack": [{"budget": 4}]})",
        "test.json");
    EXPECT_EQ(from_toml, from_json);
    EXPECT_EQ(canonical_config_dump(from_toml), canonical_config_dump(from_json));
    EXPECT_EQ(config_digest_hex(from_toml), config_digest_hex(from_json));
}

TEST(ConfigText, JsonRootMustBeObject) {
    EXPECT_THROW(parse_config_text("[1, 2]", "x.json"), config_error);
    EXPECT_THROW(parse_config_text("{broken", "x.json"), config_error);
}

TEST(ConfigText, LoadConfigFilePicksSyntaxBySuffix) {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "dlmlab_config_test").string();
    fs::create_directories(dir);
    write_file(dir + "/a.toml", "x = 1\n");
    write_file(dir + "/a.json", "{\"x\": 1}");
    EXPECT_EQ(load_config_file(dir + "/a.toml"), load_config_file(dir + "/a.json"));
    EXPECT_THROW(load_config_file(dir + "/missing.toml"), error);
}

TEST(Canonical, EmitParseRoundtripPreservesValueAndDigest) {
    const auto j = parse_toml(R"(
top = "scalar"
flag = true
lr = 3e-4
[corpus]
doc_count = 16
email_rate = 0.75
label = "a \"quoted\" name"
[run]
seeds = [1, 2, 3]
[[train]]
epochs = 10
lr = 0.001
[[train]]
epochs = 5
)");
    const std::string toml = emit_canonical_toml(j);
    const auto reparsed = parse_config_text(toml, "roundtrip.toml");
    EXPECT_EQ(reparsed, j);
    EXPECT_EQ(config_digest_hex(reparsed), config_digest_hex(j));
    // emitting again from the reparsed value is byte-stable
    EXPECT_EQ(emit_canonical_toml(reparsed), toml);
}

TEST(Canonical, EmitRejectsDeepNesting) {
    const auto j = nlohmann::json::parse(R"({"t": {"deep": {"x": 1}}})");
    EXPECT_THROW(emit_canonical_toml(j), error);
    const auto arr = nlohmann::json::parse(R"({"t": [{"deep": [{"x": 1}]}]})");
    EXPECT_THROW(emit_canonical_toml(arr), error);
}

TEST(Digest, SeparatesDifferentConfigs) {
    const auto a = parse_toml("x = 1\n");
    const auto b = parse_toml("x = 2\n");
    const auto c = parse_toml("y = 1\n");
    EXPECT_NE(config_digest_hex(a), config_digest_hex(b));
    EXPECT_NE(config_digest_hex(a), config_digest_hex(c));
    EXPECT_EQ(config_digest_hex(a), config_digest_hex(parse_toml("x = 1\n")));
    // digest covers the value, not the source text: key order is irrelevant
    EXPECT_EQ(config_digest_hex(parse_toml("a = 1\nb = 2\n")),
              config_digest_hex(parse_toml("b = 2\na = 1\n")));
    // 0.5 parses float, 5 parses integer; types are part of the value
    EXPECT_NE(config_digest_hex(parse_toml("x = 1\n")),
              config_digest_hex(parse_toml("x = 1.0\n")));
}

TEST(Digest, HexIsSixteenLowercaseHexChars) {
    const std::string h = config_digest_hex(parse_toml("x = 1\n"));
    ASSERT_EQ(h.size(), 16u);
    EXPECT_EQ(h.find_first_not_of("0123456789abcdef"), std::string::npos);
}

}  // namespace
}  // namespace dlmlab
