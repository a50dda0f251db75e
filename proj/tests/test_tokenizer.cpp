#include <random>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "tabsem/tokenizer.hpp"
#include "test_util.hpp"

using namespace tabsem;
using testutil::fixture;

namespace {

std::string join(const TokenSeq& s) { return s.prefix(s.size()); }

std::string random_text(std::mt19937& rng) {
  static const std::vector<std::string> atoms = {"a", "Z", "9", " ", "  ", "\t", "\n", "±", "東", "🙂", "(", ")", "-",
                                                 "é", "e\xCC\x81", "0.42", "\xC2\xA0", "\xFF", "'s", "\r\n"};
  std::string s;
  const int n = std::uniform_int_distribution<int>(0, 24)(rng);
  for (int i = 0; i < n; ++i) s += atoms[std::uniform_int_distribution<std::size_t>(0, atoms.size() - 1)(rng)];
  return s;
}

}  // namespace

TEST(WhitespaceTokenizer, SplitsWithLeadingSpace) {
  const auto tok = whitespace_tokenizer();
  const auto s = tok->tokenize("a b  c");
  EXPECT_EQ(s.surfaces, (std::vector<std::string>{"a", " b", " ", " c"}));
  EXPECT_EQ(tok->tokenize("").size(), 0u);
  EXPECT_EQ(tok->tokenize(" ").surfaces, (std::vector<std::string>{" "}));
  EXPECT_EQ(tok->tokenize("x\ty\nz").size(), 1u);
  EXPECT_EQ(tok->name(), "whitespace-test");
}

TEST(WhitespaceTokenizer, IdsAreStableHashesOfSurfaces) {
  const auto tok = whitespace_tokenizer();
  const auto a = tok->tokenize("x y x y");
  ASSERT_EQ(a.size(), 4u);
  EXPECT_NE(a.token_ids[0], a.token_ids[1]);  // "x" vs " y"
  EXPECT_EQ(a.token_ids[1], a.token_ids[3]);
  // FNV-1a 64 of "x" folded into 2^24
  EXPECT_EQ(a.token_ids[0], TokenId{13484929});
  for (auto id : a.token_ids) EXPECT_LT(id, WhitespaceTokenizer::kVocabSize);
}

TEST(WhitespaceTokenizer, CountMatchesIndependentCount) {
  std::mt19937 rng(7);
  const auto tok = whitespace_tokenizer();
  for (int i = 0; i < 300; ++i) {
    const auto s = random_text(rng);
    std::size_t expected = 0;
    for (std::size_t k = 0; k < s.size(); ++k)
      if (k == 0 || s[k] == ' ') ++expected;
    ASSERT_EQ(count_tokens(*tok, s), expected) << s;
    ASSERT_EQ(join(tok->tokenize(s)), s);
  }
}

class BpeOracle : public ::testing::TestWithParam<int> {};

// Reference ids come from the HuggingFace `tokenizers` library (see
// tools/fixtures_gen/make_bpe_fixture.py).
TEST_P(BpeOracle, MatchesReferenceImplementation) {
  const auto tok = GetParam() == 0
                       ? load_bpe(fixture("bpe/tokenizer.json"))
                       : load_bpe(fixture("bpe/vocab.json"), fixture("bpe/merges.txt"));
  EXPECT_EQ(tok->vocab_size(), 416u);
  const auto expected = bpe::parse_json_file(fixture("bpe/expected.json"));
  ASSERT_GE(expected.size(), 10u);
  for (const auto& e : expected) {
    const auto text = e["text"].get<std::string>();
    const auto got = tok->tokenize(text);
    EXPECT_EQ(got.token_ids, e["ids"].get<std::vector<TokenId>>()) << text;
    EXPECT_EQ(join(got), text);
  }
}

INSTANTIATE_TEST_SUITE_P(Formats, BpeOracle, ::testing::Values(0, 1));

TEST(BpeTokenizer, SurfacesConcatenateToInputEvenForInvalidUtf8) {
  const auto tok = load_bpe(fixture("bpe/tokenizer.json"));
  std::mt19937 rng(11);
  for (int i = 0; i < 500; ++i) {
    const auto s = random_text(rng);
    const auto seq = tok->tokenize(s);
    ASSERT_EQ(join(seq), s);
    ASSERT_EQ(seq.token_ids.size(), seq.surfaces.size());
    ASSERT_EQ(tok->tokenize(s).token_ids, seq.token_ids);
  }
}

TEST(BpeTokenizer, ByteTableIsABijection) {
  const auto& fwd = bpe::byte_to_unicode();
  std::set<char32_t> seen(fwd.begin(), fwd.end());
  EXPECT_EQ(seen.size(), 256u);
  EXPECT_EQ(fwd[' '], U'Ġ');
  EXPECT_EQ(fwd['\n'], U'Ċ');
  EXPECT_EQ(fwd['A'], U'A');
  std::string all;
  for (int b = 0; b < 256; ++b) all += static_cast<char>(b);
  EXPECT_EQ(bpe::token_to_bytes(bpe::bytes_to_token(all)), all);
}

TEST(BpeTokenizer, PreTokenizerWhitespaceRules) {
  using V = std::vector<std::string_view>;
  EXPECT_EQ(bpe::pre_tokenize("hello world"), (V{"hello", " world"}));
  EXPECT_EQ(bpe::pre_tokenize("a  b"), (V{"a", " ", " b"}));
  EXPECT_EQ(bpe::pre_tokenize("x \ty"), (V{"x", " ", "\t", "y"}));
  EXPECT_EQ(bpe::pre_tokenize("end   "), (V{"end", "   "}));
  EXPECT_EQ(bpe::pre_tokenize("12.5%"), (V{"12", ".", "5", "%"}));
  EXPECT_EQ(bpe::pre_tokenize(" (n)"), (V{" (", "n", ")"}));
}

TEST(LoadBpe, ErrorPaths) {
  testutil::TempDir dir;
  EXPECT_THROW(load_bpe(dir / "missing.json"), VocabParseError);

  testutil::spit(dir / "bad.json", "{\"model\": {\"vocab\": {\"a\": 0}");
  EXPECT_THROW(load_bpe(dir / "bad.json"), VocabParseError);

  testutil::spit(dir / "nomerges.json", "{\"model\": {\"vocab\": {\"a\": 0}}}");
  EXPECT_THROW(load_bpe(dir / "nomerges.json"), VocabParseError);

  testutil::spit(dir / "wordpiece.json", "{\"model\": {\"type\": \"WordPiece\", \"vocab\": {}, \"merges\": []}}");
  EXPECT_THROW(load_bpe(dir / "wordpiece.json"), VocabParseError);

  testutil::spit(dir / "negid.json", "{\"vocab\": {\"a\": -1}, \"merges\": []}");
  EXPECT_THROW(load_bpe(dir / "negid.json"), VocabParseError);

  testutil::spit(dir / "dangling.json", "{\"vocab\": {\"a\": 0, \"b\": 1}, \"merges\": [\"a b\"]}");
  EXPECT_THROW(load_bpe(dir / "dangling.json"), VocabParseError);

  testutil::spit(dir / "v.json", "{\"a\": 0, \"b\": 1, \"ab\": 2}");
  testutil::spit(dir / "m.txt", "#version: 0.2\na b\nb\n");
  try {
    load_bpe(dir / "v.json", dir / "m.txt");
    FAIL();
  } catch (const VocabParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(LoadBpe, TopLevelVocabAndMergePairsAreAccepted) {
  testutil::TempDir dir;
  testutil::spit(dir / "tiny.json",
                 "{\"vocab\": {\"a\": 0, \"b\": 1, \"ab\": 2, \"Ġ\": 3, \"Ġab\": 4}, \"merges\": [[\"a\", \"b\"], "
                 "\"Ġ ab\"]}");
  const auto tok = load_bpe(dir / "tiny.json");
  const auto s = tok->tokenize("ab ab abc");
  EXPECT_EQ(s.surfaces, (std::vector<std::string>{"ab", " ab", " ab", "c"}));
  EXPECT_EQ(s.token_ids[0], 2u);
  EXPECT_EQ(s.token_ids[1], 4u);
  EXPECT_EQ(tok->name(), "tiny");
}
