#include <string>

#include <gtest/gtest.h>

#include "tabsem/synthesizer.hpp"
#include "tabsem/table_ingest.hpp"
#include "test_util.hpp"

using namespace tabsem;

namespace {

EncodedTable small_table() {
  const auto clean = sanitize(RawTable{"t", "<table><tr><th>alpha beta gamma</th><td>1</td></tr></table>"});
  return encode_table(clean, *whitespace_tokenizer());
}

}  // namespace

TEST(Synthesize, PassesContentThrough) {
  const auto enc = small_table();
  const auto cfg = mock_script({R"([{"A": "1"}])"});
  EXPECT_EQ(synthesize(enc, PromptTemplate{}, cfg), R"([{"A": "1"}])");
}

TEST(Synthesize, StripsCodeFence) {
  const auto enc = small_table();
  EXPECT_EQ(synthesize(enc, PromptTemplate{}, mock_script({"```json\n{}\n```"})), "{}");
  EXPECT_EQ(synthesize(enc, PromptTemplate{}, mock_script({"```\n[1,\n 2]\n```\n"})), "[1,\n 2]");
}

TEST(Synthesize, InvalidJsonIsReturnedUnvalidated) {
  const auto enc = small_table();
  EXPECT_EQ(synthesize(enc, PromptTemplate{}, mock_script({"{\"a\": 1}{\"b\": 2}"})), "{\"a\": 1}{\"b\": 2}");
}

TEST(Synthesize, BlankCompletionIsAnError) {
  const auto enc = small_table();
  EXPECT_THROW(synthesize(enc, PromptTemplate{}, mock_script({" \n\t"})), EmptyCompletion);
}

TEST(Synthesize, PromptCarriesEncodedHtmlVerbatimAndLeavesInputAlone) {
  const auto enc = small_table();
  const auto before_html = enc.html;
  const auto before_entries = enc.codebook.entries();
  const auto cfg = mock_script({"{}"});
  synthesize(enc, PromptTemplate{}, cfg);
  const auto reqs = cfg.mock->requests();
  ASSERT_EQ(reqs.size(), 1u);
  ASSERT_EQ(reqs[0].messages.size(), 2u);
  EXPECT_EQ(reqs[0].messages[0].role, Role::System);
  EXPECT_NE(reqs[0].messages[1].content.find(enc.html), std::string::npos);
  EXPECT_EQ(enc.html, before_html);
  EXPECT_EQ(enc.codebook.entries(), before_entries);
}

TEST(Synthesize, GumTrialFixturePassesThrough) {
  const auto html = testutil::slurp(testutil::fixture("gum_trial.html"));
  const auto enc = encode_table(sanitize(RawTable{"gum_trial", html}), *whitespace_tokenizer());
  const auto reply = testutil::slurp(testutil::fixture("model_output.json"));
  EXPECT_EQ(synthesize(enc, PromptTemplate{}, mock_script({reply})), reply);
}

TEST(PromptTemplate, PlaceholderOrAppend) {
  PromptTemplate t;
  t.user_prefix = "before {table} after";
  EXPECT_EQ(t.render("<table></table>"), "before <table></table> after");
  t.user_prefix = "Table:\n";
  EXPECT_EQ(t.render("<table></table>"), "Table:\n<table></table>");
  // braces inside the table are not treated as placeholders
  t.user_prefix = "{table}";
  EXPECT_EQ(t.render("<td>{table}</td>"), "<td>{table}</td>");
}

TEST(PromptTemplate, LoadsFromFiles) {
  testutil::TempDir dir;
  testutil::spit(dir / "mine.txt", "Convert: {table}");
  testutil::spit(dir / "sys.txt", "You are careful.");
  const auto t = PromptTemplate::load(dir / "mine.txt", dir / "sys.txt");
  EXPECT_EQ(t.name, "mine");
  EXPECT_EQ(t.system, "You are careful.");
  EXPECT_EQ(t.render("<table/>"), "Convert: <table/>");
  EXPECT_THROW(PromptTemplate::load(dir / "missing.txt"), InvalidInput);
}

TEST(StripCodeFence, Cases) {
  EXPECT_EQ(strip_code_fence("  {\"a\": 1}\n"), "  {\"a\": 1}\n");  // no fence: byte-identical
  EXPECT_EQ(strip_code_fence("```json {\"a\": 1}```"), "{\"a\": 1}");
  EXPECT_EQ(strip_code_fence("```JSON\r\n[]\r\n```"), "[]");
  EXPECT_EQ(strip_code_fence("```\n{\"unterminated\": true}"), "{\"unterminated\": true}");
  EXPECT_EQ(strip_code_fence("text ```json {}```"), "text ```json {}```");
}
