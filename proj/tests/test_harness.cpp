#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "tabsem/harness.hpp"
#include "test_util.hpp"

using namespace tabsem;
using testutil::slurp;
using testutil::spit;
using testutil::TempDir;

namespace {

const char* kTable =
    "<table><tr><th>Name</th><th>Score</th></tr><tr><td>alpha beta gamma</td><td>7</td></tr></table>";

PipelineOptions options(const TempDir& dir, std::map<std::string, std::vector<std::string>> scripts) {
  PipelineOptions o;
  o.out_dir = dir / "out";
  o.table_scripts = std::move(scripts);
  return o;
}

std::vector<nlohmann::json> runs(const TempDir& dir) { return read_jsonl(slurp(dir / "out" / "runs.jsonl")); }

}  // namespace

TEST(Corpus, DiscoversHtmlWithOptionalGroundTruth) {
  TempDir dir;
  spit(dir / "b.html", kTable);
  spit(dir / "a.html", kTable);
  spit(dir / "a.gt.json", "{}");
  spit(dir / "a.enc.html", kTable);
  spit(dir / "notes.txt", "x");
  const auto c = discover_corpus(dir.path());
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].id, "a");
  EXPECT_TRUE(c[0].gt.has_value());
  EXPECT_EQ(c[1].id, "b");
  EXPECT_FALSE(c[1].gt.has_value());
  EXPECT_THROW(discover_corpus(dir / "missing"), IoError);
}

TEST(Files, ReadAndAtomicWrite) {
  TempDir dir;
  write_text_file(dir / "sub" / "x.txt", "hello");
  EXPECT_EQ(read_text_file(dir / "sub" / "x.txt"), "hello");
  write_text_file(dir / "sub" / "x.txt", "again");
  EXPECT_EQ(read_text_file(dir / "sub" / "x.txt"), "again");
  EXPECT_THROW(read_text_file(dir / "nope"), IoError);
}

TEST(OptimizeFile, WritesEncodedHtmlAndCodebook) {
  TempDir dir;
  spit(dir / "t.html", kTable);
  const auto r = optimize_file("t", dir / "t.html", *whitespace_tokenizer(), dir / "out");
  EXPECT_EQ(slurp(dir / "out" / "t.enc.html"), r.encoded.html);
  const auto cb = Codebook::parse(slurp(dir / "out" / "t.codebook.json"));
  ASSERT_NE(cb.original_of("alpha beta"), nullptr);
  EXPECT_EQ(*cb.original_of("alpha beta"), "alpha beta gamma");
  EXPECT_NE(r.encoded.html.find("<td>alpha beta</td>"), std::string::npos);
}

TEST(Pipeline, EndToEndWithMockScript) {
  TempDir dir;
  spit(dir / "t.html", kTable);
  spit(dir / "t.gt.json", R"({"alpha beta gamma": {"Score": "7"}})");
  auto opt = options(dir, {{"t", {R"({"alpha beta": {"Score": "7"}})"}}});
  const auto run = run_pipeline(discover_corpus(dir.path()), opt);
  ASSERT_EQ(run.reports.size(), 1u);
  const auto& r = run.reports[0];
  EXPECT_TRUE(r.ok) << r.error;
  EXPECT_EQ(r.backend, "mock");
  const auto ws = whitespace_tokenizer();
  EXPECT_EQ(*r.tokens_before, count_tokens(*ws, sanitize(RawTable{"t", kTable}).html));
  EXPECT_EQ(*r.tokens_after, count_tokens(*ws, slurp(dir / "out" / "t.enc.html")));
  EXPECT_LT(*r.tokens_after, *r.tokens_before);
  EXPECT_EQ(r.iterations_used, 0u);
  EXPECT_DOUBLE_EQ(*r.isc, 75.0);
  EXPECT_DOUBLE_EQ(*r.esc, 100.0);
  EXPECT_EQ(slurp(dir / "out" / "t.raw.json"), R"({"alpha beta": {"Score": "7"}})");
  EXPECT_EQ(slurp(dir / "out" / "t.out.json"), R"({"alpha beta gamma": {"Score": "7"}})");

  const auto recs = runs(dir);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0]["status"], "ok");
  EXPECT_EQ(recs[0]["correction"]["initial_valid"], true);
  EXPECT_EQ(recs[0]["isc"], 75.0);
  EXPECT_TRUE(recs[0].contains("timings_ms"));
}

TEST(Pipeline, CorrectionLoopAndInvalidOutputSkipsEvaluation) {
  TempDir dir;
  spit(dir / "fix.html", kTable);
  spit(dir / "fix.gt.json", R"({"Score": "7"})");
  spit(dir / "bad.html", kTable);
  spit(dir / "bad.gt.json", R"({"Score": "7"})");
  auto opt = options(dir, {{"fix", {R"({"Score": "7",})", R"({"Score": "7"})"}},
                           {"bad", {"{", "{", "{", "{"}}});
  const auto run = run_pipeline(discover_corpus(dir.path()), opt);
  const auto& bad = run.reports[0];
  const auto& fix = run.reports[1];
  EXPECT_EQ(fix.iterations_used, 1u);
  EXPECT_EQ(*fix.initial_valid, false);
  EXPECT_EQ(*fix.final_valid, true);
  EXPECT_EQ(fix.failure_modes, (std::vector<std::string>{"Other"}));
  EXPECT_DOUBLE_EQ(*fix.esc, 100.0);
  EXPECT_TRUE(bad.ok);
  EXPECT_EQ(bad.iterations_used, 3u);
  EXPECT_EQ(*bad.final_valid, false);
  EXPECT_FALSE(bad.isc.has_value());
  EXPECT_EQ(bad.evaluation_note, "skipped: output is not valid JSON");
  EXPECT_FALSE(to_json(bad).contains("esc"));
}

TEST(Pipeline, FailuresAreCapturedPerTable) {
  TempDir dir;
  spit(dir / "a.html", "<p>no table</p>");
  spit(dir / "b.html", kTable);
  spit(dir / "c.html", kTable);
  auto opt = options(dir, {{"c", {R"({"ok": true})"}}});
  const auto run = run_pipeline(discover_corpus(dir.path()), opt);
  EXPECT_FALSE(run.reports[0].ok);
  EXPECT_EQ(run.reports[0].failed_stage, "sanitize");
  EXPECT_EQ(run.reports[0].error_kind, "input");
  EXPECT_FALSE(run.reports[1].ok);
  EXPECT_EQ(run.reports[1].failed_stage, "synthesize");
  EXPECT_EQ(run.reports[1].error_kind, "backend");
  EXPECT_TRUE(run.reports[2].ok);
  const auto recs = runs(dir);
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[1]["status"], "failed");
  const auto s = summarize(recs);
  EXPECT_EQ(s.records, 3u);
  EXPECT_EQ(s.failed, 2u);
}

TEST(Pipeline, ParallelRunKeepsCorpusOrderAndOutputs) {
  TempDir seq_dir, par_dir;
  std::map<std::string, std::vector<std::string>> scripts;
  for (int i = 0; i < 24; ++i) {
    const auto id = "t" + std::string(i < 10 ? "0" : "") + std::to_string(i);
    const auto html = std::string("<table><tr><td>row ") + std::to_string(i) + " value here</td><td>" +
                      std::to_string(i * 3) + "</td></tr></table>";
    spit(seq_dir / (id + ".html"), html);
    spit(par_dir / (id + ".html"), html);
    scripts[id] = {i % 3 == 0 ? "[1,]" : "{\"v\": " + std::to_string(i) + "}", "[1]"};
  }
  auto seq = options(seq_dir, scripts);
  auto par = options(par_dir, scripts);
  par.jobs = 6;
  run_pipeline(discover_corpus(seq_dir.path()), seq);
  run_pipeline(discover_corpus(par_dir.path()), par);
  const auto a = runs(seq_dir), b = runs(par_dir);
  ASSERT_EQ(a.size(), 24u);
  ASSERT_EQ(b.size(), 24u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto x = a[i], y = b[i];
    x.erase("timings_ms");
    y.erase("timings_ms");
    EXPECT_EQ(x, y);
    EXPECT_EQ(slurp(seq_dir / "out" / (x["table_id"].get<std::string>() + ".out.json")),
              slurp(par_dir / "out" / (x["table_id"].get<std::string>() + ".out.json")));
  }
}

TEST(Pipeline, RecordingCapturesResponsesPerTable) {
  TempDir dir;
  spit(dir / "a.html", kTable);
  spit(dir / "b.html", kTable);
  auto opt = options(dir, {{"a", {"[1,]", "[1]"}}, {"b", {"{}"}}});
  opt.record = true;
  const auto run = run_pipeline(discover_corpus(dir.path()), opt);
  EXPECT_EQ(run.recorded.at("a"), (std::vector<std::string>{"[1,]", "[1]"}));
  EXPECT_EQ(run.recorded.at("b"), (std::vector<std::string>{"{}"}));
  TempDir other;
  spit(other / "s.json", dump_script(run.recorded));
  const auto f = load_script_file(other / "s.json");
  ASSERT_TRUE(f.per_table.has_value());
  EXPECT_EQ(*f.per_table, run.recorded);
}

TEST(ScriptFiles, ArrayAndObjectForms) {
  TempDir dir;
  spit(dir / "arr.json", R"(["a", "b"])");
  spit(dir / "obj.json", R"({"t1": ["x"], "t2": []})");
  spit(dir / "bad1.json", R"([1])");
  spit(dir / "bad2.json", R"("x")");
  spit(dir / "bad3.json", "[");
  EXPECT_EQ(*load_script_file(dir / "arr.json").sequence, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(load_script_file(dir / "obj.json").per_table->at("t1"), (std::vector<std::string>{"x"}));
  EXPECT_THROW(load_script_file(dir / "bad1.json"), InvalidInput);
  EXPECT_THROW(load_script_file(dir / "bad2.json"), InvalidInput);
  EXPECT_THROW(load_script_file(dir / "bad3.json"), JsonParseError);
  EXPECT_THROW(load_script_file(dir / "none.json"), IoError);
}

TEST(Summary, AggregatesFromTokenSums) {
  const auto recs = read_jsonl(
      "{\"table_id\":\"a\",\"status\":\"ok\",\"tokens_before\":100,\"tokens_after\":50,\"isc\":90,\"esc\":80,"
      "\"correction\":{\"initial_valid\":false,\"iterations_used\":2,\"final_valid\":true}}\n"
      "\n"
      "{\"table_id\":\"b\",\"status\":\"ok\",\"tokens_before\":300,\"tokens_after\":290,\"isc\":70,"
      "\"correction\":{\"initial_valid\":true,\"iterations_used\":0,\"final_valid\":true}}\n"
      "{\"table_id\":\"c\",\"status\":\"failed\"}\n");
  const auto s = summarize(recs);
  EXPECT_EQ(s.records, 3u);
  EXPECT_EQ(s.failed, 1u);
  EXPECT_DOUBLE_EQ(*s.efficiency, 100.0 * 60 / 400);
  EXPECT_DOUBLE_EQ(*s.mean_isc, 80.0);
  EXPECT_DOUBLE_EQ(*s.mean_esc, 80.0);
  EXPECT_EQ(s.needed_correction, 1u);
  EXPECT_EQ(s.correction_iterations, 2u);
  EXPECT_EQ(s.final_valid, 2u);
  EXPECT_EQ(to_json(s)["efficiency"], 15.0);
  EXPECT_FALSE(summarize({}).efficiency.has_value());
}

TEST(Summary, RejectsBadRecords) {
  EXPECT_THROW(summarize({nlohmann::json{{"x", 1}}}), InvalidInput);
  EXPECT_THROW(summarize({nlohmann::json{{"table_id", "a"}, {"tokens_before", 1}}}), InvalidInput);
  EXPECT_THROW(summarize({nlohmann::json{{"table_id", "a"}, {"tokens_before", -1}, {"tokens_after", 1}}}),
               InvalidInput);
  try {
    read_jsonl("{}\n{oops}\n");
    FAIL();
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(Report, ApiKeyIsNeverSerialized) {
  setenv("TABSEM_HARNESS_KEY", "sk-secret-123", 1);
  TempDir dir;
  spit(dir / "t.html", kTable);
  auto opt = options(dir, {{"t", {"{}"}}});
  opt.backend.api_key_env = "TABSEM_HARNESS_KEY";
  run_pipeline(discover_corpus(dir.path()), opt);
  EXPECT_EQ(slurp(dir / "out" / "runs.jsonl").find("sk-secret"), std::string::npos);
  unsetenv("TABSEM_HARNESS_KEY");
}
