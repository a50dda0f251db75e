#pragma once

// Corpus harness: discovers {id}.html / {id}.gt.json pairs, runs the full
// pipeline per table, persists artifacts and JSONL run records, and
// aggregates records into a corpus summary.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabsem/context_optimizer.hpp"
#include "tabsem/errors.hpp"
#include "tabsem/evaluator.hpp"
#include "tabsem/llm_gateway.hpp"
#include "tabsem/synthesizer.hpp"
#include "tabsem/syntax_corrector.hpp"
#include "tabsem/table_ingest.hpp"
#include "tabsem/tokenizer.hpp"

namespace tabsem {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

inline std::string read_text_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + p.string());
  return ss.str();
}

// Write-then-rename so readers never observe a partial file.
inline void write_text_file(const fs::path& p, std::string_view content) {
  if (p.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
  }
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + p.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed: " + p.string());
  }
  std::error_code ec;
  fs::rename(tmp, p, ec);
  if (ec) throw IoError("cannot rename into " + p.string() + ": " + ec.message());
}

struct CorpusEntry {
  std::string id;
  fs::path html;
  std::optional<fs::path> gt;
};

// `{id}.html` inputs plus optional `{id}.gt.json`, sorted by id. Generated
// artifacts (`*.enc.html`) are not inputs.
inline std::vector<CorpusEntry> discover_corpus(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw IoError("corpus is not a directory: " + root.string());
  std::vector<CorpusEntry> out;
  for (const auto& de : fs::directory_iterator(root)) {
    if (!de.is_regular_file()) continue;
    const auto name = de.path().filename().string();
    if (name.size() <= 5 || name.substr(name.size() - 5) != ".html") continue;
    if (name.size() > 9 && name.substr(name.size() - 9) == ".enc.html") continue;
    CorpusEntry e;
    e.id = name.substr(0, name.size() - 5);
    e.html = de.path();
    const auto gt = root / (e.id + ".gt.json");
    if (fs::is_regular_file(gt, ec)) e.gt = gt;
    out.push_back(std::move(e));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return out;
}

struct OptimizeResult {
  EncodedTable encoded;
  CleanTable clean;
};

inline OptimizeResult optimize_file(const std::string& id, const fs::path& html_path, const Tokenizer& tok,
                                    const fs::path& out_dir) {
  const auto html = read_text_file(html_path);
  OptimizeResult r;
  r.clean = sanitize(RawTable{id, html});
  r.encoded = encode_table(r.clean, tok);
  write_text_file(out_dir / (id + ".enc.html"), r.encoded.html);
  write_text_file(out_dir / (id + ".codebook.json"), r.encoded.codebook.to_json().dump(2) + "\n");
  return r;
}

struct StageTimings {
  std::vector<std::pair<std::string, double>> ms;
};

struct RunReport {
  std::string table_id;
  std::string backend;
  bool ok = true;
  std::string failed_stage;
  std::string error;
  std::string error_kind;  // input | io | backend
  std::optional<std::size_t> tokens_before;
  std::optional<std::size_t> tokens_after;
  std::optional<std::size_t> codebook_entries;
  std::optional<bool> initial_valid;
  std::size_t iterations_used = 0;
  std::optional<bool> final_valid;
  std::vector<std::string> failure_modes;
  std::optional<double> isc;
  std::optional<double> esc;
  std::string evaluation_note;
  StageTimings timings;

  std::optional<double> efficiency() const {
    if (!tokens_before || !tokens_after || *tokens_before == 0) return std::nullopt;
    return token_efficiency(*tokens_before, *tokens_after);
  }
};

inline double round2(double v) { return std::round(v * 100.0) / 100.0; }

inline ordered_json to_json(const RunReport& r, bool with_timings = true) {
  ordered_json j;
  j["table_id"] = r.table_id;
  j["backend"] = r.backend;
  j["status"] = r.ok ? "ok" : "failed";
  if (!r.ok) {
    j["failed_stage"] = r.failed_stage;
    j["error_kind"] = r.error_kind;
    j["error"] = r.error;
  }
  if (r.tokens_before) j["tokens_before"] = *r.tokens_before;
  if (r.tokens_after) j["tokens_after"] = *r.tokens_after;
  if (const auto e = r.efficiency()) j["efficiency"] = round2(*e);
  if (r.codebook_entries) j["codebook_entries"] = *r.codebook_entries;
  if (r.initial_valid) {
    ordered_json c;
    c["initial_valid"] = *r.initial_valid;
    c["iterations_used"] = r.iterations_used;
    c["final_valid"] = r.final_valid.value_or(false);
    c["failure_modes"] = r.failure_modes;
    j["correction"] = std::move(c);
  }
  if (r.isc) j["isc"] = round2(*r.isc);
  if (r.esc) j["esc"] = round2(*r.esc);
  if (!r.evaluation_note.empty()) j["evaluation_note"] = r.evaluation_note;
  if (with_timings) {
    ordered_json t = ordered_json::object();
    for (const auto& [stage, ms] : r.timings.ms) t[stage] = ms;
    j["timings_ms"] = std::move(t);
  }
  return j;
}

struct PipelineOptions {
  TokenizerHandle tokenizer = whitespace_tokenizer();
  BackendConfig backend;
  // Per-table mock scripts (keyed by table id); overrides `backend` when set.
  std::optional<std::map<std::string, std::vector<std::string>>> table_scripts;
  PromptTemplate tmpl;
  std::size_t max_iterations = kDefaultMaxIterations;
  EvalMode mode = EvalMode::Structural;
  unsigned jobs = 1;
  fs::path out_dir;
  fs::path jsonl_path;  // defaults to out_dir / "runs.jsonl"
  bool record = false;
};

struct PipelineRun {
  std::vector<RunReport> reports;
  std::map<std::string, std::vector<std::string>> recorded;  // filled when options.record
};

namespace detail {

class StageClock {
 public:
  explicit StageClock(StageTimings& t) : t_(t) {}
  template <typename F>
  auto run(const char* stage, F&& f) {
    const auto start = std::chrono::steady_clock::now();
    struct Done {
      StageTimings& t;
      const char* stage;
      std::chrono::steady_clock::time_point start;
      ~Done() {
        const std::chrono::duration<double, std::milli> d = std::chrono::steady_clock::now() - start;
        t.ms.emplace_back(stage, d.count());
      }
    } done{t_, stage, start};
    return f();
  }

 private:
  StageTimings& t_;
};

}  // namespace detail

// sanitize -> encode -> synthesize -> correct -> decode -> evaluate (when a
// ground truth exists). Failures are captured in the report.
inline RunReport run_table(const CorpusEntry& entry, const PipelineOptions& opt, const BackendConfig& backend) {
  RunReport r;
  r.table_id = entry.id;
  r.backend = backend.name();
  detail::StageClock clock(r.timings);
  const auto& out = opt.out_dir;
  std::string stage = "read";
  try {
    const auto html = read_text_file(entry.html);
    stage = "sanitize";
    const auto clean = clock.run("sanitize", [&] { return sanitize(RawTable{entry.id, html}); });
    stage = "encode";
    const auto enc = clock.run("encode", [&] { return encode_table(clean, *opt.tokenizer); });
    r.tokens_before = enc.tokens_before;
    r.tokens_after = enc.tokens_after;
    r.codebook_entries = enc.codebook.size();
    write_text_file(out / (entry.id + ".enc.html"), enc.html);
    write_text_file(out / (entry.id + ".codebook.json"), enc.codebook.to_json().dump(2) + "\n");

    stage = "synthesize";
    const auto raw = clock.run("synthesize", [&] { return synthesize(enc, opt.tmpl, backend); });
    write_text_file(out / (entry.id + ".raw.json"), raw);

    stage = "correct";
    const auto initial = validate_json(raw);
    r.initial_valid = initial.valid;
    for (auto m : initial.failure_modes) r.failure_modes.emplace_back(to_string(m));
    const auto fixed = clock.run("correct", [&] { return correct(raw, backend, opt.max_iterations); });
    r.iterations_used = fixed.trace.iterations_used;
    r.final_valid = fixed.trace.final_valid;

    stage = "decode";
    const auto decoded = clock.run("decode", [&] {
      return fixed.trace.final_valid ? decode_json(fixed.final_text, enc.codebook)
                                     : decode_text(fixed.final_text, enc.codebook);
    });
    write_text_file(out / (entry.id + ".out.json"), decoded);

    if (entry.gt) {
      stage = "evaluate";
      if (!fixed.trace.final_valid) {
        r.evaluation_note = "skipped: output is not valid JSON";
      } else {
        clock.run("evaluate", [&] {
          const auto pred = parse_semantic_json(decoded);
          const auto gt = parse_semantic_json(read_text_file(*entry.gt));
          r.isc = intrinsic_score(clean, pred).isc;
          const auto paths = leaf_paths(gt);
          if (paths.empty()) {
            r.evaluation_note = "ground truth has no leaves";
            return 0;
          }
          auto items = generate_questions(gt, paths, opt.mode, &backend);
          r.esc = extrinsic_score(pred, std::move(items), opt.mode, &backend).esc;
          return 0;
        });
      }
    }
  } catch (const BackendError& e) {
    r.ok = false;
    r.error_kind = "backend";
    r.error = e.what();
  } catch (const IoError& e) {
    r.ok = false;
    r.error_kind = "io";
    r.error = e.what();
  } catch (const Error& e) {
    r.ok = false;
    r.error_kind = "input";
    r.error = e.what();
  }
  if (!r.ok) r.failed_stage = stage;
  return r;
}

// Runs every table (optionally in parallel). JSONL records are appended one
// line per table, in corpus order, by a single writer.
inline PipelineRun run_pipeline(const std::vector<CorpusEntry>& corpus, const PipelineOptions& opt) {
  const fs::path jsonl = opt.jsonl_path.empty() ? opt.out_dir / "runs.jsonl" : opt.jsonl_path;
  {
    std::error_code ec;
    fs::create_directories(opt.out_dir, ec);
  }
  std::ofstream sink(jsonl, std::ios::binary | std::ios::app);
  if (!sink) throw IoError("cannot open " + jsonl.string());

  PipelineRun run;
  run.reports.resize(corpus.size());
  std::vector<std::shared_ptr<Recording>> recordings(corpus.size());
  std::vector<bool> done(corpus.size(), false);
  std::size_t next_to_write = 0;
  std::mutex mu;
  std::atomic<std::size_t> cursor{0};

  auto backend_for = [&](std::size_t i) {
    BackendConfig cfg = opt.backend;
    if (opt.table_scripts) {
      const auto it = opt.table_scripts->find(corpus[i].id);
      cfg.backend_kind = BackendKind::Mock;
      cfg.mock = std::make_shared<MockScript>(it == opt.table_scripts->end() ? std::vector<std::string>{}
                                                                               : it->second);
    }
    if (opt.record) {
      recordings[i] = std::make_shared<Recording>();
      cfg.recorder = recordings[i];
    }
    return cfg;
  };

  auto worker = [&] {
    for (;;) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= corpus.size()) return;
      auto report = run_table(corpus[i], opt, backend_for(i));
      std::lock_guard lock(mu);
      run.reports[i] = std::move(report);
      done[i] = true;
      while (next_to_write < corpus.size() && done[next_to_write]) {
        const auto line = to_json(run.reports[next_to_write]).dump() + "\n";
        sink.write(line.data(), static_cast<std::streamsize>(line.size()));
        sink.flush();
        ++next_to_write;
      }
    }
  };

  const unsigned jobs = std::max(1u, std::min<unsigned>(opt.jobs, static_cast<unsigned>(corpus.size())));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (opt.record)
    for (std::size_t i = 0; i < corpus.size(); ++i) run.recorded[corpus[i].id] = recordings[i]->contents();
  return run;
}

// -- mock script files -------------------------------------------------------

struct ScriptFile {
  std::optional<std::vector<std::string>> sequence;                      // JSON array form
  std::optional<std::map<std::string, std::vector<std::string>>> per_table;  // JSON object form
};

inline ScriptFile load_script_file(const fs::path& p) {
  const auto body = read_text_file(p);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw JsonParseError(e.what(), e.byte);
  }
  auto strings = [](const nlohmann::json& arr) {
    if (!arr.is_array()) throw InvalidInput("mock script entries must be arrays of strings");
    std::vector<std::string> out;
    for (const auto& s : arr) {
      if (!s.is_string()) throw InvalidInput("mock script entries must be strings");
      out.push_back(s.get<std::string>());
    }
    return out;
  };
  ScriptFile f;
  if (j.is_array()) {
    f.sequence = strings(j);
  } else if (j.is_object()) {
    std::map<std::string, std::vector<std::string>> m;
    for (const auto& [k, v] : j.items()) m[k] = strings(v);
    f.per_table = std::move(m);
  } else {
    throw InvalidInput("mock script must be a JSON array or object");
  }
  return f;
}

inline std::string dump_script(const std::map<std::string, std::vector<std::string>>& per_table) {
  ordered_json j = ordered_json::object();
  for (const auto& [id, v] : per_table) j[id] = v;
  return j.dump(2) + "\n";
}

// -- corpus summary ----------------------------------------------------------

struct CorpusSummary {
  std::size_t records = 0;
  std::size_t failed = 0;
  std::size_t tokens_before = 0;
  std::size_t tokens_after = 0;
  std::optional<double> efficiency;
  std::optional<double> mean_isc;
  std::optional<double> mean_esc;
  std::size_t evaluated = 0;
  std::size_t needed_correction = 0;
  std::size_t correction_iterations = 0;
  std::size_t final_valid = 0;
  std::size_t final_invalid = 0;
};

// Efficiency comes from the summed token counts, not from averaging percentages.
inline CorpusSummary summarize(const std::vector<nlohmann::json>& records) {
  CorpusSummary s;
  double isc_sum = 0, esc_sum = 0;
  std::size_t isc_n = 0, esc_n = 0;
  for (const auto& r : records) {
    if (!r.is_object() || !r.contains("table_id")) throw InvalidInput("run record lacks table_id");
    ++s.records;
    if (r.value("status", std::string("ok")) != "ok") ++s.failed;
    if (r.contains("tokens_before") != r.contains("tokens_after"))
      throw InvalidInput("run record has only one of tokens_before/tokens_after");
    if (r.contains("tokens_before")) {
      if (!r["tokens_before"].is_number_unsigned() || !r["tokens_after"].is_number_unsigned())
        throw InvalidInput("token counts must be non-negative integers");
      s.tokens_before += r["tokens_before"].get<std::size_t>();
      s.tokens_after += r["tokens_after"].get<std::size_t>();
    }
    if (r.contains("isc") && r["isc"].is_number()) {
      isc_sum += r["isc"].get<double>();
      ++isc_n;
    }
    if (r.contains("esc") && r["esc"].is_number()) {
      esc_sum += r["esc"].get<double>();
      ++esc_n;
    }
    if (r.contains("correction")) {
      const auto& c = r["correction"];
      if (!c.value("initial_valid", true)) ++s.needed_correction;
      s.correction_iterations += c.value("iterations_used", std::size_t{0});
      if (c.value("final_valid", false))
        ++s.final_valid;
      else
        ++s.final_invalid;
    }
  }
  if (s.tokens_before > 0) s.efficiency = token_efficiency(s.tokens_before, s.tokens_after);
  if (isc_n) s.mean_isc = isc_sum / static_cast<double>(isc_n);
  if (esc_n) s.mean_esc = esc_sum / static_cast<double>(esc_n);
  s.evaluated = std::max(isc_n, esc_n);
  return s;
}

inline std::vector<nlohmann::json> read_jsonl(std::string_view body) {
  std::vector<nlohmann::json> out;
  std::size_t start = 0, lineno = 0;
  while (start < body.size()) {
    auto nl = body.find('\n', start);
    if (nl == std::string_view::npos) nl = body.size();
    ++lineno;
    const auto line = text::trim_view(body.substr(start, nl - start));
    start = nl + 1;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw InvalidInput("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline ordered_json to_json(const CorpusSummary& s) {
  ordered_json j;
  j["records"] = s.records;
  j["failed"] = s.failed;
  j["tokens_before"] = s.tokens_before;
  j["tokens_after"] = s.tokens_after;
  j["efficiency"] = s.efficiency ? ordered_json(round2(*s.efficiency)) : ordered_json(nullptr);
  j["mean_isc"] = s.mean_isc ? ordered_json(round2(*s.mean_isc)) : ordered_json(nullptr);
  j["mean_esc"] = s.mean_esc ? ordered_json(round2(*s.mean_esc)) : ordered_json(nullptr);
  j["evaluated"] = s.evaluated;
  j["needed_correction"] = s.needed_correction;
  j["correction_iterations"] = s.correction_iterations;
  j["final_valid"] = s.final_valid;
  j["final_invalid"] = s.final_invalid;
  return j;
}

}  // namespace tabsem
