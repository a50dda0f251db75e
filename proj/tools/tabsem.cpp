#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tabsem/context_optimizer.hpp"
#include "tabsem/errors.hpp"
#include "tabsem/evaluator.hpp"
#include "tabsem/harness.hpp"
#include "tabsem/llm_gateway.hpp"
#include "tabsem/synthesizer.hpp"
#include "tabsem/syntax_corrector.hpp"
#include "tabsem/table_ingest.hpp"
#include "tabsem/tokenizer.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kInput = 2, kIo = 3, kBackend = 4 };

// Values as given on the command line; unset ones fall back to the
// environment, then to the --config file, then to built-in defaults.
struct Flags {
  std::string config;
  std::string tokenizer;
  std::string merges;
  std::string endpoint;
  std::string model;
  std::string api_key_env;
  std::string mock_script;
  std::string record_script;
  std::string templ;
  std::string system_templ;
  std::string mode;
  std::optional<std::size_t> max_iterations;
  std::optional<double> timeout_s;
  std::optional<int> retries;
};

struct Settings {
  nlohmann::json file = nlohmann::json::object();
  const Flags* flags = nullptr;

  std::string get(const std::string& flag, const char* env, const char* key, std::string fallback) const {
    if (!flag.empty()) return flag;
    if (env) {
      if (const char* v = std::getenv(env); v && *v) return v;
    }
    if (file.contains(key)) {
      if (!file[key].is_string()) throw tabsem::ConfigError(std::string("config key '") + key + "' must be a string");
      return file[key].get<std::string>();
    }
    return fallback;
  }

  template <typename T>
  T number(const std::optional<T>& flag, const char* env, const char* key, T fallback) const {
    if (flag) return *flag;
    if (env) {
      if (const char* v = std::getenv(env); v && *v) {
        std::istringstream in(v);
        T out{};
        if (!(in >> out) || !in.eof()) throw tabsem::ConfigError(std::string(env) + " is not a number: " + v);
        return out;
      }
    }
    if (file.contains(key)) {
      if (!file[key].is_number()) throw tabsem::ConfigError(std::string("config key '") + key + "' must be a number");
      return file[key].get<T>();
    }
    return fallback;
  }
};

Settings load_settings(const Flags& f) {
  Settings s;
  s.flags = &f;
  if (!f.config.empty()) {
    const auto body = tabsem::read_text_file(f.config);
    try {
      s.file = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
      throw tabsem::ConfigError(std::string("config file: ") + e.what());
    }
    if (!s.file.is_object()) throw tabsem::ConfigError("config file must hold a JSON object");
  }
  return s;
}

tabsem::TokenizerHandle make_tokenizer(const Settings& s) {
  const auto spec = s.get(s.flags->tokenizer, "TABSEM_TOKENIZER", "tokenizer", "whitespace");
  if (spec == "whitespace") return tabsem::whitespace_tokenizer();
  const auto merges = s.get(s.flags->merges, nullptr, "merges", "");
  return tabsem::load_bpe(spec, merges);
}

std::size_t max_iterations(const Settings& s) {
  const auto n = s.number<long>(s.flags->max_iterations ? std::optional<long>(static_cast<long>(*s.flags->max_iterations))
                                                        : std::nullopt,
                                "TABSEM_MAX_ITERATIONS", "max_iterations", tabsem::kDefaultMaxIterations);
  if (n < 1) throw tabsem::ConfigError("max_iterations must be >= 1");
  return static_cast<std::size_t>(n);
}

tabsem::EvalMode eval_mode(const Settings& s) {
  const auto m = s.get(s.flags->mode, nullptr, "mode", "structural");
  if (m == "structural") return tabsem::EvalMode::Structural;
  if (m == "llm") return tabsem::EvalMode::Llm;
  throw tabsem::ConfigError("mode must be structural or llm, got " + m);
}

tabsem::PromptTemplate prompt_template(const Settings& s) {
  const auto user = s.get(s.flags->templ, nullptr, "template", "");
  const auto system = s.get(s.flags->system_templ, nullptr, "system_template", "");
  if (user.empty()) {
    tabsem::PromptTemplate t;
    if (!system.empty()) t.system = tabsem::read_text_file(system);
    return t;
  }
  return tabsem::PromptTemplate::load(user, system);
}

struct Backend {
  tabsem::BackendConfig cfg;
  std::optional<std::map<std::string, std::vector<std::string>>> per_table;
};

// `key` picks the per-table sequence when the script file is keyed by id.
Backend make_backend(const Settings& s, const std::string& key = {}) {
  Backend b;
  auto& cfg = b.cfg;
  cfg.model = s.get(s.flags->model, "TABSEM_MODEL", "model", cfg.model);
  cfg.api_key_env = s.get(s.flags->api_key_env, nullptr, "api_key_env", cfg.api_key_env);
  cfg.timeout_s = s.number<double>(s.flags->timeout_s, nullptr, "timeout_s", cfg.timeout_s);
  cfg.retries = s.number<int>(s.flags->retries, nullptr, "retries", cfg.retries);
  cfg.backoff_initial_s = s.number<double>(std::nullopt, nullptr, "backoff_initial_s", cfg.backoff_initial_s);
  cfg.temperature = s.number<double>(std::nullopt, nullptr, "temperature", cfg.temperature);
  cfg.max_output_tokens = s.number<int>(std::nullopt, nullptr, "max_output_tokens", cfg.max_output_tokens);
  const auto script = s.get(s.flags->mock_script, nullptr, "mock_script", "");
  if (!script.empty()) {
    auto f = tabsem::load_script_file(script);
    cfg.backend_kind = tabsem::BackendKind::Mock;
    if (f.sequence) {
      cfg.mock = std::make_shared<tabsem::MockScript>(*f.sequence);
    } else {
      b.per_table = std::move(f.per_table);
      const auto it = b.per_table->find(key);
      cfg.mock = std::make_shared<tabsem::MockScript>(it == b.per_table->end() ? std::vector<std::string>{}
                                                                                : it->second);
    }
  } else {
    cfg.backend_kind = tabsem::BackendKind::Http;
    cfg.endpoint_url = s.get(s.flags->endpoint, "TABSEM_ENDPOINT", "endpoint", "");
  }
  if (!s.flags->record_script.empty()) cfg.recorder = std::make_shared<tabsem::Recording>();
  cfg.validate();
  return b;
}

void save_recording(const Flags& f, const tabsem::BackendConfig& cfg) {
  if (f.record_script.empty() || !cfg.recorder) return;
  tabsem::write_text_file(f.record_script, ordered_json(cfg.recorder->contents()).dump(2) + "\n");
}

std::string fixed2(double v) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(2) << v;
  return o.str();
}

fs::path out_dir_or(const std::string& out, const fs::path& fallback) {
  return out.empty() ? fallback : fs::path(out);
}

// -- optimize ---------------------------------------------------------------

int cmd_optimize(const Flags& f, const std::string& input, const std::string& corpus, const std::string& out) {
  const auto s = load_settings(f);
  const auto tok = make_tokenizer(s);
  std::vector<tabsem::CorpusEntry> entries;
  if (!corpus.empty()) {
    entries = tabsem::discover_corpus(corpus);
  } else {
    const fs::path p(input);
    entries.push_back({p.stem().string(), p, std::nullopt});
  }
  const fs::path dir = out_dir_or(out, corpus.empty() ? fs::path(input).parent_path() : fs::path(corpus));
  std::size_t sum_a = 0, sum_b = 0;
  std::cout << std::left << std::setw(28) << "table" << std::right << std::setw(12) << "tokens_before"
            << std::setw(14) << "tokens_after" << std::setw(12) << "efficiency" << "\n";
  for (const auto& e : entries) {
    const auto r = tabsem::optimize_file(e.id, e.html, *tok, dir);
    sum_a += r.encoded.tokens_before;
    sum_b += r.encoded.tokens_after;
    std::cout << std::left << std::setw(28) << e.id << std::right << std::setw(12) << r.encoded.tokens_before
              << std::setw(14) << r.encoded.tokens_after << std::setw(11)
              << (r.encoded.tokens_before ? fixed2(tabsem::token_efficiency(r.encoded.tokens_before,
                                                                             r.encoded.tokens_after))
                                          : std::string("n/a"))
              << "%\n";
  }
  if (entries.size() > 1 && sum_a > 0)
    std::cout << std::left << std::setw(28) << "TOTAL" << std::right << std::setw(12) << sum_a << std::setw(14)
              << sum_b << std::setw(11) << fixed2(tabsem::token_efficiency(sum_a, sum_b)) << "%\n";
  return kOk;
}

// -- synthesize -------------------------------------------------------------

int cmd_synthesize(const Flags& f, const std::string& input, const std::string& out) {
  const auto s = load_settings(f);
  const auto tok = make_tokenizer(s);
  const fs::path p(input);
  const auto id = p.stem().string();
  const auto backend = make_backend(s, id);
  const fs::path dir = out_dir_or(out, p.parent_path());
  const auto opt = tabsem::optimize_file(id, p, *tok, dir);
  const auto raw = tabsem::synthesize(opt.encoded, prompt_template(s), backend.cfg);
  tabsem::write_text_file(dir / (id + ".raw.json"), raw);
  save_recording(f, backend.cfg);
  std::cout << (dir / (id + ".raw.json")).string() << "\n";
  return kOk;
}

// -- correct ----------------------------------------------------------------

int cmd_correct(const Flags& f, const std::string& input, const std::string& output, const std::string& codebook,
                const std::string& trace_path) {
  const auto s = load_settings(f);
  const fs::path p(input);
  auto id = p.stem().string();
  if (const auto dot = id.find('.'); dot != std::string::npos) id = id.substr(0, dot);
  const auto backend = make_backend(s, id);
  const auto text = tabsem::read_text_file(p);
  const auto initial = tabsem::validate_json(text);
  const auto res = tabsem::correct(text, backend.cfg, max_iterations(s));
  std::string final_text = res.final_text;
  if (!codebook.empty()) {
    const auto cb = tabsem::Codebook::parse(tabsem::read_text_file(codebook));
    final_text = res.trace.final_valid ? tabsem::decode_json(final_text, cb) : tabsem::decode_text(final_text, cb);
  }
  if (output.empty())
    std::cout << final_text << "\n";
  else
    tabsem::write_text_file(output, final_text);

  ordered_json t;
  t["initial_valid"] = initial.valid;
  auto modes = ordered_json::array();
  for (auto m : initial.failure_modes) modes.push_back(tabsem::to_string(m));
  t["failure_modes"] = modes;
  t["iterations_used"] = res.trace.iterations_used;
  t["final_valid"] = res.trace.final_valid;
  auto steps = ordered_json::array();
  for (const auto& st : res.trace.iterations) {
    ordered_json j;
    j["input"] = st.input_text;
    j["output"] = st.output_text;
    j["valid"] = st.diagnosis.valid;
    if (st.diagnosis.error_offset) j["error_offset"] = *st.diagnosis.error_offset;
    auto fm = ordered_json::array();
    for (auto m : st.diagnosis.failure_modes) fm.push_back(tabsem::to_string(m));
    j["failure_modes"] = fm;
    steps.push_back(std::move(j));
  }
  t["iterations"] = std::move(steps);
  if (!trace_path.empty()) tabsem::write_text_file(trace_path, t.dump(2) + "\n");
  std::cerr << "initial_valid=" << (initial.valid ? "true" : "false") << " iterations=" << res.trace.iterations_used
            << " final_valid=" << (res.trace.final_valid ? "true" : "false") << "\n";
  save_recording(f, backend.cfg);
  return kOk;
}

// -- pipeline ---------------------------------------------------------------

int cmd_pipeline(const Flags& f, const std::string& corpus, const std::string& out, unsigned jobs) {
  const auto s = load_settings(f);
  tabsem::PipelineOptions opt;
  opt.tokenizer = make_tokenizer(s);
  auto backend = make_backend(s);
  backend.cfg.recorder.reset();
  opt.backend = backend.cfg;
  opt.table_scripts = backend.per_table;
  opt.tmpl = prompt_template(s);
  opt.max_iterations = max_iterations(s);
  opt.mode = eval_mode(s);
  opt.jobs = jobs;
  opt.out_dir = out_dir_or(out, fs::path(corpus) / "out");
  opt.record = !f.record_script.empty();
  if (opt.mode == tabsem::EvalMode::Llm && opt.backend.backend_kind == tabsem::BackendKind::Mock && !opt.table_scripts &&
      jobs > 1)
    std::cerr << "warning: a single shared mock sequence with --jobs > 1 is consumed in nondeterministic order\n";

  const auto entries = tabsem::discover_corpus(corpus);
  if (entries.empty()) throw tabsem::InvalidInput("corpus has no .html tables: " + corpus);
  const auto run = tabsem::run_pipeline(entries, opt);
  if (opt.record) tabsem::write_text_file(f.record_script, tabsem::dump_script(run.recorded));

  std::size_t failed = 0, backend_failures = 0;
  for (const auto& r : run.reports) {
    std::cout << r.table_id << ": " << (r.ok ? "ok" : "FAILED (" + r.failed_stage + ": " + r.error + ")");
    if (r.ok) {
      if (const auto e = r.efficiency()) std::cout << " efficiency=" << fixed2(*e) << "%";
      std::cout << " final_valid=" << (r.final_valid.value_or(false) ? "true" : "false");
      if (r.isc) std::cout << " isc=" << fixed2(*r.isc);
      if (r.esc) std::cout << " esc=" << fixed2(*r.esc);
    }
    std::cout << "\n";
    if (!r.ok) {
      ++failed;
      if (r.error_kind == "backend") ++backend_failures;
    }
  }
  std::cout << (entries.size() - failed) << "/" << entries.size() << " tables succeeded; records in "
            << (opt.out_dir / "runs.jsonl").string() << "\n";
  if (failed == entries.size()) return backend_failures == failed ? kBackend : kInput;
  return kOk;
}

// -- evaluate ---------------------------------------------------------------

int cmd_evaluate(const Flags& f, const std::string& table, const std::string& pred_path, const std::string& gt_path,
                 const std::string& out) {
  const auto s = load_settings(f);
  const auto mode = eval_mode(s);
  const fs::path tp(table);
  const auto clean = tabsem::sanitize({tp.stem().string(), tabsem::read_text_file(tp)});
  const auto pred = tabsem::parse_semantic_json(tabsem::read_text_file(pred_path));

  tabsem::EvalScores scores;
  const auto intrinsic = tabsem::intrinsic_score(clean, pred);
  scores.isc = intrinsic.isc;
  scores.per_cell_hits = intrinsic.per_cell_hits;

  std::cout << "Cell content | Present in JSON\n";
  for (const auto& h : intrinsic.per_cell_hits) std::cout << h.text << " | " << (h.hit ? "1" : "0") << "\n";
  std::cout << "ISC: " << fixed2(*scores.isc) << "\n";

  std::optional<Backend> backend;
  if (!gt_path.empty()) {
    const auto gt = tabsem::parse_semantic_json(tabsem::read_text_file(gt_path));
    if (mode == tabsem::EvalMode::Llm) backend = make_backend(s, tp.stem().string());
    const auto* cfg = backend ? &backend->cfg : nullptr;
    auto items = tabsem::generate_questions(gt, tabsem::leaf_paths(gt), mode, cfg);
    const auto ext = tabsem::extrinsic_score(pred, std::move(items), mode, cfg);
    scores.esc = ext.esc;
    scores.qa_items = ext.items;
    std::cout << "\nQuestion | GT Answer | Predicted Answer | Score\n";
    for (const auto& q : scores.qa_items)
      std::cout << q.question << " | " << q.expected << " | " << q.predicted.value_or("(missing)") << " | "
                << (q.score ? std::to_string(*q.score) : std::string("-")) << "\n";
    std::cout << "ESC: " << fixed2(*scores.esc) << "\n";
    if (backend) save_recording(f, backend->cfg);
  }
  if (!out.empty()) tabsem::write_text_file(out, tabsem::to_json(scores).dump(2) + "\n");
  return kOk;
}

// -- report -----------------------------------------------------------------

int cmd_report(const std::string& runs, bool as_json) {
  const auto records = tabsem::read_jsonl(tabsem::read_text_file(runs));
  const auto sum = tabsem::summarize(records);
  if (as_json) {
    std::cout << tabsem::to_json(sum).dump(2) << "\n";
    return kOk;
  }
  std::cout << "records:               " << sum.records << " (" << sum.failed << " failed)\n";
  std::cout << "tokens before/after:   " << sum.tokens_before << " / " << sum.tokens_after << "\n";
  std::cout << "token efficiency:      " << (sum.efficiency ? fixed2(*sum.efficiency) + "%" : "n/a") << "\n";
  std::cout << "mean ISC:              " << (sum.mean_isc ? fixed2(*sum.mean_isc) : "n/a") << "\n";
  std::cout << "mean ESC:              " << (sum.mean_esc ? fixed2(*sum.mean_esc) : "n/a") << "\n";
  std::cout << "needed correction:     " << sum.needed_correction << "\n";
  std::cout << "correction iterations: " << sum.correction_iterations << "\n";
  std::cout << "final valid / invalid: " << sum.final_valid << " / " << sum.final_invalid << "\n";
  return kOk;
}

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "flat JSON config file")->check(CLI::ExistingFile);
  sub->add_option("--tokenizer", f.tokenizer, "'whitespace' or a tokenizer.json / vocab.json path");
  sub->add_option("--merges", f.merges, "merges.txt for a split vocab.json");
}

void add_backend(CLI::App* sub, Flags& f) {
  sub->add_option("--endpoint", f.endpoint, "OpenAI-compatible base URL");
  sub->add_option("--model", f.model, "model name");
  sub->add_option("--api-key-env", f.api_key_env, "environment variable holding the API key");
  sub->add_option_function<double>("--timeout", [&f](double v) { f.timeout_s = v; }, "request timeout in seconds");
  sub->add_option_function<int>("--retries", [&f](int v) { f.retries = v; }, "retries for transport errors, 5xx and 429");
  sub->add_option("--mock-script", f.mock_script, "replay completions from a JSON script")->check(CLI::ExistingFile);
  sub->add_option("--record-script", f.record_script, "save every completion as a replayable script");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tabsem: HTML tables to semantic JSON"};
  app.require_subcommand(1);
  Flags f;

  std::string input, corpus, out, output, pred, gt, codebook, trace, runs;
  unsigned jobs = 1;
  bool as_json = false;

  auto* opt = app.add_subcommand("optimize", "sanitize and encode tables, report token savings");
  add_common(opt, f);
  auto* opt_src = opt->add_option_group("source");
  opt_src->add_option("--input", input, "single HTML table file")->check(CLI::ExistingFile);
  opt_src->add_option("--corpus", corpus, "directory of {id}.html files")->check(CLI::ExistingDirectory);
  opt_src->require_option(1);
  opt->add_option("--out", out, "output directory");

  auto* syn = app.add_subcommand("synthesize", "encode a table and ask the model for JSON");
  add_common(syn, f);
  add_backend(syn, f);
  syn->add_option("--input", input, "HTML table file")->required()->check(CLI::ExistingFile);
  syn->add_option("--template", f.templ, "user prompt template file");
  syn->add_option("--system-template", f.system_templ, "system prompt file");
  syn->add_option("--out", out, "output directory");

  auto* cor = app.add_subcommand("correct", "repair invalid JSON with the model");
  add_common(cor, f);
  add_backend(cor, f);
  cor->add_option("--input", input, "JSON text file")->required()->check(CLI::ExistingFile);
  cor->add_option("--output", output, "write the result here instead of stdout");
  cor->add_option("--codebook", codebook, "decode the result with this codebook")->check(CLI::ExistingFile);
  cor->add_option("--trace", trace, "write the correction trace as JSON");
  cor->add_option_function<std::size_t>("--max-iterations", [&f](std::size_t v) { f.max_iterations = v; }, "correction rounds (default 3)");

  auto* pipe = app.add_subcommand("pipeline", "run every stage over a corpus");
  add_common(pipe, f);
  add_backend(pipe, f);
  pipe->add_option("--corpus", corpus, "directory of {id}.html [+ {id}.gt.json]")
      ->required()
      ->check(CLI::ExistingDirectory);
  pipe->add_option("--out", out, "output directory (default: <corpus>/out)");
  pipe->add_option("--jobs", jobs, "tables processed in parallel")->check(CLI::PositiveNumber);
  pipe->add_option("--template", f.templ, "user prompt template file");
  pipe->add_option("--system-template", f.system_templ, "system prompt file");
  pipe->add_option_function<std::size_t>("--max-iterations", [&f](std::size_t v) { f.max_iterations = v; }, "correction rounds (default 3)");
  pipe->add_option("--mode", f.mode, "evaluation mode")->check(CLI::IsMember({"structural", "llm"}));

  auto* ev = app.add_subcommand("evaluate", "score a JSON document against its table and ground truth");
  add_common(ev, f);
  add_backend(ev, f);
  ev->add_option("--table", input, "HTML table file")->required()->check(CLI::ExistingFile);
  ev->add_option("--pred", pred, "predicted JSON")->required()->check(CLI::ExistingFile);
  ev->add_option("--gt", gt, "ground-truth JSON")->check(CLI::ExistingFile);
  ev->add_option("--mode", f.mode, "evaluation mode")->check(CLI::IsMember({"structural", "llm"}));
  ev->add_option("--out", out, "write scores as JSON");

  auto* rep = app.add_subcommand("report", "aggregate a runs.jsonl file");
  rep->add_option("--runs", runs, "JSONL run records")->required()->check(CLI::ExistingFile);
  rep->add_flag("--json", as_json, "print the summary as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInput;
  }

  try {
    if (*opt) return cmd_optimize(f, input, corpus, out);
    if (*syn) return cmd_synthesize(f, input, out);
    if (*cor) return cmd_correct(f, input, output, codebook, trace);
    if (*pipe) return cmd_pipeline(f, corpus, out, jobs);
    if (*ev) return cmd_evaluate(f, input, pred, gt, out);
    if (*rep) return cmd_report(runs, as_json);
  } catch (const tabsem::BackendError& e) {
    std::cerr << "backend error: " << e.what() << "\n";
    return kBackend;
  } catch (const tabsem::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const tabsem::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInput;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  }
  return kInput;
}
