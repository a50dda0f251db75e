#pragma once

// JSON syntax diagnosis and the reflective repair loop: the model is asked to
// fix the document until it parses or the iteration budget runs out.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabsem/errors.hpp"
#include "tabsem/llm_gateway.hpp"
#include "tabsem/prompts.hpp"
#include "tabsem/synthesizer.hpp"

namespace tabsem {

enum class FailureMode { MissingListEnclosure, UnmatchedCurlyBraces, MissingCommas, MisplacedQuotes, Other };

inline std::string_view to_string(FailureMode m) {
  switch (m) {
    case FailureMode::MissingListEnclosure: return "MissingListEnclosure";
    case FailureMode::UnmatchedCurlyBraces: return "UnmatchedCurlyBraces";
    case FailureMode::MissingCommas: return "MissingCommas";
    case FailureMode::MisplacedQuotes: return "MisplacedQuotes";
    case FailureMode::Other: return "Other";
  }
  return "Other";
}

struct SyntaxDiagnosis {
  bool valid = false;
  std::optional<std::size_t> error_offset;
  std::set<FailureMode> failure_modes;

  bool has(FailureMode m) const { return failure_modes.count(m) > 0; }
  bool operator==(const SyntaxDiagnosis&) const = default;
};

namespace detail {

// Accepts every event; records where parsing failed.
struct ErrorLocator : nlohmann::json_sax<nlohmann::json> {
  std::size_t position = 0;
  std::string last_token;
  bool failed = false;

  bool null() override { return true; }
  bool boolean(bool) override { return true; }
  bool number_integer(number_integer_t) override { return true; }
  bool number_unsigned(number_unsigned_t) override { return true; }
  bool number_float(number_float_t, const string_t&) override { return true; }
  bool string(string_t&) override { return true; }
  bool binary(binary_t&) override { return true; }
  bool start_object(std::size_t) override { return true; }
  bool key(string_t&) override { return true; }
  bool end_object() override { return true; }
  bool start_array(std::size_t) override { return true; }
  bool end_array() override { return true; }
  bool parse_error(std::size_t pos, const std::string& token, const nlohmann::detail::exception&) override {
    failed = true;
    position = pos;
    last_token = token;
    return false;
  }
};

// Bracket depth (string-aware) just before byte `upto`.
struct Scan {
  int curly_open = 0;
  int curly_close = 0;
  bool negative_depth = false;
  int top_level_objects = 0;
  int depth_at_offset = 0;
};

inline Scan scan_structure(std::string_view s, std::size_t upto) {
  Scan sc;
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i == upto) sc.depth_at_offset = depth;
    const char c = s[i];
    if (in_string) {
      if (escaped)
        escaped = false;
      else if (c == '\\')
        escaped = true;
      else if (c == '"')
        in_string = false;
      continue;
    }
    switch (c) {
      case '"': in_string = true; break;
      case '{':
        ++sc.curly_open;
        if (depth == 0) ++sc.top_level_objects;
        ++depth;
        break;
      case '[': ++depth; break;
      case '}':
        ++sc.curly_close;
        if (--depth < 0) sc.negative_depth = true;
        break;
      case ']':
        if (--depth < 0) sc.negative_depth = true;
        break;
      default: break;
    }
  }
  if (upto >= s.size()) sc.depth_at_offset = depth;
  return sc;
}

inline bool ends_value(char c) {
  return c == '"' || c == '}' || c == ']' || (c >= '0' && c <= '9') || c == 'e' || c == 'l';
}

inline bool starts_value(char c) {
  return c == '"' || c == '{' || c == '[' || (c >= '0' && c <= '9') || c == '-' || c == 't' || c == 'f' || c == 'n';
}

}  // namespace detail

inline SyntaxDiagnosis validate_json(std::string_view text) {
  detail::ErrorLocator loc;
  nlohmann::json::sax_parse(text.begin(), text.end(), &loc);
  SyntaxDiagnosis d;
  if (!loc.failed) {
    d.valid = true;
    return d;
  }
  // the reported token can carry earlier structural characters ("1} {"); a
  // structural character is always the single offending byte
  const auto& tok = loc.last_token;
  const bool structural = !tok.empty() && std::string_view("{}[]:,").find(tok.back()) != std::string_view::npos;
  const std::size_t width = structural ? 1 : tok.size();
  const std::size_t offset = loc.position >= width ? loc.position - width : 0;
  d.error_offset = std::min(offset, text.size());

  const auto sc = detail::scan_structure(text, *d.error_offset);
  const auto trimmed = text::trim_view(text);
  if (!trimmed.empty() && trimmed.front() == '{' && sc.top_level_objects >= 2)
    d.failure_modes.insert(FailureMode::MissingListEnclosure);
  if (sc.curly_open != sc.curly_close || sc.negative_depth) d.failure_modes.insert(FailureMode::UnmatchedCurlyBraces);

  // 123,"456,789"  or  "123,456",789
  static const std::regex split_number(R"re([0-9],"[0-9]{3}(,[0-9]{3})*"|"[0-9]{1,3}(,[0-9]{3})+",[0-9])re");
  if (std::regex_search(text.begin(), text.end(), split_number)) d.failure_modes.insert(FailureMode::MisplacedQuotes);

  if (sc.depth_at_offset >= 1 && *d.error_offset < text.size() && detail::starts_value(text[*d.error_offset])) {
    std::size_t p = *d.error_offset;
    while (p > 0 && text::is_html_space(text[p - 1])) --p;
    if (p > 0 && detail::ends_value(text[p - 1])) d.failure_modes.insert(FailureMode::MissingCommas);
  }
  if (d.failure_modes.empty()) d.failure_modes.insert(FailureMode::Other);
  return d;
}

struct CorrectionStep {
  std::string input_text;
  std::string output_text;
  SyntaxDiagnosis diagnosis;  // of output_text
};

struct CorrectionTrace {
  std::vector<CorrectionStep> iterations;
  bool final_valid = false;
  std::size_t iterations_used = 0;
};

struct CorrectionResult {
  std::string final_text;
  CorrectionTrace trace;
};

inline constexpr std::size_t kDefaultMaxIterations = 3;

// Valid input returns immediately without a model call. Otherwise each round
// sends the correction prompt with the current text and adopts the
// (fence-stripped) reply. Persistent invalidity is reported, not thrown.
inline CorrectionResult correct(std::string text, const BackendConfig& cfg,
                                std::size_t max_iterations = kDefaultMaxIterations) {
  if (max_iterations < 1) throw InvalidInput("max_iterations must be >= 1");
  CorrectionResult out;
  if (validate_json(text).valid) {
    out.trace.final_valid = true;
    out.final_text = std::move(text);
    return out;
  }
  std::string current = std::move(text);
  while (out.trace.iterations.size() < max_iterations) {
    const auto prompt = prompts::fill(prompts::kCorrection, {{"json_input", current}});
    const auto reply = strip_code_fence(complete(cfg, cfg.request({}, prompt)).content);
    auto diag = validate_json(reply);
    const bool ok = diag.valid;
    out.trace.iterations.push_back({current, reply, std::move(diag)});
    current = reply;
    if (ok) break;
  }
  out.trace.iterations_used = out.trace.iterations.size();
  out.trace.final_valid = out.trace.iterations.back().diagnosis.valid;
  out.final_text = std::move(current);
  return out;
}

}  // namespace tabsem
