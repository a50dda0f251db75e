#pragma once

// Intrinsic score: share of unique cell texts that appear among the JSON's
// keys and scalar values.
// Extrinsic score: one question per root-to-leaf path of the ground truth,
// answered against the predicted JSON.

#include <cctype>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabsem/errors.hpp"
#include "tabsem/llm_gateway.hpp"
#include "tabsem/prompts.hpp"
#include "tabsem/table_ingest.hpp"
#include "tabsem/text.hpp"

namespace tabsem {

using SemanticJson = nlohmann::ordered_json;

inline SemanticJson parse_semantic_json(std::string_view text) {
  try {
    return SemanticJson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw JsonParseError(e.what(), e.byte);
  }
}

using PathSegment = std::variant<std::string, std::size_t>;

struct LeafPath {
  std::vector<PathSegment> segments;

  std::string rendered() const {
    if (segments.empty()) return "<root>";
    std::string out;
    for (std::size_t i = 0; i < segments.size(); ++i) {
      if (i) out += " > ";
      if (const auto* key = std::get_if<std::string>(&segments[i]))
        out += *key;
      else
        out += std::to_string(std::get<std::size_t>(segments[i]));
    }
    return out;
  }

  bool operator==(const LeafPath&) const = default;
};

struct QAItem {
  LeafPath path;
  std::string question;
  std::string expected;
  std::optional<std::string> predicted;
  std::optional<int> score;  // nullopt = unscored
  std::string flag;          // why an item is unscored or scored 0 without comparison
};

struct CellHit {
  std::string text;
  bool hit = false;
};

struct EvalScores {
  std::optional<double> isc;
  std::optional<double> esc;
  std::vector<CellHit> per_cell_hits;
  std::vector<QAItem> qa_items;
};

enum class EvalMode { Structural, Llm };

// Canonical string of a scalar; numbers use the shortest round-trip form.
inline std::optional<std::string> scalar_string(const SemanticJson& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number()) return v.dump();
  if (v.is_null()) return "null";
  return std::nullopt;
}

inline std::string normalize_element(std::string_view s) { return text::nfc(text::trim_view(s)); }

// Answers compare after NFC and Unicode-whitespace folding.
inline bool answers_match(std::string_view a, std::string_view b) {
  return text::fold_unicode_space(text::nfc(a)) == text::fold_unicode_space(text::nfc(b));
}

// Every object key and every non-null scalar, normalized.
inline std::set<std::string> json_elements(const SemanticJson& j) {
  std::set<std::string> out;
  auto walk = [&](auto&& self, const SemanticJson& v) -> void {
    if (v.is_object()) {
      for (auto it = v.begin(); it != v.end(); ++it) {
        out.insert(normalize_element(it.key()));
        self(self, it.value());
      }
    } else if (v.is_array()) {
      for (const auto& e : v) self(self, e);
    } else if (!v.is_null()) {
      out.insert(normalize_element(*scalar_string(v)));
    }
  };
  walk(walk, j);
  return out;
}

struct IntrinsicResult {
  double isc = 0.0;
  std::vector<CellHit> per_cell_hits;
};

// Unique non-empty cell texts, in first-appearance order.
inline std::vector<std::string> unique_cell_texts(const CleanTable& clean) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& c : clean.cells) {
    auto t = normalize_element(c.text);
    if (t.empty()) continue;
    if (seen.insert(t).second) out.push_back(std::move(t));
  }
  return out;
}

inline IntrinsicResult intrinsic_score(const CleanTable& clean, const SemanticJson& j) {
  const auto cells = unique_cell_texts(clean);
  if (cells.empty()) throw EmptyTable();
  const auto elements = json_elements(j);
  IntrinsicResult out;
  std::size_t hits = 0;
  for (const auto& c : cells) {
    const bool hit = elements.count(c) > 0;
    hits += hit;
    out.per_cell_hits.push_back({c, hit});
  }
  out.isc = 100.0 * static_cast<double>(hits) / static_cast<double>(cells.size());
  return out;
}

// Depth-first, keys in serialized order. Empty objects/arrays have no leaf.
inline std::vector<LeafPath> leaf_paths(const SemanticJson& gt) {
  std::vector<LeafPath> out;
  LeafPath cur;
  auto walk = [&](auto&& self, const SemanticJson& v) -> void {
    if (v.is_object()) {
      for (auto it = v.begin(); it != v.end(); ++it) {
        cur.segments.emplace_back(it.key());
        self(self, it.value());
        cur.segments.pop_back();
      }
    } else if (v.is_array()) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        cur.segments.emplace_back(i);
        self(self, v[i]);
        cur.segments.pop_back();
      }
    } else {
      out.push_back(cur);
    }
  };
  walk(walk, gt);
  return out;
}

// Follows a path; object keys match exactly first, then after normalization.
inline const SemanticJson* lookup(const SemanticJson& root, const LeafPath& path) {
  const SemanticJson* node = &root;
  for (const auto& seg : path.segments) {
    if (const auto* key = std::get_if<std::string>(&seg)) {
      if (!node->is_object()) return nullptr;
      auto it = node->find(*key);
      if (it == node->end()) {
        const auto want = normalize_element(*key);
        for (auto jt = node->begin(); jt != node->end(); ++jt)
          if (normalize_element(jt.key()) == want) {
            it = jt;
            break;
          }
      }
      if (it == node->end()) return nullptr;
      node = &*it;
    } else {
      const auto idx = std::get<std::size_t>(seg);
      if (!node->is_array() || idx >= node->size()) return nullptr;
      node = &(*node)[idx];
    }
  }
  return node;
}

inline std::string structural_question(const LeafPath& path) {
  return "What is the value at path: " + path.rendered() + "?";
}

inline std::vector<QAItem> generate_questions(const SemanticJson& gt, const std::vector<LeafPath>& paths,
                                              EvalMode mode, const BackendConfig* cfg = nullptr) {
  if (mode == EvalMode::Llm && !cfg) throw ConfigError("llm question generation needs a backend");
  std::vector<QAItem> items;
  items.reserve(paths.size());
  const auto gt_text = mode == EvalMode::Llm ? gt.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) : "";
  for (const auto& p : paths) {
    QAItem item;
    item.path = p;
    const auto* leaf = lookup(gt, p);
    if (!leaf || leaf->is_structured()) throw InvalidInput("path does not end at a scalar: " + p.rendered());
    item.expected = *scalar_string(*leaf);
    if (mode == EvalMode::Structural) {
      item.question = structural_question(p);
    } else {
      const auto rendered = p.rendered();
      const auto prompt = prompts::fill(prompts::kQuestion, {{"json", gt_text}, {"path", rendered}});
      try {
        item.question = text::trim(complete(*cfg, cfg->request({}, prompt)).content);
        if (item.question.empty()) item.flag = "empty_question";
      } catch (const BackendError& e) {
        item.flag = std::string("question_failed: ") + e.what();
      }
    }
    items.push_back(std::move(item));
  }
  return items;
}

struct Verdict {
  std::optional<std::string> predicted;
  std::optional<bool> match;  // nullopt when the reply has no verdict line
};

// Last non-empty line: MATCH / NO_MATCH. An "ANSWER:" line carries the prediction.
inline Verdict parse_verdict(std::string_view reply) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= reply.size()) {
    const auto nl = reply.find('\n', start);
    const auto line = text::trim(reply.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start));
    if (!line.empty()) lines.push_back(line);
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  Verdict v;
  if (lines.empty()) return v;
  auto upper = [](std::string s) {
    for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
  };
  auto last = upper(lines.back());
  while (!last.empty() && (last.back() == '.' || last.back() == '*')) last.pop_back();
  while (!last.empty() && last.front() == '*') last.erase(0, 1);
  if (last == "MATCH")
    v.match = true;
  else if (last == "NO_MATCH" || last == "NO MATCH" || last == "NOMATCH")
    v.match = false;
  const std::size_t limit = v.match ? lines.size() - 1 : lines.size();
  for (std::size_t i = 0; i < limit; ++i) {
    if (upper(lines[i].substr(0, 7)) == "ANSWER:") {
      v.predicted = text::trim(std::string_view(lines[i]).substr(7));
      break;
    }
  }
  if (!v.predicted && v.match && limit >= 1) v.predicted = lines[limit - 1];
  return v;
}

// Scores items whose `predicted` is already filled: 1 iff it matches `expected`.
inline double score_predictions(std::vector<QAItem>& items) {
  if (items.empty()) throw InvalidInput("no QA items to score");
  std::size_t total = 0;
  for (auto& it : items) {
    if (!it.flag.empty() && !it.predicted) continue;
    it.score = it.predicted && answers_match(*it.predicted, it.expected) ? 1 : 0;
    total += static_cast<std::size_t>(*it.score);
  }
  return 100.0 * static_cast<double>(total) / static_cast<double>(items.size());
}

struct ExtrinsicResult {
  double esc = 0.0;
  std::vector<QAItem> items;
};

// Structural mode looks each path up in `pred`; LLM mode asks the evaluator
// model once per item. Unscored items count as 0.
inline ExtrinsicResult extrinsic_score(const SemanticJson& pred, std::vector<QAItem> items, EvalMode mode,
                                       const BackendConfig* cfg = nullptr) {
  if (items.empty()) throw InvalidInput("no QA items to score");
  if (mode == EvalMode::Llm && !cfg) throw ConfigError("llm evaluation needs a backend");
  ExtrinsicResult out;
  std::size_t total = 0;
  const auto pred_text = mode == EvalMode::Llm ? pred.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) : "";
  for (auto& it : items) {
    if (mode == EvalMode::Structural) {
      const auto* leaf = lookup(pred, it.path);
      if (leaf && !leaf->is_structured()) it.predicted = scalar_string(*leaf);
      it.score = it.predicted && answers_match(*it.predicted, it.expected) ? 1 : 0;
    } else {
      if (!it.flag.empty()) continue;  // question generation failed: unscored
      const auto prompt = prompts::fill(
          prompts::kEvaluate, {{"json", pred_text}, {"question", it.question}, {"expected", it.expected}});
      try {
        const auto v = parse_verdict(complete(*cfg, cfg->request({}, prompt)).content);
        it.predicted = v.predicted;
        if (v.match) {
          it.score = *v.match ? 1 : 0;
        } else {
          it.score = 0;
          it.flag = "unparseable_verdict";
        }
      } catch (const BackendError& e) {
        it.flag = std::string("evaluation_failed: ") + e.what();
      }
    }
    if (it.score) total += static_cast<std::size_t>(*it.score);
  }
  out.esc = 100.0 * static_cast<double>(total) / static_cast<double>(items.size());
  out.items = std::move(items);
  return out;
}

inline nlohmann::ordered_json to_json(const LeafPath& p) {
  auto segs = nlohmann::ordered_json::array();
  for (const auto& s : p.segments) {
    if (const auto* key = std::get_if<std::string>(&s))
      segs.push_back(*key);
    else
      segs.push_back(std::get<std::size_t>(s));
  }
  return segs;
}

inline nlohmann::ordered_json to_json(const EvalScores& s) {
  nlohmann::ordered_json j;
  j["isc"] = s.isc ? nlohmann::ordered_json(*s.isc) : nlohmann::ordered_json(nullptr);
  j["esc"] = s.esc ? nlohmann::ordered_json(*s.esc) : nlohmann::ordered_json(nullptr);
  auto& cells = j["per_cell_hits"] = nlohmann::ordered_json::array();
  for (const auto& c : s.per_cell_hits) cells.push_back({{"cell", c.text}, {"hit", c.hit}});
  auto& qa = j["qa_items"] = nlohmann::ordered_json::array();
  for (const auto& it : s.qa_items) {
    nlohmann::ordered_json q;
    q["path"] = it.path.rendered();
    q["segments"] = to_json(it.path);
    q["question"] = it.question;
    q["expected"] = it.expected;
    q["predicted"] = it.predicted ? nlohmann::ordered_json(*it.predicted) : nlohmann::ordered_json(nullptr);
    q["score"] = it.score ? nlohmann::ordered_json(*it.score) : nlohmann::ordered_json(nullptr);
    if (!it.flag.empty()) q["flag"] = it.flag;
    qa.push_back(std::move(q));
  }
  return j;
}

}  // namespace tabsem
