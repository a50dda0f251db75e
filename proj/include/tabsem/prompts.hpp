#pragma once

// Versioned prompt assets. The canonical copies live in assets/prompts/ and a
// test keeps these literals byte-identical to them.

#include <initializer_list>
#include <string>
#include <string_view>
#include <utility>

namespace tabsem::prompts {

// correction.v1.txt
inline constexpr std::string_view kCorrection = R"(The JSON given below contains syntax errors. Your task is to correct them and provide the corrected output. Provide ONLY the corrected output, without any additional explanation. 'input_string': {json_input})";

// synthesize.system.v1.txt
inline constexpr std::string_view kSynthesizeSystem = R"(You convert HTML tables into semantic JSON. Keys mirror the table's header hierarchy so that every value sits under the headers that describe it. Copy cell text exactly as it appears in the table, including abbreviated or truncated text. Reply with the JSON only.)";

// synthesize.user.v1.txt
inline constexpr std::string_view kSynthesizeUser = R"(Convert the following HTML table into semantic JSON.

{table})";

// question.v1.txt
inline constexpr std::string_view kQuestion = R"(Below is a JSON document and a path from its root to one leaf value. Write a single question whose answer is exactly the value stored at the end of the path. Reply with the question only.

JSON:
{json}

Path: {path})";

// evaluate.v1.txt
inline constexpr std::string_view kEvaluate = R"(Answer the question using only the JSON document below, then compare your answer with the expected answer.
Reply with two lines:
ANSWER: <your answer>
MATCH or NO_MATCH

JSON:
{json}

Question: {question}
Expected answer: {expected})";

// Single-pass "{name}" substitution; substituted values are never rescanned.
inline std::string fill(std::string_view tmpl, std::initializer_list<std::pair<std::string_view, std::string_view>> vars) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    bool replaced = false;
    if (tmpl[i] == '{') {
      for (const auto& [name, value] : vars) {
        if (tmpl.compare(i + 1, name.size(), name) == 0 && i + 1 + name.size() < tmpl.size() &&
            tmpl[i + 1 + name.size()] == '}') {
          out += value;
          i += name.size() + 2;
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out += tmpl[i++];
  }
  return out;
}

}  // namespace tabsem::prompts
