#pragma once

#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "tabsem/context_optimizer.hpp"
#include "tabsem/errors.hpp"
#include "tabsem/llm_gateway.hpp"
#include "tabsem/prompts.hpp"
#include "tabsem/text.hpp"

namespace tabsem {

struct PromptTemplate {
  std::string name = "synthesize.v1";
  std::string system{prompts::kSynthesizeSystem};
  std::string user_prefix{prompts::kSynthesizeUser};

  // A "{table}" placeholder is substituted; without one the table is appended.
  std::string render(std::string_view table_html) const {
    if (user_prefix.find("{table}") != std::string::npos) return prompts::fill(user_prefix, {{"table", table_html}});
    return user_prefix + std::string(table_html);
  }

  static PromptTemplate load(const std::filesystem::path& user_file, const std::filesystem::path& system_file = {}) {
    auto slurp = [](const std::filesystem::path& p) {
      std::ifstream in(p, std::ios::binary);
      if (!in) throw InvalidInput("cannot read template " + p.string());
      std::ostringstream ss;
      ss << in.rdbuf();
      return ss.str();
    };
    PromptTemplate t;
    t.name = user_file.stem().string();
    t.user_prefix = slurp(user_file);
    if (!system_file.empty()) t.system = slurp(system_file);
    return t;
  }
};

// Removes a surrounding ``` / ```lang fence. Content without a leading fence
// is returned byte-for-byte.
inline std::string strip_code_fence(std::string_view content) {
  const auto t = text::trim_view(content);
  if (!text::starts_with(t, "```")) return std::string(content);
  std::string_view body = t.substr(3);
  if (const auto nl = body.find('\n'); nl != std::string_view::npos) {
    body = body.substr(nl + 1);
  } else {
    // single line: ```json {...}```
    std::size_t k = 0;
    while (k < body.size() && std::isalnum(static_cast<unsigned char>(body[k]))) ++k;
    if (k < body.size() && (text::is_html_space(body[k]) || body[k] == '{' || body[k] == '[')) body = body.substr(k);
  }
  body = text::trim_view(body);
  if (body.size() >= 3 && body.substr(body.size() - 3) == "```") body = body.substr(0, body.size() - 3);
  return text::trim(body);
}

// Prompts the model with the encoded table and returns its JSON text in the
// encoded space. No decoding and no validation happen here.
inline std::string synthesize(const EncodedTable& enc, const PromptTemplate& tmpl, const BackendConfig& cfg) {
  const auto req = cfg.request(tmpl.system, tmpl.render(enc.html));
  const auto res = complete(cfg, req);
  if (text::trim_view(res.content).empty()) throw EmptyCompletion();
  return strip_code_fence(res.content);
}

}  // namespace tabsem
