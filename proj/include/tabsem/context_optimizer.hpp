#pragma once

// Token-based encoding of cell contents and the matching decoder.
//
// Each unique cell text is rewritten to the shortest token prefix that
//   * keeps at least two tokens (texts of one or two tokens are left alone),
//   * closes every bracket it opens,
//   * ends on a code point boundary,
//   * differs from every encoding assigned before it and from every other
//     cell's original text.
// Cells are processed shortest-first (token count), ties in document order.
// The mapping lives in a per-document Codebook; nothing persists across calls.

#include <algorithm>
#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tabsem/errors.hpp"
#include "tabsem/table_ingest.hpp"
#include "tabsem/text.hpp"
#include "tabsem/tokenizer.hpp"

namespace tabsem {

struct CodebookEntry {
  std::string original;
  std::string encoded;

  bool operator==(const CodebookEntry&) const = default;
};

class Codebook {
 public:
  Codebook() = default;
  Codebook(std::string tokenizer_name, std::vector<CodebookEntry> entries)
      : tokenizer_name_(std::move(tokenizer_name)), entries_(std::move(entries)) {
    index();
  }

  const std::string& tokenizer_name() const noexcept { return tokenizer_name_; }
  const std::vector<CodebookEntry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  const std::string* original_of(std::string_view encoded) const {
    const auto it = by_encoded_.find(std::string(encoded));
    return it == by_encoded_.end() ? nullptr : &entries_[it->second].original;
  }

  const std::string* encoded_of(std::string_view original) const {
    const auto it = by_original_.find(std::string(original));
    return it == by_original_.end() ? nullptr : &entries_[it->second].encoded;
  }

  // Entries with a non-empty encoded form, longest encoded form first.
  const std::vector<std::size_t>& by_length_desc() const noexcept { return by_length_; }

  // Empty when every codebook invariant holds; otherwise one message per violation.
  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    std::unordered_set<std::string> originals, encodeds;
    for (const auto& e : entries_) {
      if (!originals.insert(e.original).second) out.push_back("duplicate original: " + e.original);
      if (!encodeds.insert(e.encoded).second) out.push_back("duplicate encoded form: " + e.encoded);
      if (!text::starts_with(e.original, e.encoded))
        out.push_back("encoded form is not a prefix: " + e.encoded + " of " + e.original);
      if (bracket_balanced(e.original) && !bracket_balanced(e.encoded))
        out.push_back("unbalanced brackets in encoded form: " + e.encoded);
    }
    for (const auto& e : entries_)
      if (e.encoded != e.original && originals.count(e.encoded))
        out.push_back("encoded form equals another cell's original: " + e.encoded);
    return out;
  }

  // Brackets counted per opening type: ( [ {.
  static bool bracket_balanced(std::string_view s) {
    std::array<int, 3> depth{};
    for (char c : s) {
      switch (c) {
        case '(': ++depth[0]; break;
        case ')': --depth[0]; break;
        case '[': ++depth[1]; break;
        case ']': --depth[1]; break;
        case '{': ++depth[2]; break;
        case '}': --depth[2]; break;
        default: break;
      }
    }
    return depth[0] <= 0 && depth[1] <= 0 && depth[2] <= 0;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["tokenizer"] = tokenizer_name_;
    auto& arr = j["entries"] = nlohmann::ordered_json::array();
    for (const auto& e : entries_) arr.push_back({{"original", e.original}, {"encoded", e.encoded}});
    return j;
  }

  static Codebook from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("entries") || !j["entries"].is_array())
      throw InvalidInput("codebook must be an object with an \"entries\" array");
    std::vector<CodebookEntry> entries;
    for (const auto& e : j["entries"]) {
      if (!e.is_object() || !e.contains("original") || !e.contains("encoded") || !e["original"].is_string() ||
          !e["encoded"].is_string())
        throw InvalidInput("codebook entry needs string \"original\" and \"encoded\"");
      entries.push_back({e["original"].get<std::string>(), e["encoded"].get<std::string>()});
    }
    return Codebook(j.value("tokenizer", std::string{}), std::move(entries));
  }

  static Codebook parse(std::string_view json_text) {
    try {
      return from_json(nlohmann::json::parse(json_text));
    } catch (const nlohmann::json::parse_error& e) {
      throw JsonParseError(e.what(), e.byte);
    }
  }

 private:
  void index() {
    by_encoded_.clear();
    by_original_.clear();
    by_length_.clear();
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      by_encoded_.emplace(entries_[i].encoded, i);
      by_original_.emplace(entries_[i].original, i);
      if (!entries_[i].encoded.empty()) by_length_.push_back(i);
    }
    std::stable_sort(by_length_.begin(), by_length_.end(), [&](std::size_t a, std::size_t b) {
      return entries_[a].encoded.size() > entries_[b].encoded.size();
    });
  }

  std::string tokenizer_name_;
  std::vector<CodebookEntry> entries_;
  std::unordered_map<std::string, std::size_t> by_encoded_;
  std::unordered_map<std::string, std::size_t> by_original_;
  std::vector<std::size_t> by_length_;
};

struct EncodedTable {
  std::string id;
  std::string html;
  Codebook codebook;
  std::size_t tokens_before = 0;
  std::size_t tokens_after = 0;
};

namespace detail {

inline bool has_unclosed_bracket(std::string_view s) { return !Codebook::bracket_balanced(s); }

// sanitize would trim it away when the encoded html is read back
inline bool ends_in_space(std::string_view s) { return !s.empty() && text::is_html_space(s.back()); }

}  // namespace detail

// Encodes a list of unique texts in the order given. Exposed separately from
// encode_table so the assignment can be checked in isolation.
inline std::vector<std::string> assign_encodings(const std::vector<std::string>& ordered_texts,
                                                 const std::vector<TokenSeq>& tokens) {
  const std::unordered_set<std::string> originals(ordered_texts.begin(), ordered_texts.end());
  std::unordered_set<std::string> assigned;
  std::vector<std::string> out;
  out.reserve(ordered_texts.size());

  for (std::size_t i = 0; i < ordered_texts.size(); ++i) {
    const auto& original = ordered_texts[i];
    const auto& toks = tokens[i];
    const std::size_t n = toks.size();

    std::size_t used = std::min<std::size_t>(n, 2);
    std::string candidate = toks.prefix(used);
    auto must_extend = [&](const std::string& c) {
      if (c == original) return false;  // full text always terminates the loop
      return detail::has_unclosed_bracket(c) || text::complete_utf8_prefix(c) != c.size() ||
             detail::ends_in_space(c) || assigned.count(c) > 0 || originals.count(c) > 0;
    };
    while (used < n && must_extend(candidate)) candidate += toks.surfaces[used++];
    if (used == n) candidate = original;

    assigned.insert(candidate);
    out.push_back(std::move(candidate));
  }
  return out;
}

// Unique cell texts in processing order: ascending token count, ties by first
// appearance in the document.
inline std::vector<std::string> processing_order(const std::vector<Cell>& cells, const Tokenizer& tok,
                                                 std::vector<TokenSeq>* tokens_out = nullptr) {
  std::vector<std::string> unique;
  std::unordered_set<std::string> seen;
  for (const auto& c : cells)
    if (seen.insert(c.text).second) unique.push_back(c.text);

  std::vector<TokenSeq> toks;
  toks.reserve(unique.size());
  for (const auto& u : unique) toks.push_back(tok.tokenize(u));

  std::vector<std::size_t> order(unique.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return toks[a].size() < toks[b].size(); });

  std::vector<std::string> sorted;
  std::vector<TokenSeq> sorted_toks;
  sorted.reserve(order.size());
  sorted_toks.reserve(order.size());
  for (auto i : order) {
    sorted.push_back(std::move(unique[i]));
    sorted_toks.push_back(std::move(toks[i]));
  }
  if (tokens_out) *tokens_out = std::move(sorted_toks);
  return sorted;
}

inline EncodedTable encode_table(const CleanTable& clean, const Tokenizer& tok) {
  std::vector<TokenSeq> toks;
  const auto ordered = processing_order(clean.cells, tok, &toks);
  const auto encoded = assign_encodings(ordered, toks);

  std::vector<CodebookEntry> entries;
  entries.reserve(ordered.size());
  for (std::size_t i = 0; i < ordered.size(); ++i) entries.push_back({ordered[i], encoded[i]});

  EncodedTable out;
  out.id = clean.id;
  out.codebook = Codebook(tok.name(), std::move(entries));
  out.html = html::render(clean, [&](const Cell& c) -> const std::string& { return *out.codebook.encoded_of(c.text); });
  out.tokens_before = count_tokens(tok, clean.html);
  out.tokens_after = count_tokens(tok, out.html);
  return out;
}

// Restores original cell texts in a model-produced string.
// Stage 1: the whole string is an encoded form.
// Stage 2: left-to-right scan, longest encoded form first at each position,
//          non-overlapping; unmatched bytes pass through.
inline std::string decode_text(std::string_view s, const Codebook& cb) {
  if (const auto* orig = cb.original_of(s)) return *orig;

  const auto& order = cb.by_length_desc();
  if (order.empty()) return std::string(s);
  // bucket by first byte, keeping the longest-first order within a bucket
  std::array<std::vector<std::size_t>, 256> buckets;
  for (auto i : order) buckets[static_cast<unsigned char>(cb.entries()[i].encoded[0])].push_back(i);

  std::string out;
  out.reserve(s.size());
  std::size_t pos = 0;
  while (pos < s.size()) {
    bool matched = false;
    for (auto i : buckets[static_cast<unsigned char>(s[pos])]) {
      const auto& e = cb.entries()[i];
      if (s.compare(pos, e.encoded.size(), e.encoded) == 0) {
        out += e.original;
        pos += e.encoded.size();
        matched = true;
        break;
      }
    }
    if (!matched) out += s[pos++];
  }
  return out;
}

namespace detail {

inline void append_hex4(std::string_view s, std::size_t& i, unsigned& v) {
  v = 0;
  for (int k = 0; k < 4; ++k) {
    const char c = s[i++];
    v <<= 4;
    if (c >= '0' && c <= '9')
      v |= static_cast<unsigned>(c - '0');
    else if (c >= 'a' && c <= 'f')
      v |= static_cast<unsigned>(c - 'a' + 10);
    else
      v |= static_cast<unsigned>(c - 'A' + 10);
  }
}

// Reads the JSON string literal starting at s[i] == '"'; i ends past the closing quote.
inline std::string read_json_string(std::string_view s, std::size_t& i) {
  std::string out;
  ++i;
  while (s[i] != '"') {
    const char c = s[i++];
    if (c != '\\') {
      out += c;
      continue;
    }
    const char e = s[i++];
    switch (e) {
      case 'b': out += '\b'; break;
      case 'f': out += '\f'; break;
      case 'n': out += '\n'; break;
      case 'r': out += '\r'; break;
      case 't': out += '\t'; break;
      case 'u': {
        unsigned hi = 0;
        append_hex4(s, i, hi);
        char32_t cp = hi;
        if (hi >= 0xD800 && hi <= 0xDBFF && i + 6 <= s.size() && s[i] == '\\' && s[i + 1] == 'u') {
          std::size_t j = i + 2;
          unsigned lo = 0;
          append_hex4(s, j, lo);
          if (lo >= 0xDC00 && lo <= 0xDFFF) {
            cp = 0x10000 + ((hi - 0xD800) << 10) + (lo - 0xDC00);
            i = j;
          }
        }
        if (cp >= 0xD800 && cp <= 0xDFFF) cp = 0xFFFD;
        text::append_utf8(out, cp);
        break;
      }
      default: out += e;  // \" \\ \/
    }
  }
  ++i;
  return out;
}

}  // namespace detail

// Decodes every object key and string scalar; numbers, literals and layout
// are copied byte-for-byte.
inline std::string decode_json(std::string_view json_text, const Codebook& cb) {
  try {
    [[maybe_unused]] const auto parsed = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw JsonParseError(e.what(), e.byte);
  }
  std::string out;
  out.reserve(json_text.size());
  std::size_t i = 0;
  while (i < json_text.size()) {
    if (json_text[i] == '"') {
      const auto value = detail::read_json_string(json_text, i);
      out += text::json_quote(decode_text(value, cb));
    } else {
      out += json_text[i++];
    }
  }
  return out;
}

// (1 - after/before) * 100, unrounded.
inline double token_efficiency(std::size_t tokens_before, std::size_t tokens_after) {
  if (tokens_before == 0) throw InvalidInput("token_efficiency: tokens_before must be > 0");
  return (1.0 - static_cast<double>(tokens_after) / static_cast<double>(tokens_before)) * 100.0;
}

}  // namespace tabsem
