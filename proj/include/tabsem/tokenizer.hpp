#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <unicode/uchar.h>

#include "tabsem/errors.hpp"
#include "tabsem/text.hpp"

namespace tabsem {

using TokenId = std::uint32_t;

// Surfaces are raw byte strings; a byte-level tokenizer may split a code
// point across two surfaces.
struct TokenSeq {
  std::vector<TokenId> token_ids;
  std::vector<std::string> surfaces;

  std::size_t size() const noexcept { return token_ids.size(); }
  bool empty() const noexcept { return token_ids.empty(); }

  // Concatenation of the first n surfaces.
  std::string prefix(std::size_t n) const {
    std::string out;
    for (std::size_t i = 0; i < n && i < surfaces.size(); ++i) out += surfaces[i];
    return out;
  }
};

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual const std::string& name() const noexcept = 0;
  virtual std::size_t vocab_size() const noexcept = 0;
  virtual TokenSeq tokenize(std::string_view text) const = 0;
};

// Immutable after construction; share freely across threads.
using TokenizerHandle = std::shared_ptr<const Tokenizer>;

inline TokenSeq tokenize(const Tokenizer& h, std::string_view text) { return h.tokenize(text); }
inline std::size_t count_tokens(const Tokenizer& h, std::string_view text) { return h.tokenize(text).size(); }

// Splits at ASCII spaces; each space attaches to the token that follows it.
// Ids are FNV-1a hashes of the surface folded into a 2^24 id space.
class WhitespaceTokenizer final : public Tokenizer {
 public:
  static constexpr std::size_t kVocabSize = std::size_t{1} << 24;

  const std::string& name() const noexcept override { return name_; }
  std::size_t vocab_size() const noexcept override { return kVocabSize; }

  TokenSeq tokenize(std::string_view text) const override {
    TokenSeq seq;
    std::size_t i = 0;
    while (i < text.size()) {
      std::size_t j = i;
      if (text[j] == ' ') ++j;  // the separator leads
      while (j < text.size() && text[j] != ' ') ++j;
      push(seq, text.substr(i, j - i));
      i = j;
    }
    return seq;
  }

 private:
  static void push(TokenSeq& seq, std::string_view surface) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : surface) {
      h ^= c;
      h *= 1099511628211ull;
    }
    seq.token_ids.push_back(static_cast<TokenId>(h % kVocabSize));
    seq.surfaces.emplace_back(surface);
  }

  std::string name_ = "whitespace-test";
};

inline TokenizerHandle whitespace_tokenizer() { return std::make_shared<const WhitespaceTokenizer>(); }

namespace bpe {

// The GPT-2 reversible byte <-> printable code point table used by byte-level
// BPE vocabularies (Llama 3 included).
inline const std::array<char32_t, 256>& byte_to_unicode() {
  static const std::array<char32_t, 256> table = [] {
    std::array<char32_t, 256> t{};
    std::array<bool, 256> direct{};
    for (int b = '!'; b <= '~'; ++b) direct[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
    char32_t extra = 256;
    for (int b = 0; b < 256; ++b) t[b] = direct[b] ? static_cast<char32_t>(b) : extra++;
    return t;
  }();
  return table;
}

inline const std::unordered_map<char32_t, unsigned char>& unicode_to_byte() {
  static const std::unordered_map<char32_t, unsigned char> table = [] {
    std::unordered_map<char32_t, unsigned char> m;
    const auto& fwd = byte_to_unicode();
    for (int b = 0; b < 256; ++b) m.emplace(fwd[b], static_cast<unsigned char>(b));
    return m;
  }();
  return table;
}

// Maps a vocabulary token string (byte-level alphabet) to raw bytes.
inline std::optional<std::string> token_to_bytes(std::string_view token) {
  const auto& dec = unicode_to_byte();
  std::string out;
  std::size_t i = 0;
  while (i < token.size()) {
    std::size_t len = 0;
    const auto cp = text::decode_utf8(token, i, len);
    if (!cp) return std::nullopt;
    const auto it = dec.find(*cp);
    if (it == dec.end()) return std::nullopt;
    out += static_cast<char>(it->second);
    i += len;
  }
  return out;
}

inline std::string bytes_to_token(std::string_view bytes) {
  std::string out;
  for (unsigned char b : bytes) text::append_utf8(out, byte_to_unicode()[b]);
  return out;
}

enum class CharClass { Letter, Number, Space, Other };

inline CharClass classify(char32_t cp) {
  const auto c = static_cast<UChar32>(cp);
  if (u_isUWhiteSpace(c)) return CharClass::Space;
  const auto mask = U_GET_GC_MASK(c);
  if (mask & U_GC_L_MASK) return CharClass::Letter;
  if (mask & U_GC_N_MASK) return CharClass::Number;
  return CharClass::Other;
}

// GPT-2 style pre-tokenization without contraction rules:
//   ' ?\p{L}+ | ' ?\p{N}+ | ' ?[^\s\p{L}\p{N}]+ | \s+(?!\S) | \s+
// Chunks concatenate back to the input; invalid UTF-8 bytes form Other runs.
inline std::vector<std::string_view> pre_tokenize(std::string_view s) {
  struct Unit {
    std::size_t pos, len;
    CharClass cls;
  };
  std::vector<Unit> units;
  for (std::size_t i = 0; i < s.size();) {
    std::size_t len = 1;
    const auto cp = text::decode_utf8(s, i, len);
    units.push_back({i, cp ? len : 1, cp ? classify(*cp) : CharClass::Other});
    i += cp ? len : 1;
  }

  std::vector<std::string_view> chunks;
  std::size_t u = 0;
  auto emit = [&](std::size_t from, std::size_t to) {  // unit range [from, to)
    const std::size_t b = units[from].pos;
    const std::size_t e = units[to - 1].pos + units[to - 1].len;
    chunks.push_back(s.substr(b, e - b));
  };
  while (u < units.size()) {
    const std::size_t start = u;
    if (units[u].cls == CharClass::Space) {
      std::size_t v = u;
      while (v < units.size() && units[v].cls == CharClass::Space) ++v;
      // leave a trailing single ' ' to lead the next word
      if (v < units.size() && v - u >= 1 && s[units[v - 1].pos] == ' ' && units[v - 1].len == 1) {
        if (v - 1 > u) emit(u, v - 1);
        u = v - 1;
        const CharClass cls = units[v].cls;
        std::size_t w = v;
        while (w < units.size() && units[w].cls == cls) ++w;
        emit(u, w);
        u = w;
      } else if (v < units.size() && v - u >= 2) {
        emit(u, v - 1);
        emit(v - 1, v);
        u = v;
      } else {
        emit(u, v);
        u = v;
      }
      continue;
    }
    const CharClass cls = units[u].cls;
    while (u < units.size() && units[u].cls == cls) ++u;
    emit(start, u);
  }
  return chunks;
}

}  // namespace bpe

// Byte-level BPE over a token->id vocabulary and ranked merges.
class BpeTokenizer final : public Tokenizer {
 public:
  BpeTokenizer(std::string name, std::unordered_map<std::string, TokenId> vocab_bytes,
               const std::vector<std::pair<std::string, std::string>>& merges_bytes)
      : name_(std::move(name)), vocab_(std::move(vocab_bytes)) {
    TokenId next = 0;
    for (const auto& [_, id] : vocab_) next = std::max<TokenId>(next, id + 1);
    for (int b = 0; b < 256; ++b) {
      const std::string key(1, static_cast<char>(b));
      if (vocab_.find(key) == vocab_.end()) vocab_.emplace(key, next++);
    }
    vocab_size_ = next;
    for (int b = 0; b < 256; ++b) byte_ids_[b] = vocab_.at(std::string(1, static_cast<char>(b)));
    id_to_bytes_.reserve(vocab_.size());
    for (const auto& [bytes, id] : vocab_) id_to_bytes_.emplace(id, bytes);

    std::uint32_t rank = 0;
    for (const auto& [a, b] : merges_bytes) {
      const auto ia = vocab_.find(a), ib = vocab_.find(b), im = vocab_.find(a + b);
      if (ia == vocab_.end() || ib == vocab_.end() || im == vocab_.end())
        throw VocabParseError("merge '" + bpe::bytes_to_token(a) + " " + bpe::bytes_to_token(b) +
                                  "' refers to a token missing from the vocabulary",
                              rank + 1, 0);
      merges_.emplace(pair_key(ia->second, ib->second), Merge{rank++, im->second});
    }
  }

  const std::string& name() const noexcept override { return name_; }
  std::size_t vocab_size() const noexcept override { return vocab_size_; }

  TokenSeq tokenize(std::string_view text) const override {
    TokenSeq seq;
    for (auto chunk : bpe::pre_tokenize(text)) encode_chunk(chunk, seq);
    return seq;
  }

 private:
  struct Merge {
    std::uint32_t rank;
    TokenId result;
  };

  static std::uint64_t pair_key(TokenId a, TokenId b) { return (std::uint64_t{a} << 32) | b; }

  void encode_chunk(std::string_view chunk, TokenSeq& seq) const {
    std::vector<TokenId> ids;
    ids.reserve(chunk.size());
    for (unsigned char c : chunk) ids.push_back(byte_ids_[c]);

    while (ids.size() > 1) {
      std::uint32_t best = std::numeric_limits<std::uint32_t>::max();
      TokenId best_result = 0;
      std::uint64_t best_pair = 0;
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
        const auto it = merges_.find(pair_key(ids[i], ids[i + 1]));
        if (it != merges_.end() && it->second.rank < best) {
          best = it->second.rank;
          best_result = it->second.result;
          best_pair = it->first;
        }
      }
      if (best == std::numeric_limits<std::uint32_t>::max()) break;
      std::vector<TokenId> merged;
      merged.reserve(ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i + 1 < ids.size() && pair_key(ids[i], ids[i + 1]) == best_pair) {
          merged.push_back(best_result);
          ++i;
        } else {
          merged.push_back(ids[i]);
        }
      }
      ids = std::move(merged);
    }
    for (auto id : ids) {
      seq.token_ids.push_back(id);
      seq.surfaces.push_back(id_to_bytes_.at(id));
    }
  }

  std::string name_;
  std::unordered_map<std::string, TokenId> vocab_;
  std::unordered_map<TokenId, std::string> id_to_bytes_;
  std::unordered_map<std::uint64_t, Merge> merges_;
  std::array<TokenId, 256> byte_ids_{};
  std::size_t vocab_size_ = 0;
};

namespace bpe {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw VocabParseError("cannot open " + path.string(), 0, 0);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::json parse_json_file(const std::filesystem::path& path) {
  const auto body = read_file(path);
  try {
    return nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw VocabParseError(path.filename().string() + ": " + e.what(), 0, e.byte);
  }
}

inline std::unordered_map<std::string, TokenId> vocab_from_json(const nlohmann::json& vocab) {
  if (!vocab.is_object()) throw VocabParseError("vocab must be an object of token -> id", 0, 0);
  std::unordered_map<std::string, TokenId> out;
  for (const auto& [token, id] : vocab.items()) {
    if (!id.is_number_unsigned() && !(id.is_number_integer() && id.get<std::int64_t>() >= 0))
      throw VocabParseError("id of token '" + token + "' is not a non-negative integer", 0, 0);
    auto bytes = token_to_bytes(token);
    if (!bytes) throw VocabParseError("token '" + token + "' is not in the byte-level alphabet", 0, 0);
    out[std::move(*bytes)] = id.get<TokenId>();
  }
  return out;
}

inline std::pair<std::string, std::string> split_merge(const std::string& line, std::size_t lineno) {
  const auto sp = line.find(' ');
  if (sp == std::string::npos || sp == 0 || sp + 1 >= line.size() || line.find(' ', sp + 1) != std::string::npos)
    throw VocabParseError("merge rule must be two tokens separated by one space", lineno, 0);
  auto a = token_to_bytes(line.substr(0, sp));
  auto b = token_to_bytes(line.substr(sp + 1));
  if (!a || !b) throw VocabParseError("merge token is not in the byte-level alphabet", lineno, 0);
  return {std::move(*a), std::move(*b)};
}

inline std::vector<std::pair<std::string, std::string>> merges_from_json(const nlohmann::json& merges) {
  if (!merges.is_array()) throw VocabParseError("merges must be an array", 0, 0);
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t n = 0;
  for (const auto& m : merges) {
    ++n;
    if (m.is_string()) {
      out.push_back(split_merge(m.get<std::string>(), n));
    } else if (m.is_array() && m.size() == 2 && m[0].is_string() && m[1].is_string()) {
      auto a = token_to_bytes(m[0].get<std::string>());
      auto b = token_to_bytes(m[1].get<std::string>());
      if (!a || !b) throw VocabParseError("merge token is not in the byte-level alphabet", n, 0);
      out.emplace_back(std::move(*a), std::move(*b));
    } else {
      throw VocabParseError("merge entry must be \"a b\" or [\"a\", \"b\"]", n, 0);
    }
  }
  return out;
}

}  // namespace bpe

// Loads a byte-level BPE tokenizer.
//   load_bpe("tokenizer.json")            combined file: {"model": {"vocab": {...}, "merges": [...]}}
//                                         (a top-level {"vocab", "merges"} object is accepted too)
//   load_bpe("vocab.json", "merges.txt")  split files; merges.txt may start with a "#version" line
inline TokenizerHandle load_bpe(const std::filesystem::path& vocab_path,
                                const std::filesystem::path& merges_path = {}) {
  std::unordered_map<std::string, TokenId> vocab;
  std::vector<std::pair<std::string, std::string>> merges;
  if (merges_path.empty()) {
    const auto doc = bpe::parse_json_file(vocab_path);
    const nlohmann::json* model = &doc;
    if (doc.contains("model")) model = &doc["model"];
    if (!model->is_object() || !model->contains("vocab") || !model->contains("merges"))
      throw VocabParseError("expected \"vocab\" and \"merges\" fields", 0, 0);
    if (model->contains("type") && (*model)["type"] != "BPE")
      throw VocabParseError("model type is not BPE", 0, 0);
    vocab = bpe::vocab_from_json((*model)["vocab"]);
    merges = bpe::merges_from_json((*model)["merges"]);
  } else {
    vocab = bpe::vocab_from_json(bpe::parse_json_file(vocab_path));
    std::istringstream in(bpe::read_file(merges_path));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || (lineno == 1 && text::starts_with(line, "#version"))) continue;
      merges.push_back(bpe::split_merge(line, lineno));
    }
  }
  return std::make_shared<const BpeTokenizer>(vocab_path.stem().string(), std::move(vocab), merges);
}

}  // namespace tabsem
