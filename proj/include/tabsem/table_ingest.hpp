#pragma once

// HTML table ingestion: tolerant tokenizer, allowlist tree builder, minified
// serializer, and the ordered cell inventory.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tabsem/errors.hpp"
#include "tabsem/text.hpp"

namespace tabsem {

struct RawTable {
  std::string id;
  std::string html;
};

struct Cell {
  std::size_t index = 0;
  std::string text;

  bool operator==(const Cell&) const = default;
};

// Element of the sanitized tree. td/th carry `cell` (index into the inventory);
// caption carries its flattened text directly.
struct HtmlNode {
  std::string tag;
  std::vector<std::pair<std::string, std::string>> attrs;
  std::vector<HtmlNode> children;
  std::optional<std::size_t> cell;
  std::string text;
};

struct CleanTable {
  std::string id;
  std::string html;
  std::vector<Cell> cells;
  HtmlNode root;
};

namespace html {

inline constexpr std::string_view kAllowedTags[] = {"table", "thead", "tbody", "tfoot", "tr", "td", "th", "caption"};

inline bool is_allowed_tag(std::string_view tag) {
  for (auto t : kAllowedTags)
    if (t == tag) return true;
  return false;
}

inline bool is_allowed_attr(std::string_view attr) { return attr == "rowspan" || attr == "colspan"; }

// Tags that separate words when they appear inside a cell.
inline bool is_block_tag(std::string_view tag) {
  static constexpr std::string_view block[] = {"br", "p", "div", "li", "ul", "ol", "tr", "td", "th", "table",
                                               "hr", "h1", "h2", "h3", "h4", "h5", "h6", "dt", "dd", "caption"};
  for (auto b : block)
    if (b == tag) return true;
  return false;
}

inline std::optional<char32_t> named_entity(std::string_view name) {
  struct Entry {
    std::string_view name;
    char32_t cp;
  };
  static constexpr Entry table[] = {
      {"amp", U'&'},        {"lt", U'<'},          {"gt", U'>'},         {"quot", U'"'},
      {"apos", U'\''},      {"nbsp", 0x00A0},      {"plusmn", 0x00B1},   {"ndash", 0x2013},
      {"mdash", 0x2014},    {"times", 0x00D7},     {"divide", 0x00F7},   {"deg", 0x00B0},
      {"micro", 0x00B5},    {"middot", 0x00B7},    {"le", 0x2264},       {"ge", 0x2265},
      {"ne", 0x2260},       {"minus", 0x2212},     {"hellip", 0x2026},   {"bull", 0x2022},
      {"copy", 0x00A9},     {"reg", 0x00AE},       {"trade", 0x2122},    {"laquo", 0x00AB},
      {"raquo", 0x00BB},    {"lsquo", 0x2018},     {"rsquo", 0x2019},    {"ldquo", 0x201C},
      {"rdquo", 0x201D},    {"sup1", 0x00B9},      {"sup2", 0x00B2},     {"sup3", 0x00B3},
      {"frac12", 0x00BD},   {"frac14", 0x00BC},    {"frac34", 0x00BE},   {"alpha", 0x03B1},
      {"beta", 0x03B2},     {"gamma", 0x03B3},     {"delta", 0x03B4},    {"mu", 0x03BC},
      {"sigma", 0x03C3},    {"pi", 0x03C0},        {"lambda", 0x03BB},   {"chi", 0x03C7},
      {"kappa", 0x03BA},    {"Delta", 0x0394},     {"Sigma", 0x03A3},    {"Omega", 0x03A9},
      {"sect", 0x00A7},     {"para", 0x00B6},      {"cent", 0x00A2},     {"pound", 0x00A3},
      {"euro", 0x20AC},     {"yen", 0x00A5},       {"thinsp", 0x2009},   {"ensp", 0x2002},
      {"emsp", 0x2003},     {"larr", 0x2190},      {"rarr", 0x2192},     {"uarr", 0x2191},
      {"darr", 0x2193},     {"dagger", 0x2020},    {"Dagger", 0x2021},   {"permil", 0x2030},
      {"prime", 0x2032},    {"Prime", 0x2033},     {"shy", 0x00AD},      {"zwnj", 0x200C},
      {"zwj", 0x200D},      {"lrm", 0x200E},       {"rlm", 0x200F},      {"iexcl", 0x00A1},
      {"iquest", 0x00BF},   {"ordf", 0x00AA},      {"ordm", 0x00BA},     {"not", 0x00AC},
      {"macr", 0x00AF},     {"acute", 0x00B4},     {"cedil", 0x00B8},    {"infin", 0x221E},
      {"asymp", 0x2248},    {"equiv", 0x2261},     {"sum", 0x2211},      {"radic", 0x221A},
  };
  for (const auto& e : table)
    if (e.name == name) return e.cp;
  return std::nullopt;
}

// Decodes character references. Unknown or malformed references stay literal.
inline std::string decode_entities(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] != '&') {
      out += s[i++];
      continue;
    }
    const auto semi = s.find(';', i + 1);
    if (semi == std::string_view::npos || semi - i > 32) {
      out += s[i++];
      continue;
    }
    const auto ref = s.substr(i + 1, semi - i - 1);
    std::optional<char32_t> cp;
    if (!ref.empty() && ref[0] == '#') {
      const bool hex = ref.size() > 1 && (ref[1] == 'x' || ref[1] == 'X');
      const auto digits = ref.substr(hex ? 2 : 1);
      char32_t v = 0;
      bool ok = !digits.empty() && digits.size() <= 8;
      for (char c : digits) {
        int d;
        if (c >= '0' && c <= '9')
          d = c - '0';
        else if (hex && c >= 'a' && c <= 'f')
          d = c - 'a' + 10;
        else if (hex && c >= 'A' && c <= 'F')
          d = c - 'A' + 10;
        else {
          ok = false;
          break;
        }
        v = v * (hex ? 16 : 10) + static_cast<char32_t>(d);
      }
      if (ok) {
        if (v == 0 || v > 0x10FFFF || (v >= 0xD800 && v <= 0xDFFF)) v = 0xFFFD;
        cp = v;
      }
    } else {
      cp = named_entity(ref);
    }
    if (!cp) {
      out += s[i++];
      continue;
    }
    text::append_utf8(out, *cp);
    i = semi + 1;
  }
  return out;
}

inline std::string escape_text(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string escape_attr(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Token {
  enum class Kind { StartTag, EndTag, Text } kind = Kind::Text;
  std::string name;  // lowercased tag name
  std::vector<std::pair<std::string, std::string>> attrs;
  std::string text;  // decoded, for Text
  std::size_t offset = 0;
};

inline char ascii_lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }
inline bool ascii_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

// Pull tokenizer over an HTML document. Comments, doctypes and processing
// instructions are skipped; script/style bodies are skipped.
class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::optional<Token> next() {
    if (!raw_until_.empty()) skip_raw_text();
    while (pos_ < src_.size()) {
      if (src_[pos_] == '<' && pos_ + 1 < src_.size()) {
        const char c = src_[pos_ + 1];
        if (c == '!' || c == '?') {
          skip_markup_declaration();
          continue;
        }
        if (ascii_alpha(c)) return start_tag();
        if (c == '/' && pos_ + 2 < src_.size() && ascii_alpha(src_[pos_ + 2])) return end_tag();
      }
      return text_run();
    }
    return std::nullopt;
  }

 private:
  Token text_run() {
    const std::size_t begin = pos_;
    ++pos_;  // a lone '<' is literal text
    while (pos_ < src_.size() && src_[pos_] != '<') ++pos_;
    Token t;
    t.kind = Token::Kind::Text;
    t.text = decode_entities(src_.substr(begin, pos_ - begin));
    t.offset = begin;
    return t;
  }

  void skip_markup_declaration() {
    const std::size_t begin = pos_;
    if (src_.substr(pos_, 4) == "<!--") {
      const auto end = src_.find("-->", pos_ + 4);
      if (end == std::string_view::npos) throw MalformedHtml("unterminated comment", begin);
      pos_ = end + 3;
      return;
    }
    const auto end = src_.find('>', pos_);
    if (end == std::string_view::npos) throw MalformedHtml("unterminated markup declaration", begin);
    pos_ = end + 1;
  }

  std::string read_name() {
    std::string name;
    while (pos_ < src_.size()) {
      const char c = src_[pos_];
      if (text::is_html_space(c) || c == '/' || c == '>') break;
      name += ascii_lower(c);
      ++pos_;
    }
    return name;
  }

  void skip_space() {
    while (pos_ < src_.size() && text::is_html_space(src_[pos_])) ++pos_;
  }

  Token start_tag() {
    const std::size_t begin = pos_;
    ++pos_;
    Token t;
    t.kind = Token::Kind::StartTag;
    t.offset = begin;
    t.name = read_name();
    for (;;) {
      skip_space();
      if (pos_ >= src_.size()) throw MalformedHtml("unterminated start tag <" + t.name, begin);
      const char c = src_[pos_];
      if (c == '>') {
        ++pos_;
        break;
      }
      if (c == '/') {
        ++pos_;
        continue;
      }
      std::string attr;
      while (pos_ < src_.size()) {
        const char a = src_[pos_];
        if (text::is_html_space(a) || a == '/' || a == '>' || a == '=') break;
        attr += ascii_lower(a);
        ++pos_;
      }
      if (attr.empty()) {  // stray '=' or quote
        ++pos_;
        continue;
      }
      skip_space();
      std::string value;
      if (pos_ < src_.size() && src_[pos_] == '=') {
        ++pos_;
        skip_space();
        if (pos_ >= src_.size()) throw MalformedHtml("unterminated start tag <" + t.name, begin);
        const char q = src_[pos_];
        if (q == '"' || q == '\'') {
          const auto close = src_.find(q, pos_ + 1);
          if (close == std::string_view::npos) throw MalformedHtml("unterminated attribute value", pos_);
          value = decode_entities(src_.substr(pos_ + 1, close - pos_ - 1));
          pos_ = close + 1;
        } else {
          const std::size_t vb = pos_;
          while (pos_ < src_.size() && !text::is_html_space(src_[pos_]) && src_[pos_] != '>') ++pos_;
          value = decode_entities(src_.substr(vb, pos_ - vb));
        }
      }
      t.attrs.emplace_back(std::move(attr), std::move(value));
    }
    if (t.name == "script" || t.name == "style") raw_until_ = "</" + t.name;
    return t;
  }

  Token end_tag() {
    const std::size_t begin = pos_;
    pos_ += 2;
    Token t;
    t.kind = Token::Kind::EndTag;
    t.offset = begin;
    t.name = read_name();
    const auto close = src_.find('>', pos_);
    if (close == std::string_view::npos) throw MalformedHtml("unterminated end tag </" + t.name, begin);
    pos_ = close + 1;
    return t;
  }

  void skip_raw_text() {
    // case-insensitive search for the closing tag
    std::size_t i = pos_;
    for (; i + raw_until_.size() <= src_.size(); ++i) {
      bool match = true;
      for (std::size_t k = 0; k < raw_until_.size(); ++k)
        if (ascii_lower(src_[i + k]) != raw_until_[k]) {
          match = false;
          break;
        }
      if (match) break;
    }
    pos_ = std::min(i, src_.size());
    raw_until_.clear();
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  std::string raw_until_;
};

// Builds the allowlisted tree of the first <table> in a token stream.
class TableBuilder {
 public:
  // Returns false once the first table has been closed.
  bool feed(const Token& tok) {
    if (done_) return false;
    if (stack_.empty()) {
      if (tok.kind == Token::Kind::StartTag && tok.name == "table") {
        root_.tag = "table";
        stack_.push_back(&root_);
      }
      return true;
    }
    if (nested_depth_ > 0) {
      nested(tok);
      return true;
    }
    switch (tok.kind) {
      case Token::Kind::Text:
        if (in_text_holder()) buffer_ += tok.text;
        break;
      case Token::Kind::StartTag: start(tok); break;
      case Token::Kind::EndTag: end(tok); break;
    }
    return !done_;
  }

  // Closes whatever is still open (tolerates a missing </table>).
  void finish() {
    if (!stack_.empty()) close_to_table();
    stack_.clear();
    done_ = true;
  }

  bool found() const { return !root_.tag.empty(); }
  HtmlNode take_root() { return std::move(root_); }
  std::vector<Cell> take_cells() { return std::move(cells_); }

 private:
  HtmlNode* top() { return stack_.back(); }
  bool top_is(std::string_view tag) const { return !stack_.empty() && stack_.back()->tag == tag; }
  bool in_text_holder() const { return top_is("td") || top_is("th") || top_is("caption"); }
  bool in_cell() const { return top_is("td") || top_is("th"); }

  void nested(const Token& tok) {
    if (tok.kind == Token::Kind::Text) {
      buffer_ += tok.text;
      return;
    }
    if (tok.name == "table") nested_depth_ += tok.kind == Token::Kind::StartTag ? 1 : -1;
    if (is_block_tag(tok.name)) buffer_ += ' ';
  }

  static std::string finalize_text(const std::string& raw) { return text::nfc(text::collapse_html_space(raw)); }

  HtmlNode& open(std::string tag, const Token* source = nullptr) {
    HtmlNode node;
    node.tag = std::move(tag);
    if (source && (node.tag == "td" || node.tag == "th"))
      for (const auto& [k, v] : source->attrs)
        if (is_allowed_attr(k)) node.attrs.emplace_back(k, v);
    top()->children.push_back(std::move(node));
    HtmlNode* child = &top()->children.back();
    stack_.push_back(child);
    return *child;
  }

  void close_text_holder() {
    if (!in_text_holder()) return;
    HtmlNode* node = top();
    auto value = finalize_text(buffer_);
    buffer_.clear();
    if (node->tag == "caption") {
      node->text = std::move(value);
    } else {
      node->cell = cells_.size();
      cells_.push_back(Cell{cells_.size(), std::move(value)});
    }
    stack_.pop_back();
  }

  void close_row() {
    close_text_holder();
    if (top_is("tr")) stack_.pop_back();
  }

  void close_section() {
    close_row();
    if (top_is("thead") || top_is("tbody") || top_is("tfoot")) stack_.pop_back();
  }

  void close_to_table() {
    close_section();
    while (stack_.size() > 1) stack_.pop_back();
  }

  void start(const Token& tok) {
    const auto& name = tok.name;
    if (name == "td" || name == "th") {
      close_text_holder();
      if (!top_is("tr")) open("tr");
      open(name, &tok);
    } else if (name == "tr") {
      close_row();
      open("tr");
    } else if (name == "thead" || name == "tbody" || name == "tfoot") {
      close_section();
      open(name);
    } else if (name == "caption") {
      close_to_table();
      open("caption");
    } else if (name == "table") {
      if (in_text_holder()) {
        nested_depth_ = 1;
        buffer_ += ' ';
      }
    } else if (in_text_holder() && is_block_tag(name)) {
      buffer_ += ' ';
    }
  }

  void end(const Token& tok) {
    const auto& name = tok.name;
    if (name == "td" || name == "th") {
      if (in_cell()) close_text_holder();
    } else if (name == "caption") {
      if (top_is("caption")) close_text_holder();
    } else if (name == "tr") {
      close_row();
    } else if (name == "thead" || name == "tbody" || name == "tfoot") {
      close_section();
    } else if (name == "table") {
      close_to_table();
      stack_.clear();
      done_ = true;
    } else if (in_text_holder() && is_block_tag(name)) {
      buffer_ += ' ';
    }
  }

  HtmlNode root_;
  std::vector<HtmlNode*> stack_;
  std::vector<Cell> cells_;
  std::string buffer_;
  int nested_depth_ = 0;
  bool done_ = false;
};

// Minified serialization; `cell_text(const Cell&)` supplies the text written
// for each td/th so the same tree can be rendered with encoded forms.
template <typename CellText>
void render(const HtmlNode& node, const std::vector<Cell>& cells, CellText&& cell_text, std::string& out) {
  out += '<';
  out += node.tag;
  for (const auto& [k, v] : node.attrs) {
    out += ' ';
    out += k;
    out += "=\"";
    out += escape_attr(v);
    out += '"';
  }
  out += '>';
  if (node.cell) {
    out += escape_text(cell_text(cells.at(*node.cell)));
  } else if (node.tag == "caption") {
    out += escape_text(node.text);
  }
  for (const auto& child : node.children) render(child, cells, cell_text, out);
  out += "</";
  out += node.tag;
  out += '>';
}

template <typename CellText>
std::string render(const CleanTable& table, CellText&& cell_text) {
  std::string out;
  out.reserve(table.html.size());
  render(table.root, table.cells, cell_text, out);
  return out;
}

}  // namespace html

// Parses raw HTML, keeps only the first table, strips everything outside the
// allowlist and minifies. Cell text is entity-decoded, flattened, whitespace
// collapsed, trimmed and NFC-normalized.
inline CleanTable sanitize(const RawTable& raw) {
  if (const auto bad = text::find_invalid_utf8(raw.html)) throw MalformedHtml("invalid UTF-8", *bad);

  html::Lexer lexer(raw.html);
  html::TableBuilder builder;
  while (auto tok = lexer.next())
    if (!builder.feed(*tok)) break;
  builder.finish();
  if (!builder.found()) throw NoTableFound();

  CleanTable clean;
  clean.id = raw.id;
  clean.root = builder.take_root();
  clean.cells = builder.take_cells();
  clean.html = html::render(clean, [](const Cell& c) -> const std::string& { return c.text; });
  return clean;
}

inline std::vector<Cell> extract_cells(const CleanTable& clean) { return clean.cells; }

}  // namespace tabsem
