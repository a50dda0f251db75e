#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "tabsem/table_ingest.hpp"

using namespace tabsem;

namespace {

std::vector<std::string> texts(const CleanTable& t) {
  std::vector<std::string> out;
  for (const auto& c : t.cells) out.push_back(c.text);
  return out;
}

CleanTable clean(const std::string& html) { return sanitize(RawTable{"t", html}); }

}  // namespace

TEST(Sanitize, StripsNonAllowlistedMarkupAndMinifies) {
  const auto t = clean(
      "<!DOCTYPE html><html><head><style>td{color:red}</style><script>var x='<table>';</script></head>"
      "<body><p>intro</p>\n<TABLE class=\"x\" border=1>\n  <TR style=\"a\">\n    <TD ROWSPAN=\"2\" id=q>A</TD>"
      "<td colspan='3' width=\"9\">B</td>\n  </TR>\n</TABLE><p>after</p></body></html>");
  EXPECT_EQ(t.html, "<table><tr><td rowspan=\"2\">A</td><td colspan=\"3\">B</td></tr></table>");
  EXPECT_EQ(texts(t), (std::vector<std::string>{"A", "B"}));
}

TEST(Sanitize, FlattensInlineMarkupAndCollapsesWhitespace) {
  const auto t = clean("<table><tr><td>  <b>Mean</b>\n\t&plusmn; <i>SD</i> </td><td>x<br>y</td>"
                       "<td><p>one</p><p>two</p></td></tr></table>");
  EXPECT_EQ(texts(t), (std::vector<std::string>{"Mean ± SD", "x y", "one two"}));
}

TEST(Sanitize, DecodesEntitiesAndKeepsNbsp) {
  const auto t = clean("<table><tr><td>&lt;0.01</td><td>5.33&nbsp;&#177; 0.46</td><td>&#x41;&amp;&bogus;</td>"
                       "<td>&#0;</td></tr></table>");
  EXPECT_EQ(texts(t), (std::vector<std::string>{"<0.01", "5.33 ± 0.46", "A&&bogus;", "�"}));
  EXPECT_EQ(t.html,
            "<table><tr><td>&lt;0.01</td><td>5.33 ± 0.46</td><td>A&amp;&amp;bogus;</td><td>�</td></tr>"
            "</table>");
}

TEST(Sanitize, NormalizesToNfc) {
  const auto t = clean("<table><tr><td>Cafe\xCC\x81</td></tr></table>");
  EXPECT_EQ(t.cells.at(0).text, "Caf\xC3\xA9");
}

TEST(Sanitize, KeepsOnlyTheFirstTable) {
  const auto t = clean("<table><tr><td>first</td></tr></table><table><tr><td>second</td></tr></table>");
  EXPECT_EQ(texts(t), (std::vector<std::string>{"first"}));
}

TEST(Sanitize, NestedTableTextJoinsItsCell) {
  const auto t = clean("<table><tr><td>outer <table><tr><td>in1</td><td>in2</td></tr></table> end</td>"
                       "<td>next</td></tr></table>");
  EXPECT_EQ(texts(t), (std::vector<std::string>{"outer in1 in2 end", "next"}));
}

TEST(Sanitize, ImplicitClosesAndMissingRow) {
  const auto t = clean("<table><td>a<td>b<tr><th>c</table>");
  EXPECT_EQ(t.html, "<table><tr><td>a</td><td>b</td></tr><tr><th>c</th></tr></table>");
}

TEST(Sanitize, CaptionIsKeptButIsNotACell) {
  const auto t = clean("<table><caption> Title <b>x</b></caption><tr><td>v</td></tr></table>");
  EXPECT_EQ(t.html, "<table><caption>Title x</caption><tr><td>v</td></tr></table>");
  EXPECT_EQ(texts(t), (std::vector<std::string>{"v"}));
}

TEST(Sanitize, EmptyCellsArePreserved) {
  const auto t = clean("<table><tr><td></td><td> </td><td>x</td></tr></table>");
  EXPECT_EQ(texts(t), (std::vector<std::string>{"", "", "x"}));
  EXPECT_EQ(t.cells[2].index, 2u);
}

TEST(Sanitize, LoneAngleBracketIsText) {
  const auto t = clean("<table><tr><td>a < b</td><td>1 <= 2</td></tr></table>");
  EXPECT_EQ(texts(t), (std::vector<std::string>{"a < b", "1 <= 2"}));
}

TEST(Sanitize, ErrorPaths) {
  EXPECT_THROW(clean("<p>no table here</p>"), NoTableFound);
  EXPECT_THROW(clean(""), NoTableFound);
  EXPECT_THROW(clean("<table><tr><td>x<!-- open"), MalformedHtml);
  EXPECT_NO_THROW(clean("<table><tr><td>x</td></tr></table><!-- open"));  // after the first table is ignored
  EXPECT_THROW(clean("<table><tr><td class=\"x>y</td></tr></table>"), MalformedHtml);
  EXPECT_THROW(clean("<table><tr"), MalformedHtml);
  try {
    clean("<table><tr><td>\xFF</td></tr></table>");
    FAIL();
  } catch (const MalformedHtml& e) {
    EXPECT_EQ(e.offset(), 15u);
  }
}

TEST(Sanitize, ExtractCellsReturnsInventoryInDocumentOrder) {
  const auto t = clean("<table><tr><th>h1</th><th>h2</th></tr><tr><td>a</td><td>b</td></tr></table>");
  const auto cells = extract_cells(t);
  ASSERT_EQ(cells.size(), 4u);
  for (std::size_t i = 0; i < cells.size(); ++i) EXPECT_EQ(cells[i].index, i);
}

namespace {

// Random documents with a known cell inventory: every cell's expected text is
// the single-space join of its words.
struct Generated {
  std::string html;
  std::vector<std::string> expected;
};

Generated random_document(std::mt19937& rng) {
  const std::vector<std::string> words = {"alpha", "0.42", "5.33", "±", "(n)", "[95%", "CI]", "東京", "naïve",
                                          "a&b", "x<y", "\"q\"", "p<0.01", "—", "Ω"};
  const std::vector<std::string> spaces = {" ", "  ", "\n", "\t ", " \r\n "};
  auto pick = [&](const auto& v) { return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)]; };
  auto chance = [&](int pct) { return std::uniform_int_distribution<int>(0, 99)(rng) < pct; };
  auto escape = [](const std::string& w) {
    std::string o;
    for (char c : w) o += c == '&' ? "&amp;" : c == '<' ? "&lt;" : std::string(1, c);
    return o;
  };

  Generated g;
  g.html = chance(50) ? "<html><body><div>pre</div>" : "";
  g.html += "<table border=\"1\"";
  g.html += chance(50) ? " class=\"grid\">" : ">";
  if (chance(20)) g.html += "<!-- comment -->";
  const int rows = std::uniform_int_distribution<int>(1, 5)(rng);
  for (int r = 0; r < rows; ++r) {
    g.html += chance(30) ? "<tr style=\"x\">" : "<tr>";
    const int cols = std::uniform_int_distribution<int>(1, 5)(rng);
    for (int c = 0; c < cols; ++c) {
      const std::string tag = chance(30) ? "th" : "td";
      g.html += "<" + tag;
      if (chance(20)) g.html += " rowspan=\"2\"";
      if (chance(20)) g.html += " colspan=\"3\" align=\"left\"";
      g.html += ">";
      const int n = std::uniform_int_distribution<int>(0, 4)(rng);
      std::string expected;
      for (int k = 0; k < n; ++k) {
        const auto w = pick(words);
        if (!expected.empty()) expected += ' ';
        expected += w;
        g.html += k ? pick(spaces) : (chance(30) ? pick(spaces) : "");
        if (chance(20))
          g.html += "<b>" + escape(w) + "</b>";
        else if (chance(10))
          g.html += "<span class=\"s\">" + escape(w) + "</span>";
        else
          g.html += escape(w);
      }
      if (chance(30)) g.html += pick(spaces);
      g.html += "</" + tag + ">";
      g.expected.push_back(expected);
    }
    g.html += "</tr>";
  }
  g.html += "</table>";
  if (chance(50)) g.html += "<p>tail</p></body></html>";
  return g;
}

}  // namespace

TEST(SanitizeProperty, TextPreservationOrderStabilityAndIdempotence) {
  std::mt19937 rng(20240611);
  for (int i = 0; i < 400; ++i) {
    const auto g = random_document(rng);
    const auto once = clean(g.html);
    ASSERT_EQ(texts(once), g.expected) << g.html;
    const auto twice = clean(once.html);
    ASSERT_EQ(twice.html, once.html) << g.html;
    ASSERT_EQ(texts(twice), texts(once));
  }
}
