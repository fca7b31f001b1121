#include "lims/xml.hpp"

#include <algorithm>
#include <cstdint>

namespace lims::xml {

ParseError::ParseError(std::string what, std::size_t line, std::size_t column)
    : Error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what),
      line_(line),
      column_(column) {}

bool operator==(const Element& a, const Element& b) {
  return a.name == b.name && a.attributes == b.attributes && a.children == b.children;
}

const std::string* Element::attribute(std::string_view key) const {
  for (const auto& [k, v] : attributes)
    if (k == key) return &v;
  return nullptr;
}

void Element::set_attribute(std::string key, std::string value) {
  for (auto& [k, v] : attributes) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  attributes.emplace_back(std::move(key), std::move(value));
}

std::vector<const Element*> Element::elements() const {
  std::vector<const Element*> out;
  for (const auto& c : children)
    if (!c.is_text()) out.push_back(&c.element());
  return out;
}

std::string Element::text() const {
  std::string out;
  for (const auto& c : children)
    if (c.is_text()) out += c.text();
  return out;
}

bool Element::has_element_children() const {
  return std::any_of(children.begin(), children.end(), [](const Node& n) { return !n.is_text(); });
}

Element& Element::add_child(std::string child_name) {
  children.push_back(Node{Element{std::move(child_name), {}, {}}});
  return children.back().element();
}

void Element::add_text(std::string text) {
  if (!text.empty()) children.push_back(Node{std::move(text)});
}

bool is_valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    auto c = static_cast<unsigned char>(s[i]);
    std::size_t n;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      n = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      n = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      n = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    for (std::size_t k = 1; k <= n; ++k) {
      if (i + k >= s.size()) return false;
      auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    if ((n == 1 && cp < 0x80) || (n == 2 && cp < 0x800) || (n == 3 && cp < 0x10000)) return false;
    if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += n + 1;
  }
  return true;
}

namespace {

void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

bool is_name_start(char c) {
  auto u = static_cast<unsigned char>(c);
  return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || c == '_' || c == ':' || u >= 0x80;
}

bool is_name_char(char c) {
  return is_name_start(c) || (c >= '0' && c <= '9') || c == '-' || c == '.';
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

bool is_blank(std::string_view s) { return std::all_of(s.begin(), s.end(), is_space); }

constexpr std::size_t kMaxDepth = 256;

class Parser {
 public:
  explicit Parser(std::string_view src) : src_(src) {}

  Element document() {
    if (src_.substr(0, 3) == "\xEF\xBB\xBF") pos_ = 3;
    if (starts_with("<?xml")) {
      auto end = src_.find("?>", pos_);
      if (end == std::string_view::npos) fail("unterminated XML declaration");
      pos_ = end + 2;
    }
    misc();
    if (starts_with("<!DOCTYPE")) fail("DTD not supported");
    if (!starts_with("<")) fail("expected root element");
    Element root = element(0);
    misc();
    if (pos_ != src_.size()) fail("content after root element");
    return root;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < pos_ && i < src_.size(); ++i) {
      if (src_[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ParseError(what, line, col);
  }

  bool starts_with(std::string_view s) const { return src_.substr(pos_, s.size()) == s; }
  bool eof() const { return pos_ >= src_.size(); }
  char peek() const { return eof() ? '\0' : src_[pos_]; }

  void skip_space() {
    while (!eof() && is_space(src_[pos_])) ++pos_;
  }

  // Comments, PIs and whitespace outside the root element.
  void misc() {
    for (;;) {
      skip_space();
      if (starts_with("<!--")) {
        comment();
      } else if (starts_with("<?")) {
        pi();
      } else {
        return;
      }
    }
  }

  void comment() {
    auto end = src_.find("-->", pos_ + 4);
    if (end == std::string_view::npos) fail("unterminated comment");
    if (src_.substr(pos_ + 4, end - pos_ - 4).find("--") != std::string_view::npos)
      fail("'--' inside comment");
    pos_ = end + 3;
  }

  void pi() {
    auto end = src_.find("?>", pos_ + 2);
    if (end == std::string_view::npos) fail("unterminated processing instruction");
    pos_ = end + 2;
  }

  std::string name() {
    if (eof() || !is_name_start(peek())) fail("expected name");
    auto start = pos_;
    while (!eof() && is_name_char(peek())) ++pos_;
    return std::string(src_.substr(start, pos_ - start));
  }

  void reference(std::string& out) {
    auto end = src_.find(';', pos_);
    if (end == std::string_view::npos || end - pos_ > 12) fail("bad entity reference");
    auto ref = src_.substr(pos_ + 1, end - pos_ - 1);
    if (ref == "lt") {
      out.push_back('<');
    } else if (ref == "gt") {
      out.push_back('>');
    } else if (ref == "amp") {
      out.push_back('&');
    } else if (ref == "quot") {
      out.push_back('"');
    } else if (ref == "apos") {
      out.push_back('\'');
    } else if (ref.size() > 1 && ref[0] == '#') {
      std::uint32_t cp = 0;
      bool hex = ref[1] == 'x';
      auto digits = ref.substr(hex ? 2 : 1);
      if (digits.empty()) fail("bad character reference");
      for (char c : digits) {
        std::uint32_t d;
        if (c >= '0' && c <= '9') {
          d = static_cast<std::uint32_t>(c - '0');
        } else if (hex && c >= 'a' && c <= 'f') {
          d = static_cast<std::uint32_t>(c - 'a' + 10);
        } else if (hex && c >= 'A' && c <= 'F') {
          d = static_cast<std::uint32_t>(c - 'A' + 10);
        } else {
          fail("bad character reference");
        }
        cp = cp * (hex ? 16 : 10) + d;
        if (cp > 0x10FFFF) fail("character reference out of range");
      }
      if (cp == 0 || (cp >= 0xD800 && cp <= 0xDFFF)) fail("invalid character reference");
      append_utf8(out, cp);
    } else {
      fail("unknown entity '" + std::string(ref) + "'");
    }
    pos_ = end + 1;
  }

  std::string attribute_value() {
    char quote = peek();
    if (quote != '"' && quote != '\'') fail("expected quoted attribute value");
    ++pos_;
    std::string out;
    for (;;) {
      if (eof()) fail("unterminated attribute value");
      char c = src_[pos_];
      if (c == quote) {
        ++pos_;
        return out;
      }
      if (c == '<') fail("'<' in attribute value");
      if (c == '&') {
        reference(out);
        continue;
      }
      // Attribute-value normalization for literal whitespace.
      out.push_back(c == '\t' || c == '\n' || c == '\r' ? ' ' : c);
      ++pos_;
    }
  }

  Element element(std::size_t depth) {
    if (depth > kMaxDepth) fail("nesting too deep");
    ++pos_;  // '<'
    Element el;
    el.name = name();
    for (;;) {
      bool had_space = !eof() && is_space(peek());
      skip_space();
      if (starts_with("/>")) {
        pos_ += 2;
        return el;
      }
      if (peek() == '>') {
        ++pos_;
        break;
      }
      if (!had_space) fail("expected whitespace before attribute");
      auto key = name();
      skip_space();
      if (peek() != '=') fail("expected '=' after attribute name");
      ++pos_;
      skip_space();
      auto value = attribute_value();
      if (el.attribute(key)) fail("duplicate attribute '" + key + "'");
      el.attributes.emplace_back(std::move(key), std::move(value));
    }
    content(el, depth);
    return el;
  }

  void flush_text(Element& el, std::string& text) {
    if (!text.empty()) {
      el.children.push_back(Node{std::move(text)});
      text.clear();
    }
  }

  void content(Element& el, std::size_t depth) {
    std::string text;
    for (;;) {
      if (eof()) fail("unterminated element '" + el.name + "'");
      if (starts_with("</")) {
        pos_ += 2;
        auto closing = name();
        skip_space();
        if (peek() != '>') fail("expected '>'");
        ++pos_;
        if (closing != el.name) fail("mismatched end tag '" + closing + "' for '" + el.name + "'");
        flush_text(el, text);
        break;
      }
      if (starts_with("<!--")) {
        comment();
      } else if (starts_with("<![CDATA[")) {
        auto end = src_.find("]]>", pos_ + 9);
        if (end == std::string_view::npos) fail("unterminated CDATA section");
        text.append(src_.substr(pos_ + 9, end - pos_ - 9));
        pos_ = end + 3;
      } else if (starts_with("<?")) {
        pi();
      } else if (starts_with("<!")) {
        fail("unexpected markup declaration");
      } else if (peek() == '<') {
        flush_text(el, text);
        el.children.push_back(Node{element(depth + 1)});
      } else if (peek() == '&') {
        reference(text);
      } else {
        if (starts_with("]]>")) fail("']]>' in character data");
        char c = src_[pos_++];
        if (c == '\r') {
          text.push_back('\n');
          if (peek() == '\n') ++pos_;
        } else {
          text.push_back(c);
        }
      }
    }
    if (el.has_element_children()) {
      std::erase_if(el.children, [](const Node& n) { return n.is_text() && is_blank(n.text()); });
    }
  }

  std::string_view src_;
  std::size_t pos_ = 0;
};

void escape(std::string& out, std::string_view s, bool attribute) {
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"':
        if (attribute) {
          out += "&quot;";
        } else {
          out.push_back(c);
        }
        break;
      case '\r': out += "&#13;"; break;
      case '\n':
        if (attribute) {
          out += "&#10;";
        } else {
          out.push_back(c);
        }
        break;
      case '\t':
        if (attribute) {
          out += "&#9;";
        } else {
          out.push_back(c);
        }
        break;
      default: out.push_back(c);
    }
  }
}

void write_element(std::string& out, const Element& el, std::size_t depth, bool pretty) {
  if (pretty) out.append(depth * 2, ' ');
  out += '<';
  out += el.name;
  for (const auto& [k, v] : el.attributes) {
    out += ' ';
    out += k;
    out += "=\"";
    escape(out, v, true);
    out += '"';
  }
  if (el.children.empty()) {
    out += "/>";
    if (pretty) out += '\n';
    return;
  }
  bool element_only =
      std::all_of(el.children.begin(), el.children.end(), [](const Node& n) { return !n.is_text(); });
  if (element_only && pretty) {
    out += ">\n";
    for (const auto& c : el.children) write_element(out, c.element(), depth + 1, true);
    out.append(depth * 2, ' ');
  } else {
    // Text-bearing content is written without added whitespace.
    out += '>';
    for (const auto& c : el.children) {
      if (c.is_text()) {
        escape(out, c.text(), false);
      } else {
        write_element(out, c.element(), 0, false);
      }
    }
  }
  out += "</";
  out += el.name;
  out += '>';
  if (pretty) out += '\n';
}

}  // namespace

Element parse(std::string_view document) {
  if (!is_valid_utf8(document)) throw ParseError("input is not valid UTF-8", 1, 1);
  return Parser(document).document();
}

std::string write(const Element& root, bool declaration) {
  std::string out;
  if (declaration) out += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  write_element(out, root, 0, true);
  return out;
}

}  // namespace lims::xml
