#pragma once

// Small, strict XML DOM: enough of XML 1.0 for the wire and data documents
// (elements, attributes, character data, CDATA, comments, PIs, entity and
// character references). DTDs are rejected.

#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "lims/util.hpp"

namespace lims::xml {

class ParseError : public Error {
 public:
  ParseError(std::string what, std::size_t line, std::size_t column);
  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

using Attribute = std::pair<std::string, std::string>;

struct Node;

struct Element {
  std::string name;
  std::vector<Attribute> attributes;
  std::vector<Node> children;

  const std::string* attribute(std::string_view key) const;
  void set_attribute(std::string key, std::string value);
  std::vector<const Element*> elements() const;
  /// Concatenation of the direct text children.
  std::string text() const;
  bool has_element_children() const;

  Element& add_child(std::string child_name);
  void add_text(std::string text);

  friend bool operator==(const Element& a, const Element& b);
};

struct Node {
  std::variant<std::string, Element> value;

  bool is_text() const { return std::holds_alternative<std::string>(value); }
  const std::string& text() const { return std::get<std::string>(value); }
  const Element& element() const { return std::get<Element>(value); }
  Element& element() { return std::get<Element>(value); }

  friend bool operator==(const Node& a, const Node& b) { return a.value == b.value; }
};

/// Parses a complete document and returns its root element. Whitespace-only
/// text between child elements is discarded; all other text is kept verbatim.
Element parse(std::string_view document);

/// Serializes with a UTF-8 declaration and two-space indentation. Elements
/// holding any text are written inline so their content round-trips exactly.
std::string write(const Element& root, bool declaration = true);

bool is_valid_utf8(std::string_view bytes);

}  // namespace lims::xml
