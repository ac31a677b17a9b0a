#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace htk::dom {

enum class NodeKind { element, text, comment, doctype };

struct Attribute {
  std::string name;
  std::string value;

  friend bool operator==(const Attribute&, const Attribute&) = default;
};

/// One node of a parsed document. Children are held by value, so a subtree
/// can be copied, compared and transformed like any other value.
struct Node {
  NodeKind kind = NodeKind::element;
  std::string tag;  // element only, ASCII-lowercased
  std::vector<Attribute> attributes;
  std::vector<Node> children;
  std::string text;  // text, comment and doctype payload

  static Node element(std::string tag, std::vector<Attribute> attributes = {});
  static Node make_text(std::string text);
  static Node comment(std::string text);

  bool is_element() const { return kind == NodeKind::element; }
  bool is_element(std::string_view name) const { return kind == NodeKind::element && tag == name; }
  bool is_text() const { return kind == NodeKind::text; }

  const std::string* attribute(std::string_view name) const;
  void set_attribute(std::string_view name, std::string value);
  void remove_attribute(std::string_view name);

  friend bool operator==(const Node&, const Node&) = default;
};

struct Document {
  Node root = Node::element("html");
  std::optional<std::string> doctype;
  std::size_t source_length = 0;  // input bytes
  std::size_t source_chars = 0;   // input code points after UTF-8 repair

  /// Tree equality; source_length is provenance and is ignored.
  bool same_tree(const Document& other) const {
    return doctype == other.doctype && root == other.root;
  }
};

struct ParseOptions {
  std::size_t max_bytes = 8u << 20;
  /// Open elements nested deeper than this are flattened into their parent.
  std::size_t max_depth = 512;
};

/// Parses arbitrary bytes into a document. Invalid UTF-8 is replaced, markup
/// errors are repaired (implicit html/head/body, auto-closing of p, li, td and
/// friends). Throws OversizedDocument when the input exceeds the cap.
Document parse_html(std::string_view bytes, const ParseOptions& options = {});

std::string serialize(const Document& doc);
std::string serialize(const Node& node);

/// Descendant text with script/style/comments excluded, whitespace collapsed
/// and trimmed.
std::string visible_text(const Node& node);

/// Code-point length of visible_text(node), computed without building the
/// string.
std::size_t visible_length(const Node& node);

/// Compositional summary of a text run, used to measure visible text bottom-up.
struct TextMeasure {
  std::size_t core = 0;  // code points after collapsing and trimming
  bool has_core = false;
  bool leading_space = false;
  bool trailing_space = false;

  static TextMeasure of(std::string_view text);
  TextMeasure then(const TextMeasure& next) const;
};

bool is_void_element(std::string_view tag);
bool is_raw_text_element(std::string_view tag);
bool is_escapable_raw_text_element(std::string_view tag);

/// Merges adjacent text children and drops empty ones, recursively. The parser
/// never produces such nodes, but tree transforms can.
void normalize_text(Node& node);

}  // namespace htk::dom
