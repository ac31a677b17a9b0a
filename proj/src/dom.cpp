#include "htk/dom.hpp"

#include <algorithm>
#include <array>
#include <unordered_map>
#include <unordered_set>

#include "htk/error.hpp"
#include "htk/utf8.hpp"

namespace htk::dom {

Node Node::element(std::string tag, std::vector<Attribute> attributes) {
  Node n;
  n.kind = NodeKind::element;
  n.tag = std::move(tag);
  n.attributes = std::move(attributes);
  return n;
}

Node Node::make_text(std::string text) {
  Node n;
  n.kind = NodeKind::text;
  n.text = std::move(text);
  return n;
}

Node Node::comment(std::string text) {
  Node n;
  n.kind = NodeKind::comment;
  n.text = std::move(text);
  return n;
}

const std::string* Node::attribute(std::string_view name) const {
  for (const auto& a : attributes) {
    if (a.name == name) return &a.value;
  }
  return nullptr;
}

void Node::set_attribute(std::string_view name, std::string value) {
  for (auto& a : attributes) {
    if (a.name == name) {
      a.value = std::move(value);
      return;
    }
  }
  attributes.push_back({std::string(name), std::move(value)});
}

void Node::remove_attribute(std::string_view name) {
  std::erase_if(attributes, [&](const Attribute& a) { return a.name == name; });
}

namespace {

using TagSet = std::unordered_set<std::string_view>;

const TagSet kVoid = {"area",  "base", "br",   "col",   "embed",  "hr",      "img",
                      "input", "keygen", "link", "meta", "param", "source", "track",
                      "wbr",   "basefont", "bgsound", "frame"};
const TagSet kRawText = {"script", "style", "xmp", "iframe", "noembed", "noframes", "noscript"};
const TagSet kEscapableRawText = {"title", "textarea"};

const TagSet kSpecial = {
    "address", "applet", "area", "article", "aside", "base", "basefont", "bgsound",
    "blockquote", "body", "br", "button", "caption", "center", "col", "colgroup", "dd",
    "details", "dir", "div", "dl", "dt", "embed", "fieldset", "figcaption", "figure",
    "footer", "form", "frame", "frameset", "h1", "h2", "h3", "h4", "h5", "h6", "head",
    "header", "hgroup", "hr", "html", "iframe", "img", "input", "keygen", "li", "link",
    "listing", "main", "marquee", "menu", "meta", "nav", "noembed", "noframes",
    "noscript", "object", "ol", "p", "param", "plaintext", "pre", "script", "section",
    "select", "source", "style", "summary", "table", "tbody", "td", "template",
    "textarea", "tfoot", "th", "thead", "title", "tr", "track", "ul", "wbr", "xmp"};

const TagSet kClosesP = {
    "address", "article", "aside", "blockquote", "center", "details", "dialog", "dir",
    "div", "dl", "fieldset", "figcaption", "figure", "footer", "header", "hgroup",
    "main", "menu", "nav", "ol", "p", "section", "summary", "ul", "h1", "h2", "h3",
    "h4", "h5", "h6", "pre", "listing", "form", "table", "hr", "xmp", "plaintext",
    "li", "dd", "dt"};

// End tags that close through implied children when the element is in scope.
const TagSet kBlockEnd = {
    "address", "article", "aside", "blockquote", "button", "center", "details", "dialog",
    "dir", "div", "dl", "fieldset", "figcaption", "figure", "footer", "form", "header",
    "hgroup", "listing", "main", "menu", "nav", "ol", "pre", "section", "summary", "ul",
    "applet", "marquee", "object", "select"};

const TagSet kHeadContent = {"base", "basefont", "bgsound", "link", "meta", "title",
                             "style", "script", "noscript", "noframes"};

const TagSet kHeadings = {"h1", "h2", "h3", "h4", "h5", "h6"};

const TagSet kDefaultScope = {"applet", "caption", "html", "table", "td",
                              "th", "marquee", "object", "template"};
const TagSet kButtonScope = {"applet", "caption", "html",     "table",   "td",
                             "th",     "marquee", "object", "template", "button"};
const TagSet kListScope = {"applet", "caption",  "html", "table", "td", "th",
                           "marquee", "object", "template", "ol", "ul"};
const TagSet kTableScope = {"html", "table", "template"};

const std::unordered_map<std::string_view, char32_t>& named_entities() {
  static const std::unordered_map<std::string_view, char32_t> table = {
      {"amp", '&'},       {"lt", '<'},         {"gt", '>'},         {"quot", '"'},
      {"apos", '\''},     {"nbsp", 0xA0},      {"copy", 0xA9},      {"reg", 0xAE},
      {"trade", 0x2122},  {"mdash", 0x2014},   {"ndash", 0x2013},   {"hellip", 0x2026},
      {"lsquo", 0x2018},  {"rsquo", 0x2019},   {"ldquo", 0x201C},   {"rdquo", 0x201D},
      {"sbquo", 0x201A},  {"bdquo", 0x201E},   {"laquo", 0xAB},     {"raquo", 0xBB},
      {"lsaquo", 0x2039}, {"rsaquo", 0x203A},  {"bull", 0x2022},    {"middot", 0xB7},
      {"times", 0xD7},    {"divide", 0xF7},    {"deg", 0xB0},       {"para", 0xB6},
      {"sect", 0xA7},     {"cent", 0xA2},      {"pound", 0xA3},     {"yen", 0xA5},
      {"euro", 0x20AC},   {"shy", 0xAD},       {"iexcl", 0xA1},     {"iquest", 0xBF},
      {"plusmn", 0xB1},   {"frac12", 0xBD},    {"frac14", 0xBC},    {"frac34", 0xBE},
      {"sup2", 0xB2},     {"sup3", 0xB3},      {"micro", 0xB5},     {"ensp", 0x2002},
      {"emsp", 0x2003},   {"thinsp", 0x2009},  {"zwnj", 0x200C},    {"zwj", 0x200D},
      {"dagger", 0x2020}, {"Dagger", 0x2021},  {"permil", 0x2030},  {"larr", 0x2190},
      {"rarr", 0x2192},   {"uarr", 0x2191},    {"darr", 0x2193},    {"harr", 0x2194},
      {"hearts", 0x2665}, {"agrave", 0xE0},    {"aacute", 0xE1},    {"acirc", 0xE2},
      {"atilde", 0xE3},   {"auml", 0xE4},      {"aring", 0xE5},     {"aelig", 0xE6},
      {"ccedil", 0xE7},   {"egrave", 0xE8},    {"eacute", 0xE9},    {"ecirc", 0xEA},
      {"euml", 0xEB},     {"igrave", 0xEC},    {"iacute", 0xED},    {"icirc", 0xEE},
      {"iuml", 0xEF},     {"ntilde", 0xF1},    {"ograve", 0xF2},    {"oacute", 0xF3},
      {"ocirc", 0xF4},    {"otilde", 0xF5},    {"ouml", 0xF6},      {"oslash", 0xF8},
      {"ugrave", 0xF9},   {"uacute", 0xFA},    {"ucirc", 0xFB},     {"uuml", 0xFC},
      {"yacute", 0xFD},   {"szlig", 0xDF},     {"Agrave", 0xC0},    {"Aacute", 0xC1},
      {"Acirc", 0xC2},    {"Auml", 0xC4},      {"Ccedil", 0xC7},    {"Egrave", 0xC8},
      {"Eacute", 0xC9},   {"Ntilde", 0xD1},    {"Ouml", 0xD6},      {"Uuml", 0xDC},
  };
  return table;
}

// Entities honoured without a trailing semicolon (legacy HTML behaviour).
const TagSet kLegacyEntities = {"amp", "lt", "gt", "quot", "nbsp", "copy", "reg"};

bool is_ascii_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
bool is_ascii_alnum(char c) { return is_ascii_alpha(c) || (c >= '0' && c <= '9'); }

bool starts_with_ci(std::string_view s, std::size_t pos, std::string_view prefix) {
  if (pos + prefix.size() > s.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    char c = s[pos + i];
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    if (c != prefix[i]) return false;
  }
  return true;
}

// Tries to decode a character reference at input[pos] == '&'. On success
// appends the decoded text and advances pos past the reference.
bool decode_entity(std::string_view input, std::size_t& pos, std::string& out, bool in_attribute) {
  std::size_t i = pos + 1;
  if (i < input.size() && input[i] == '#') {
    ++i;
    bool hex = false;
    if (i < input.size() && (input[i] == 'x' || input[i] == 'X')) {
      hex = true;
      ++i;
    }
    const std::size_t digits_begin = i;
    std::uint32_t value = 0;
    while (i < input.size()) {
      const char c = input[i];
      int d = -1;
      if (c >= '0' && c <= '9') d = c - '0';
      else if (hex && c >= 'a' && c <= 'f') d = c - 'a' + 10;
      else if (hex && c >= 'A' && c <= 'F') d = c - 'A' + 10;
      if (d < 0) break;
      if (value <= 0x10FFFF) value = value * (hex ? 16 : 10) + static_cast<std::uint32_t>(d);
      ++i;
    }
    if (i == digits_begin) return false;
    if (i < input.size() && input[i] == ';') ++i;
    char32_t cp = value;
    if (cp == 0 || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) cp = 0xFFFD;
    utf8::append(out, cp);
    pos = i;
    return true;
  }
  while (i < input.size() && is_ascii_alnum(input[i]) && i - pos <= 32) ++i;
  const std::string_view name = input.substr(pos + 1, i - pos - 1);
  if (name.empty()) return false;
  const auto& table = named_entities();
  const bool has_semicolon = i < input.size() && input[i] == ';';
  if (has_semicolon) {
    if (auto it = table.find(name); it != table.end()) {
      utf8::append(out, it->second);
      pos = i + 1;
      return true;
    }
    return false;
  }
  // Legacy form: longest known prefix without a semicolon.
  for (std::size_t len = std::min<std::size_t>(name.size(), 6); len >= 2; --len) {
    const std::string_view prefix = name.substr(0, len);
    if (!kLegacyEntities.contains(prefix)) continue;
    const std::size_t after = pos + 1 + len;
    if (in_attribute && after < input.size() && (is_ascii_alnum(input[after]) || input[after] == '=')) {
      return false;
    }
    utf8::append(out, table.at(prefix));
    pos = after;
    return true;
  }
  return false;
}

std::string decode_text(std::string_view raw, bool in_attribute) {
  std::string out;
  out.reserve(raw.size());
  std::size_t i = 0;
  while (i < raw.size()) {
    if (raw[i] == '&' && decode_entity(raw, i, out, in_attribute)) continue;
    out.push_back(raw[i]);
    ++i;
  }
  return out;
}

struct Tag {
  std::string name;
  std::vector<Attribute> attributes;
  bool end = false;
};

class TreeBuilder {
 public:
  TreeBuilder(std::string input, const ParseOptions& options)
      : input_(std::move(input)), options_(options) {
    stack_.push_back(&doc_.root);
  }

  Document run() {
    std::size_t pos = 0;
    std::string text;
    auto flush_text = [&] {
      if (!text.empty()) insert_text(text);
      text.clear();
    };
    const std::string_view in = input_;
    while (pos < in.size()) {
      const char c = in[pos];
      if (c == '&') {
        if (!decode_entity(in, pos, text, false)) {
          text.push_back('&');
          ++pos;
        }
        continue;
      }
      if (c != '<' || pos + 1 >= in.size()) {
        text.push_back(c);
        ++pos;
        continue;
      }
      const char n = in[pos + 1];
      if (is_ascii_alpha(n)) {
        flush_text();
        auto tag = read_tag(pos + 1, pos, false);
        if (tag) handle_start(std::move(*tag), pos);
      } else if (n == '/') {
        if (pos + 2 >= in.size()) {
          text.append("</");
          pos += 2;
        } else if (is_ascii_alpha(in[pos + 2])) {
          flush_text();
          auto tag = read_tag(pos + 2, pos, true);
          if (tag) handle_end(tag->name);
        } else if (in[pos + 2] == '>') {
          pos += 3;
        } else {
          flush_text();
          pos = bogus_comment(pos + 2);
        }
      } else if (n == '!') {
        flush_text();
        if (in.compare(pos, 4, "<!--") == 0) {
          const std::size_t end = in.find("-->", pos + 4);
          const std::size_t stop = end == std::string_view::npos ? in.size() : end;
          insert_comment(std::string(in.substr(pos + 4, stop - pos - 4)));
          pos = end == std::string_view::npos ? in.size() : end + 3;
        } else if (starts_with_ci(in, pos + 2, "doctype")) {
          const std::size_t end = in.find('>', pos + 9);
          const std::size_t stop = end == std::string_view::npos ? in.size() : end;
          handle_doctype(in.substr(pos + 9, stop - pos - 9));
          pos = end == std::string_view::npos ? in.size() : end + 1;
        } else {
          pos = bogus_comment(pos + 2);
        }
      } else if (n == '?') {
        flush_text();
        pos = bogus_comment(pos + 1);
      } else {
        text.push_back(c);
        ++pos;
      }
    }
    flush_text();
    ensure_body();
    return std::move(doc_);
  }

 private:
  enum class Mode { before_head, in_head, after_head, in_body };

  Node& current() { return *stack_.back(); }

  std::size_t bogus_comment(std::size_t start) {
    const std::string_view in = input_;
    const std::size_t end = in.find('>', start);
    const std::size_t stop = end == std::string_view::npos ? in.size() : end;
    insert_comment(std::string(in.substr(start, stop - start)));
    return end == std::string_view::npos ? in.size() : end + 1;
  }

  // Reads a tag whose name starts at `name_begin`. Sets `pos` past the tag.
  // Returns nullopt if EOF is hit inside the tag (the tag is dropped).
  std::optional<Tag> read_tag(std::size_t name_begin, std::size_t& pos, bool end) {
    const std::string_view in = input_;
    std::size_t i = name_begin;
    Tag tag;
    tag.end = end;
    while (i < in.size() && !utf8::is_space(in[i]) && in[i] != '/' && in[i] != '>') ++i;
    tag.name = utf8::to_lower_ascii(in.substr(name_begin, i - name_begin));
    for (;;) {
      while (i < in.size() && (utf8::is_space(in[i]) || in[i] == '/')) ++i;
      if (i >= in.size()) {
        pos = in.size();
        return std::nullopt;
      }
      if (in[i] == '>') {
        pos = i + 1;
        return tag;
      }
      const std::size_t name_start = i;
      ++i;  // the first character may be '='
      while (i < in.size() && !utf8::is_space(in[i]) && in[i] != '/' && in[i] != '>' && in[i] != '=') ++i;
      std::string name = utf8::to_lower_ascii(in.substr(name_start, i - name_start));
      std::string value;
      std::size_t j = i;
      while (j < in.size() && utf8::is_space(in[j])) ++j;
      if (j < in.size() && in[j] == '=') {
        ++j;
        while (j < in.size() && utf8::is_space(in[j])) ++j;
        if (j >= in.size()) {
          pos = in.size();
          return std::nullopt;
        }
        if (in[j] == '"' || in[j] == '\'') {
          const char quote = in[j];
          const std::size_t close = in.find(quote, j + 1);
          if (close == std::string_view::npos) {
            pos = in.size();
            return std::nullopt;
          }
          value = decode_text(in.substr(j + 1, close - j - 1), true);
          i = close + 1;
        } else {
          const std::size_t vstart = j;
          while (j < in.size() && !utf8::is_space(in[j]) && in[j] != '>') ++j;
          value = decode_text(in.substr(vstart, j - vstart), true);
          i = j;
        }
      }
      if (!end) {
        const bool duplicate = std::any_of(tag.attributes.begin(), tag.attributes.end(),
                                           [&](const Attribute& a) { return a.name == name; });
        if (!duplicate) tag.attributes.push_back({std::move(name), std::move(value)});
      }
    }
  }

  void handle_doctype(std::string_view body) {
    if (seen_content_ || doc_.doctype) return;
    const std::size_t b = body.find_first_not_of(" \t\n\r\f\v");
    if (b == std::string_view::npos) {
      doc_.doctype = std::string();
      return;
    }
    const std::size_t e = body.find_last_not_of(" \t\n\r\f\v");
    doc_.doctype = std::string(body.substr(b, e - b + 1));
  }

  void insert_comment(std::string data) {
    current().children.push_back(Node::comment(std::move(data)));
  }

  void append_text(Node& parent, std::string_view data) {
    if (data.empty()) return;
    if (!parent.children.empty() && parent.children.back().is_text()) {
      parent.children.back().text.append(data);
    } else {
      parent.children.push_back(Node::make_text(std::string(data)));
    }
  }

  void insert_text(std::string_view data) {
    if (mode_ == Mode::in_body || (&current() != &doc_.root && !current().is_element("head"))) {
      seen_content_ = true;
      append_text(current(), data);
      return;
    }
    const std::size_t first = data.find_first_not_of(" \t\n\r\f\v");
    if (mode_ == Mode::in_head) {
      append_text(current(), data.substr(0, std::min(first, data.size())));
    }
    if (first == std::string_view::npos) return;
    ensure_body();
    seen_content_ = true;
    append_text(current(), data.substr(first));
  }

  void create_head() {
    doc_.root.children.push_back(Node::element("head"));
    stack_.push_back(&doc_.root.children.back());
    has_head_ = true;
    mode_ = Mode::in_head;
  }

  void ensure_body() {
    if (mode_ == Mode::in_body) return;
    if (!has_head_) create_head();
    if (mode_ == Mode::in_head) {
      while (stack_.size() > 1) stack_.pop_back();
    }
    doc_.root.children.push_back(Node::element("body"));
    stack_.push_back(&doc_.root.children.back());
    mode_ = Mode::in_body;
  }

  static void merge_attributes(Node& target, const std::vector<Attribute>& attrs) {
    for (const auto& a : attrs) {
      if (!target.attribute(a.name)) target.attributes.push_back(a);
    }
  }

  Node* body() {
    return mode_ == Mode::in_body && stack_.size() > 1 ? stack_[1] : nullptr;
  }

  bool in_scope(const TagSet& targets, const TagSet& boundaries) const {
    for (auto it = stack_.rbegin(); it != stack_.rend(); ++it) {
      if (targets.contains((*it)->tag)) return true;
      if (boundaries.contains((*it)->tag)) return false;
    }
    return false;
  }

  // Pops elements until one whose tag is in `targets` has been popped.
  void pop_until(const TagSet& targets) {
    while (stack_.size() > 2) {
      const bool hit = targets.contains(current().tag);
      stack_.pop_back();
      if (hit) return;
    }
  }

  // li/dd/dt auto-closing: finds an open matching item before any special
  // element other than address, div and p.
  bool open_list_item(const TagSet& items) const {
    for (auto it = stack_.rbegin(); it != stack_.rend(); ++it) {
      const std::string& t = (*it)->tag;
      if (items.contains(t)) return true;
      if (kSpecial.contains(t) && t != "address" && t != "div" && t != "p") return false;
    }
    return false;
  }

  void handle_start(Tag tag, std::size_t& pos) {
    seen_content_ = true;
    const std::string& name = tag.name;
    if (name == "html") {
      merge_attributes(doc_.root, tag.attributes);
      return;
    }
    if (mode_ != Mode::in_body) {
      if (name == "head") {
        if (mode_ == Mode::before_head) {
          create_head();
          current().attributes = std::move(tag.attributes);
        }
        return;
      }
      if (kHeadContent.contains(name) && mode_ != Mode::after_head) {
        if (mode_ == Mode::before_head) create_head();
        insert_element(std::move(tag), pos);
        return;
      }
      if (name == "body") {
        ensure_body();
        current().attributes = std::move(tag.attributes);
        return;
      }
      ensure_body();
    }
    if (name == "body") {
      merge_attributes(*body(), tag.attributes);
      return;
    }
    if (name == "head") return;

    static const TagSet kLi = {"li"};
    static const TagSet kDdDt = {"dd", "dt"};
    static const TagSet kP = {"p"};
    static const TagSet kA = {"a"};
    static const TagSet kButton = {"button"};
    static const TagSet kCell = {"td", "th"};
    static const TagSet kRowOrCell = {"tr", "td", "th"};
    static const TagSet kSection = {"tbody", "thead", "tfoot", "tr", "td", "th"};
    static const TagSet kOption = {"option"};
    static const TagSet kOptionOrGroup = {"option", "optgroup"};

    // Closing rules can expose each other's targets, so run them until none
    // fires; replaying the serialized tree then closes nothing.
    for (bool fired = true; fired;) {
      fired = false;
      auto close_if = [&](bool condition, const TagSet& targets) {
        if (!condition) return;
        pop_until(targets);
        fired = true;
      };
      if (name == "li") close_if(open_list_item(kLi), kLi);
      else if (name == "dd" || name == "dt") close_if(open_list_item(kDdDt), kDdDt);
      if (kClosesP.contains(name)) close_if(in_scope(kP, kButtonScope), kP);
      if (kHeadings.contains(name)) {
        close_if(kHeadings.contains(current().tag), kHeadings);
      } else if (name == "a") {
        close_if(in_scope(kA, kDefaultScope), kA);
      } else if (name == "button") {
        close_if(in_scope(kButton, kDefaultScope), kButton);
      } else if (name == "td" || name == "th") {
        close_if(in_scope(kCell, kTableScope), kCell);
      } else if (name == "tr") {
        close_if(in_scope(kRowOrCell, kTableScope), kRowOrCell);
      } else if (name == "tbody" || name == "thead" || name == "tfoot") {
        close_if(in_scope(kSection, kTableScope), kSection);
      } else if (name == "option") {
        close_if(current().is_element("option"), kOption);
      } else if (name == "optgroup") {
        close_if(current().is_element("option") || current().is_element("optgroup"), kOptionOrGroup);
      }
    }
    insert_element(std::move(tag), pos);
  }

  void insert_element(Tag tag, std::size_t& pos) {
    const std::string name = tag.name;
    const bool raw = kRawText.contains(name) || kEscapableRawText.contains(name) || name == "plaintext";
    if (!kVoid.contains(name) && stack_.size() >= options_.max_depth) {
      // Too deep: the tag is dropped and its content flows into the parent.
      if (raw) pos = skip_raw_text(name, pos, nullptr);
      return;
    }
    current().children.push_back(Node::element(std::move(tag.name), std::move(tag.attributes)));
    if (kVoid.contains(name)) return;
    Node* node = &current().children.back();
    stack_.push_back(node);
    if (raw) {
      pos = skip_raw_text(name, pos, node);
      stack_.pop_back();
    }
  }

  // Consumes raw text up to the matching end tag; stores it in `node`.
  std::size_t skip_raw_text(const std::string& name, std::size_t pos, Node* node) {
    const std::string_view in = input_;
    std::size_t end = in.size();
    std::size_t resume = in.size();
    if (name != "plaintext") {
      std::size_t search = pos;
      for (;;) {
        const std::size_t lt = in.find("</", search);
        if (lt == std::string_view::npos) break;
        const std::size_t after = lt + 2 + name.size();
        if (starts_with_ci(in, lt + 2, name) &&
            (after >= in.size() || utf8::is_space(in[after]) || in[after] == '/' || in[after] == '>')) {
          end = lt;
          std::size_t close = in.find('>', after);
          resume = close == std::string_view::npos ? in.size() : close + 1;
          break;
        }
        search = lt + 2;
      }
    }
    if (node) {
      const std::string_view raw = in.substr(pos, end - pos);
      const std::string content = kEscapableRawText.contains(name) ? decode_text(raw, false) : std::string(raw);
      if (!content.empty()) node->children.push_back(Node::make_text(content));
    }
    return resume;
  }

  void handle_end(const std::string& name) {
    if (name == "html" || name == "body") return;
    if (name == "head") {
      if (mode_ == Mode::in_head && current().is_element("head")) {
        stack_.pop_back();
        mode_ = Mode::after_head;
      }
      return;
    }
    if (name == "br") {
      std::size_t dummy = 0;
      handle_start(Tag{"br", {}, false}, dummy);
      return;
    }
    if (mode_ != Mode::in_body) {
      // Only head children can be open here; nothing else to close.
      return;
    }
    const TagSet one = {name};
    if (name == "p") {
      if (in_scope(one, kButtonScope)) pop_until(one);
    } else if (name == "li") {
      if (in_scope(one, kListScope)) pop_until(one);
    } else if (name == "dd" || name == "dt") {
      if (in_scope(one, kDefaultScope)) pop_until(one);
    } else if (kHeadings.contains(name)) {
      if (in_scope(kHeadings, kDefaultScope)) pop_until(kHeadings);
    } else if (name == "table" || name == "tbody" || name == "thead" || name == "tfoot" ||
               name == "tr" || name == "td" || name == "th" || name == "caption" ||
               name == "colgroup") {
      if (in_scope(one, kTableScope)) pop_until(one);
    } else if (kBlockEnd.contains(name)) {
      if (in_scope(one, kDefaultScope)) pop_until(one);
    } else {
      for (std::size_t i = stack_.size(); i-- > 2;) {
        const std::string& t = stack_[i]->tag;
        if (t == name) {
          stack_.resize(i);
          return;
        }
        if (kSpecial.contains(t)) return;
      }
    }
  }

  std::string input_;
  ParseOptions options_;
  Document doc_;
  std::vector<Node*> stack_;
  Mode mode_ = Mode::before_head;
  bool has_head_ = false;
  bool seen_content_ = false;
};

std::string normalize_newlines(std::string_view in) {
  std::string out;
  out.reserve(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] == '\r') {
      out.push_back('\n');
      if (i + 1 < in.size() && in[i + 1] == '\n') ++i;
    } else {
      out.push_back(in[i]);
    }
  }
  return out;
}

void escape_text(std::string& out, std::string_view text) {
  for (char c : text) {
    switch (c) {
      case '&': out.append("&amp;"); break;
      case '<': out.append("&lt;"); break;
      case '>': out.append("&gt;"); break;
      default: out.push_back(c);
    }
  }
}

void escape_attribute(std::string& out, std::string_view text) {
  for (char c : text) {
    switch (c) {
      case '&': out.append("&amp;"); break;
      case '"': out.append("&quot;"); break;
      default: out.push_back(c);
    }
  }
}

void serialize_into(std::string& out, const Node& node, bool raw_parent) {
  switch (node.kind) {
    case NodeKind::text:
      if (raw_parent) out.append(node.text);
      else escape_text(out, node.text);
      return;
    case NodeKind::comment:
      out.append("<!--").append(node.text).append("-->");
      return;
    case NodeKind::doctype:
      out.append("<!DOCTYPE ").append(node.text).append(">");
      return;
    case NodeKind::element:
      break;
  }
  out.push_back('<');
  out.append(node.tag);
  for (const auto& a : node.attributes) {
    out.push_back(' ');
    out.append(a.name);
    out.append("=\"");
    escape_attribute(out, a.value);
    out.push_back('"');
  }
  out.push_back('>');
  if (kVoid.contains(node.tag)) return;
  const bool raw = kRawText.contains(node.tag) || node.tag == "plaintext";
  for (const auto& child : node.children) serialize_into(out, child, raw);
  out.append("</").append(node.tag).append(">");
}

TextMeasure measure(const Node& node) {
  if (node.is_text()) return TextMeasure::of(node.text);
  if (!node.is_element() || node.tag == "script" || node.tag == "style") return {};
  TextMeasure m;
  for (const auto& c : node.children) m = m.then(measure(c));
  return m;
}

void collect_text(const Node& node, std::string& out) {
  if (node.is_text()) {
    out.append(node.text);
    return;
  }
  if (!node.is_element() || node.tag == "script" || node.tag == "style") return;
  for (const auto& c : node.children) collect_text(c, out);
}

}  // namespace

bool is_void_element(std::string_view tag) { return kVoid.contains(tag); }
bool is_raw_text_element(std::string_view tag) { return kRawText.contains(tag); }
bool is_escapable_raw_text_element(std::string_view tag) { return kEscapableRawText.contains(tag); }

Document parse_html(std::string_view bytes, const ParseOptions& options) {
  if (bytes.size() > options.max_bytes) throw OversizedDocument(bytes.size(), options.max_bytes);
  const std::string text = utf8::sanitize(bytes);
  TreeBuilder builder(normalize_newlines(text), options);
  Document doc = builder.run();
  doc.source_length = bytes.size();
  doc.source_chars = utf8::length(text);
  return doc;
}

std::string serialize(const Node& node) {
  std::string out;
  serialize_into(out, node, false);
  return out;
}

std::string serialize(const Document& doc) {
  std::string out;
  if (doc.doctype) out.append("<!DOCTYPE ").append(*doc.doctype).append(">");
  serialize_into(out, doc.root, false);
  return out;
}

std::string visible_text(const Node& node) {
  std::string raw;
  collect_text(node, raw);
  return utf8::collapse_whitespace(raw);
}

std::size_t visible_length(const Node& node) { return measure(node).core; }

TextMeasure TextMeasure::of(std::string_view text) {
  TextMeasure m;
  if (text.empty()) return m;
  m.leading_space = utf8::is_space(text.front());
  m.trailing_space = utf8::is_space(text.back());
  bool gap = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (utf8::is_space(c)) {
      gap = m.has_core;
      continue;
    }
    if ((static_cast<unsigned char>(c) & 0xC0) == 0x80) continue;
    if (gap) ++m.core;
    gap = false;
    ++m.core;
    m.has_core = true;
  }
  return m;
}

TextMeasure TextMeasure::then(const TextMeasure& next) const {
  if (!has_core) {
    TextMeasure r = next;
    r.leading_space = leading_space || next.leading_space;
    if (!next.has_core) r.trailing_space = trailing_space || next.trailing_space;
    return r;
  }
  if (!next.has_core) {
    TextMeasure r = *this;
    r.trailing_space = trailing_space || next.leading_space;
    return r;
  }
  TextMeasure r;
  r.has_core = true;
  r.core = core + next.core + ((trailing_space || next.leading_space) ? 1 : 0);
  r.leading_space = leading_space;
  r.trailing_space = next.trailing_space;
  return r;
}

void normalize_text(Node& node) {
  std::vector<Node> merged;
  merged.reserve(node.children.size());
  for (auto& child : node.children) {
    if (child.is_text()) {
      if (child.text.empty()) continue;
      if (!merged.empty() && merged.back().is_text()) {
        merged.back().text.append(child.text);
        continue;
      }
    } else if (child.is_element()) {
      normalize_text(child);
    }
    merged.push_back(std::move(child));
  }
  node.children = std::move(merged);
}

}  // namespace htk::dom
