#include "htk/prompt.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "htk/utf8.hpp"
#include "json.hpp"

namespace htk::prompt {

namespace {

constexpr std::size_t kAnchorChars = 64;

bool is_name_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-' ||
         c == '.';
}

bool valid_name(std::string_view s) { return !s.empty() && std::all_of(s.begin(), s.end(), is_name_char); }

std::string trim_space(std::string_view s) {
  while (!s.empty() && utf8::is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && utf8::is_space(s.back())) s.remove_suffix(1);
  return std::string(s);
}

// Byte offset where the last `n` code points of valid UTF-8 text begin.
std::size_t tail_start(std::string_view s, std::size_t n) {
  std::size_t pos = s.size();
  while (pos > 0 && n > 0) {
    --pos;
    if ((static_cast<unsigned char>(s[pos]) & 0xC0) != 0x80) --n;
  }
  return pos;
}

std::size_t head_end(std::string_view s, std::size_t n) {
  std::size_t pos = 0;
  for (; pos < s.size() && n > 0; --n) utf8::next(s, pos);
  return pos;
}

std::string prefix_anchor(const std::vector<Segment>& segs, std::size_t i) {
  if (i == 0 || segs[i - 1].kind != SegmentKind::literal) return {};
  const std::string_view lit = segs[i - 1].text;
  return trim_space(normalize_space(lit.substr(tail_start(lit, kAnchorChars))));
}

std::string suffix_anchor(const std::vector<Segment>& segs, std::size_t i) {
  if (i + 1 >= segs.size() || segs[i + 1].kind != SegmentKind::literal) return {};
  const std::string_view lit = segs[i + 1].text;
  return trim_space(normalize_space(lit.substr(0, head_end(lit, kAnchorChars))));
}

void append_literal(std::vector<Segment>& segs, std::string_view text, std::size_t line, std::size_t col) {
  if (text.empty()) return;
  if (!segs.empty() && segs.back().kind == SegmentKind::literal) {
    segs.back().text += text;
    return;
  }
  Segment s;
  s.text = std::string(text);
  s.line = line;
  s.column = col;
  segs.push_back(std::move(s));
}

void validate(const Template& tpl) {
  std::set<std::string, std::less<>> slots;
  std::size_t verbalizer_slots = 0;
  for (std::size_t i = 0; i < tpl.segments.size(); ++i) {
    const Segment& s = tpl.segments[i];
    if (s.kind == SegmentKind::verbalizer && ++verbalizer_slots > 1) {
      throw TemplateError(tpl.name, s.line, s.column, "more than one {{verbalizer}}");
    }
    if (s.kind != SegmentKind::mask) continue;
    if (!slots.insert(s.text).second) throw TemplateError(tpl.name, s.line, s.column, "duplicate slot '" + s.text + "'");
    if (prefix_anchor(tpl.segments, i).empty()) {
      throw TemplateError(tpl.name, s.line, s.column, "slot '" + s.text + "' has an empty prefix anchor");
    }
    if (suffix_anchor(tpl.segments, i).empty()) {
      throw TemplateError(tpl.name, s.line, s.column, "slot '" + s.text + "' has an empty suffix anchor");
    }
  }
}

Segment parse_placeholder(std::string_view inner, const std::string& source, std::size_t line, std::size_t col) {
  Segment s;
  s.line = line;
  s.column = col;
  auto fail = [&](const std::string& msg) -> Segment { throw TemplateError(source, line, col, msg); };
  if (inner == "verbalizer") {
    s.kind = SegmentKind::verbalizer;
    return s;
  }
  if (inner.starts_with("field:")) {
    s.kind = SegmentKind::field;
    s.text = std::string(inner.substr(6));
    if (!valid_name(s.text)) return fail("bad field name '" + s.text + "'");
    return s;
  }
  if (inner.starts_with("mask:")) {
    s.kind = SegmentKind::mask;
    std::string_view rest = inner.substr(5);
    const std::size_t bar = rest.find('|');
    s.text = std::string(rest.substr(0, bar));
    if (!valid_name(s.text)) return fail("bad slot name '" + s.text + "'");
    if (bar == std::string_view::npos) return s;
    const std::string_view opt = rest.substr(bar + 1);
    if (!opt.starts_with("hint=")) return fail("unknown mask option '" + std::string(opt) + "'");
    const std::string_view value = opt.substr(5);
    if (value == "policy") {
      s.hint_mode = HintMode::policy;
      return s;
    }
    if (value.empty() || value.size() > 9 || !std::all_of(value.begin(), value.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      return fail("hint must be a positive integer or 'policy'");
    }
    s.hint_mode = HintMode::fixed;
    s.fixed_hint = std::stoul(std::string(value));
    if (s.fixed_hint == 0) return fail("hint must be >= 1");
    return s;
  }
  return fail("unknown placeholder '{{" + std::string(inner) + "}}'");
}

std::string escape_literal(std::string_view text) {
  std::string out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text.compare(i, 2, "{{") == 0) {
      out += "{{{{";
      ++i;
    } else {
      out += text[i];
    }
  }
  return out;
}

std::string render_segment(const Segment& s) {
  switch (s.kind) {
    case SegmentKind::literal:
      return escape_literal(s.text);
    case SegmentKind::field:
      return "{{field:" + s.text + "}}";
    case SegmentKind::verbalizer:
      return "{{verbalizer}}";
    case SegmentKind::mask:
      switch (s.hint_mode) {
        case HintMode::none:
          return "{{mask:" + s.text + "}}";
        case HintMode::fixed:
          return "{{mask:" + s.text + "|hint=" + std::to_string(s.fixed_hint) + "}}";
        case HintMode::policy:
          return "{{mask:" + s.text + "|hint=policy}}";
      }
  }
  return {};
}

const std::string& input_for(const Inputs& inputs, const std::string& field) {
  auto it = inputs.find(field);
  if (it == inputs.end()) throw DataError("missing input field '" + field + "'");
  return it->second;
}

}  // namespace

std::string normalize_space(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool in_space = false;
  for (const char c : text) {
    if (utf8::is_space(c)) {
      if (!in_space) out += ' ';
      in_space = true;
    } else {
      out += c;
      in_space = false;
    }
  }
  return out;
}

std::vector<std::string> Template::mask_slots() const {
  std::vector<std::string> out;
  for (const auto& s : segments) {
    if (s.kind == SegmentKind::mask) out.push_back(s.text);
  }
  return out;
}

std::vector<std::string> Template::fields() const {
  std::vector<std::string> out;
  auto add = [&](const std::string& name) {
    if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
  };
  for (const auto& s : segments) {
    if (s.kind == SegmentKind::field) add(s.text);
  }
  for (const auto& [label, text] : verbalizers) {
    for (const auto& s : parse_template(text, "verbalizer '" + label + "'").segments) {
      if (s.kind == SegmentKind::field) add(s.text);
    }
  }
  return out;
}

bool Template::has_verbalizer_slot() const {
  return std::any_of(segments.begin(), segments.end(), [](const Segment& s) { return s.kind == SegmentKind::verbalizer; });
}

bool Template::has_policy_mask() const {
  return std::any_of(segments.begin(), segments.end(),
                     [](const Segment& s) { return s.kind == SegmentKind::mask && s.hint_mode == HintMode::policy; });
}

Template parse_template(std::string_view text, std::string name) {
  Template tpl;
  tpl.name = std::move(name);
  std::size_t line = 1, col = 1;
  std::size_t lit_line = 1, lit_col = 1;
  std::string literal;
  auto flush = [&] {
    append_literal(tpl.segments, literal, lit_line, lit_col);
    literal.clear();
  };
  auto advance = [&](std::size_t from, std::size_t to) {
    for (std::size_t p = from; p < to;) {
      const char32_t cp = utf8::next(text, p);
      if (cp == U'\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
  };
  std::size_t pos = 0;
  while (pos < text.size()) {
    if (text[pos] != '{') {
      if (literal.empty()) lit_line = line, lit_col = col;
      const std::size_t start = pos;
      utf8::next(text, pos);
      literal.append(text.substr(start, pos - start));
      advance(start, pos);
      continue;
    }
    // A run of braces: each "{{{{" is a literal "{{"; two left over open a
    // placeholder, one left over is a literal "{".
    std::size_t run = 0;
    while (pos + run < text.size() && text[pos + run] == '{') ++run;
    if (literal.empty()) lit_line = line, lit_col = col;
    const std::size_t escaped = run / 4;
    literal.append(escaped * 2, '{');
    std::size_t left = run - escaped * 4;
    if (left == 3) {
      literal += '{';
      left = 2;
    } else if (left == 1) {
      literal += '{';
      left = 0;
    }
    advance(pos, pos + run - left);
    pos += run - left;
    if (left == 0) continue;
    const std::size_t close = text.find("}}", pos + 2);
    if (close == std::string_view::npos) throw TemplateError(tpl.name, line, col, "unterminated '{{'");
    Segment seg = parse_placeholder(text.substr(pos + 2, close - pos - 2), tpl.name, line, col);
    flush();
    tpl.segments.push_back(std::move(seg));
    advance(pos, close + 2);
    pos = close + 2;
  }
  flush();
  validate(tpl);
  return tpl;
}

Template load_template(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read template " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string clean = utf8::sanitize(text);
  if (clean != text) throw TemplateError(path.string(), 1, 1, "template is not valid UTF-8");
  Template tpl = parse_template(text, path.string());
  tpl.name = path.stem().string();
  return tpl;
}

std::string render_template(const Template& tpl) {
  std::string out;
  for (const auto& s : tpl.segments) out += render_segment(s);
  return out;
}

Verbalizers parse_verbalizers(std::string_view json_text) {
  const auto j = nlohmann::ordered_json::parse(json_text, nullptr, false);
  if (j.is_discarded() || !j.is_object() || j.empty()) throw DataError("verbalizers must be a non-empty JSON object");
  Verbalizers out;
  for (const auto& [label, value] : j.items()) {
    if (!value.is_string()) throw DataError("verbalizer '" + label + "' is not a string");
    out.emplace_back(label, value.get<std::string>());
  }
  return out;
}

Verbalizers load_verbalizers(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read verbalizers " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_verbalizers(text);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

Template with_verbalizers(Template tpl, Verbalizers verbalizers) {
  if (!tpl.has_verbalizer_slot()) throw DataError("template '" + tpl.name + "' has no {{verbalizer}} slot");
  for (const auto& [label, text] : verbalizers) {
    const auto inner = parse_template(text, "verbalizer '" + label + "'");
    for (const auto& s : inner.segments) {
      if (s.kind != SegmentKind::literal && s.kind != SegmentKind::field) {
        throw DataError("verbalizer '" + label + "' may only contain text and fields");
      }
    }
  }
  tpl.verbalizers = std::move(verbalizers);
  return tpl;
}

Template field_to_mask(const Template& tpl, std::string_view field, HintMode mode) {
  Template out = tpl;
  bool found = false;
  for (auto& s : out.segments) {
    if (s.kind == SegmentKind::field && s.text == field) {
      s.kind = SegmentKind::mask;
      s.hint_mode = mode;
      found = true;
    }
  }
  if (!found) throw DataError("template '" + tpl.name + "' has no field '" + std::string(field) + "'");
  validate(out);
  return out;
}

InstantiatedPrompt instantiate(const Template& tpl, const Inputs& inputs, const Hints& hints,
                               std::optional<std::string_view> label, std::string_view mask_token) {
  InstantiatedPrompt out;
  for (std::size_t i = 0; i < tpl.segments.size(); ++i) {
    const Segment& s = tpl.segments[i];
    switch (s.kind) {
      case SegmentKind::literal:
        out.text += s.text;
        break;
      case SegmentKind::field:
        out.text += input_for(inputs, s.text);
        break;
      case SegmentKind::verbalizer: {
        if (!label) throw DataError("template '" + tpl.name + "' needs a label");
        auto it = std::find_if(tpl.verbalizers.begin(), tpl.verbalizers.end(),
                               [&](const auto& v) { return v.first == *label; });
        if (it == tpl.verbalizers.end()) throw DataError("no verbalizer for label '" + std::string(*label) + "'");
        for (const auto& v : parse_template(it->second, "verbalizer '" + it->first + "'").segments) {
          out.text += v.kind == SegmentKind::field ? input_for(inputs, v.text) : v.text;
        }
        break;
      }
      case SegmentKind::mask: {
        SlotInstance slot;
        slot.slot = s.text;
        slot.prefix = prefix_anchor(tpl.segments, i);
        slot.suffix = suffix_anchor(tpl.segments, i);
        const auto given = hints.find(s.text);
        const std::optional<std::size_t> requested = given == hints.end() ? std::nullopt : given->second;
        switch (s.hint_mode) {
          case HintMode::none:
            if (requested) throw ConfigError("slot '" + s.text + "' takes no hint");
            break;
          case HintMode::fixed:
            if (requested && *requested != s.fixed_hint) {
              throw ConfigError("slot '" + s.text + "' has fixed hint " + std::to_string(s.fixed_hint));
            }
            slot.hint = s.fixed_hint;
            break;
          case HintMode::policy:
            if (requested && *requested == 0) throw ConfigError("hint for slot '" + s.text + "' must be >= 1");
            slot.hint = requested;
            break;
        }
        slot.position = out.text.size();
        out.text += mask_token;
        if (slot.hint) out.text += std::to_string(*slot.hint);
        out.slots.push_back(std::move(slot));
        break;
      }
    }
  }
  return out;
}

const std::string* Extraction::get(std::string_view slot) const {
  for (const auto& [name, value] : outputs) {
    if (name == slot) return &value;
  }
  return nullptr;
}

Extraction extract(const InstantiatedPrompt& prompt, std::string_view generated) {
  const std::string text = normalize_space(generated);
  Extraction out;
  std::size_t cursor = 0;
  for (const auto& slot : prompt.slots) {
    const std::size_t p = text.find(slot.prefix, cursor);
    if (p == std::string::npos) {
      out.failed_slot = slot.slot;
      return out;
    }
    const std::size_t start = p + slot.prefix.size();
    const std::size_t s = text.find(slot.suffix, start);
    if (s == std::string::npos) {
      out.failed_slot = slot.slot;
      return out;
    }
    out.outputs.emplace_back(slot.slot, trim_space(std::string_view(text).substr(start, s - start)));
    cursor = s;
  }
  return out;
}

}  // namespace htk::prompt
