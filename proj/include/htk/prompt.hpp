#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "htk/error.hpp"
#include "htk/tokenizer.hpp"

namespace htk::prompt {

// Template files are UTF-8 text with placeholders:
//   {{field:NAME}}              task input
//   {{mask:SLOT}}               mask, never hinted
//   {{mask:SLOT|hint=K}}        mask with a fixed hint K >= 1
//   {{mask:SLOT|hint=policy}}   mask hinted by the caller (size-hint policy)
//   {{verbalizer}}              label text of a classification template
// "{{{{" is a literal "{{". Names use [A-Za-z0-9_.-].

enum class SegmentKind { literal, field, mask, verbalizer };
enum class HintMode { none, fixed, policy };

struct Segment {
  SegmentKind kind = SegmentKind::literal;
  std::string text;  // literal text, or the field/slot name
  HintMode hint_mode = HintMode::none;
  std::size_t fixed_hint = 0;
  std::size_t line = 0, column = 0;  // 1-based position in the source file

  friend bool operator==(const Segment&, const Segment&) = default;
};

using Verbalizers = std::vector<std::pair<std::string, std::string>>;  // label -> text, in order

struct Template {
  std::string name;
  std::vector<Segment> segments;
  Verbalizers verbalizers;

  std::vector<std::string> mask_slots() const;
  /// Field names in first-use order, verbalizer texts included.
  std::vector<std::string> fields() const;
  bool has_verbalizer_slot() const;
  bool has_policy_mask() const;
};

class TemplateError : public DataError {
 public:
  TemplateError(const std::string& source, std::size_t line, std::size_t column, const std::string& message)
      : DataError(source + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " + message),
        line_(line),
        column_(column) {}
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_, column_;
};

/// Parses template text. Slot names must be unique and every mask must have a
/// non-blank literal on both sides (its anchors). Throws TemplateError.
Template parse_template(std::string_view text, std::string name = "template");
Template load_template(const std::filesystem::path& path);

/// Back to file syntax; parse_template(render_template(t)) reproduces t's
/// segments up to positions.
std::string render_template(const Template& tpl);

/// A JSON object label -> text; key order is kept. Throws DataError.
Verbalizers parse_verbalizers(std::string_view json_text);
Verbalizers load_verbalizers(const std::filesystem::path& path);

/// Attaches verbalizers; the template must contain {{verbalizer}}.
Template with_verbalizers(Template tpl, Verbalizers verbalizers);

/// Turns the {{field:NAME}} placeholder into a mask slot of the same name.
Template field_to_mask(const Template& tpl, std::string_view field, HintMode mode = HintMode::policy);

struct SlotInstance {
  std::string slot;
  std::string prefix;  // whitespace-normalized anchors
  std::string suffix;
  std::optional<std::size_t> hint;
  std::size_t position = 0;  // byte offset of the sentinel in the text
};

struct InstantiatedPrompt {
  std::string text;
  std::vector<SlotInstance> slots;
};

using Inputs = std::map<std::string, std::string, std::less<>>;
using Hints = std::map<std::string, std::optional<std::size_t>, std::less<>>;

/// Throws DataError naming a missing field or unknown label, ConfigError when
/// a hint contradicts the slot's hint mode.
InstantiatedPrompt instantiate(const Template& tpl, const Inputs& inputs, const Hints& hints = {},
                               std::optional<std::string_view> label = std::nullopt,
                               std::string_view mask_token = tok::kDefaultMaskToken);

struct Extraction {
  std::vector<std::pair<std::string, std::string>> outputs;  // slot order
  std::optional<std::string> failed_slot;

  bool ok() const { return !failed_slot; }
  const std::string* get(std::string_view slot) const;
};

/// Recovers each slot's fill from a generated document by locating its
/// prefix anchor (at or after the previous match) and then the nearest
/// suffix anchor. Whitespace runs are normalized on both sides first.
Extraction extract(const InstantiatedPrompt& prompt, std::string_view generated);

/// Collapses each whitespace run to a single space (ends kept).
std::string normalize_space(std::string_view text);

}  // namespace htk::prompt
