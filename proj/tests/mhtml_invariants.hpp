#pragma once

// Post-conditions every accepted record must satisfy. Shared by the unit and
// acceptance suites.

#include <optional>
#include <string>
#include <variant>

#include "htk/dom.hpp"
#include "htk/mhtml.hpp"

namespace testing {

inline std::optional<std::string> find_violation(const htk::dom::Node& n, const htk::mhtml::Config& cfg) {
  using htk::dom::NodeKind;
  if (n.kind == NodeKind::comment) return "comment survived";
  if (!n.is_element()) return std::nullopt;
  if (cfg.forbidden_tags.contains(n.tag)) return "forbidden <" + n.tag + "> survived";
  for (const auto& a : n.attributes) {
    if (a.name != "class" && a.name != "id") return "attribute " + a.name + " on <" + n.tag + ">";
  }
  if (n.is_element("div")) {
    std::size_t elements = 0;
    bool div_child = false;
    bool other = false;
    for (const auto& c : n.children) {
      if (c.is_element()) {
        ++elements;
        div_child = c.is_element("div");
      } else if (!c.is_text() || c.text.find_first_not_of(" \t\r\n\f\v") != std::string::npos) {
        other = true;
      }
    }
    if (elements == 1 && div_child && !other) return "foldable div chain";
  }
  for (const auto& c : n.children) {
    if (auto v = find_violation(c, cfg)) return v;
  }
  return std::nullopt;
}

/// Checks one accepted record; returns a description of the first broken
/// property, or nullopt.
inline std::optional<std::string> check_record(const htk::mhtml::Record& rec, const htk::mhtml::Config& cfg) {
  const auto doc = htk::dom::parse_html(rec.mhtml);
  if (doc.doctype) return "doctype survived";
  if (auto v = find_violation(doc.root, cfg)) return v;
  if (!htk::mhtml::contains_qualifying(doc.root, cfg)) return "no qualifying element";
  if (!(rec.text_ratio > cfg.min_text_ratio)) return "ratio not above threshold";
  if (rec.mhtml_chars > rec.raw_chars) return "mhtml longer than raw input";

  // The lang attribute is stripped, so the second pass must not gate on it.
  auto again_cfg = cfg;
  again_cfg.accept_missing_lang = true;
  const auto again = htk::mhtml::simplify(doc, again_cfg);
  const auto* rec2 = std::get_if<htk::mhtml::Record>(&again);
  if (!rec2) return "second pass rejected: " + std::get<htk::mhtml::RejectReason>(again).detail;
  if (rec2->mhtml != rec.mhtml) return "not idempotent";
  return std::nullopt;
}

}  // namespace testing
