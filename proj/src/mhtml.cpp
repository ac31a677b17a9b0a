#include "htk/mhtml.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

#include "htk/error.hpp"
#include "htk/utf8.hpp"

namespace htk::mhtml {

namespace {

using dom::Node;

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(std::string_view value) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= value.size()) {
    const auto comma = value.find(',', start);
    const auto item = trim(value.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (!item.empty()) out.push_back(utf8::to_lower_ascii(item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("invalid value '" + std::string(value) + "' for " + std::string(key));
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("invalid boolean '" + std::string(value) + "' for " + std::string(key));
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && utf8::is_space(s[i])) ++i;
    const std::size_t b = i;
    while (i < s.size() && !utf8::is_space(s[i])) ++i;
    if (i > b) out.push_back(s.substr(b, i - b));
  }
  return out;
}

bool is_skeleton(const Node& n) { return n.is_element("html") || n.is_element("head") || n.is_element("body"); }

bool marked_as_boilerplate(const Node& n, const Config& cfg) {
  for (const char* attr : {"class", "id"}) {
    const std::string* value = n.attribute(attr);
    if (!value) continue;
    for (auto token : split_ws(*value)) {
      const std::string lower = utf8::to_lower_ascii(token);
      for (const auto& needle : cfg.copyright_tokens) {
        if (!needle.empty() && lower.find(needle) != std::string::npos) return true;
      }
    }
  }
  return false;
}

void remove_forbidden_in(Node& node, const Config& cfg) {
  std::erase_if(node.children, [&](const Node& c) {
    if (c.kind == dom::NodeKind::comment || c.kind == dom::NodeKind::doctype) return true;
    if (!c.is_element() || is_skeleton(c)) return false;
    return cfg.forbidden_tags.contains(c.tag) || marked_as_boilerplate(c, cfg);
  });
  for (auto& c : node.children) {
    if (c.is_element()) remove_forbidden_in(c, cfg);
  }
}

bool has_direct_text(const Node& n) {
  return std::any_of(n.children.begin(), n.children.end(), [](const Node& c) {
    return c.is_text() && std::any_of(c.text.begin(), c.text.end(), [](char ch) { return !utf8::is_space(ch); });
  });
}

// Post-order: prunes element children without a qualifying element, then
// evaluates this node on what remains. Returns whether anything qualifying is
// left in the subtree.
bool prune_in(Node& node, const Config& cfg) {
  bool any = false;
  std::erase_if(node.children, [&](Node& c) {
    if (!c.is_element()) return false;
    const bool keep = prune_in(c, cfg);
    any = any || keep;
    return !keep && !is_skeleton(c);
  });
  return any || qualifies(node, cfg);
}

std::vector<std::string> class_tokens(const Node& n) {
  std::vector<std::string> out;
  if (const auto* v = n.attribute("class")) {
    for (auto t : split_ws(*v)) out.emplace_back(t);
  }
  return out;
}

// Index of the single element child of a div when all other children are
// whitespace-only text, otherwise nullopt.
std::optional<std::size_t> lone_div_child(const Node& n) {
  std::optional<std::size_t> found;
  for (std::size_t i = 0; i < n.children.size(); ++i) {
    const Node& c = n.children[i];
    if (c.is_element()) {
      if (found || !c.is_element("div")) return std::nullopt;
      found = i;
    } else if (c.is_text()) {
      if (std::any_of(c.text.begin(), c.text.end(), [](char ch) { return !utf8::is_space(ch); })) return std::nullopt;
    } else {
      return std::nullopt;
    }
  }
  return found;
}

void fold_in(Node& node) {
  for (auto& c : node.children) {
    if (c.is_element()) fold_in(c);
  }
  if (!node.is_element("div")) return;
  while (auto idx = lone_div_child(node)) {
    Node inner = std::move(node.children[*idx]);
    // class: ordered union; id: outer wins; other attributes: outer first.
    std::vector<std::string> classes = class_tokens(node);
    for (auto& t : class_tokens(inner)) {
      if (std::find(classes.begin(), classes.end(), t) == classes.end()) classes.push_back(std::move(t));
    }
    const bool had_class = node.attribute("class") || inner.attribute("class");
    for (const auto& a : inner.attributes) {
      if (a.name != "class" && !node.attribute(a.name)) node.attributes.push_back(a);
    }
    if (had_class) {
      std::string joined;
      for (const auto& t : classes) {
        if (!joined.empty()) joined.push_back(' ');
        joined.append(t);
      }
      node.set_attribute("class", std::move(joined));
    }
    // Surrounding whitespace is kept so visible text is unchanged.
    std::vector<Node> children;
    for (std::size_t i = 0; i < *idx; ++i) children.push_back(std::move(node.children[i]));
    for (auto& c : inner.children) children.push_back(std::move(c));
    for (std::size_t i = *idx + 1; i < node.children.size(); ++i) children.push_back(std::move(node.children[i]));
    node.children = std::move(children);
  }
}

void strip_in(Node& node) {
  if (node.is_element()) {
    std::vector<dom::Attribute> kept;
    if (const auto* c = node.attribute("class")) kept.push_back({"class", *c});
    if (const auto* i = node.attribute("id")) kept.push_back({"id", *i});
    node.attributes = std::move(kept);
  }
  for (auto& c : node.children) strip_in(c);
}

bool lang_matches(std::string_view lang, std::string_view required) {
  const auto primary = lang.substr(0, lang.find_first_of("-_"));
  return utf8::to_lower_ascii(trim(primary)) == utf8::to_lower_ascii(required);
}

double mean_of_sorted(const std::vector<double>& v) {
  double sum = 0;
  for (double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

double median_of_sorted(const std::vector<double>& v) {
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

}  // namespace

std::string_view to_string(RejectCode code) {
  switch (code) {
    case RejectCode::wrong_lang: return "wrong_lang";
    case RejectCode::low_ratio: return "low_ratio";
    case RejectCode::empty_after_prune: return "empty_after_prune";
    case RejectCode::oversized: return "oversized";
    case RejectCode::parse_error: return "parse_error";
  }
  return "parse_error";
}

std::optional<RejectCode> reject_code_from_string(std::string_view name) {
  for (auto code : kAllRejectCodes) {
    if (to_string(code) == name) return code;
  }
  return std::nullopt;
}

void Config::validate() const {
  if (standard_threshold == 0 || compact_threshold == 0) throw ConfigError("thresholds must be positive");
  if (compact_threshold > standard_threshold) {
    throw ConfigError("compact_threshold must not exceed standard_threshold");
  }
  if (!(min_text_ratio > 0.0 && min_text_ratio < 1.0)) throw ConfigError("min_text_ratio must be in (0, 1)");
  if (max_doc_bytes == 0) throw ConfigError("max_doc_bytes must be positive");
}

void Config::set(std::string_view key, std::string_view value) {
  value = trim(value);
  if (key == "standard_threshold") standard_threshold = parse_number<std::size_t>(key, value);
  else if (key == "compact_threshold") compact_threshold = parse_number<std::size_t>(key, value);
  else if (key == "min_text_ratio") min_text_ratio = parse_number<double>(key, value);
  else if (key == "required_lang") required_lang = std::string(value);
  else if (key == "accept_missing_lang") accept_missing_lang = parse_bool(key, value);
  else if (key == "max_doc_bytes") max_doc_bytes = parse_number<std::size_t>(key, value);
  else if (key == "forbidden_tags") {
    auto items = split_list(value);
    forbidden_tags = {items.begin(), items.end()};
  } else if (key == "compact_tags") {
    auto items = split_list(value);
    compact_tags = {items.begin(), items.end()};
  } else if (key == "copyright_tokens") {
    copyright_tokens = split_list(value);
  } else {
    throw ConfigError("unknown config key '" + std::string(key) + "'");
  }
}

Config Config::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  Config cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto content = trim(std::string_view(line).substr(0, line.find('#')));
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    }
    cfg.set(trim(content.substr(0, eq)), content.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

bool qualifies(const dom::Node& element, const Config& cfg) {
  if (!element.is_element() || !has_direct_text(element)) return false;
  const std::size_t threshold =
      cfg.compact_tags.contains(element.tag) ? cfg.compact_threshold : cfg.standard_threshold;
  return dom::visible_length(element) >= threshold;
}

bool contains_qualifying(const dom::Node& node, const Config& cfg) {
  if (qualifies(node, cfg)) return true;
  return std::any_of(node.children.begin(), node.children.end(),
                     [&](const Node& c) { return c.is_element() && contains_qualifying(c, cfg); });
}

dom::Node remove_forbidden(dom::Node root, const Config& cfg) {
  remove_forbidden_in(root, cfg);
  return root;
}

dom::Node prune_nontextual(dom::Node root, const Config& cfg) {
  prune_in(root, cfg);
  return root;
}

dom::Node fold_divs(dom::Node root) {
  fold_in(root);
  return root;
}

dom::Node strip_attributes(dom::Node root) {
  strip_in(root);
  return root;
}

Outcome simplify(const dom::Document& doc, const Config& cfg, std::string doc_id, std::optional<std::string> url) {
  std::optional<std::string> lang;
  if (const auto* l = doc.root.attribute("lang")) lang = *l;
  if (!cfg.required_lang.empty()) {
    if (!lang) {
      if (!cfg.accept_missing_lang) return RejectReason{RejectCode::wrong_lang, "missing lang attribute"};
    } else if (!lang_matches(*lang, cfg.required_lang)) {
      return RejectReason{RejectCode::wrong_lang, "lang=\"" + *lang + "\""};
    }
  }

  Node root = remove_forbidden(doc.root, cfg);
  if (!prune_in(root, cfg)) return RejectReason{RejectCode::empty_after_prune, "no qualifying textual element"};
  root = fold_divs(std::move(root));
  root = strip_attributes(std::move(root));
  dom::normalize_text(root);

  Record rec;
  rec.doc_id = std::move(doc_id);
  rec.url = std::move(url);
  rec.lang = std::move(lang);
  rec.mhtml = dom::serialize(root);
  rec.raw_chars = doc.source_chars;
  rec.mhtml_chars = utf8::length(rec.mhtml);
  rec.text_chars = dom::visible_length(root);
  rec.text_ratio = static_cast<double>(rec.text_chars) / static_cast<double>(rec.mhtml_chars);
  if (!(rec.text_ratio > cfg.min_text_ratio)) {
    return RejectReason{RejectCode::low_ratio, "text ratio " + std::to_string(rec.text_ratio)};
  }
  // Escaping bare '&'/'<' and adding implied tags can make a page that lost
  // almost nothing longer than its source. Trees built in memory have no
  // source length and skip this.
  if (doc.source_chars > 0 && rec.mhtml_chars > rec.raw_chars) {
    return RejectReason{RejectCode::parse_error, "simplified output longer than input (" +
                                                     std::to_string(rec.mhtml_chars) + " > " +
                                                     std::to_string(rec.raw_chars) + " chars)"};
  }
  return rec;
}

Outcome simplify_bytes(std::string_view bytes, const Config& cfg, std::string doc_id, std::optional<std::string> url) {
  dom::ParseOptions options;
  options.max_bytes = cfg.max_doc_bytes;
  dom::Document doc;
  try {
    doc = dom::parse_html(bytes, options);
  } catch (const OversizedDocument& e) {
    return RejectReason{RejectCode::oversized, e.what()};
  } catch (const std::exception& e) {
    return RejectReason{RejectCode::parse_error, e.what()};
  }
  return simplify(doc, cfg, std::move(doc_id), std::move(url));
}

void StatsAccumulator::add(const Record& record, const tok::Tokenizer& tokenizer) {
  reductions_.push_back(record.reduction());
  ratios_.push_back(record.text_ratio);
  token_counts_.push_back(tokenizer.count(record.mhtml));
}

void StatsAccumulator::merge(const StatsAccumulator& other) {
  reductions_.insert(reductions_.end(), other.reductions_.begin(), other.reductions_.end());
  ratios_.insert(ratios_.end(), other.ratios_.begin(), other.ratios_.end());
  token_counts_.insert(token_counts_.end(), other.token_counts_.begin(), other.token_counts_.end());
}

StatsReport StatsAccumulator::finish(std::size_t budget) const {
  if (reductions_.empty()) throw DataError("no records to report on");
  if (budget == 0) throw ConfigError("token budget must be at least 1");
  // Sorting first makes every sum independent of insertion order.
  auto reductions = reductions_;
  auto ratios = ratios_;
  auto tokens = token_counts_;
  std::sort(reductions.begin(), reductions.end());
  std::sort(ratios.begin(), ratios.end());
  std::sort(tokens.begin(), tokens.end());

  StatsReport r;
  r.documents = reductions.size();
  r.mean_reduction = mean_of_sorted(reductions);
  r.median_reduction = median_of_sorted(reductions);
  r.text_ratio = {ratios.front(), ratios.back(), mean_of_sorted(ratios), median_of_sorted(ratios)};
  r.budget = budget;
  r.within_budget = static_cast<std::size_t>(
      std::count_if(tokens.begin(), tokens.end(), [&](std::size_t t) { return t <= budget; }));
  r.within_budget_fraction = static_cast<double>(r.within_budget) / static_cast<double>(r.documents);
  r.mean_tokens = static_cast<double>(std::accumulate(tokens.begin(), tokens.end(), std::size_t{0})) /
                  static_cast<double>(r.documents);
  return r;
}

StatsReport corpus_stats(const std::vector<Record>& records, const tok::Tokenizer& tokenizer, std::size_t budget) {
  StatsAccumulator acc;
  for (const auto& r : records) acc.add(r, tokenizer);
  return acc.finish(budget);
}

}  // namespace htk::mhtml
