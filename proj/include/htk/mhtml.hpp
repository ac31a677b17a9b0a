#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "htk/dom.hpp"
#include "htk/tokenizer.hpp"

namespace htk::mhtml {

struct Config {
  std::size_t standard_threshold = 128;
  std::size_t compact_threshold = 64;
  /// Documents are kept only when text/html is strictly greater than this.
  double min_text_ratio = 0.46;
  /// Primary language subtag required on <html lang>; empty disables the gate.
  std::string required_lang = "en";
  bool accept_missing_lang = false;
  std::set<std::string, std::less<>> forbidden_tags = {"header", "footer", "form", "iframe",
                                                        "script", "style", "noscript"};
  std::vector<std::string> copyright_tokens = {"copyright", "footer", "header"};
  std::set<std::string, std::less<>> compact_tags = {"ul", "ol", "li", "dl", "dt", "dd", "table",
                                                      "thead", "tbody", "tr", "td", "th", "span"};
  std::size_t max_doc_bytes = 8u << 20;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;

  /// Applies one `key = value` setting. Throws ConfigError on unknown keys or
  /// bad values.
  void set(std::string_view key, std::string_view value);

  /// Reads a key-value file: one `key = value` per line, `#` comments.
  static Config from_file(const std::filesystem::path& path);
};

struct Record {
  std::string doc_id;
  std::optional<std::string> url;
  std::string mhtml;
  std::size_t raw_chars = 0;
  std::size_t mhtml_chars = 0;
  std::size_t text_chars = 0;
  double text_ratio = 0.0;
  std::optional<std::string> lang;

  double reduction() const {
    return raw_chars == 0 ? 0.0 : 1.0 - static_cast<double>(mhtml_chars) / static_cast<double>(raw_chars);
  }

  friend bool operator==(const Record&, const Record&) = default;
};

enum class RejectCode { wrong_lang, low_ratio, empty_after_prune, oversized, parse_error };

std::string_view to_string(RejectCode code);
std::optional<RejectCode> reject_code_from_string(std::string_view name);
inline constexpr RejectCode kAllRejectCodes[] = {RejectCode::wrong_lang, RejectCode::low_ratio,
                                                 RejectCode::empty_after_prune, RejectCode::oversized,
                                                 RejectCode::parse_error};

struct RejectReason {
  RejectCode code;
  std::string detail;
};

using Outcome = std::variant<Record, RejectReason>;

/// Full transform: lang gate, forbidden-element removal, textual pruning, div
/// folding, attribute stripping, serialization, ratio gate.
Outcome simplify(const dom::Document& doc, const Config& cfg, std::string doc_id = {},
                 std::optional<std::string> url = {});

/// Parses then simplifies; an oversized input becomes RejectCode::oversized.
Outcome simplify_bytes(std::string_view bytes, const Config& cfg, std::string doc_id = {},
                       std::optional<std::string> url = {});

dom::Node remove_forbidden(dom::Node root, const Config& cfg);
dom::Node prune_nontextual(dom::Node root, const Config& cfg);
dom::Node fold_divs(dom::Node root);
dom::Node strip_attributes(dom::Node root);

/// True when the element has a non-blank direct text child and its visible
/// text reaches the threshold for its tag.
bool qualifies(const dom::Node& element, const Config& cfg);

/// Whether any element in the subtree (self included) qualifies.
bool contains_qualifying(const dom::Node& node, const Config& cfg);

struct RatioSummary {
  double min = 0, max = 0, mean = 0, median = 0;
};

struct StatsReport {
  std::size_t documents = 0;
  double mean_reduction = 0;
  double median_reduction = 0;
  RatioSummary text_ratio;
  std::size_t budget = 0;
  std::size_t within_budget = 0;
  double within_budget_fraction = 0;
  double mean_tokens = 0;
};

/// Order-independent accumulator: partial accumulators over disjoint record
/// sets can be merged in any order and finish() gives the same report.
class StatsAccumulator {
 public:
  void add(const Record& record, const tok::Tokenizer& tokenizer);
  void merge(const StatsAccumulator& other);
  std::size_t size() const { return reductions_.size(); }
  /// Throws DataError when no record was added.
  StatsReport finish(std::size_t budget) const;

 private:
  std::vector<double> reductions_;
  std::vector<double> ratios_;
  std::vector<std::size_t> token_counts_;
};

StatsReport corpus_stats(const std::vector<Record>& records, const tok::Tokenizer& tokenizer, std::size_t budget);

}  // namespace htk::mhtml
