#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "htk/backend.hpp"
#include "htk/prompt.hpp"
#include "htk/tokenizer.hpp"

namespace htk::policy {

struct SizeHintPolicy {
  std::size_t s_bar = 1;
  double epsilon = 0.1;
  std::size_t max_retries = 5;
  std::size_t sample_cap = 50;

  void validate() const;
};

/// Mean token length of the first min(cap, n) targets, rounded half-up,
/// at least 1. Throws DataError on an empty list.
std::size_t estimate_s_bar(const std::vector<std::string>& targets, const tok::Tokenizer& tokenizer,
                           std::size_t cap = 50);

/// Half-up rounding of a non-negative value.
std::size_t round_half_up(double x);

/// [s̄] followed, for each retry round i, by max(1, round(s̄ - iεs̄)) and
/// round(s̄ + iεs̄).
std::vector<std::size_t> hint_sequence(const SizeHintPolicy& policy);

enum class Source { initial, retry, auto_template_fallback };
std::string to_string(Source source, std::size_t round);

struct Attempt {
  std::size_t round = 0;  // 0 initial, 1..max_retries retries, max_retries+1 fallback
  std::optional<std::size_t> hint;
  bool extracted = false;
  std::optional<double> perplexity;
  bool selected = false;
  std::string prompt;
  std::string generated;
};

struct PolicyOutcome {
  std::vector<std::pair<std::string, std::string>> slot_outputs;  // empty when nothing was selected
  std::vector<Attempt> attempts;
  Source source = Source::initial;
  std::size_t round = 0;

  bool succeeded() const;
  const Attempt* selected() const;
};

/// Runs the template with the policy's hints until some attempt extracts.
/// Round 0 tries s̄; round i tries the two hints of that round and keeps the
/// extractable output with the lowest perplexity (ties go to the earlier
/// hint). If every round fails and `fallback` is given, it is instantiated
/// once with hint s̄. Backend errors propagate as BackendError.
PolicyOutcome run_generation(const prompt::Template& tpl, const prompt::Inputs& inputs, const SizeHintPolicy& policy,
                             backend::Backend& backend, const prompt::Template* fallback = nullptr,
                             std::string_view mask_token = tok::kDefaultMaskToken);

struct Classification {
  std::string label;
  std::vector<std::pair<std::string, double>> perplexities;  // verbalizer order
};

/// Scores the template once per label and returns the lowest-perplexity
/// label, the earlier verbalizer winning ties. `labels` defaults to all
/// verbalizers; each must have one.
Classification classify(const prompt::Template& tpl, const prompt::Inputs& inputs, backend::Backend& backend,
                        const std::vector<std::string>& labels = {});

struct Block {
  std::string field;
  std::string text;
};

/// The masked request sent for auto-prompting: "<mask> b1 <mask> <mask> b2 <mask>".
std::string auto_prompt_request(const std::vector<Block>& blocks, std::string_view mask_token = tok::kDefaultMaskToken);

/// Asks the backend to wrap the blocks in markup and turns its answer into a
/// template with one {{field:NAME}} per block. Throws DataError naming the
/// first block not found verbatim (whitespace-normalized) in the answer.
prompt::Template auto_prompt(const std::vector<Block>& blocks, backend::Backend& backend,
                             std::string_view mask_token = tok::kDefaultMaskToken, std::string name = "auto");

}  // namespace htk::policy
