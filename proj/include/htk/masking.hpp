#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "htk/rng.hpp"
#include "htk/tokenizer.hpp"

namespace htk::masking {

struct Config {
  double lambda = 3.5;
  double mask_rate = 0.30;
  double hint_prob = 0.80;
  double epsilon = 0.10;
  std::uint64_t seed = 0;
  std::string mask_token = std::string(tok::kDefaultMaskToken);

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

struct SpanMask {
  std::size_t start = 0;  // token index into the target
  std::size_t m = 0;
  std::optional<std::size_t> hint;

  friend bool operator==(const SpanMask&, const SpanMask&) = default;
};

struct MaskedExample {
  std::string doc_id;
  std::string source;
  std::string target;
  std::vector<SpanMask> spans;
  std::uint64_t seed = 0;

  friend bool operator==(const MaskedExample&, const MaskedExample&) = default;
};

std::size_t sample_span_length(rng::Engine& engine, double lambda);
std::size_t sample_hint(rng::Engine& engine, std::size_t m, double epsilon);
/// max(1, floor(g)): the clamp applied to a raw normal draw.
std::size_t hint_from_draw(double g);

/// Masks roughly mask_rate of the tokens of `text` with disjoint spans that
/// are separated by at least one unmasked token. A span keeps its first
/// token's leading whitespace outside the sentinel, so "a b c" with "b" masked
/// and hinted reads "a <mask>1 c".
///
/// Throws DataError when `text` has fewer than two tokens or already contains
/// the mask token.
MaskedExample mask_document(std::string_view text, const tok::Tokenizer& tokenizer, const Config& cfg,
                            rng::Engine& engine);

/// Rebuilds the target from the source by putting each span's tokens back at
/// its sentinel. Used to check examples; throws DataError when the source
/// does not line up with the spans.
std::string reconstruct(const MaskedExample& example, const tok::Tokenizer& tokenizer,
                        std::string_view mask_token = tok::kDefaultMaskToken);

/// Masks one document with the seed derived from (cfg.seed, doc_id).
MaskedExample mask_with_document_seed(std::string doc_id, std::string_view text, const tok::Tokenizer& tokenizer,
                                      const Config& cfg);

std::string to_jsonl(const MaskedExample& example);
MaskedExample example_from_jsonl(std::string_view line);

struct EmitSummary {
  std::size_t written = 0;
  std::size_t skipped = 0;  // too short, or containing the mask token
};

/// Masks every record in `shards` and writes one JSONL row per document,
/// ordered by doc_id. Nothing is written when there are no records.
EmitSummary emit_training_set(const std::vector<std::filesystem::path>& shards, const tok::Tokenizer& tokenizer,
                              const Config& cfg, const std::filesystem::path& out, std::size_t workers = 1);

}  // namespace htk::masking
