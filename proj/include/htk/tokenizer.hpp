#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace htk::tok {

using TokenId = std::uint32_t;

enum class Kind { whitespace, bpe };

inline constexpr std::string_view kDefaultMaskToken = "<mask>";

/// Lossless tokenizer. Text is first split around special tokens, then into
/// pre-tokens (a whitespace run plus the following non-whitespace run). The
/// whitespace kind stops there; the BPE kind applies ranked merges inside each
/// pre-token.
///
/// Copies share the same immutable tables, so a Tokenizer can be passed by
/// value and used from any number of threads.
class Tokenizer {
 public:
  static Tokenizer whitespace(std::vector<std::string> special_tokens = {std::string(kDefaultMaskToken)});

  /// `merges` are in rank order. Throws ConfigError on inconsistent tables.
  static Tokenizer bpe(std::unordered_map<std::string, TokenId> vocab,
                       std::vector<std::pair<std::string, std::string>> merges,
                       std::vector<std::string> special_tokens = {std::string(kDefaultMaskToken)});

  /// Reads `vocab.json` (token -> id) and `merges.txt` (one "a b" pair per
  /// line, rank = line order, `#` lines ignored).
  static Tokenizer bpe_from_files(const std::filesystem::path& vocab_file,
                                  const std::filesystem::path& merges_file,
                                  std::vector<std::string> special_tokens = {std::string(kDefaultMaskToken)});

  /// "whitespace", or a directory holding vocab.json and merges.txt.
  static Tokenizer from_spec(std::string_view spec,
                             std::vector<std::string> special_tokens = {std::string(kDefaultMaskToken)});

  Kind kind() const;

  /// Token strings; their concatenation is exactly `text`.
  std::vector<std::string> pieces(std::string_view text) const;
  std::vector<TokenId> encode(std::string_view text) const;
  /// Throws DataError on an unknown id.
  std::string decode(std::span<const TokenId> ids) const;
  std::size_t count(std::string_view text) const;

  bool is_special(std::string_view piece) const;

  struct Impl;

 private:
  explicit Tokenizer(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<const Impl> impl_;
};

}  // namespace htk::tok
