#pragma once

#include <chrono>
#include <cstddef>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "htk/tokenizer.hpp"

namespace htk::backend {

struct InfillRequest {
  std::string prompt;
  std::optional<std::size_t> max_new_tokens;
  std::size_t num_return_sequences = 1;
};

struct ScoredText {
  std::string text;
  double nll = 0;  // total, natural log
  std::size_t token_count = 1;

  double perplexity() const;
};

/// Model access. Implementations must be safe to call from several threads.
class Backend {
 public:
  virtual ~Backend() = default;
  /// Throws DataError when the prompt has no mask sentinel.
  virtual std::vector<ScoredText> infill(const InfillRequest& request) = 0;
  /// Throws DataError on empty text.
  virtual ScoredText score(std::string_view text) = 0;
};

/// Replaces every sentinel (and any hint digits after it) with the next fill,
/// cycling through `fills`. Scores are nll 0 over the tokenizer's count.
class EchoBackend : public Backend {
 public:
  EchoBackend(std::vector<std::string> fills, tok::Tokenizer tokenizer = tok::Tokenizer::whitespace(),
              std::string mask_token = std::string(tok::kDefaultMaskToken));

  std::vector<ScoredText> infill(const InfillRequest& request) override;
  ScoredText score(std::string_view text) override;

  /// The prompt with its sentinels filled, as infill() would return it.
  std::string fill(std::string_view prompt) const;

 private:
  std::vector<std::string> fills_;
  tok::Tokenizer tokenizer_;
  std::string mask_token_;
};

/// Returns canned infill responses in call order and scores from a table.
/// Every request is recorded for inspection.
class ScriptBackend : public Backend {
 public:
  explicit ScriptBackend(std::string mask_token = std::string(tok::kDefaultMaskToken));

  void push_infill(std::vector<ScoredText> outputs);
  void set_score(std::string text, double nll, std::size_t token_count);
  /// Used for texts missing from the table; without it they are an error.
  void set_default_score(double nll, std::size_t token_count);

  std::vector<ScoredText> infill(const InfillRequest& request) override;
  ScoredText score(std::string_view text) override;

  std::vector<InfillRequest> infill_requests() const;
  std::vector<std::string> score_requests() const;

 private:
  std::string mask_token_;
  mutable std::mutex mutex_;
  std::deque<std::vector<ScoredText>> responses_;
  std::map<std::string, std::pair<double, std::size_t>, std::less<>> scores_;
  std::optional<std::pair<double, std::size_t>> default_score_;
  std::vector<InfillRequest> infill_log_;
  std::vector<std::string> score_log_;
};

struct HttpOptions {
  std::chrono::milliseconds timeout{30'000};
  std::size_t attempts = 3;
  std::chrono::milliseconds backoff{200};  // doubled after each failed attempt
  std::size_t max_in_flight = 8;
  std::string mask_token = std::string(tok::kDefaultMaskToken);
};

/// Client for the JSON wire protocol:
///   POST /v1/infill {"prompt", "max_new_tokens", "num_return_sequences"}
///     -> {"outputs": [{"text", "nll", "token_count"}]}
///   POST /v1/score {"text"} -> {"nll", "token_count"}
/// Connection failures and 5xx answers are retried; a 4xx answer or a body
/// that does not match the schema raises ProtocolError immediately.
class HttpBackend : public Backend {
 public:
  /// `base_url` is "http://host[:port][/prefix]". Throws ConfigError.
  explicit HttpBackend(std::string base_url, HttpOptions options = {});
  ~HttpBackend() override;

  std::vector<ScoredText> infill(const InfillRequest& request) override;
  ScoredText score(std::string_view text) override;

 private:
  struct State;
  std::string post(const std::string& path, const std::string& body);
  std::unique_ptr<State> state_;
};

/// A backend from a command-line spec: "echo:TEXT" for the echo mock,
/// otherwise an http(s) URL. An empty spec falls back to $HTLM_BACKEND_URL.
std::unique_ptr<Backend> from_spec(std::string_view spec, std::string_view mask_token = tok::kDefaultMaskToken);

bool has_sentinel(std::string_view prompt, std::string_view mask_token);

}  // namespace htk::backend
