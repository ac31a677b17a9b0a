#include "htk/backend.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <semaphore>
#include <thread>

#include "htk/error.hpp"
#include "httplib.h"
#include "json.hpp"

namespace htk::backend {

using json = nlohmann::json;

double ScoredText::perplexity() const { return std::exp(nll / static_cast<double>(token_count)); }

bool has_sentinel(std::string_view prompt, std::string_view mask_token) {
  return prompt.find(mask_token) != std::string_view::npos;
}

namespace {

void require_sentinel(const InfillRequest& request, std::string_view mask_token) {
  if (!has_sentinel(request.prompt, mask_token)) throw DataError("infill prompt has no mask sentinel");
  if (request.num_return_sequences == 0) throw DataError("num_return_sequences must be >= 1");
}

void require_text(std::string_view text) {
  if (text.empty()) throw DataError("cannot score empty text");
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }

}  // namespace

EchoBackend::EchoBackend(std::vector<std::string> fills, tok::Tokenizer tokenizer, std::string mask_token)
    : fills_(std::move(fills)), tokenizer_(std::move(tokenizer)), mask_token_(std::move(mask_token)) {
  if (fills_.empty()) fills_.emplace_back();
}

std::string EchoBackend::fill(std::string_view prompt) const {
  std::string out;
  std::size_t pos = 0;
  for (std::size_t k = 0;; ++k) {
    const std::size_t at = prompt.find(mask_token_, pos);
    if (at == std::string_view::npos) break;
    out.append(prompt.substr(pos, at - pos));
    out += fills_[k % fills_.size()];
    pos = at + mask_token_.size();
    while (pos < prompt.size() && is_digit(prompt[pos])) ++pos;
  }
  out.append(prompt.substr(pos));
  return out;
}

std::vector<ScoredText> EchoBackend::infill(const InfillRequest& request) {
  require_sentinel(request, mask_token_);
  const ScoredText one = score(fill(request.prompt));
  return std::vector<ScoredText>(request.num_return_sequences, one);
}

ScoredText EchoBackend::score(std::string_view text) {
  require_text(text);
  return {std::string(text), 0.0, std::max<std::size_t>(1, tokenizer_.count(text))};
}

ScriptBackend::ScriptBackend(std::string mask_token) : mask_token_(std::move(mask_token)) {}

void ScriptBackend::push_infill(std::vector<ScoredText> outputs) {
  std::lock_guard lock(mutex_);
  responses_.push_back(std::move(outputs));
}

void ScriptBackend::set_score(std::string text, double nll, std::size_t token_count) {
  std::lock_guard lock(mutex_);
  scores_[std::move(text)] = {nll, token_count};
}

void ScriptBackend::set_default_score(double nll, std::size_t token_count) {
  std::lock_guard lock(mutex_);
  default_score_ = {nll, token_count};
}

std::vector<ScoredText> ScriptBackend::infill(const InfillRequest& request) {
  require_sentinel(request, mask_token_);
  std::lock_guard lock(mutex_);
  infill_log_.push_back(request);
  if (responses_.empty()) throw ProtocolError("script backend has no response left");
  auto out = std::move(responses_.front());
  responses_.pop_front();
  return out;
}

ScoredText ScriptBackend::score(std::string_view text) {
  require_text(text);
  std::lock_guard lock(mutex_);
  score_log_.emplace_back(text);
  auto it = scores_.find(text);
  if (it == scores_.end() && !default_score_) throw ProtocolError("script backend has no score for text");
  const auto [nll, count] = it != scores_.end() ? it->second : *default_score_;
  return {std::string(text), nll, count};
}

std::vector<InfillRequest> ScriptBackend::infill_requests() const {
  std::lock_guard lock(mutex_);
  return infill_log_;
}

std::vector<std::string> ScriptBackend::score_requests() const {
  std::lock_guard lock(mutex_);
  return score_log_;
}

struct HttpBackend::State {
  std::string host;
  int port = 80;
  std::string prefix;
  HttpOptions options;
  std::counting_semaphore<> slots{1};

  explicit State(std::size_t max_in_flight) : slots(static_cast<std::ptrdiff_t>(max_in_flight)) {}
};

HttpBackend::HttpBackend(std::string base_url, HttpOptions options) {
  if (options.max_in_flight == 0) throw ConfigError("max in-flight requests must be >= 1");
  if (options.attempts == 0) throw ConfigError("attempts must be >= 1");
  std::string_view rest = base_url;
  if (rest.starts_with("https://")) throw ConfigError("https backends are not supported: " + base_url);
  if (!rest.starts_with("http://")) throw ConfigError("backend URL must start with http://: " + base_url);
  rest.remove_prefix(7);
  const std::size_t slash = rest.find('/');
  std::string_view authority = rest.substr(0, slash);
  std::string prefix = slash == std::string_view::npos ? "" : std::string(rest.substr(slash));
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();

  state_ = std::make_unique<State>(options.max_in_flight);
  state_->options = options;
  state_->prefix = std::move(prefix);
  const std::size_t colon = authority.rfind(':');
  if (colon != std::string_view::npos && authority.find(']') == std::string_view::npos) {
    const std::string_view port = authority.substr(colon + 1);
    int value = 0;
    const auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), value);
    if (ec != std::errc() || ptr != port.data() + port.size() || value <= 0 || value > 65535) {
      throw ConfigError("bad port in backend URL: " + base_url);
    }
    state_->port = value;
    authority = authority.substr(0, colon);
  }
  if (authority.empty()) throw ConfigError("backend URL has no host: " + base_url);
  state_->host = std::string(authority);
}

HttpBackend::~HttpBackend() = default;

std::string HttpBackend::post(const std::string& path, const std::string& body) {
  struct Slot {
    std::counting_semaphore<>& s;
    explicit Slot(std::counting_semaphore<>& sem) : s(sem) { s.acquire(); }
    ~Slot() { s.release(); }
  } slot(state_->slots);

  const auto& opt = state_->options;
  std::string last_error;
  auto delay = opt.backoff;
  for (std::size_t attempt = 0; attempt < opt.attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
    httplib::Client client(state_->host, state_->port);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(opt.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(opt.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    const auto res = client.Post(state_->prefix + path, body, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status >= 200 && res->status < 300) return res->body;
    std::string message = "HTTP " + std::to_string(res->status);
    const json err = json::parse(res->body, nullptr, false);
    if (err.is_object() && err.contains("error") && err["error"].is_string()) {
      message += ": " + err["error"].get<std::string>();
    }
    throw ProtocolError(path + " failed with " + message);
  }
  throw TransportError(path + " failed after " + std::to_string(opt.attempts) + " attempts: " + last_error);
}

namespace {

ScoredText parse_scored(const json& j, std::string text) {
  if (!j.is_object() || !j.contains("nll") || !j["nll"].is_number() || !j.contains("token_count") ||
      !j["token_count"].is_number_integer()) {
    throw ProtocolError("response lacks numeric nll/token_count");
  }
  const double nll = j["nll"].get<double>();
  const auto count = j["token_count"].get<std::int64_t>();
  if (!std::isfinite(nll) || nll < 0) throw ProtocolError("nll must be a non-negative number");
  if (count < 1) throw ProtocolError("token_count must be positive");
  return {std::move(text), nll, static_cast<std::size_t>(count)};
}

json parse_body(const std::string& body) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded()) throw ProtocolError("response is not JSON");
  return j;
}

}  // namespace

std::vector<ScoredText> HttpBackend::infill(const InfillRequest& request) {
  require_sentinel(request, state_->options.mask_token);
  json body = {{"prompt", request.prompt},
               {"max_new_tokens", request.max_new_tokens ? json(*request.max_new_tokens) : json(nullptr)},
               {"num_return_sequences", request.num_return_sequences}};
  const json res = parse_body(post("/v1/infill", body.dump()));
  if (!res.is_object() || !res.contains("outputs") || !res["outputs"].is_array() || res["outputs"].empty()) {
    throw ProtocolError("infill response lacks a non-empty outputs array");
  }
  std::vector<ScoredText> out;
  for (const auto& o : res["outputs"]) {
    if (!o.is_object() || !o.contains("text") || !o["text"].is_string()) throw ProtocolError("output lacks text");
    out.push_back(parse_scored(o, o["text"].get<std::string>()));
  }
  return out;
}

ScoredText HttpBackend::score(std::string_view text) {
  require_text(text);
  const json body = {{"text", text}};
  return parse_scored(parse_body(post("/v1/score", body.dump())), std::string(text));
}

std::unique_ptr<Backend> from_spec(std::string_view spec, std::string_view mask_token) {
  std::string target(spec);
  if (target.empty()) {
    const char* env = std::getenv("HTLM_BACKEND_URL");
    if (!env || !*env) throw ConfigError("no backend given and HTLM_BACKEND_URL is unset");
    target = env;
  }
  if (target.starts_with("echo:")) {
    return std::make_unique<EchoBackend>(std::vector<std::string>{target.substr(5)}, tok::Tokenizer::whitespace(),
                                         std::string(mask_token));
  }
  HttpOptions options;
  options.mask_token = std::string(mask_token);
  return std::make_unique<HttpBackend>(target, std::move(options));
}

}  // namespace htk::backend
