#include "htk/masking.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "htk/corpus.hpp"
#include "htk/error.hpp"
#include "htk/utf8.hpp"
#include "json.hpp"
#include "parallel.hpp"

namespace htk::masking {

namespace {

using json = nlohmann::ordered_json;

std::size_t leading_space(std::string_view piece) {
  std::size_t i = 0;
  while (i < piece.size() && utf8::is_space(piece[i])) ++i;
  return i;
}

std::string sentinel(std::string_view mask_token, const std::optional<std::size_t>& hint) {
  std::string out(mask_token);
  if (hint) out += std::to_string(*hint);
  return out;
}

// Stars and bars: k sorted distinct positions out of `slots`, drawn with
// Floyd's algorithm.
std::vector<std::uint64_t> choose_sorted(rng::Engine& engine, std::uint64_t slots, std::size_t k) {
  std::set<std::uint64_t> chosen;
  for (std::uint64_t j = slots - k; j < slots; ++j) {
    const std::uint64_t t = rng::uniform_below(engine, j + 1);
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  return {chosen.begin(), chosen.end()};
}

}  // namespace

void Config::validate() const {
  if (!(lambda > 0) || !std::isfinite(lambda)) throw ConfigError("lambda must be > 0");
  if (!(mask_rate > 0 && mask_rate < 1)) throw ConfigError("mask-rate must be in (0, 1)");
  if (!(hint_prob >= 0 && hint_prob <= 1)) throw ConfigError("hint-prob must be in [0, 1]");
  if (!(epsilon >= 0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be >= 0");
  if (mask_token.empty()) throw ConfigError("mask-token must not be empty");
}

std::size_t sample_span_length(rng::Engine& engine, double lambda) {
  return static_cast<std::size_t>(rng::zero_truncated_poisson(engine, lambda));
}

std::size_t hint_from_draw(double g) {
  if (!(g >= 1.0)) return 1;  // also catches NaN
  return static_cast<std::size_t>(std::floor(g));
}

std::size_t sample_hint(rng::Engine& engine, std::size_t m, double epsilon) {
  const double mean = static_cast<double>(m);
  if (epsilon == 0) return hint_from_draw(mean);
  return hint_from_draw(rng::normal(engine, mean, mean * epsilon));
}

MaskedExample mask_document(std::string_view text, const tok::Tokenizer& tokenizer, const Config& cfg,
                            rng::Engine& engine) {
  cfg.validate();
  if (text.find(cfg.mask_token) != std::string_view::npos) {
    throw DataError("text already contains the mask token " + cfg.mask_token);
  }
  const auto pieces = tokenizer.pieces(text);
  const std::size_t n = pieces.size();
  if (n < 2) throw DataError("text is too short to mask (" + std::to_string(n) + " tokens)");

  // Exactly ceil(rate * n) tokens, never all of them. The epsilon keeps
  // 0.3 * 10 from rounding up to 4.
  const auto target = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(cfg.mask_rate * static_cast<double>(n) - 1e-9)), 1, n - 1);
  std::vector<std::size_t> lengths;
  for (std::size_t covered = 0; covered < target;) {
    const std::size_t len = std::min(sample_span_length(engine, cfg.lambda), target - covered);
    lengths.push_back(len);
    covered += len;
  }
  // Every interior gap needs one unmasked token; merge trailing spans until
  // they fit.
  while (lengths.size() - 1 > n - target) {
    lengths[lengths.size() - 2] += lengths.back();
    lengths.pop_back();
  }
  const std::size_t k = lengths.size();
  const std::uint64_t spare = n - target - (k - 1);
  const auto bars = choose_sorted(engine, spare + k, k);

  MaskedExample ex;
  ex.target = std::string(text);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < k; ++i) {
    // Free tokens between bars, plus the mandatory separator after a span.
    const std::size_t gap = i == 0 ? bars[0] : bars[i] - bars[i - 1];
    SpanMask span;
    span.start = pos + gap;
    span.m = lengths[i];
    ex.spans.push_back(span);
    pos = span.start + span.m;
  }
  for (auto& span : ex.spans) {
    if (rng::bernoulli(engine, cfg.hint_prob)) span.hint = sample_hint(engine, span.m, cfg.epsilon);
  }

  std::size_t next = 0;
  for (const auto& span : ex.spans) {
    for (; next < span.start; ++next) ex.source += pieces[next];
    ex.source += std::string_view(pieces[span.start]).substr(0, leading_space(pieces[span.start]));
    ex.source += sentinel(cfg.mask_token, span.hint);
    next = span.start + span.m;
  }
  for (; next < n; ++next) ex.source += pieces[next];
  return ex;
}

std::string reconstruct(const MaskedExample& example, const tok::Tokenizer& tokenizer, std::string_view mask_token) {
  const auto pieces = tokenizer.pieces(example.target);
  std::string out;
  std::size_t cursor = 0;
  for (const auto& span : example.spans) {
    if (span.m == 0 || span.start + span.m > pieces.size()) throw DataError("span outside target");
    const std::size_t at = example.source.find(mask_token, cursor);
    if (at == std::string::npos) throw DataError("source has fewer sentinels than spans");
    out.append(example.source, cursor, at - cursor);
    cursor = at + mask_token.size();
    if (span.hint) {
      const std::string digits = std::to_string(*span.hint);
      if (example.source.compare(cursor, digits.size(), digits) != 0) {
        throw DataError("sentinel at byte " + std::to_string(at) + " lacks hint " + digits);
      }
      cursor += digits.size();
    }
    // Only the first piece's leading whitespace stayed outside the sentinel.
    const std::string_view first = pieces[span.start];
    out += first.substr(leading_space(first));
    for (std::size_t t = span.start + 1; t < span.start + span.m; ++t) out += pieces[t];
  }
  out.append(example.source, cursor);
  return out;
}

MaskedExample mask_with_document_seed(std::string doc_id, std::string_view text, const tok::Tokenizer& tokenizer,
                                      const Config& cfg) {
  const std::uint64_t seed = rng::document_seed(cfg.seed, doc_id);
  rng::Engine engine(seed);
  MaskedExample ex = mask_document(text, tokenizer, cfg, engine);
  ex.doc_id = std::move(doc_id);
  ex.seed = seed;
  return ex;
}

std::string to_jsonl(const MaskedExample& example) {
  json spans = json::array();
  for (const auto& s : example.spans) {
    spans.push_back({{"start", s.start}, {"m", s.m}, {"hint", s.hint ? json(*s.hint) : json(nullptr)}});
  }
  const json row = {{"doc_id", example.doc_id},
                    {"source", example.source},
                    {"target", example.target},
                    {"spans", std::move(spans)},
                    {"seed", example.seed}};
  return row.dump();
}

MaskedExample example_from_jsonl(std::string_view line) {
  try {
    const json row = json::parse(line);
    MaskedExample ex;
    ex.doc_id = row.at("doc_id").get<std::string>();
    ex.source = row.at("source").get<std::string>();
    ex.target = row.at("target").get<std::string>();
    ex.seed = row.at("seed").get<std::uint64_t>();
    for (const auto& s : row.at("spans")) {
      SpanMask span{s.at("start").get<std::size_t>(), s.at("m").get<std::size_t>(), std::nullopt};
      if (!s.at("hint").is_null()) span.hint = s.at("hint").get<std::size_t>();
      ex.spans.push_back(span);
    }
    return ex;
  } catch (const json::exception& e) {
    throw DataError(std::string("bad training row: ") + e.what());
  }
}

EmitSummary emit_training_set(const std::vector<std::filesystem::path>& shards, const tok::Tokenizer& tokenizer,
                              const Config& cfg, const std::filesystem::path& out, std::size_t workers) {
  cfg.validate();
  std::vector<mhtml::Record> records;
  for (const auto& shard : shards) {
    auto part = corpus::read_records(shard);
    records.insert(records.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.doc_id < b.doc_id; });

  EmitSummary summary;
  if (records.empty()) return summary;

  std::vector<std::optional<std::string>> rows(records.size());
  detail::parallel_for(records.size(), workers, [&](std::size_t i) {
    try {
      rows[i] = to_jsonl(mask_with_document_seed(records[i].doc_id, records[i].mhtml, tokenizer, cfg));
    } catch (const DataError&) {
      // Too short or already holding a sentinel: left out and counted.
    }
  });

  const auto tmp = std::filesystem::path(out).concat(".tmp");
  {
    std::ofstream file(tmp, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("cannot write " + tmp.string());
    for (const auto& row : rows) {
      if (!row) {
        ++summary.skipped;
        continue;
      }
      file << *row << '\n';
      ++summary.written;
    }
    file.flush();
    if (!file) {
      file.close();
      std::filesystem::remove(tmp);
      throw IoError("write failed for " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, out);
  return summary;
}

}  // namespace htk::masking
