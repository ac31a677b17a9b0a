#include "htk/metrics.hpp"

#include <algorithm>
#include <map>

namespace htk::metrics {

namespace {

bool is_word_byte(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

Prf rouge_n(const std::vector<std::string>& cand, const std::vector<std::string>& ref, std::size_t n) {
  auto grams = [n](const std::vector<std::string>& toks) {
    std::map<std::vector<std::string>, std::size_t> counts;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) ++counts[{toks.begin() + i, toks.begin() + i + n}];
    return counts;
  };
  const auto c = grams(cand);
  const auto r = grams(ref);
  std::size_t overlap = 0, c_total = 0, r_total = 0;
  for (const auto& [g, k] : c) {
    c_total += k;
    if (auto it = r.find(g); it != r.end()) overlap += std::min(k, it->second);
  }
  for (const auto& [g, k] : r) r_total += k;
  return make_prf(overlap, c_total, r_total);
}

std::size_t lcs(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> row(b.size() + 1, 0);
  for (const auto& x : a) {
    std::size_t diag = 0;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = x == b[j - 1] ? diag + 1 : std::max(row[j], row[j - 1]);
      diag = up;
    }
  }
  return row[b.size()];
}

}  // namespace

Prf make_prf(double overlap, double candidate_total, double reference_total) {
  Prf s;
  s.precision = candidate_total > 0 ? overlap / candidate_total : 0;
  s.recall = reference_total > 0 ? overlap / reference_total : 0;
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0;
  return s;
}

std::vector<std::string> rouge_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_word_byte(c)) {
      cur.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : ch);
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

RougeScore rouge(std::string_view candidate, std::string_view reference) {
  const auto c = rouge_tokens(candidate);
  const auto r = rouge_tokens(reference);
  RougeScore s;
  s.rouge1 = rouge_n(c, r, 1);
  s.rouge2 = rouge_n(c, r, 2);
  s.rougeL = make_prf(static_cast<double>(lcs(c, r)), static_cast<double>(c.size()), static_cast<double>(r.size()));
  return s;
}

}  // namespace htk::metrics
