#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace htk::metrics {

struct Prf {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

struct RougeScore {
  Prf rouge1;
  Prf rouge2;
  Prf rougeL;
};

/// Lowercased alphanumeric runs. Bytes >= 0x80 count as alphanumeric so
/// non-ASCII words stay whole. No stemming, no stopword removal.
std::vector<std::string> rouge_tokens(std::string_view text);

RougeScore rouge(std::string_view candidate, std::string_view reference);

/// F1 = 2PR/(P+R), or 0 when P+R is 0.
Prf make_prf(double overlap, double candidate_total, double reference_total);

}  // namespace htk::metrics
