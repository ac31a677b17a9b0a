#include "htk/tokenizer.hpp"

#include <algorithm>
#include <climits>
#include <fstream>
#include <mutex>
#include <sstream>

#include <json.hpp>

#include "htk/error.hpp"
#include "htk/utf8.hpp"

namespace htk::tok {

namespace {

// Whitespace characters get printable stand-ins inside BPE symbols so that
// merges files can stay space-separated.
struct Glyph {
  char raw;
  char32_t stand_in;
};
constexpr Glyph kGlyphs[] = {{' ', 0x120}, {'\n', 0x10A}, {'\t', 0x109}, {'\r', 0x10D}};

std::string glyph_for(char32_t cp, bool& is_stand_in_literal) {
  is_stand_in_literal = false;
  for (const auto& g : kGlyphs) {
    if (cp == static_cast<char32_t>(g.raw)) {
      std::string s;
      utf8::append(s, g.stand_in);
      return s;
    }
    if (cp == g.stand_in) is_stand_in_literal = true;
  }
  std::string s;
  utf8::append(s, cp);
  return s;
}

std::string unglyph(std::string_view symbol) {
  std::string out;
  std::size_t pos = 0;
  while (pos < symbol.size()) {
    const char32_t cp = utf8::next(symbol, pos);
    bool mapped = false;
    for (const auto& g : kGlyphs) {
      if (cp == g.stand_in) {
        out.push_back(g.raw);
        mapped = true;
        break;
      }
    }
    if (!mapped) utf8::append(out, cp);
  }
  return out;
}

// Splits plain text (no special tokens) into whitespace-led pre-tokens.
void pre_tokenize(std::string_view text, std::vector<std::string_view>& out) {
  std::size_t start = 0;
  std::size_t i = 0;
  while (i < text.size() && utf8::is_space(text[i])) ++i;
  while (i < text.size() && !utf8::is_space(text[i])) ++i;
  // i is the end of the first pre-token (possibly all whitespace).
  for (;;) {
    std::size_t j = i;
    while (j < text.size() && utf8::is_space(text[j])) ++j;
    if (j == text.size()) {
      // trailing whitespace stays with the last pre-token
      if (start < text.size()) out.push_back(text.substr(start));
      return;
    }
    out.push_back(text.substr(start, i - start));
    start = i;
    i = j;
    while (i < text.size() && !utf8::is_space(text[i])) ++i;
  }
}

}  // namespace

struct Tokenizer::Impl {
  Kind kind = Kind::whitespace;
  std::vector<std::string> specials;  // longest first

  // whitespace: interned pieces (ids are stable within one tokenizer value)
  mutable std::mutex intern_mutex;
  mutable std::unordered_map<std::string, TokenId> interned;
  mutable std::vector<std::string> interned_by_id;

  // bpe
  std::unordered_map<std::string, TokenId> vocab;
  std::unordered_map<TokenId, std::string> vocab_inverse;
  std::unordered_map<std::string, std::size_t> merge_rank;  // key: a + '\0' + b
  TokenId fallback_base = 0;

  // Calls `f(segment, is_special)` for consecutive segments of text.
  template <typename F>
  void split_special(std::string_view text, F&& f) const {
    std::size_t start = 0;
    std::size_t i = 0;
    while (i < text.size()) {
      bool matched = false;
      for (const auto& sp : specials) {
        if (!sp.empty() && text.compare(i, sp.size(), sp) == 0) {
          if (i > start) f(text.substr(start, i - start), false);
          f(text.substr(i, sp.size()), true);
          i += sp.size();
          start = i;
          matched = true;
          break;
        }
      }
      if (!matched) ++i;
    }
    if (start < text.size()) f(text.substr(start), false);
  }

  TokenId intern(std::string_view piece) const {
    std::lock_guard lock(intern_mutex);
    auto [it, inserted] = interned.try_emplace(std::string(piece), static_cast<TokenId>(interned_by_id.size()));
    if (inserted) interned_by_id.emplace_back(piece);
    return it->second;
  }

  void bpe_encode_word(std::string_view word, std::vector<TokenId>& out) const {
    struct Symbol {
      std::string text;
      bool literal;  // a literal stand-in glyph; never merged, always fallback
    };
    std::vector<Symbol> symbols;
    std::size_t pos = 0;
    while (pos < word.size()) {
      const char32_t cp = utf8::next(word, pos);
      bool literal = false;
      std::string g = glyph_for(cp, literal);
      symbols.push_back({std::move(g), literal});
    }
    std::string key;
    for (;;) {
      std::size_t best_rank = SIZE_MAX;
      std::size_t best = 0;
      for (std::size_t k = 0; k + 1 < symbols.size(); ++k) {
        if (symbols[k].literal || symbols[k + 1].literal) continue;
        key.assign(symbols[k].text).push_back('\0');
        key.append(symbols[k + 1].text);
        auto it = merge_rank.find(key);
        if (it != merge_rank.end() && it->second < best_rank) {
          best_rank = it->second;
          best = k;
        }
      }
      if (best_rank == SIZE_MAX) break;
      const std::string left = symbols[best].text;
      const std::string right = symbols[best + 1].text;
      std::vector<Symbol> merged;
      merged.reserve(symbols.size());
      for (std::size_t k = 0; k < symbols.size(); ++k) {
        if (k + 1 < symbols.size() && !symbols[k].literal && !symbols[k + 1].literal &&
            symbols[k].text == left && symbols[k + 1].text == right) {
          merged.push_back({left + right, false});
          ++k;
        } else {
          merged.push_back(std::move(symbols[k]));
        }
      }
      symbols = std::move(merged);
    }
    for (const auto& s : symbols) {
      if (!s.literal) {
        if (auto it = vocab.find(s.text); it != vocab.end()) {
          out.push_back(it->second);
          continue;
        }
      }
      // Not in the vocabulary: emit per code point, falling back to the
      // code-point id range.
      std::size_t p = 0;
      const std::string plain = s.literal ? s.text : unglyph(s.text);
      while (p < plain.size()) {
        const char32_t cp = utf8::next(plain, p);
        bool literal = false;
        const std::string g = glyph_for(cp, literal);
        auto it = literal ? vocab.end() : vocab.find(g);
        out.push_back(it != vocab.end() ? it->second : fallback_base + static_cast<TokenId>(cp));
      }
    }
  }

  std::string bpe_decode_one(TokenId id) const {
    if (id >= fallback_base) {
      const char32_t cp = id - fallback_base;
      if (cp > 0x10FFFF) throw DataError("unknown token id " + std::to_string(id));
      std::string s;
      utf8::append(s, cp);
      return s;
    }
    auto it = vocab_inverse.find(id);
    if (it == vocab_inverse.end()) throw DataError("unknown token id " + std::to_string(id));
    return it->second;
  }
};

namespace {

std::vector<std::string> sorted_specials(std::vector<std::string> specials) {
  std::erase_if(specials, [](const std::string& s) { return s.empty(); });
  std::sort(specials.begin(), specials.end(),
            [](const std::string& a, const std::string& b) { return a.size() > b.size() || (a.size() == b.size() && a < b); });
  specials.erase(std::unique(specials.begin(), specials.end()), specials.end());
  return specials;
}

}  // namespace

Tokenizer Tokenizer::whitespace(std::vector<std::string> special_tokens) {
  auto impl = std::make_shared<Impl>();
  impl->kind = Kind::whitespace;
  impl->specials = sorted_specials(std::move(special_tokens));
  for (const auto& s : impl->specials) impl->intern(s);
  return Tokenizer(std::move(impl));
}

Tokenizer Tokenizer::bpe(std::unordered_map<std::string, TokenId> vocab,
                         std::vector<std::pair<std::string, std::string>> merges,
                         std::vector<std::string> special_tokens) {
  auto impl = std::make_shared<Impl>();
  impl->kind = Kind::bpe;
  impl->specials = sorted_specials(std::move(special_tokens));
  TokenId max_id = 0;
  for (const auto& [token, id] : vocab) {
    if (!impl->vocab_inverse.emplace(id, unglyph(token)).second) {
      throw ConfigError("duplicate vocabulary id " + std::to_string(id));
    }
    max_id = std::max(max_id, id);
  }
  impl->vocab = std::move(vocab);
  for (const auto& s : impl->specials) {
    if (!impl->vocab.contains(s)) {
      ++max_id;
      while (impl->vocab_inverse.contains(max_id)) ++max_id;
      impl->vocab.emplace(s, max_id);
      impl->vocab_inverse.emplace(max_id, s);
    }
  }
  impl->fallback_base = impl->vocab.empty() ? 0 : max_id + 1;
  for (std::size_t rank = 0; rank < merges.size(); ++rank) {
    const auto& [a, b] = merges[rank];
    if (a.empty() || b.empty()) throw ConfigError("empty merge operand at rank " + std::to_string(rank));
    if (!impl->vocab.contains(a + b)) {
      throw ConfigError("merge '" + a + " " + b + "' produces a token missing from the vocabulary");
    }
    std::string key = a;
    key.push_back('\0');
    key.append(b);
    impl->merge_rank.try_emplace(std::move(key), rank);
  }
  return Tokenizer(std::move(impl));
}

Tokenizer Tokenizer::bpe_from_files(const std::filesystem::path& vocab_file,
                                    const std::filesystem::path& merges_file,
                                    std::vector<std::string> special_tokens) {
  std::ifstream vin(vocab_file);
  if (!vin) throw ConfigError("cannot open vocabulary " + vocab_file.string());
  std::unordered_map<std::string, TokenId> vocab;
  try {
    const auto j = nlohmann::json::parse(vin);
    if (!j.is_object()) throw ConfigError("vocabulary must be a JSON object");
    for (const auto& [token, id] : j.items()) {
      if (!id.is_number_unsigned()) throw ConfigError("vocabulary id for '" + token + "' is not an unsigned integer");
      vocab.emplace(token, id.get<TokenId>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed vocabulary " + vocab_file.string() + ": " + e.what());
  }
  std::ifstream min(merges_file);
  if (!min) throw ConfigError("cannot open merges " + merges_file.string());
  std::vector<std::pair<std::string, std::string>> merges;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(min, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos || sp == 0 || sp + 1 >= line.size() || line.find(' ', sp + 1) != std::string::npos) {
      throw ConfigError(merges_file.string() + ":" + std::to_string(line_no) + ": expected two space-separated symbols");
    }
    merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }
  return bpe(std::move(vocab), std::move(merges), std::move(special_tokens));
}

Tokenizer Tokenizer::from_spec(std::string_view spec, std::vector<std::string> special_tokens) {
  if (spec.empty() || spec == "whitespace") return whitespace(std::move(special_tokens));
  const std::filesystem::path dir(spec);
  if (!std::filesystem::is_directory(dir)) {
    throw ConfigError("tokenizer must be 'whitespace' or a directory with vocab.json and merges.txt: " + std::string(spec));
  }
  return bpe_from_files(dir / "vocab.json", dir / "merges.txt", std::move(special_tokens));
}

Kind Tokenizer::kind() const { return impl_->kind; }

bool Tokenizer::is_special(std::string_view piece) const {
  return std::find(impl_->specials.begin(), impl_->specials.end(), piece) != impl_->specials.end();
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  std::vector<std::string_view> words;
  impl_->split_special(text, [&](std::string_view segment, bool special) {
    if (special) {
      ids.push_back(impl_->kind == Kind::bpe ? impl_->vocab.at(std::string(segment)) : impl_->intern(segment));
      return;
    }
    words.clear();
    pre_tokenize(segment, words);
    for (auto w : words) {
      if (impl_->kind == Kind::whitespace) ids.push_back(impl_->intern(w));
      else impl_->bpe_encode_word(w, ids);
    }
  });
  return ids;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  if (impl_->kind == Kind::bpe) {
    for (auto id : ids) out.append(impl_->bpe_decode_one(id));
    return out;
  }
  std::lock_guard lock(impl_->intern_mutex);
  for (auto id : ids) {
    if (id >= impl_->interned_by_id.size()) throw DataError("unknown token id " + std::to_string(id));
    out.append(impl_->interned_by_id[id]);
  }
  return out;
}

std::vector<std::string> Tokenizer::pieces(std::string_view text) const {
  std::vector<std::string> out;
  if (impl_->kind == Kind::whitespace) {
    std::vector<std::string_view> words;
    impl_->split_special(text, [&](std::string_view segment, bool special) {
      if (special) {
        out.emplace_back(segment);
        return;
      }
      words.clear();
      pre_tokenize(segment, words);
      for (auto w : words) out.emplace_back(w);
    });
    return out;
  }
  const auto ids = encode(text);
  out.reserve(ids.size());
  for (auto id : ids) out.push_back(impl_->bpe_decode_one(id));
  return out;
}

std::size_t Tokenizer::count(std::string_view text) const {
  if (impl_->kind == Kind::bpe) return encode(text).size();
  std::size_t n = 0;
  std::vector<std::string_view> words;
  impl_->split_special(text, [&](std::string_view segment, bool special) {
    if (special) {
      ++n;
      return;
    }
    words.clear();
    pre_tokenize(segment, words);
    n += words.size();
  });
  return n;
}

}  // namespace htk::tok
