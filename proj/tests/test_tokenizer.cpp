#include <doctest.h>

#include <random>
#include <string>
#include <vector>

#include "htk/error.hpp"
#include "htk/tokenizer.hpp"
#include "htk/utf8.hpp"

using namespace htk;
using tok::TokenId;
using tok::Tokenizer;

namespace {

const std::string kBpeDir = std::string(HTK_FIXTURES) + "/bpe";

Tokenizer fixture_bpe() { return Tokenizer::from_spec(kBpeDir); }

// Random valid UTF-8 mixing ASCII words, whitespace runs, multi-byte
// characters and the mask sentinel.
std::string random_text(std::mt19937_64& rng) {
  static const std::vector<std::string> parts = {
      "hello", "world", "held", "low", "lord", "h", "e", " ", "  ", "\n", "\t", " \n ", "<mask>", "<mask>12",
      "<ma", "sk>", "caf\xC3\xA9", "\xE2\x80\x94", "\xF0\x9F\x98\x80", "\xC4\xA0", "x", "42", "&lt;", "\r\n"};
  std::string s;
  const std::size_t n = rng() % 30;
  for (std::size_t i = 0; i < n; ++i) s += parts[rng() % parts.size()];
  return s;
}

std::string random_code_points(std::mt19937_64& rng) {
  std::string s;
  const std::size_t n = rng() % 40;
  for (std::size_t i = 0; i < n; ++i) {
    char32_t cp = 0;
    switch (rng() % 4) {
      case 0: cp = 0x20 + rng() % 0x5F; break;
      case 1: cp = U" \t\n\r\f\v"[rng() % 6]; break;
      case 2: cp = 0x80 + rng() % 0x780; break;
      default:
        do cp = 0x800 + rng() % 0x10F800; while (cp >= 0xD800 && cp < 0xE000);
    }
    utf8::append(s, cp);
  }
  return s;
}

}  // namespace

TEST_CASE("whitespace tokenizer pieces") {
  const auto ws = Tokenizer::whitespace();
  CHECK(ws.kind() == tok::Kind::whitespace);
  CHECK(ws.count("a b  c") == 3);
  CHECK(ws.pieces("a b  c") == std::vector<std::string>{"a", " b", "  c"});
  CHECK(ws.encode("").empty());
  CHECK(ws.count("   ") == 1);
  CHECK(ws.pieces(" a b ") == std::vector<std::string>{" a", " b "});
  CHECK(ws.pieces("x<mask>3 y") == std::vector<std::string>{"x", "<mask>", "3", " y"});
  CHECK(ws.decode({}) == "");
}

TEST_CASE("whitespace ids are stable within a tokenizer") {
  const auto ws = Tokenizer::whitespace();
  const auto a = ws.encode("the cat the");
  REQUIRE(a.size() == 3);
  CHECK(a[0] != a[1]);
  CHECK(ws.decode(a) == "the cat the");
  const auto copy = ws;
  CHECK(copy.decode(a) == "the cat the");
  CHECK_THROWS_AS(ws.decode(std::vector<TokenId>{999999}), DataError);
}

TEST_CASE("bpe encodes the fixture string as traced by hand") {
  const auto bpe = fixture_bpe();
  CHECK(bpe.kind() == tok::Kind::bpe);
  const auto ids = bpe.encode("hello world held low lord");
  CHECK(ids == std::vector<TokenId>{11, 16, 7, 8, 15, 7, 2, 3, 4, 7, 2, 13, 6});
  CHECK(bpe.decode(ids) == "hello world held low lord");
  CHECK(bpe.pieces("hello world") == std::vector<std::string>{"hello", " world"});
}

TEST_CASE("bpe fallback ids and the sentinel") {
  const auto bpe = fixture_bpe();
  // 'i' and '\n' are not in the vocabulary; the sentinel gets the next id.
  const auto ids = bpe.encode("hi <mask>\n");
  CHECK(ids == std::vector<TokenId>{0, 125, 7, 19, 30});
  CHECK(bpe.decode(ids) == "hi <mask>\n");
  CHECK(bpe.decode(std::vector<TokenId>{19}) == "<mask>");
  CHECK(bpe.is_special("<mask>"));
  CHECK_FALSE(bpe.is_special("hello"));
  CHECK_THROWS_AS(bpe.decode(std::vector<TokenId>{0xFFFFFFFF}), DataError);
}

TEST_CASE("special tokens are never split or merged") {
  for (const auto& t : {Tokenizer::whitespace(), fixture_bpe()}) {
    const auto pieces = t.pieces("a<mask>b <mask><mask>");
    CHECK(std::count(pieces.begin(), pieces.end(), "<mask>") == 3);
  }
}

TEST_CASE("round trip on random fixture strings") {
  std::mt19937_64 rng(99);
  const auto ws = Tokenizer::whitespace();
  const auto bpe = fixture_bpe();
  for (int i = 0; i < 1000; ++i) {
    const std::string s = i % 2 ? random_text(rng) : random_code_points(rng);
    INFO("text: " << s);
    REQUIRE(ws.decode(ws.encode(s)) == s);
    REQUIRE(bpe.decode(bpe.encode(s)) == s);
    std::string joined;
    for (const auto& p : bpe.pieces(s)) joined += p;
    REQUIRE(joined == s);
    REQUIRE(ws.count(s) == ws.encode(s).size());
  }
}

TEST_CASE("bpe tables are validated") {
  CHECK_THROWS_AS(Tokenizer::bpe({{"a", 0}}, {{"a", "b"}}), ConfigError);
  CHECK_THROWS_AS(Tokenizer::from_spec("/nonexistent/tokenizer"), ConfigError);
  CHECK_NOTHROW(Tokenizer::from_spec("whitespace"));
}

TEST_CASE("custom special tokens") {
  const auto ws = Tokenizer::whitespace({"[M]"});
  CHECK(ws.pieces("a[M]b") == std::vector<std::string>{"a", "[M]", "b"});
  CHECK(ws.pieces("a<mask>b") == std::vector<std::string>{"a<mask>b"});
}
