#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "htk/backend.hpp"
#include "htk/error.hpp"
#include "htk/policy.hpp"
#include "htk/prompt.hpp"

using namespace htk;
using namespace htk::policy;

namespace {

const std::filesystem::path kTemplates = std::filesystem::path(HTK_DATA) / "templates";
const std::filesystem::path kVerbalizers = std::filesystem::path(HTK_DATA) / "verbalizers";
const std::filesystem::path kFixtures = HTK_FIXTURES;

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

std::string title_doc(const std::string& title) {
  return "<!DOCTYPE html>\n<html>\n<title> " + title + " </title>\n<body>\nstory\n</body>\n</html>";
}

backend::ScoredText with_ppl(std::string text, double ppl) { return {std::move(text), std::log(ppl), 1}; }

}  // namespace

TEST_CASE("s-bar estimate") {
  const auto ws = tok::Tokenizer::whitespace();
  CHECK(estimate_s_bar({"one two three four five six seven eight", std::string(12, 'x') + " " + "a b c d e f g h i j k"},
                       ws) == 10);
  CHECK(estimate_s_bar({"a b c d e f g h", "a b c d e f g h i j k l"}, ws) == 10);
  CHECK(estimate_s_bar({"single"}, ws) == 1);
  CHECK(estimate_s_bar({""}, ws) == 1);
  CHECK(estimate_s_bar({"a b", "a b c"}, ws) == 3);  // 2.5 rounds up
  CHECK_THROWS_AS(estimate_s_bar({}, ws), DataError);
  // Only the first `cap` targets count.
  CHECK(estimate_s_bar({"a", "a b c d e f g h i"}, ws, 1) == 1);
  // 50 headlines averaging 6.98 whitespace tokens.
  CHECK(estimate_s_bar(lines_of(kFixtures / "gigaword_targets.txt"), ws) == 7);
}

TEST_CASE("hint sequence") {
  SizeHintPolicy p;
  p.s_bar = 10;
  CHECK(hint_sequence(p) == std::vector<std::size_t>{10, 9, 11, 8, 12, 7, 13, 6, 14, 5, 15});
  p.s_bar = 15;
  p.max_retries = 2;
  CHECK(hint_sequence(p) == std::vector<std::size_t>{15, 14, 17, 12, 18});  // 13.5 and 16.5 round up
  p.s_bar = 1;
  p.max_retries = 5;
  CHECK(hint_sequence(p) == std::vector<std::size_t>{1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 2});
  p.epsilon = 0;
  p.s_bar = 4;
  p.max_retries = 1;
  CHECK(hint_sequence(p) == std::vector<std::size_t>{4, 4, 4});

  for (std::size_t s = 1; s < 200; ++s) {
    p.s_bar = s;
    p.epsilon = 0.1;
    p.max_retries = 5;
    const auto h = hint_sequence(p);
    REQUIRE(h.size() == 11);
    for (std::size_t i = 1; i <= 5; ++i) {
      REQUIRE(h[2 * i - 1] >= 1);
      REQUIRE(h[2 * i - 1] <= s);
      REQUIRE(h[2 * i] >= s);
    }
  }

  SizeHintPolicy bad;
  bad.s_bar = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.s_bar = 3;
  bad.epsilon = -0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK(round_half_up(1.5) == 2);
  CHECK(round_half_up(10 * 0.15) == 2);
  CHECK(round_half_up(2.4999) == 2);
}

TEST_CASE("source labels") {
  CHECK(to_string(Source::initial, 0) == "initial");
  CHECK(to_string(Source::retry, 3) == "retry(3)");
  CHECK(to_string(Source::auto_template_fallback, 6) == "auto_template_fallback");
}

TEST_CASE("generation: first round succeeds") {
  const auto tpl = prompt::load_template(kTemplates / "title.tpl");
  backend::EchoBackend echo({"Storm hits coast"});
  SizeHintPolicy p;
  p.s_bar = 3;
  const auto out = run_generation(tpl, {{"article", "story"}}, p, echo);
  REQUIRE(out.succeeded());
  CHECK(out.source == Source::initial);
  CHECK(out.round == 0);
  REQUIRE(out.attempts.size() == 1);
  CHECK(out.attempts[0].hint == 3);
  CHECK(out.attempts[0].prompt.find("<mask>3") != std::string::npos);
  CHECK(out.slot_outputs == std::vector<std::pair<std::string, std::string>>{{"title", "Storm hits coast"}});
}

TEST_CASE("generation: a retry round keeps the lower perplexity") {
  const auto tpl = prompt::load_template(kTemplates / "title.tpl");
  backend::ScriptBackend script;
  script.push_infill({with_ppl("<p>no anchors at all</p>", 2.0)});
  script.push_infill({with_ppl(title_doc("Higher"), 9.1)});
  script.push_infill({with_ppl(title_doc("Lower"), 7.4)});
  SizeHintPolicy p;
  p.s_bar = 10;
  const auto out = run_generation(tpl, {{"article", "story"}}, p, script);
  REQUIRE(out.succeeded());
  CHECK(out.source == Source::retry);
  CHECK(out.round == 1);
  REQUIRE(out.attempts.size() == 3);
  CHECK_FALSE(out.attempts[0].extracted);
  CHECK(out.attempts[1].hint == 9);
  CHECK(out.attempts[2].hint == 11);
  CHECK(out.attempts[1].extracted);
  CHECK(out.attempts[1].perplexity == doctest::Approx(9.1));
  CHECK_FALSE(out.attempts[1].selected);
  CHECK(out.attempts[2].selected);
  CHECK(out.selected() == &out.attempts[2]);
  CHECK(out.slot_outputs.front().second == "Lower");
  const auto reqs = script.infill_requests();
  REQUIRE(reqs.size() == 3);
  CHECK(reqs[0].prompt.find("<mask>10 ") != std::string::npos);
  CHECK(reqs[1].prompt.find("<mask>9 ") != std::string::npos);
  CHECK(reqs[2].prompt.find("<mask>11 ") != std::string::npos);
}

TEST_CASE("generation: equal perplexity goes to the earlier hint") {
  const auto tpl = prompt::load_template(kTemplates / "title.tpl");
  backend::ScriptBackend script;
  script.push_infill({with_ppl("junk", 1.0)});
  script.push_infill({with_ppl(title_doc("First"), 5.0)});
  script.push_infill({with_ppl(title_doc("Second"), 5.0)});
  SizeHintPolicy p;
  p.s_bar = 4;
  const auto out = run_generation(tpl, {{"article", "story"}}, p, script);
  CHECK(out.slot_outputs.front().second == "First");
}

TEST_CASE("generation: fallback runs once after every round fails") {
  const auto tpl = prompt::load_template(kTemplates / "title.tpl");
  const auto fallback = prompt::field_to_mask(prompt::load_template(kTemplates / "gigaword_auto.tpl"), "summary");
  const prompt::Inputs inputs = {{"article", "story"}};
  SizeHintPolicy p;
  p.s_bar = 6;
  p.max_retries = 5;

  backend::ScriptBackend script;
  for (int i = 0; i < 11; ++i) script.push_infill({with_ppl("nothing useful " + std::to_string(i), 1.0)});
  backend::EchoBackend echo({"rates rise"});
  const auto fallback_prompt = prompt::instantiate(fallback, inputs, {{"summary", 6}}).text;
  script.push_infill({with_ppl(echo.fill(fallback_prompt), 3.0)});

  const auto out = run_generation(tpl, inputs, p, script, &fallback);
  REQUIRE(out.succeeded());
  CHECK(out.source == Source::auto_template_fallback);
  CHECK(out.round == 6);
  REQUIRE(out.attempts.size() == 12);
  CHECK(script.infill_requests().size() == 12);
  CHECK(script.infill_requests().back().prompt == fallback_prompt);
  CHECK(out.attempts.back().round == 6);
  CHECK(out.attempts.back().hint == 6);
  CHECK(out.attempts.back().selected);
  CHECK(out.slot_outputs == std::vector<std::pair<std::string, std::string>>{{"summary", "rates rise"}});

  // Without a fallback the outcome is a recorded failure.
  backend::ScriptBackend none;
  for (int i = 0; i < 11; ++i) none.push_infill({with_ppl("x", 1.0)});
  const auto failed = run_generation(tpl, inputs, p, none);
  CHECK_FALSE(failed.succeeded());
  CHECK(failed.source == Source::auto_template_fallback);
  CHECK(failed.attempts.size() == 11);
  CHECK(failed.slot_outputs.empty());

  // A fallback that also fails is still tried once.
  backend::ScriptBackend both;
  for (int i = 0; i < 12; ++i) both.push_infill({with_ppl("x", 1.0)});
  const auto both_failed = run_generation(tpl, inputs, p, both, &fallback);
  CHECK_FALSE(both_failed.succeeded());
  CHECK(both.infill_requests().size() == 12);
}

TEST_CASE("generation: errors") {
  const auto rte = prompt::load_template(kTemplates / "rte.tpl");
  backend::EchoBackend echo({"x"});
  CHECK_THROWS_AS(run_generation(rte, {}, SizeHintPolicy{}, echo), DataError);

  const auto tpl = prompt::load_template(kTemplates / "title.tpl");
  CHECK_THROWS_AS(run_generation(tpl, {}, SizeHintPolicy{}, echo), DataError);  // missing field
  SizeHintPolicy bad;
  bad.s_bar = 0;
  CHECK_THROWS_AS(run_generation(tpl, {{"article", "a"}}, bad, echo), ConfigError);

  backend::ScriptBackend empty;
  CHECK_THROWS_AS(run_generation(tpl, {{"article", "a"}}, SizeHintPolicy{}, empty), ProtocolError);
}

namespace {

prompt::Template rte_template() {
  return prompt::with_verbalizers(prompt::load_template(kTemplates / "rte.tpl"),
                                  prompt::load_verbalizers(kVerbalizers / "rte.json"));
}

const prompt::Inputs kRteInputs = {{"premise", "A dog runs in the park."}, {"hypothesis", "An animal is outside."}};

void score_label(backend::ScriptBackend& script, const prompt::Template& tpl, const std::string& label, double nll,
                 std::size_t count) {
  script.set_score(prompt::instantiate(tpl, kRteInputs, {}, label).text, nll, count);
}

}  // namespace

TEST_CASE("classification picks the lowest perplexity") {
  const auto tpl = rte_template();
  backend::ScriptBackend script;
  score_label(script, tpl, "entailment", 20.0, 10);
  score_label(script, tpl, "not_entailment", 30.0, 10);
  const auto c = classify(tpl, kRteInputs, script);
  CHECK(c.label == "entailment");
  REQUIRE(c.perplexities.size() == 2);
  CHECK(c.perplexities[0].first == "entailment");
  CHECK(c.perplexities[0].second == doctest::Approx(std::exp(2.0)));
  CHECK(c.perplexities[1].second == doctest::Approx(std::exp(3.0)));
  CHECK(script.score_requests()[0].find("answer: True") != std::string::npos);

  // Perplexity is per token, so the longer text can win with a larger total.
  backend::ScriptBackend per_token;
  score_label(per_token, tpl, "entailment", 20.0, 4);
  score_label(per_token, tpl, "not_entailment", 30.0, 12);
  CHECK(classify(tpl, kRteInputs, per_token).label == "not_entailment");

  // Ties go to the earlier label.
  backend::ScriptBackend tie;
  score_label(tie, tpl, "entailment", 6.0, 3);
  score_label(tie, tpl, "not_entailment", 4.0, 2);
  CHECK(classify(tpl, kRteInputs, tie).label == "entailment");

  // A label subset.
  backend::ScriptBackend subset;
  score_label(subset, tpl, "not_entailment", 1.0, 1);
  CHECK(classify(tpl, kRteInputs, subset, {"not_entailment"}).label == "not_entailment");
  CHECK_THROWS_AS(classify(tpl, kRteInputs, subset, {"contradiction"}), DataError);

  CHECK_THROWS_AS(classify(prompt::load_template(kTemplates / "rte.tpl"), kRteInputs, script), DataError);
  CHECK_THROWS_AS(classify(prompt::load_template(kTemplates / "title.tpl"), kRteInputs, script), DataError);
}

TEST_CASE("classification is unchanged by scaling nll and token count together") {
  const auto tpl = rte_template();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> nll(0.1, 50.0);
  for (int i = 0; i < 200; ++i) {
    const double a = nll(rng), b = nll(rng);
    const std::size_t ca = 1 + rng() % 20, cb = 1 + rng() % 20;
    const std::size_t k = 1 + rng() % 7;
    backend::ScriptBackend base, scaled;
    score_label(base, tpl, "entailment", a, ca);
    score_label(base, tpl, "not_entailment", b, cb);
    score_label(scaled, tpl, "entailment", a * static_cast<double>(k), ca * k);
    score_label(scaled, tpl, "not_entailment", b * static_cast<double>(k), cb * k);
    const auto x = classify(tpl, kRteInputs, base);
    const auto y = classify(tpl, kRteInputs, scaled);
    REQUIRE(x.label == y.label);
    const std::string expected = a / static_cast<double>(ca) <= b / static_cast<double>(cb) ? "entailment"
                                                                                             : "not_entailment";
    REQUIRE(x.label == expected);
  }
}

TEST_CASE("auto-prompting") {
  const std::vector<Block> blocks = {
      {"summary", "the us rejects charges against its ambassador in bolivia"},
      {"article",
       "the us state department said wednesday it had received no formal word from bolivia that it was ..."}};
  CHECK(auto_prompt_request(blocks) == "<mask> " + blocks[0].text + " <mask> <mask> " + blocks[1].text + " <mask>");
  CHECK(auto_prompt_request({{"a", "x"}}, "[M]") == "[M] x [M]");

  const std::string html = slurp(kFixtures / "autoprompt_output.html");
  backend::ScriptBackend script;
  script.push_infill({{html, 10.0, 10}});
  const auto tpl = auto_prompt(blocks, script);
  CHECK(script.infill_requests().front().prompt == auto_prompt_request(blocks));
  CHECK(tpl.fields() == std::vector<std::string>{"summary", "article"});
  CHECK(tpl.mask_slots().empty());

  // It survives a render/parse round trip and reproduces the document.
  const auto reparsed = prompt::parse_template(prompt::render_template(tpl), "auto");
  const prompt::Inputs inputs = {{"summary", blocks[0].text}, {"article", blocks[1].text}};
  CHECK(prompt::instantiate(reparsed, inputs).text == prompt::normalize_space(html));

  // Turning the summary into a mask gives a usable generation template.
  const auto gen = prompt::field_to_mask(reparsed, "summary");
  const auto inst = prompt::instantiate(gen, {{"article", blocks[1].text}}, {{"summary", 9}});
  CHECK(inst.slots.front().prefix.ends_with("<head> <title>"));
  CHECK(inst.slots.front().suffix.starts_with("| The Washington Post </title>"));

  backend::EchoBackend echo({"<h1>", "</h1>", "<p>", "</p>"});
  const auto simple = auto_prompt(blocks, echo);
  CHECK(prompt::instantiate(simple, inputs).text ==
        "<h1> " + blocks[0].text + " </h1> <p> " + blocks[1].text + " </p>");

  backend::ScriptBackend missing;
  missing.push_infill({{"<html><p>unrelated</p></html>", 1.0, 1}});
  CHECK_THROWS_WITH_AS(auto_prompt(blocks, missing), doctest::Contains("summary"), DataError);
  CHECK_THROWS_AS(auto_prompt({}, echo), DataError);
  CHECK_THROWS_AS(auto_prompt({{"a", "  "}}, echo), DataError);

  // Braces in the generated markup stay literal.
  backend::EchoBackend braces({"<style>{{x}}</style>", ""});
  const auto escaped = auto_prompt({{"a", "body text"}}, braces);
  CHECK(prompt::instantiate(escaped, {{"a", "body text"}}).text == "<style>{{x}}</style> body text ");
}
