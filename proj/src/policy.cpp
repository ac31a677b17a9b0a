#include "htk/policy.hpp"

#include <algorithm>
#include <cmath>

#include "htk/error.hpp"

namespace htk::policy {

void SizeHintPolicy::validate() const {
  if (s_bar < 1) throw ConfigError("s-bar must be >= 1");
  if (!(epsilon >= 0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be >= 0");
}

std::size_t round_half_up(double x) {
  // The small bias keeps values like 10 * 0.15 = 1.4999999 on the upper side.
  return static_cast<std::size_t>(std::floor(x + 0.5 + 1e-9));
}

std::size_t estimate_s_bar(const std::vector<std::string>& targets, const tok::Tokenizer& tokenizer, std::size_t cap) {
  if (targets.empty()) throw DataError("cannot estimate s-bar from zero targets");
  const std::size_t n = std::min(std::max<std::size_t>(cap, 1), targets.size());
  std::size_t total = 0;
  for (std::size_t i = 0; i < n; ++i) total += tokenizer.count(targets[i]);
  return std::max<std::size_t>(1, round_half_up(static_cast<double>(total) / static_cast<double>(n)));
}

std::vector<std::size_t> hint_sequence(const SizeHintPolicy& policy) {
  const double s = static_cast<double>(policy.s_bar);
  std::vector<std::size_t> out = {policy.s_bar};
  for (std::size_t i = 1; i <= policy.max_retries; ++i) {
    const double step = static_cast<double>(i) * policy.epsilon * s;
    out.push_back(std::max<std::size_t>(1, round_half_up(std::max(0.0, s - step))));
    out.push_back(round_half_up(s + step));
  }
  return out;
}

std::string to_string(Source source, std::size_t round) {
  switch (source) {
    case Source::initial:
      return "initial";
    case Source::retry:
      return "retry(" + std::to_string(round) + ")";
    case Source::auto_template_fallback:
      return "auto_template_fallback";
  }
  return {};
}

bool PolicyOutcome::succeeded() const { return selected() != nullptr; }

const Attempt* PolicyOutcome::selected() const {
  for (const auto& a : attempts) {
    if (a.selected) return &a;
  }
  return nullptr;
}

namespace {

struct Tried {
  Attempt attempt;
  prompt::Extraction extraction;
};

Tried try_once(const prompt::Template& tpl, const prompt::Inputs& inputs, std::optional<std::size_t> hint,
               std::size_t round, backend::Backend& backend, std::string_view mask_token) {
  prompt::Hints hints;
  for (const auto& s : tpl.segments) {
    if (s.kind == prompt::SegmentKind::mask && s.hint_mode == prompt::HintMode::policy) hints[s.text] = hint;
  }
  const auto instance = prompt::instantiate(tpl, inputs, hints, std::nullopt, mask_token);
  Tried t;
  t.attempt.round = round;
  t.attempt.hint = hint;
  t.attempt.prompt = instance.text;
  const auto outputs = backend.infill({instance.text, std::nullopt, 1});
  if (outputs.empty()) throw ProtocolError("backend returned no candidates");
  t.attempt.generated = outputs.front().text;
  t.extraction = prompt::extract(instance, outputs.front().text);
  t.attempt.extracted = t.extraction.ok();
  t.attempt.perplexity = outputs.front().perplexity();
  return t;
}

}  // namespace

PolicyOutcome run_generation(const prompt::Template& tpl, const prompt::Inputs& inputs, const SizeHintPolicy& policy,
                             backend::Backend& backend, const prompt::Template* fallback, std::string_view mask_token) {
  policy.validate();
  if (!tpl.has_policy_mask()) throw DataError("template '" + tpl.name + "' has no policy-hinted mask");
  const auto hints = hint_sequence(policy);

  PolicyOutcome out;
  std::size_t next_hint = 0;
  for (std::size_t round = 0; round <= policy.max_retries; ++round) {
    const std::size_t width = round == 0 ? 1 : 2;
    std::vector<Tried> tried;
    for (std::size_t k = 0; k < width; ++k) {
      tried.push_back(try_once(tpl, inputs, hints[next_hint++], round, backend, mask_token));
    }
    std::optional<std::size_t> best;
    for (std::size_t k = 0; k < tried.size(); ++k) {
      if (!tried[k].attempt.extracted) continue;
      if (!best || *tried[k].attempt.perplexity < *tried[*best].attempt.perplexity) best = k;
    }
    if (best) tried[*best].attempt.selected = true;
    for (auto& t : tried) out.attempts.push_back(t.attempt);
    if (best) {
      out.slot_outputs = tried[*best].extraction.outputs;
      out.source = round == 0 ? Source::initial : Source::retry;
      out.round = round;
      return out;
    }
  }

  out.source = Source::auto_template_fallback;
  out.round = policy.max_retries + 1;
  if (fallback) {
    auto t = try_once(*fallback, inputs, policy.s_bar, out.round, backend, mask_token);
    if (t.attempt.extracted) {
      t.attempt.selected = true;
      out.slot_outputs = t.extraction.outputs;
    }
    out.attempts.push_back(std::move(t.attempt));
  }
  return out;
}

Classification classify(const prompt::Template& tpl, const prompt::Inputs& inputs, backend::Backend& backend,
                        const std::vector<std::string>& labels) {
  if (!tpl.has_verbalizer_slot() || tpl.verbalizers.empty()) {
    throw DataError("template '" + tpl.name + "' has no verbalizers");
  }
  if (!tpl.mask_slots().empty()) throw DataError("classification template '" + tpl.name + "' has mask slots");
  std::vector<std::string> chosen;
  for (const auto& [label, text] : tpl.verbalizers) {
    if (labels.empty() || std::find(labels.begin(), labels.end(), label) != labels.end()) chosen.push_back(label);
  }
  for (const auto& label : labels) {
    if (std::find(chosen.begin(), chosen.end(), label) == chosen.end()) {
      throw DataError("no verbalizer for label '" + label + "'");
    }
  }
  Classification out;
  double best = 0;
  for (const auto& label : chosen) {
    const auto instance = prompt::instantiate(tpl, inputs, {}, label);
    const double ppl = backend.score(instance.text).perplexity();
    out.perplexities.emplace_back(label, ppl);
    if (out.label.empty() || ppl < best) {
      out.label = label;
      best = ppl;
    }
  }
  return out;
}

std::string auto_prompt_request(const std::vector<Block>& blocks, std::string_view mask_token) {
  std::string out;
  for (const auto& b : blocks) {
    if (!out.empty()) out += ' ';
    out += mask_token;
    out += ' ';
    out += b.text;
    out += ' ';
    out += mask_token;
  }
  return out;
}

prompt::Template auto_prompt(const std::vector<Block>& blocks, backend::Backend& backend, std::string_view mask_token,
                             std::string name) {
  if (blocks.empty()) throw DataError("auto-prompting needs at least one block");
  for (const auto& b : blocks) {
    if (prompt::normalize_space(b.text).find_first_not_of(' ') == std::string::npos) {
      throw DataError("block '" + b.field + "' is empty");
    }
  }
  const auto outputs = backend.infill({auto_prompt_request(blocks, mask_token), std::nullopt, 1});
  if (outputs.empty()) throw ProtocolError("backend returned no candidates");
  const std::string doc = prompt::normalize_space(outputs.front().text);

  prompt::Template tpl;
  tpl.name = std::move(name);
  std::size_t cursor = 0;
  auto literal = [&](std::string_view text) {
    if (text.empty()) return;
    prompt::Segment s;
    s.text = std::string(text);
    tpl.segments.push_back(std::move(s));
  };
  for (const auto& b : blocks) {
    std::string needle = prompt::normalize_space(b.text);
    needle.erase(0, needle.find_first_not_of(' '));
    needle.erase(needle.find_last_not_of(' ') + 1);
    const std::size_t at = doc.find(needle, cursor);
    if (at == std::string::npos) throw DataError("auto-prompt output lacks block '" + b.field + "'");
    literal(std::string_view(doc).substr(cursor, at - cursor));
    prompt::Segment field;
    field.kind = prompt::SegmentKind::field;
    field.text = b.field;
    tpl.segments.push_back(std::move(field));
    cursor = at + needle.size();
  }
  literal(std::string_view(doc).substr(cursor));
  // Validate by the same rules a template file goes through.
  auto checked = prompt::parse_template(prompt::render_template(tpl), tpl.name);
  checked.name = tpl.name;
  return checked;
}

}  // namespace htk::policy
