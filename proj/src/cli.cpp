#include "htk/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "htk/backend.hpp"
#include "htk/corpus.hpp"
#include "htk/error.hpp"
#include "htk/masking.hpp"
#include "htk/metrics.hpp"
#include "htk/mhtml.hpp"
#include "htk/policy.hpp"
#include "htk/prompt.hpp"
#include "htk/tokenizer.hpp"
#include "json.hpp"

namespace htk::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::size_t default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

std::vector<json> read_rows(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<json> rows;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json row = json::parse(line, nullptr, false);
    if (row.is_discarded() || !row.is_object()) {
      throw DataError(path.string() + ":" + std::to_string(n) + ": expected a JSON object");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

prompt::Inputs row_inputs(const json& row) {
  prompt::Inputs inputs;
  for (const auto& [key, value] : row.items()) {
    if (value.is_string()) inputs[key] = value.get<std::string>();
  }
  return inputs;
}

json row_id(const json& row, std::size_t index) { return row.contains("id") ? row["id"] : json(index); }

// Output file, or `fallback` when the path is empty or "-".
class Sink {
 public:
  Sink(const std::string& path, std::ostream& fallback) : out_(&fallback) {
    if (path.empty() || path == "-") return;
    file_.open(path, std::ios::binary | std::ios::trunc);
    if (!file_) throw IoError("cannot write " + path);
    out_ = &file_;
  }
  std::ostream& operator*() { return *out_; }
  void close() {
    out_->flush();
    if (!*out_) throw IoError("write failed");
  }

 private:
  std::ofstream file_;
  std::ostream* out_;
};

json prf_json(const metrics::Prf& s) { return {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}}; }

json rouge_json(const metrics::RougeScore& s) {
  return {{"rouge1", prf_json(s.rouge1)}, {"rouge2", prf_json(s.rouge2)}, {"rougeL", prf_json(s.rougeL)}};
}

json stats_json(const mhtml::StatsReport& r) {
  return {{"documents", r.documents},
          {"mean_reduction", r.mean_reduction},
          {"median_reduction", r.median_reduction},
          {"text_ratio",
           {{"min", r.text_ratio.min}, {"max", r.text_ratio.max}, {"mean", r.text_ratio.mean}, {"median", r.text_ratio.median}}},
          {"budget", r.budget},
          {"within_budget", r.within_budget},
          {"within_budget_fraction", r.within_budget_fraction},
          {"mean_tokens", r.mean_tokens}};
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"HTML corpus simplification, span masking and structured prompting."};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // extract
  auto* extract = app.add_subcommand("extract", "Simplify an HTML corpus into JSONL shards");
  std::string ex_input, ex_output, ex_config, ex_lang = "en";
  std::size_t ex_min_text = 128, ex_min_compact = 64, ex_workers = default_workers(), ex_shard_size = 10'000;
  double ex_ratio = 0.46;
  bool ex_accept_missing = false;
  std::uint64_t ex_seed = 0;
  extract->add_option("--input", ex_input, "Directory, .html, .warc or .warc.gz source")->required();
  extract->add_option("--output", ex_output, "Output directory for shards and manifest.json")->required();
  extract->add_option("--config", ex_config, "key = value config file; flags override it");
  auto* o_min_text = extract->add_option("--min-text", ex_min_text, "Threshold for standard elements")->capture_default_str();
  auto* o_min_compact = extract->add_option("--min-text-compact", ex_min_compact, "Threshold for list/table/span elements")
                            ->capture_default_str();
  auto* o_ratio = extract->add_option("--ratio", ex_ratio, "Keep documents whose text/html ratio exceeds this")
                      ->capture_default_str();
  auto* o_lang = extract->add_option("--lang", ex_lang, "Required primary language subtag")->capture_default_str();
  auto* o_missing = extract->add_flag("--accept-missing-lang", ex_accept_missing, "Keep pages without a lang attribute");
  extract->add_option("--workers", ex_workers, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  extract->add_option("--shard-size", ex_shard_size, "Records per shard")->capture_default_str()->check(CLI::PositiveNumber);
  extract->add_option("--seed", ex_seed, "Accepted for symmetry with mask; extraction is deterministic");

  // stats
  auto* stats = app.add_subcommand("stats", "Corpus statistics over extracted shards");
  std::string st_input, st_tokenizer = "whitespace";
  std::size_t st_budget = 1024;
  stats->add_option("--input", st_input, "Output directory, manifest.json or shard file")->required();
  stats->add_option("--tokenizer", st_tokenizer, "\"whitespace\" or a directory with vocab.json and merges.txt")
      ->capture_default_str();
  stats->add_option("--budget", st_budget, "Token budget")->capture_default_str()->check(CLI::PositiveNumber);

  // mask
  auto* mask = app.add_subcommand("mask", "Build size-hinted denoising examples from shards");
  std::string mk_input, mk_output, mk_tokenizer = "whitespace";
  masking::Config mk_cfg;
  std::size_t mk_workers = default_workers();
  mask->add_option("--input", mk_input, "Output directory, manifest.json or shard file")->required();
  mask->add_option("--output", mk_output, "JSONL file to write")->required();
  mask->add_option("--lambda", mk_cfg.lambda, "Poisson rate for span lengths")->capture_default_str();
  mask->add_option("--mask-rate", mk_cfg.mask_rate, "Fraction of tokens to mask")->capture_default_str();
  mask->add_option("--hint-prob", mk_cfg.hint_prob, "Probability that a mask gets a size hint")->capture_default_str();
  mask->add_option("--epsilon", mk_cfg.epsilon, "Relative std of the hint noise")->capture_default_str();
  mask->add_option("--seed", mk_cfg.seed, "RNG seed")->capture_default_str();
  mask->add_option("--mask-token", mk_cfg.mask_token, "Mask sentinel")->capture_default_str();
  mask->add_option("--tokenizer", mk_tokenizer, "\"whitespace\" or a BPE directory")->capture_default_str();
  mask->add_option("--workers", mk_workers, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);

  // prompt-run
  auto* prun = app.add_subcommand("prompt-run", "Run a generation template with the size-hint policy");
  std::string pr_template, pr_data, pr_backend, pr_fallback, pr_target_field, pr_output, pr_tokenizer = "whitespace";
  std::string pr_mask_token(tok::kDefaultMaskToken);
  policy::SizeHintPolicy pr_policy;
  std::size_t pr_s_bar = 0;
  prun->add_option("--template", pr_template, "Template file")->required();
  prun->add_option("--data", pr_data, "JSONL rows of input fields (optional \"id\", \"target\")")->required();
  prun->add_option("--backend", pr_backend, "Backend URL or echo:TEXT; defaults to $HTLM_BACKEND_URL");
  prun->add_option("--s-bar", pr_s_bar, "Mean target size; estimated from row targets when omitted");
  prun->add_option("--epsilon", pr_policy.epsilon, "Relative hint step per retry")->capture_default_str();
  prun->add_option("--max-retries", pr_policy.max_retries, "Retry rounds")->capture_default_str();
  prun->add_option("--sample-cap", pr_policy.sample_cap, "Targets used to estimate s-bar")->capture_default_str();
  prun->add_option("--fallback-template", pr_fallback, "Template tried once after all rounds fail");
  prun->add_option("--target-field", pr_target_field, "Field placeholder to turn into the generated slot");
  prun->add_option("--tokenizer", pr_tokenizer, "Tokenizer for s-bar estimation")->capture_default_str();
  prun->add_option("--mask-token", pr_mask_token, "Mask sentinel")->capture_default_str();
  prun->add_option("--output", pr_output, "JSONL output (default stdout)");

  // classify
  auto* cls = app.add_subcommand("classify", "Pick the verbalizer with the lowest perplexity");
  std::string cl_template, cl_verbalizers, cl_data, cl_backend, cl_output;
  cls->add_option("--template", cl_template, "Template file with {{verbalizer}}")->required();
  cls->add_option("--verbalizers", cl_verbalizers, "JSON object label -> text")->required();
  cls->add_option("--data", cl_data, "JSONL rows of input fields (optional \"id\", \"label\")")->required();
  cls->add_option("--backend", cl_backend, "Backend URL or echo:TEXT; defaults to $HTLM_BACKEND_URL");
  cls->add_option("--output", cl_output, "JSONL output (default stdout)");

  // autoprompt
  auto* auto_cmd = app.add_subcommand("autoprompt", "Let the model wrap task fields in markup");
  std::vector<std::string> ap_fields;
  std::string ap_examples, ap_backend, ap_out;
  std::string ap_mask_token(tok::kDefaultMaskToken);
  auto_cmd->add_option("--fields", ap_fields, "Field names, in block order")->required()->delimiter(',');
  auto_cmd->add_option("--examples", ap_examples, "JSONL rows holding the fields")->required();
  auto_cmd->add_option("--backend", ap_backend, "Backend URL or echo:TEXT; defaults to $HTLM_BACKEND_URL");
  auto_cmd->add_option("--out-template", ap_out, "Template file to write")->required();
  auto_cmd->add_option("--mask-token", ap_mask_token, "Mask sentinel")->capture_default_str();

  // eval-rouge
  auto* rouge = app.add_subcommand("eval-rouge", "ROUGE-1/2/L of line-aligned predictions");
  std::string rg_pred, rg_ref;
  rouge->add_option("--pred", rg_pred, "Predictions, one per line")->required();
  rouge->add_option("--ref", rg_ref, "References, one per line")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (extract->parsed()) {
      mhtml::Config cfg = ex_config.empty() ? mhtml::Config{} : mhtml::Config::from_file(ex_config);
      if (ex_config.empty() || o_min_text->count()) cfg.standard_threshold = ex_min_text;
      if (ex_config.empty() || o_min_compact->count()) cfg.compact_threshold = ex_min_compact;
      if (ex_config.empty() || o_ratio->count()) cfg.min_text_ratio = ex_ratio;
      if (ex_config.empty() || o_lang->count()) cfg.required_lang = ex_lang;
      if (o_missing->count()) cfg.accept_missing_lang = true;
      cfg.validate();
      corpus::PipelineOptions options;
      options.workers = ex_workers;
      options.shard_size = ex_shard_size;
      const auto summary = corpus::run_pipeline(ex_input, cfg, options, ex_output);
      json rejects = json::object();
      for (const auto& [code, count] : summary.rejects) rejects[code] = count;
      out << json{{"ingested", summary.ingested},
                  {"accepted", summary.accepted},
                  {"rejected", summary.rejected()},
                  {"skipped_corrupt", summary.skipped_corrupt},
                  {"rejects", rejects},
                  {"shards", summary.shards.size()}}
                 .dump(2)
          << "\n";
      return 0;
    }

    if (stats->parsed()) {
      const auto tokenizer = tok::Tokenizer::from_spec(st_tokenizer);
      const auto records = corpus::read_records(st_input);
      out << stats_json(mhtml::corpus_stats(records, tokenizer, st_budget)).dump(2) << "\n";
      return 0;
    }

    if (mask->parsed()) {
      mk_cfg.validate();
      const auto tokenizer = tok::Tokenizer::from_spec(mk_tokenizer, {mk_cfg.mask_token});
      const auto summary = masking::emit_training_set(corpus::shard_files(mk_input), tokenizer, mk_cfg, mk_output, mk_workers);
      out << json{{"written", summary.written}, {"skipped", summary.skipped}}.dump() << "\n";
      return 0;
    }

    if (prun->parsed()) {
      auto tpl = prompt::load_template(pr_template);
      if (!pr_target_field.empty()) tpl = prompt::field_to_mask(tpl, pr_target_field);
      std::optional<prompt::Template> fallback;
      if (!pr_fallback.empty()) {
        fallback = prompt::load_template(pr_fallback);
        if (!pr_target_field.empty() && fallback->mask_slots().empty()) {
          fallback = prompt::field_to_mask(*fallback, pr_target_field);
        }
      }
      const auto rows = read_rows(pr_data);
      if (pr_s_bar > 0) {
        pr_policy.s_bar = pr_s_bar;
      } else {
        std::vector<std::string> targets;
        for (const auto& row : rows) {
          if (row.contains("target") && row["target"].is_string()) targets.push_back(row["target"].get<std::string>());
        }
        if (targets.empty()) throw ConfigError("--s-bar is required when rows carry no \"target\"");
        pr_policy.s_bar = policy::estimate_s_bar(targets, tok::Tokenizer::from_spec(pr_tokenizer), pr_policy.sample_cap);
      }
      auto model = backend::from_spec(pr_backend, pr_mask_token);
      Sink sink(pr_output, out);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto outcome = policy::run_generation(tpl, row_inputs(rows[i]), pr_policy, *model,
                                                    fallback ? &*fallback : nullptr, pr_mask_token);
        json output = nullptr;
        if (outcome.succeeded()) {
          if (outcome.slot_outputs.size() == 1) {
            output = outcome.slot_outputs.front().second;
          } else {
            output = json::object();
            for (const auto& [slot, text] : outcome.slot_outputs) output[slot] = text;
          }
        }
        json attempts = json::array();
        for (const auto& a : outcome.attempts) {
          attempts.push_back({{"round", a.round},
                              {"hint", a.hint ? json(*a.hint) : json(nullptr)},
                              {"extracted", a.extracted},
                              {"perplexity", a.perplexity ? json(*a.perplexity) : json(nullptr)},
                              {"selected", a.selected}});
        }
        *sink << json{{"input_id", row_id(rows[i], i)},
                      {"output", output},
                      {"source", policy::to_string(outcome.source, outcome.round)},
                      {"attempts", attempts}}
                     .dump()
              << "\n";
      }
      sink.close();
      return 0;
    }

    if (cls->parsed()) {
      const auto tpl = prompt::with_verbalizers(prompt::load_template(cl_template), prompt::load_verbalizers(cl_verbalizers));
      const auto rows = read_rows(cl_data);
      auto model = backend::from_spec(cl_backend);
      Sink sink(cl_output, out);
      std::size_t labelled = 0, correct = 0;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto result = policy::classify(tpl, row_inputs(rows[i]), *model);
        json ppl = json::object();
        for (const auto& [label, value] : result.perplexities) ppl[label] = value;
        *sink << json{{"input_id", row_id(rows[i], i)}, {"label", result.label}, {"perplexities", ppl}}.dump() << "\n";
        if (rows[i].contains("label") && rows[i]["label"].is_string()) {
          ++labelled;
          correct += rows[i]["label"].get<std::string>() == result.label;
        }
      }
      sink.close();
      if (labelled > 0) err << "accuracy " << correct << "/" << labelled << "\n";
      return 0;
    }

    if (auto_cmd->parsed()) {
      const auto rows = read_rows(ap_examples);
      auto model = backend::from_spec(ap_backend, ap_mask_token);
      std::optional<std::string> last_error;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        std::vector<policy::Block> blocks;
        const auto inputs = row_inputs(rows[i]);
        bool complete = true;
        for (const auto& field : ap_fields) {
          auto it = inputs.find(field);
          if (it == inputs.end()) complete = false;
          else blocks.push_back({field, it->second});
        }
        if (!complete) {
          last_error = "row " + std::to_string(i) + " lacks a requested field";
          continue;
        }
        try {
          const auto tpl = policy::auto_prompt(blocks, *model, ap_mask_token, fs::path(ap_out).stem().string());
          Sink sink(ap_out, out);
          *sink << prompt::render_template(tpl) << "\n";
          sink.close();
          out << json{{"template", ap_out}, {"examples_used", i + 1}}.dump() << "\n";
          return 0;
        } catch (const BackendError&) {
          throw;
        } catch (const DataError& e) {
          last_error = e.what();
        }
      }
      throw DataError("auto-prompting failed on every example" + (last_error ? ": " + *last_error : std::string()));
    }

    if (rouge->parsed()) {
      const auto pred = read_lines(rg_pred);
      const auto ref = read_lines(rg_ref);
      if (pred.size() != ref.size()) {
        throw DataError("line counts differ: " + std::to_string(pred.size()) + " predictions, " +
                        std::to_string(ref.size()) + " references");
      }
      json lines = json::array();
      metrics::RougeScore mean;
      auto add = [](metrics::Prf& acc, const metrics::Prf& s) {
        acc.precision += s.precision;
        acc.recall += s.recall;
        acc.f1 += s.f1;
      };
      for (std::size_t i = 0; i < pred.size(); ++i) {
        const auto s = metrics::rouge(pred[i], ref[i]);
        lines.push_back(rouge_json(s));
        add(mean.rouge1, s.rouge1);
        add(mean.rouge2, s.rouge2);
        add(mean.rougeL, s.rougeL);
      }
      const double n = static_cast<double>(std::max<std::size_t>(pred.size(), 1));
      for (auto* p : {&mean.rouge1, &mean.rouge2, &mean.rougeL}) {
        p->precision /= n;
        p->recall /= n;
        p->f1 /= n;
      }
      out << json{{"lines", lines}, {"mean", rouge_json(mean)}}.dump(2) << "\n";
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    switch (e.category()) {
      case Error::Category::usage:
        return 1;
      case Error::Category::data:
        return 2;
      case Error::Category::backend:
        return 3;
    }
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace htk::cli
