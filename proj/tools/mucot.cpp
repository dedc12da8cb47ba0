// mucot: split, augment, train and evaluate extractive QA models.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "mucot/augment.hpp"
#include "mucot/checkpoint.hpp"
#include "mucot/config.hpp"
#include "mucot/corpus.hpp"
#include "mucot/eval.hpp"
#include "mucot/synth.hpp"
#include "mucot/trainer.hpp"

namespace fs = std::filesystem;
using namespace mucot;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitAdapter = 3;
constexpr int kExitNumeric = 4;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::transformer_failure: return kExitAdapter;
    case ErrorCode::non_finite: return kExitNumeric;
    default: return kExitInput;
  }
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io_failure, "cannot write ", path.string());
  out << content;
}

std::vector<QaRecord> load_records(const fs::path& path, bool lenient = false) {
  auto result = load_dataset(path, format_for(path), lenient ? LoadPolicy::lenient : LoadPolicy::strict);
  for (const auto& issue : result.rejected) log::warn("skipping record ", issue.id, ": ", issue.reason);
  return std::move(result.records);
}

// ---- split ----

struct SplitArgs {
  std::string input;
  std::size_t test_size = 100;
  std::size_t val_size = 100;
  std::uint64_t seed = 0;
  std::string out;
  bool lenient = false;
};

int cmd_split(const SplitArgs& a) {
  const auto records = load_records(a.input, a.lenient);
  const auto split = stratified_split(records, a.test_size, a.val_size, a.seed);
  write_split(a.out, split, a.test_size, a.val_size);
  std::cout << split_manifest(split, a.test_size, a.val_size).dump(2) << '\n';
  return kExitOk;
}

// ---- augment ----

// Plan file: one plan per line, "<target> <kind> <hop> [<hop> ...]" where a
// hop is "<lang>:identity", "<lang>:parallel[=FILE]" or "<lang>:dict=FILE".
// Files resolve against the adapters directory; a parallel hop defaults to
// <lang>.jsonl. Each hop reads the previous hop's language.
std::vector<AugmentPlan> load_plans(const fs::path& plan_path, const fs::path& adapters) {
  std::ifstream in(plan_path, std::ios::binary);
  if (!in) fail(ErrorCode::io_failure, "cannot read plan ", plan_path.string());
  std::vector<AugmentPlan> plans;
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream words(line);
    std::string target, kind;
    if (!(words >> target)) continue;
    auto where = [&] { return plan_path.string() + ":" + std::to_string(line_no); };
    if (!(words >> kind)) fail(ErrorCode::parse_failure, where(), ": expected '<target> <kind> <hop>...'");
    AugmentPlan plan{target, parse_kind(kind), {}};
    std::string source;
    for (std::string hop; words >> hop;) {
      const auto colon = hop.find(':');
      if (colon == std::string::npos) fail(ErrorCode::parse_failure, where(), ": hop '", hop, "' is not <lang>:<adapter>");
      const std::string lang = hop.substr(0, colon);
      std::string adapter = hop.substr(colon + 1);
      std::string file;
      if (const auto eq = adapter.find('='); eq != std::string::npos) {
        file = adapter.substr(eq + 1);
        adapter.resize(eq);
      }
      if (adapter == "identity") {
        plan.chain.push_back(std::make_shared<IdentityTransformer>(source, lang, plan.kind));
      } else if (adapter == "parallel") {
        if (file.empty()) file = lang + ".jsonl";
        plan.chain.push_back(std::make_shared<ParallelCorpusTranslator>(source, lang, adapters / file, plan.kind));
      } else if (adapter == "dict") {
        if (file.empty()) fail(ErrorCode::parse_failure, where(), ": dict hop needs =FILE");
        plan.chain.push_back(std::make_shared<DictionaryTranslator>(DictionaryTranslator::load(adapters / file, source, lang)));
      } else {
        fail(ErrorCode::parse_failure, where(), ": unknown adapter '", adapter, "'");
      }
      source = lang;
    }
    if (plan.chain.empty()) fail(ErrorCode::parse_failure, where(), ": plan has no hops");
    if (source != target) fail(ErrorCode::parse_failure, where(), ": last hop produces '", source, "', not '", target, "'");
    plans.push_back(std::move(plan));
  }
  return plans;
}

struct AugmentArgs {
  std::string input;
  std::string plan;
  std::string adapters;
  std::string out;
};

int cmd_augment(const AugmentArgs& a) {
  const auto records = load_records(a.input);
  if (!fs::is_directory(a.adapters)) fail(ErrorCode::transformer_failure, "adapter directory ", a.adapters, " does not exist");
  const auto plans = load_plans(a.plan, a.adapters);
  const auto result = build_groups(records, plans);
  const fs::path out(a.out);
  write_file(out / "augmented.jsonl", to_jsonl(result.flatten()));
  const auto report = result.report.to_json().dump(2) + "\n";
  write_file(out / "augment_report.json", report);
  std::cout << report;
  return kExitOk;
}

// ---- pretrain / finetune ----

struct TrainArgs {
  std::string config;
  std::vector<std::string> sets;
  bool resume = false;
};

int cmd_train(const TrainArgs& a, bool contrastive_stage) {
  RunConfig cfg = load_run_config(a.config, a.sets);
  if (!contrastive_stage && cfg.settings.train.w_contrastive > 0) {
    log::warn("pretrain ignores w_contrastive = ", cfg.settings.train.w_contrastive);
    cfg.settings.train.w_contrastive = 0;
  }
  cfg.validate();
  const auto train_records = load_records(cfg.train_file);
  const auto validation = cfg.validation_file.empty() ? std::vector<QaRecord>{} : load_records(cfg.validation_file);

  Vocab vocab = [&] {
    if (!cfg.vocab_file.empty()) return Vocab::load(cfg.vocab_file);
    std::vector<std::string> corpus;
    for (const auto& r : train_records) {
      corpus.push_back(r.context);
      corpus.push_back(r.question);
    }
    return build_vocab(corpus, cfg.vocab_size);
  }();
  fs::create_directories(cfg.out_dir);
  vocab.save(cfg.out_dir / "vocab.txt");

  auto& enc = cfg.settings.encoder;
  enc.vocab_size = vocab.size();
  enc.tap_layer = cfg.settings.train.tap_layer;
  enc.validate();
  EncoderParams<float> init;
  if (!cfg.init_checkpoint.empty()) {
    auto ck = load_checkpoint<float>(cfg.init_checkpoint);
    if (ck.meta.vocab_hash != 0 && ck.meta.vocab_hash != vocab.hash()) {
      fail(ErrorCode::invalid_config, cfg.init_checkpoint.string(), " was trained with a different vocabulary");
    }
    auto stored = ck.meta.encoder;
    stored.tap_layer = enc.tap_layer;
    if (!(stored == enc)) {
      fail(ErrorCode::invalid_config, cfg.init_checkpoint.string(), " has a different architecture: ",
           to_json(ck.meta.encoder).dump());
    }
    init = std::move(ck.params);
  } else {
    init = init_params<float>(enc, cfg.settings.train.seed);
  }
  write_file(cfg.out_dir / "config.txt", to_text(cfg));

  const TrainOptions options{cfg.out_dir, a.resume, vocab.hash()};
  TrainResult<float> result;
  if (contrastive_stage) {
    TrainData data{train_records, validation, groups_from_records(train_records)};
    result = train<float>(data, vocab, cfg.settings, std::move(init), options);
  } else {
    result = pretrain_qa_head<float>(train_records, validation, vocab, cfg.settings, std::move(init), options);
  }
  nlohmann::ordered_json summary;
  summary["best_step"] = result.best_step;
  summary["best_jaccard"] = result.best_jaccard ? nlohmann::json(*result.best_jaccard) : nlohmann::json();
  summary["best_checkpoint"] = result.best_checkpoint.string();
  summary["steps"] = result.log.size();
  std::cout << summary.dump(2) << '\n';
  return kExitOk;
}

// ---- evaluate ----

struct EvaluateArgs {
  std::string checkpoint;
  std::string input;
  std::string out;
  std::string vocab;
  bool per_record = false;
  std::vector<std::string> sets;
};

int cmd_evaluate(const EvaluateArgs& a) {
  if (!fs::exists(a.checkpoint)) fail(ErrorCode::io_failure, "no such checkpoint: ", a.checkpoint);
  const auto ck = load_checkpoint<float>(a.checkpoint);
  const fs::path vocab_path = a.vocab.empty() ? fs::path(a.checkpoint).parent_path() / "vocab.txt" : fs::path(a.vocab);
  const auto vocab = Vocab::load(vocab_path);
  if (ck.meta.vocab_hash != 0 && ck.meta.vocab_hash != vocab.hash()) {
    fail(ErrorCode::invalid_config, vocab_path.string(), " does not match the checkpoint's vocabulary");
  }
  RunConfig overrides;
  for (const auto& s : a.sets) apply_override(overrides, s);
  const auto records = load_records(a.input);
  const auto report = evaluate(ck.params, ck.meta.encoder, records, vocab, ck.meta.features, overrides.settings.decode);
  const fs::path out(a.out);
  const auto text = report.to_json().dump(2) + "\n";
  write_file(out, text);
  if (a.per_record) write_file(fs::path(out).replace_extension(".csv"), report.per_record_csv());
  nlohmann::ordered_json brief;
  brief["overall"] = report.overall;
  brief["per_language"] = report.per_language;
  std::cout << brief.dump(2) << '\n';
  return kExitOk;
}

// ---- inspect ----

struct InspectArgs {
  std::string checkpoint;
  std::string input;
  std::string config;
  std::vector<std::string> sets;
};

int cmd_inspect(const InspectArgs& a) {
  if (!a.checkpoint.empty()) {
    nlohmann::json manifest;
    read_checkpoint_meta(a.checkpoint, &manifest);
    const auto ck = load_checkpoint<float>(a.checkpoint);
    nlohmann::ordered_json j;
    j["step"] = ck.meta.step;
    j["seed"] = ck.meta.seed;
    j["dtype"] = manifest.value("dtype", "");
    j["parameters"] = parameter_count(ck.params);
    j["tensors"] = manifest.at("tensors").size();
    j["config"] = to_json(ck.meta.encoder);
    j["feature_config"] = to_json(ck.meta.features);
    j["extra"] = ck.meta.extra;
    std::cout << j.dump(2) << '\n';
  }
  if (!a.input.empty()) {
    const auto records = load_records(a.input);
    nlohmann::ordered_json j;
    j["records"] = records.size();
    j["per_language"] = language_histogram(records);
    std::size_t variants = 0;
    for (const auto& r : records) variants += r.id.find("::") != std::string::npos ? 1 : 0;
    j["variants"] = variants;
    std::cout << j.dump(2) << '\n';
  }
  if (!a.config.empty() || !a.sets.empty()) std::cout << to_text(load_run_config(a.config, a.sets));
  return kExitOk;
}

// ---- synth ----

struct SynthArgs {
  std::string out;
  std::uint64_t seed = 0;
  std::size_t count = 100;
  std::vector<std::string> langs = {"en", "ml", "te", "bn", "mr"};
};

int cmd_synth(const SynthArgs& a) {
  const synth::World world(a.seed);
  const fs::path out(a.out);
  for (const auto& lang : a.langs) {
    world.language(lang);
    write_file(out / (lang + ".jsonl"), to_jsonl(world.records(lang, a.count, lang + "-", a.seed)));
  }
  for (const auto& from : a.langs) {
    for (const auto& to : a.langs) {
      if (from == to) continue;
      std::string tsv;
      for (const auto& e : world.english_words()) tsv += world.word(from, e) + "\t" + world.word(to, e) + "\n";
      write_file(out / "adapters" / (from + "-" + to + ".tsv"), tsv);
    }
  }
  std::cout << "wrote " << a.langs.size() << " languages x " << a.count << " records to " << out.string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mucot: multilingual extractive QA with translation augmentation and contrastive training"};
  app.require_subcommand(1);
  app.footer(config_help());
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "log progress to stderr");

  SplitArgs split;
  auto* s = app.add_subcommand("split", "stratified train/validation/test split");
  s->add_option("--input", split.input, "records (.jsonl or .csv)")->required();
  s->add_option("--test-size", split.test_size, "test records")->capture_default_str();
  s->add_option("--val-size", split.val_size, "validation records")->capture_default_str();
  s->add_option("--seed", split.seed, "shuffle seed")->capture_default_str();
  s->add_option("--out", split.out, "output directory")->required();
  s->add_flag("--lenient", split.lenient, "skip invalid records instead of failing");

  AugmentArgs augment;
  auto* g = app.add_subcommand("augment", "translate/transliterate records into translation groups");
  g->add_option("--input", augment.input, "records to augment")->required();
  g->add_option("--plan", augment.plan, "plan file: '<target> <kind> <lang>:<adapter>[=FILE] ...' per line")->required();
  g->add_option("--adapters", augment.adapters, "directory holding adapter files")->required();
  g->add_option("--out", augment.out, "output directory")->required();

  TrainArgs pre_args;
  auto* p = app.add_subcommand("pretrain", "train the QA head without the contrastive term");
  TrainArgs fine_args;
  auto* f = app.add_subcommand("finetune", "train with the contrastive term over translation groups");
  for (auto [cmd, args] : {std::pair{p, &pre_args}, std::pair{f, &fine_args}}) {
    cmd->add_option("--config", args->config, "key = value config file");
    cmd->add_option("--set", args->sets, "override a config key (key=value), repeatable");
    cmd->add_flag("--resume", args->resume, "continue from the latest checkpoint in out_dir");
    cmd->footer(config_help());
  }

  EvaluateArgs eval;
  auto* e = app.add_subcommand("evaluate", "score a checkpoint with word-level Jaccard");
  e->add_option("--checkpoint", eval.checkpoint, "checkpoint manifest (.json)")->required();
  e->add_option("--input", eval.input, "records to score")->required();
  e->add_option("--out", eval.out, "report path (.json)")->required();
  e->add_option("--vocab", eval.vocab, "vocabulary (default: vocab.txt next to the checkpoint)");
  e->add_flag("--per-record", eval.per_record, "also write per-record scores as CSV next to the report");
  e->add_option("--set", eval.sets, "override n_best or max_answer_tokens (key=value)");

  InspectArgs inspect;
  auto* i = app.add_subcommand("inspect", "summarize a checkpoint, a dataset or a resolved config");
  i->add_option("--checkpoint", inspect.checkpoint, "checkpoint manifest");
  i->add_option("--input", inspect.input, "records");
  i->add_option("--config", inspect.config, "config file");
  i->add_option("--set", inspect.sets, "config override (key=value)");

  SynthArgs synth_args;
  auto* y = app.add_subcommand("synth", "write a synthetic multilingual dataset and word dictionaries");
  y->add_option("--out", synth_args.out, "output directory")->required();
  y->add_option("--seed", synth_args.seed, "world seed")->capture_default_str();
  y->add_option("--count", synth_args.count, "records per language")->capture_default_str();
  y->add_option("--langs", synth_args.langs, "languages to write")->delimiter(',')->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitInput;
  }
  if (verbose) log::threshold() = log::Level::info;

  try {
    if (s->parsed()) return cmd_split(split);
    if (g->parsed()) return cmd_augment(augment);
    if (p->parsed()) return cmd_train(pre_args, false);
    if (f->parsed()) return cmd_train(fine_args, true);
    if (e->parsed()) return cmd_evaluate(eval);
    if (i->parsed()) {
      if (inspect.checkpoint.empty() && inspect.input.empty() && inspect.config.empty() && inspect.sets.empty()) {
        std::cerr << "inspect: give --checkpoint, --input or --config\n";
        return kExitInput;
      }
      return cmd_inspect(inspect);
    }
    if (y->parsed()) return cmd_synth(synth_args);
  } catch (const Error& err) {
    std::cerr << "mucot: " << err.what() << '\n';
    return exit_code_for(err.code());
  } catch (const nlohmann::json::exception& err) {
    std::cerr << "mucot: parse-failure: " << err.what() << '\n';
    return kExitInput;
  } catch (const fs::filesystem_error& err) {
    std::cerr << "mucot: io-failure: " << err.what() << '\n';
    return kExitInput;
  }
  return kExitInput;
}
