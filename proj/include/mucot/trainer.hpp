#pragma once

// Fine-tuning loop with the gated contrastive term, AdamW, periodic
// evaluation, checkpointing and resume.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mucot/augment.hpp"
#include "mucot/checkpoint.hpp"
#include "mucot/corpus.hpp"
#include "mucot/encoder.hpp"
#include "mucot/error.hpp"
#include "mucot/eval.hpp"
#include "mucot/features.hpp"
#include "mucot/losses.hpp"
#include "mucot/rng.hpp"
#include "mucot/tokenizer.hpp"

namespace mucot {

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t max_steps = 5000;
  double learning_rate = 3e-5;
  double weight_decay = 0.01;
  double w_contrastive = 0.05;
  std::size_t contrastive_interval = 500;
  std::size_t max_contrastive_steps = 1000;
  std::size_t tap_layer = 3;
  std::size_t eval_interval = 500;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double grad_clip = 0;  // global-norm clip, 0 = off

  void validate() const {
    if (batch_size < 1 || max_steps < 1 || contrastive_interval < 1 || eval_interval < 1 || tap_layer < 1) {
      fail(ErrorCode::invalid_config, "batch_size, max_steps, contrastive_interval, eval_interval and tap_layer must be >= 1");
    }
    if (!(learning_rate > 0)) fail(ErrorCode::invalid_config, "learning_rate must be > 0");
    if (!(weight_decay >= 0) || !(w_contrastive >= 0) || !(grad_clip >= 0)) {
      fail(ErrorCode::invalid_config, "weight_decay, w_contrastive and grad_clip must be >= 0");
    }
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !(epsilon > 0)) {
      fail(ErrorCode::invalid_config, "beta1, beta2 must lie in [0, 1) and epsilon must be > 0");
    }
    if (w_contrastive > 0 && contrastive_interval > max_steps) {
      fail(ErrorCode::invalid_config, "contrastive_interval (", contrastive_interval, ") exceeds max_steps (", max_steps, ")");
    }
  }

  bool contrastive_at(std::size_t step) const {
    return w_contrastive > 0 && step % contrastive_interval == 0 && step <= max_contrastive_steps;
  }

  nlohmann::ordered_json to_json() const {
    return {{"batch_size", batch_size},       {"max_steps", max_steps},
            {"learning_rate", learning_rate}, {"weight_decay", weight_decay},
            {"w_contrastive", w_contrastive}, {"contrastive_interval", contrastive_interval},
            {"max_contrastive_steps", max_contrastive_steps}, {"tap_layer", tap_layer},
            {"eval_interval", eval_interval}, {"seed", seed},
            {"beta1", beta1},                 {"beta2", beta2},
            {"epsilon", epsilon},             {"grad_clip", grad_clip}};
  }
};

template <typename T>
struct AdamState {
  EncoderParams<T> m;
  EncoderParams<T> v;
  std::uint64_t t = 0;

  static AdamState zeros(const EncoderConfig& cfg) { return {EncoderParams<T>::zeros(cfg), EncoderParams<T>::zeros(cfg), 0}; }
};

inline void check_finite(const std::string& name, bool finite) {
  if (!finite) fail(ErrorCode::non_finite, "non-finite gradient in ", name);
}

// m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
// p <- p - lr (m_hat / (sqrt(v_hat) + eps) + wd p)
template <typename T>
void optimizer_step(EncoderParams<T>& params, const EncoderParams<T>& grads, AdamState<T>& state, const TrainConfig& cfg) {
  visit_tensors(grads, [](const std::string& name, const auto& g, TensorRole) { check_finite(name, g.allFinite()); });
  ++state.t;
  const double bc1 = 1 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T lr = static_cast<T>(cfg.learning_rate);
  const T wd = static_cast<T>(cfg.weight_decay);
  const T eps = static_cast<T>(cfg.epsilon);
  const T c1 = static_cast<T>(bc1);
  const T c2 = static_cast<T>(bc2);
  std::vector<Eigen::Map<Matrix<T>>> ms;
  std::vector<Eigen::Map<Matrix<T>>> vs;
  visit_tensors(state.m, [&](const std::string&, auto& t, TensorRole) { ms.emplace_back(t.data(), t.rows(), t.cols()); });
  visit_tensors(state.v, [&](const std::string&, auto& t, TensorRole) { vs.emplace_back(t.data(), t.rows(), t.cols()); });
  std::size_t index = 0;
  zip_tensors(params, grads, [&](const std::string&, auto& p, const auto& g) {
    auto& m = ms[index];
    auto& v = vs[index];
    ++index;
    m.array() = b1 * m.array() + (1 - b1) * g.array();
    v.array() = b2 * v.array() + (1 - b2) * g.array().square();
    p.array() -= lr * ((m.array() / c1) / ((v.array() / c2).sqrt() + eps) + wd * p.array());
  });
}

template <typename T>
double global_norm(const EncoderParams<T>& grads) {
  double sum = 0;
  visit_tensors(grads, [&](const std::string&, const auto& g, TensorRole) { sum += static_cast<double>(g.squaredNorm()); });
  return std::sqrt(sum);
}

struct PairedBatch {
  std::vector<const Feature*> original;
  std::vector<Feature> paired;
  std::vector<std::string> paired_ids;

  // At least one row is paired with a different record.
  bool nondegenerate() const {
    for (std::size_t i = 0; i < original.size(); ++i) {
      if (paired_ids[i] != original[i]->record_id) return true;
    }
    return false;
  }
};

// Draws translation-group siblings and builds their features on demand.
class PairSampler {
 public:
  PairSampler(const std::map<std::string, TranslationGroup>& groups, const Vocab& vocab, FeatureConfig cfg)
      : groups_(groups), vocab_(vocab), cfg_(cfg) {
    cfg_.keep_unanswerable = true;
  }

  // Uniform over the other members of the record's group; self when alone.
  const QaRecord& draw(const std::string& record_id, Xoshiro256& rng) const {
    const auto gid = group_id(record_id);
    const auto it = groups_.find(gid);
    if (it == groups_.end()) fail(ErrorCode::unresolvable_group, "no translation group '", gid, "' for ", record_id);
    const auto members = it->second.members();
    std::vector<const QaRecord*> others;
    const QaRecord* self = nullptr;
    for (const auto* m : members) {
      if (m->id == record_id) self = m;
      else others.push_back(m);
    }
    if (!self) fail(ErrorCode::unresolvable_group, "record ", record_id, " is not a member of group '", gid, "'");
    if (others.empty()) return *self;
    return *others[rng.below(others.size())];
  }

  // The window holding the answer, else window 0.
  const Feature& representative(const QaRecord& record) {
    auto it = cache_.find(record.id);
    if (it == cache_.end()) {
      auto fs = build_features(record, vocab_, cfg_);
      std::size_t pick = 0;
      for (std::size_t k = 0; k < fs.size(); ++k) {
        if (fs[k].has_answer()) {
          pick = k;
          break;
        }
      }
      it = cache_.emplace(record.id, std::move(fs[pick])).first;
    }
    return it->second;
  }

  PairedBatch sample(std::span<const Feature* const> batch, Xoshiro256& rng) {
    PairedBatch out;
    for (const auto* f : batch) {
      const auto& partner = draw(f->record_id, rng);
      out.original.push_back(f);
      out.paired.push_back(representative(partner));
      out.paired_ids.push_back(partner.id);
    }
    return out;
  }

 private:
  const std::map<std::string, TranslationGroup>& groups_;
  const Vocab& vocab_;
  FeatureConfig cfg_;
  std::map<std::string, Feature> cache_;
};

inline PairedBatch sample_pair_batch(std::span<const Feature* const> batch,
                                     const std::map<std::string, TranslationGroup>& groups, const Vocab& vocab,
                                     const FeatureConfig& cfg, Xoshiro256& rng) {
  PairSampler sampler(groups, vocab, cfg);
  return sampler.sample(batch, rng);
}

struct StepRecord {
  std::size_t step = 0;
  LossBreakdown loss;
  double lr = 0;
  bool has_contrastive = true;

  std::string to_jsonl() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["l_task"] = loss.l_task;
    if (has_contrastive) j["l_contrastive"] = loss.l_contrastive;
    j["l_total"] = loss.l_total;
    j["lr"] = lr;
    return j.dump();
  }

  static StepRecord parse(const std::string& line, double w) {
    const auto j = nlohmann::json::parse(line);
    StepRecord r;
    r.step = j.at("step").get<std::size_t>();
    r.lr = j.at("lr").get<double>();
    r.has_contrastive = j.contains("l_contrastive");
    r.loss.l_task = j.at("l_task").get<double>();
    r.loss.l_contrastive = j.value("l_contrastive", 0.0);
    r.loss.l_total = j.at("l_total").get<double>();
    r.loss.w_contrastive = w;
    r.loss.contrastive_applied = r.loss.l_total != r.loss.l_task || r.loss.l_contrastive != 0;
    return r;
  }
};

struct EvalRecord {
  std::size_t step = 0;
  double overall = 0;
  std::map<std::string, double> per_language;

  std::string to_jsonl() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["jaccard_overall"] = overall;
    j["jaccard_per_language"] = per_language;
    return j.dump();
  }

  static EvalRecord parse(const std::string& line) {
    const auto j = nlohmann::json::parse(line);
    return {j.at("step").get<std::size_t>(), j.at("jaccard_overall").get<double>(),
            j.at("jaccard_per_language").get<std::map<std::string, double>>()};
  }
};

// step,overall,<lang>... with languages in sorted order over all evaluations.
inline std::string plot_csv(const std::vector<EvalRecord>& evals) {
  std::set<std::string> langs;
  for (const auto& e : evals) {
    for (const auto& [lang, _] : e.per_language) langs.insert(lang);
  }
  std::string out = "step,overall";
  for (const auto& l : langs) out += "," + l;
  out += "\n";
  for (const auto& e : evals) {
    out += std::to_string(e.step) + "," + nlohmann::json(e.overall).dump();
    for (const auto& l : langs) {
      const auto it = e.per_language.find(l);
      out += ",";
      if (it != e.per_language.end()) out += nlohmann::json(it->second).dump();
    }
    out += "\n";
  }
  return out;
}

struct TrainData {
  std::vector<QaRecord> train;  // originals and their variants
  std::vector<QaRecord> validation;
  std::map<std::string, TranslationGroup> groups;
};

struct TrainSettings {
  EncoderConfig encoder;
  FeatureConfig features;
  DecodeConfig decode;
  TrainConfig train;
};

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: nothing written
  bool resume = false;
  std::uint64_t vocab_hash = 0;
};

template <typename T>
struct TrainResult {
  EncoderParams<T> best_params;
  EncoderParams<T> final_params;
  std::size_t best_step = 0;
  std::optional<double> best_jaccard;
  std::vector<StepRecord> log;
  std::vector<EvalRecord> evals;
  std::filesystem::path best_checkpoint;
};

namespace trainer_detail {

inline void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io_failure, "cannot write ", path.string());
  out << content;
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::vector<std::string> lines;
  std::ifstream in(path, std::ios::binary);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

// Highest-step ckpt-<n>.json in dir, if any.
inline std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) return std::nullopt;
  static const std::regex pattern(R"(ckpt-(\d+)\.json)");
  std::optional<std::filesystem::path> best;
  std::size_t best_step = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const auto name = entry.path().filename().string();
    if (!std::regex_match(name, m, pattern)) continue;
    const auto step = static_cast<std::size_t>(std::stoull(m[1].str()));
    if (!best || step > best_step) {
      best = entry.path();
      best_step = step;
    }
  }
  return best;
}

}  // namespace trainer_detail

inline std::string checkpoint_name(std::size_t step) { return "ckpt-" + std::to_string(step); }

// Runs steps 1..max_steps from `init`. Contrastive steps follow
// TrainConfig::contrastive_at; validation is scored every eval_interval steps
// and at the last step, and the best overall Jaccard (earliest on ties) wins.
template <typename T>
TrainResult<T> train(const TrainData& data, const Vocab& vocab, const TrainSettings& settings, EncoderParams<T> init,
                     const TrainOptions& options = {}) {
  const TrainConfig& tc = settings.train;
  tc.validate();
  settings.features.validate();
  settings.decode.validate();
  EncoderConfig enc = settings.encoder;
  enc.tap_layer = tc.tap_layer;
  enc.validate();
  if (data.train.empty()) fail(ErrorCode::insufficient_records, "training split is empty");

  const auto features = build_all_features(data.train, vocab, settings.features);
  if (features.empty()) fail(ErrorCode::insufficient_records, "training split produced no features");
  const std::size_t per_epoch = (features.size() + tc.batch_size - 1) / tc.batch_size;
  const bool log_contrastive = tc.w_contrastive > 0;
  PairSampler sampler(data.groups, vocab, settings.features);

  TrainResult<T> result;
  EncoderParams<T> params = std::move(init);
  auto adam = AdamState<T>::zeros(enc);
  std::size_t first_step = 1;
  std::optional<EncoderParams<T>> best;

  CheckpointMeta meta;
  meta.encoder = enc;
  meta.features = settings.features;
  meta.seed = tc.seed;
  meta.vocab_hash = options.vocab_hash;
  const auto& out_dir = options.out_dir;
  const auto log_path = out_dir / "train_log.jsonl";
  const auto eval_path = out_dir / "eval_log.jsonl";

  if (options.resume && !out_dir.empty()) {
    if (const auto latest = trainer_detail::latest_checkpoint(out_dir)) {
      auto ck = load_checkpoint<T>(*latest, true);
      if (!(ck.meta.encoder == enc) || ck.meta.seed != tc.seed || ck.meta.extra.value("train", nlohmann::json()) != nlohmann::json(tc.to_json())) {
        fail(ErrorCode::invalid_config, "cannot resume from ", latest->string(), ": configuration differs");
      }
      if (!ck.moments) fail(ErrorCode::parse_failure, latest->string(), " has no optimizer state");
      params = std::move(ck.params);
      adam.m = std::move(ck.moments->first);
      adam.v = std::move(ck.moments->second);
      adam.t = ck.meta.step;
      first_step = ck.meta.step + 1;
      for (const auto& line : trainer_detail::read_lines(log_path)) {
        auto r = StepRecord::parse(line, tc.w_contrastive);
        if (r.step <= ck.meta.step) result.log.push_back(r);
      }
      for (const auto& line : trainer_detail::read_lines(eval_path)) {
        auto e = EvalRecord::parse(line);
        if (e.step <= ck.meta.step) result.evals.push_back(e);
      }
      result.best_step = ck.meta.extra.value("best_step", std::size_t{0});
      if (ck.meta.extra.contains("best_jaccard")) result.best_jaccard = ck.meta.extra["best_jaccard"].template get<double>();
      if (result.best_step > 0) best = load_checkpoint<T>(out_dir / (checkpoint_name(result.best_step) + ".json")).params;
      log::info("resuming from ", latest->string(), " at step ", ck.meta.step);
    }
  }

  auto write_logs = [&] {
    if (out_dir.empty()) return;
    std::string lines;
    for (const auto& r : result.log) lines += r.to_jsonl() + "\n";
    trainer_detail::write_text(log_path, lines);
    std::string evals;
    for (const auto& e : result.evals) evals += e.to_jsonl() + "\n";
    trainer_detail::write_text(eval_path, evals);
    trainer_detail::write_text(out_dir / "eval_plot.csv", plot_csv(result.evals));
  };
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  std::size_t cached_epoch = std::numeric_limits<std::size_t>::max();
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t step = first_step; step <= tc.max_steps; ++step) {
    const std::size_t epoch = (step - 1) / per_epoch;
    if (epoch != cached_epoch) {
      batches = batch_features(features.size(), tc.batch_size, derive_seed(tc.seed, "batches", epoch));
      cached_epoch = epoch;
    }
    std::vector<const Feature*> rows;
    for (auto i : batches[(step - 1) % per_epoch]) rows.push_back(&features[i]);
    const auto batch = Batch::from(std::span<const Feature* const>(rows));
    const auto pass = forward(params, enc, batch);
    std::vector<std::size_t> starts;
    std::vector<std::size_t> ends;
    for (const auto* f : rows) {
      starts.push_back(f->start_label);
      ends.push_back(f->end_label);
    }
    const auto task = task_loss(pass.start_logits, pass.end_logits, std::span<const std::size_t>(starts),
                                std::span<const std::size_t>(ends));
    Upstream<T> up{task.d_start_logits, task.d_end_logits, {}};
    auto grads = EncoderParams<T>::zeros(enc);

    const bool apply = tc.contrastive_at(step);
    double l_contrastive = 0;
    if (apply) {
      Xoshiro256 rng(derive_seed(tc.seed, "pairs", step));
      const auto pb = sampler.sample(std::span<const Feature* const>(rows), rng);
      const auto pair_batch = Batch::from(std::span<const Feature>(pb.paired));
      const auto pair_pass = forward(params, enc, pair_batch);
      const auto o = gap(pass.tapped, std::span<const std::uint8_t>(batch.mask), batch.t);
      const auto p = gap(pair_pass.tapped, std::span<const std::uint8_t>(pair_batch.mask), pair_batch.t);
      const auto c = contrastive_loss(o, p);
      l_contrastive = static_cast<double>(c.value);
      const T w = static_cast<T>(tc.w_contrastive);
      up.d_tapped = gap_backward<T>(w * c.d_original, std::span<const std::uint8_t>(batch.mask), batch.t);
      Upstream<T> pair_up{{}, {}, gap_backward<T>(w * c.d_paired, std::span<const std::uint8_t>(pair_batch.mask), pair_batch.t)};
      backward_into(params, enc, pair_pass, pair_up, grads);
    }
    const auto breakdown = total_loss(static_cast<double>(task.value), l_contrastive, tc.w_contrastive, apply);
    if (!std::isfinite(breakdown.l_total)) fail(ErrorCode::non_finite, "non-finite loss at step ", step);
    backward_into(params, enc, pass, up, grads);
    if (tc.grad_clip > 0) {
      const double norm = global_norm(grads);
      if (norm > tc.grad_clip) {
        const T scale = static_cast<T>(tc.grad_clip / norm);
        visit_tensors(grads, [&](const std::string&, auto& g, TensorRole) { g *= scale; });
      }
    }
    optimizer_step(params, grads, adam, tc);
    result.log.push_back({step, breakdown, tc.learning_rate, log_contrastive});

    if (step % tc.eval_interval == 0 || step == tc.max_steps) {
      if (!data.validation.empty()) {
        const auto report = evaluate(params, enc, data.validation, vocab, settings.features, settings.decode);
        result.evals.push_back({step, report.overall, report.per_language});
        log::info("step ", step, " l_total ", breakdown.l_total, " validation jaccard ", report.overall);
        if (!result.best_jaccard || report.overall > *result.best_jaccard) {
          result.best_jaccard = report.overall;
          result.best_step = step;
          best = params;
        }
      }
      if (!out_dir.empty()) {
        meta.step = step;
        meta.extra = nlohmann::json::object();
        meta.extra["train"] = tc.to_json();
        meta.extra["best_step"] = result.best_step;
        if (result.best_jaccard) meta.extra["best_jaccard"] = *result.best_jaccard;
        save_checkpoint(out_dir, checkpoint_name(step), params, meta, &adam.m, &adam.v);
        write_logs();
      }
    }
  }

  result.final_params = params;
  if (!best) {
    best = params;
    result.best_step = tc.max_steps;
  }
  result.best_params = std::move(*best);
  if (!out_dir.empty()) {
    meta.step = result.best_step;
    meta.extra = nlohmann::json::object();
    meta.extra["train"] = tc.to_json();
    meta.extra["best_step"] = result.best_step;
    if (result.best_jaccard) meta.extra["best_jaccard"] = *result.best_jaccard;
    result.best_checkpoint = save_checkpoint(out_dir, "best", result.best_params, meta);
    write_logs();
  }
  return result;
}

// Stage-2 QA-head training: the same loop with the contrastive term off.
template <typename T>
TrainResult<T> pretrain_qa_head(const std::vector<QaRecord>& records, const std::vector<QaRecord>& validation,
                                const Vocab& vocab, TrainSettings settings, EncoderParams<T> init,
                                const TrainOptions& options = {}) {
  settings.train.w_contrastive = 0;
  TrainData data;
  data.train = records;
  data.validation = validation;
  return train<T>(data, vocab, settings, std::move(init), options);
}

}  // namespace mucot
