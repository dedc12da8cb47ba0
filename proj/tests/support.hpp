#pragma once

// Shared fixtures for the unit and acceptance suites.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mucot/encoder.hpp"
#include "mucot/losses.hpp"
#include "mucot/rng.hpp"

namespace mucot::testing {

// A feature with random ids; the first `active` positions are unmasked.
inline Feature random_feature(Xoshiro256& rng, std::size_t t, std::size_t active, std::size_t vocab) {
  Feature f;
  f.record_id = "r" + std::to_string(rng.below(1000000));
  for (std::size_t p = 0; p < t; ++p) {
    const bool on = p < active;
    f.ids.push_back(on ? static_cast<int>(rng.below(vocab)) : Vocab::pad_id);
    f.attention_mask.push_back(on ? 1 : 0);
    f.segment_ids.push_back(on && p >= active / 2 ? 1 : 0);
    f.offsets.emplace_back(kNoOffset, kNoOffset);
  }
  f.start_label = rng.below(t);
  f.end_label = rng.below(t);
  return f;
}

inline EncoderConfig toy_config() {
  EncoderConfig cfg;
  cfg.vocab_size = 12;
  cfg.d_model = 4;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ffn = 8;
  cfg.max_positions = 10;
  cfg.tap_layer = 1;
  return cfg;
}

// Two-layer variant used to reach a tap layer below the top block.
inline EncoderConfig small_config() {
  EncoderConfig cfg;
  cfg.vocab_size = 16;
  cfg.d_model = 8;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_ffn = 12;
  cfg.max_positions = 10;
  cfg.tap_layer = 1;
  return cfg;
}

// Scales every weight tensor by `factor`. Finite differences with h = 1e-3
// need weights well above the 0.02 init scale, otherwise h is a large step
// through the layer norms.
inline void scale_weights(EncoderParams<double>& params, double factor) {
  visit_tensors(params, [&](const std::string&, auto& t, TensorRole role) {
    if (role == TensorRole::weight) t *= factor;
  });
}

inline std::vector<std::size_t> labels(const std::vector<Feature>& fs, bool start) {
  std::vector<std::size_t> out;
  for (const auto& f : fs) out.push_back(start ? f.start_label : f.end_label);
  return out;
}

// L_task(original) + w * L_contrastive(gap(tap(original)), gap(tap(paired))),
// computed through forward passes only.
inline double objective(const EncoderParams<double>& params, const EncoderConfig& cfg,
                        const std::vector<Feature>& original, const std::vector<Feature>& paired, double w) {
  const auto bo = Batch::from(std::span<const Feature>(original));
  const auto fo = forward(params, cfg, bo);
  const auto sl = labels(original, true);
  const auto el = labels(original, false);
  double loss = task_loss(fo.start_logits, fo.end_logits, std::span<const std::size_t>(sl), std::span<const std::size_t>(el)).value;
  if (w != 0 && !paired.empty()) {
    const auto bp = Batch::from(std::span<const Feature>(paired));
    const auto fp = forward(params, cfg, bp);
    const auto o = gap(fo.tapped, std::span<const std::uint8_t>(bo.mask), bo.t);
    const auto p = gap(fp.tapped, std::span<const std::uint8_t>(bp.mask), bp.t);
    loss += w * contrastive_loss(o, p).value;
  }
  return loss;
}

// Reverse-mode gradient of the same objective.
inline EncoderParams<double> analytic_gradient(const EncoderParams<double>& params, const EncoderConfig& cfg,
                                               const std::vector<Feature>& original,
                                               const std::vector<Feature>& paired, double w) {
  const auto bo = Batch::from(std::span<const Feature>(original));
  const auto fo = forward(params, cfg, bo);
  const auto sl = labels(original, true);
  const auto el = labels(original, false);
  const auto task = task_loss(fo.start_logits, fo.end_logits, std::span<const std::size_t>(sl), std::span<const std::size_t>(el));
  Upstream<double> up{task.d_start_logits, task.d_end_logits, {}};
  auto grads = EncoderParams<double>::zeros(cfg);
  if (w != 0 && !paired.empty()) {
    const auto bp = Batch::from(std::span<const Feature>(paired));
    const auto fp = forward(params, cfg, bp);
    const auto o = gap(fo.tapped, std::span<const std::uint8_t>(bo.mask), bo.t);
    const auto p = gap(fp.tapped, std::span<const std::uint8_t>(bp.mask), bp.t);
    const auto c = contrastive_loss(o, p);
    up.d_tapped = gap_backward<double>(w * c.d_original, std::span<const std::uint8_t>(bo.mask), bo.t);
    Upstream<double> up_pair{{}, {}, gap_backward<double>(w * c.d_paired, std::span<const std::uint8_t>(bp.mask), bp.t)};
    backward_into(params, cfg, fp, up_pair, grads);
  }
  backward_into(params, cfg, fo, up, grads);
  return grads;
}

struct GradientCheck {
  // Worst per-tensor error ||a - n|| / max(||a||, ||n||, 1e-8).
  double max_relative_error = 0;
  std::string worst_tensor;
  // Worst single entry |a - n| / max(|a|, |n|, 1e-3), for diagnostics.
  double max_entry_error = 0;
  std::size_t checked = 0;
};

// Central finite differences over every scalar parameter, compared with the
// reverse-mode gradient tensor by tensor.
inline GradientCheck finite_difference_check(const EncoderParams<double>& params, const EncoderConfig& cfg,
                                             const std::vector<Feature>& original, const std::vector<Feature>& paired,
                                             double w, double h = 1e-3) {
  const auto analytic = analytic_gradient(params, cfg, original, paired, w);
  auto probe = params;
  GradientCheck result;
  zip_tensors(probe, analytic, [&](const std::string& name, auto& value, const auto& grad) {
    double diff2 = 0;
    double a2 = 0;
    double n2 = 0;
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double saved = value.data()[i];
      value.data()[i] = saved + h;
      const double up = objective(probe, cfg, original, paired, w);
      value.data()[i] = saved - h;
      const double down = objective(probe, cfg, original, paired, w);
      value.data()[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = grad.data()[i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      result.max_entry_error =
          std::max(result.max_entry_error, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-3}));
      ++result.checked;
    }
    // The floor only matters for tensors whose true gradient is zero (the
    // key bias cancels inside the softmax); their numeric gradient is
    // round-off of order 1e-13.
    const double scale = std::max({std::sqrt(a2), std::sqrt(n2), 1e-8});
    const double rel = std::sqrt(diff2) / scale;
    if (rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst_tensor = name;
    }
  });
  return result;
}

}  // namespace mucot::testing
