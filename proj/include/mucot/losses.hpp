#pragma once

// QA task loss, pooled multilingual contrastive loss and their weighted sum.
// Every function returns the loss together with its gradient with respect to
// its inputs, so the trainer can chain them into the encoder's reverse pass.

#include <cmath>
#include <span>
#include <vector>

#include "mucot/encoder.hpp"
#include "mucot/error.hpp"

namespace mucot {

// Masked mean over token positions: row i of the result averages the rows of
// `tapped` belonging to sequence i where mask == 1.
template <typename T>
Matrix<T> gap(const Matrix<T>& tapped, std::span<const std::uint8_t> mask, std::size_t t) {
  if (t == 0 || static_cast<std::size_t>(tapped.rows()) != mask.size() || mask.size() % t != 0) {
    fail(ErrorCode::shape_mismatch, "tapped embeddings and mask disagree");
  }
  const std::size_t n = mask.size() / t;
  Matrix<T> pooled = Matrix<T>::Zero(static_cast<Eigen::Index>(n), tapped.cols());
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t active = 0;
    for (std::size_t p = 0; p < t; ++p) {
      if (!mask[i * t + p]) continue;
      pooled.row(static_cast<Eigen::Index>(i)) += tapped.row(static_cast<Eigen::Index>(i * t + p));
      ++active;
    }
    if (active == 0) fail(ErrorCode::empty_mask_row, "row ", i, " has no active position");
    pooled.row(static_cast<Eigen::Index>(i)) /= static_cast<T>(active);
  }
  return pooled;
}

template <typename T>
Matrix<T> gap_backward(const Matrix<T>& d_pooled, std::span<const std::uint8_t> mask, std::size_t t) {
  const std::size_t n = mask.size() / t;
  Matrix<T> d_tapped = Matrix<T>::Zero(static_cast<Eigen::Index>(n * t), d_pooled.cols());
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t active = 0;
    for (std::size_t p = 0; p < t; ++p) active += mask[i * t + p] ? 1 : 0;
    if (active == 0) fail(ErrorCode::empty_mask_row, "row ", i, " has no active position");
    for (std::size_t p = 0; p < t; ++p) {
      if (mask[i * t + p]) d_tapped.row(static_cast<Eigen::Index>(i * t + p)) = d_pooled.row(static_cast<Eigen::Index>(i)) / static_cast<T>(active);
    }
  }
  return d_tapped;
}

namespace loss_detail {

// Cross-entropy of one logit vector against class `target`, and the
// gradient softmax - onehot written into `grad`.
template <typename Vec, typename GradVec>
auto cross_entropy(const Vec& logits, Eigen::Index target, GradVec&& grad) {
  using T = typename std::remove_cvref_t<Vec>::Scalar;
  const T max_logit = logits.maxCoeff();
  T total = 0;
  for (Eigen::Index j = 0; j < logits.size(); ++j) {
    grad(j) = std::exp(logits(j) - max_logit);
    total += grad(j);
  }
  grad /= total;
  grad(target) -= static_cast<T>(1);
  return (max_logit + std::log(total)) - logits(target);
}

}  // namespace loss_detail

template <typename T>
struct TaskLoss {
  T value = 0;
  Matrix<T> d_start_logits;
  Matrix<T> d_end_logits;
};

// mean_i (CE(start_i, s_i) + CE(end_i, e_i)) / 2
template <typename T>
TaskLoss<T> task_loss(const Matrix<T>& start_logits, const Matrix<T>& end_logits,
                      std::span<const std::size_t> start_labels, std::span<const std::size_t> end_labels) {
  const auto n = start_logits.rows();
  const auto t = start_logits.cols();
  if (end_logits.rows() != n || end_logits.cols() != t || start_labels.size() != static_cast<std::size_t>(n) ||
      end_labels.size() != static_cast<std::size_t>(n)) {
    fail(ErrorCode::shape_mismatch, "task loss inputs disagree in shape");
  }
  TaskLoss<T> out;
  out.d_start_logits.resize(n, t);
  out.d_end_logits.resize(n, t);
  T total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto s = start_labels[static_cast<std::size_t>(i)];
    const auto e = end_labels[static_cast<std::size_t>(i)];
    if (s >= static_cast<std::size_t>(t) || e >= static_cast<std::size_t>(t)) {
      fail(ErrorCode::label_out_of_range, "row ", i, " labels (", s, ", ", e, ") outside [0, ", t, ")");
    }
    total += loss_detail::cross_entropy(start_logits.row(i), static_cast<Eigen::Index>(s), out.d_start_logits.row(i));
    total += loss_detail::cross_entropy(end_logits.row(i), static_cast<Eigen::Index>(e), out.d_end_logits.row(i));
  }
  const T norm = static_cast<T>(2 * n);
  out.value = total / norm;
  out.d_start_logits /= norm;
  out.d_end_logits /= norm;
  return out;
}

template <typename T>
struct ContrastiveLoss {
  T value = 0;
  Matrix<T> logits;  // Q = O P^T
  Matrix<T> d_original;
  Matrix<T> d_paired;
};

// Symmetric cross-entropy over Q = O P^T with the diagonal as the target
// class of each row and each column:
//   L = (mean_i CE(Q[i,:], i) + mean_j CE(Q[:,j], j)) / 2
// No temperature and no normalization of O or P.
template <typename T>
ContrastiveLoss<T> contrastive_loss(const Matrix<T>& original, const Matrix<T>& paired) {
  if (original.rows() != paired.rows() || original.cols() != paired.cols() || original.rows() == 0) {
    fail(ErrorCode::shape_mismatch, "contrastive inputs must both be n x d with n >= 1, got ", original.rows(), "x",
         original.cols(), " and ", paired.rows(), "x", paired.cols());
  }
  const auto n = original.rows();
  ContrastiveLoss<T> out;
  out.logits = original * paired.transpose();
  Matrix<T> d_rows(n, n);
  Matrix<T> d_cols(n, n);
  T row_total = 0;
  T col_total = 0;
  for (Eigen::Index i = 0; i < n; ++i) row_total += loss_detail::cross_entropy(out.logits.row(i), i, d_rows.row(i));
  for (Eigen::Index j = 0; j < n; ++j) col_total += loss_detail::cross_entropy(out.logits.col(j), j, d_cols.col(j));
  const T nn = static_cast<T>(n);
  out.value = (row_total / nn + col_total / nn) / static_cast<T>(2);
  const Matrix<T> d_q = (d_rows + d_cols) / (static_cast<T>(2) * nn);
  out.d_original = d_q * paired;
  out.d_paired = d_q.transpose() * original;
  return out;
}

struct LossBreakdown {
  double l_task = 0;
  double l_contrastive = 0;
  double w_contrastive = 0;
  double l_total = 0;
  bool contrastive_applied = false;
};

// L_total = L_task + w * L_contrastive. When the contrastive term is gated
// off, it is recorded as 0 and L_total is L_task.
inline LossBreakdown total_loss(double l_task, double l_contrastive, double w, bool apply_contrastive) {
  if (!(w >= 0)) fail(ErrorCode::invalid_config, "w_contrastive must be >= 0, got ", w);
  LossBreakdown b;
  b.l_task = l_task;
  b.w_contrastive = w;
  b.contrastive_applied = apply_contrastive;
  if (apply_contrastive) {
    b.l_contrastive = l_contrastive;
    b.l_total = l_task + w * l_contrastive;
  } else {
    b.l_contrastive = 0;
    b.l_total = l_task;
  }
  return b;
}

}  // namespace mucot
