#pragma once

// Multi-pair contrastive objective over a batch of aligned embeddings.
// Logits for a modality pair (Q, K) are E_Q . E_K^T . exp(tau) with a shared
// learnable scale tau; the loss is the mean of diagonal cross-entropies taken
// along both axes of each pair, averaged over the pairs in play.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "muser/autodiff.hpp"
#include "muser/common.hpp"
#include "muser/matrix.hpp"

namespace muser {

namespace detail {

inline void check_embed_pair(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows != b.rows || a.cols != b.cols)
    throw Error(std::string(what) + ": embedding shapes " + shape_str(a) + " and " +
                shape_str(b) + " differ");
  if (a.rows == 0) throw Error(std::string(what) + ": empty batch");
}

}  // namespace detail

/// Tape version used in training. `es` absent means audio-text only: the
/// average runs over (AT, TA) instead of (AT, TA, ST, TS).
inline ad::Var contrastive_loss(ad::GradTape& tape, ad::Var ea, ad::Var et,
                                const std::optional<ad::Var>& es, ad::Var tau) {
  detail::check_embed_pair(tape.value(ea), tape.value(et), "contrastive_loss");
  ad::Var scale = tape.exp_elem(tau);
  ad::Var logits_at = tape.mul_scalar(tape.matmul_nt(ea, et), scale);
  ad::Var l_at = tape.cross_entropy_diag(logits_at, Axis::kRows);
  ad::Var l_ta = tape.cross_entropy_diag(logits_at, Axis::kCols);
  ad::Var sum = tape.add(l_at, l_ta);
  double denom = 2.0;
  if (es.has_value()) {
    detail::check_embed_pair(tape.value(*es), tape.value(et), "contrastive_loss");
    ad::Var logits_st = tape.mul_scalar(tape.matmul_nt(*es, et), scale);
    ad::Var l_st = tape.cross_entropy_diag(logits_st, Axis::kRows);
    ad::Var l_ts = tape.cross_entropy_diag(logits_st, Axis::kCols);
    sum = tape.add(sum, tape.add(l_st, l_ts));
    denom = 4.0;
  }
  return tape.scale(sum, 1.0 / denom);
}

/// Per-direction losses for logging and tests. `l_st`/`l_ts` are zero when
/// the spectrum branch is off.
struct ContrastiveParts {
  double l_at = 0.0, l_ta = 0.0;
  double l_st = 0.0, l_ts = 0.0;
  double total = 0.0;
};

/// Plain-value twin of contrastive_loss; bit-identical to the tape forward.
inline ContrastiveParts contrastive_loss_value(const Matrix& ea, const Matrix& et,
                                               const Matrix* es, double tau) {
  detail::check_embed_pair(ea, et, "contrastive_loss_value");
  const double scale = std::exp(tau);
  ContrastiveParts parts;
  Matrix logits_at = muser::scale(matmul_nt(ea, et), scale);
  parts.l_at = cross_entropy_diag(logits_at, Axis::kRows);
  parts.l_ta = cross_entropy_diag(logits_at, Axis::kCols);
  if (es != nullptr) {
    detail::check_embed_pair(*es, et, "contrastive_loss_value");
    Matrix logits_st = muser::scale(matmul_nt(*es, et), scale);
    parts.l_st = cross_entropy_diag(logits_st, Axis::kRows);
    parts.l_ts = cross_entropy_diag(logits_st, Axis::kCols);
    parts.total = ((parts.l_at + parts.l_ta) + (parts.l_st + parts.l_ts)) * 0.25;
  } else {
    parts.total = (parts.l_at + parts.l_ta) * 0.5;
  }
  return parts;
}

/// Scaled similarity matrix for one modality pair: eq . ek^T . exp(tau).
inline Matrix logits(const Matrix& eq, const Matrix& ek, double tau) {
  detail::check_embed_pair(eq, ek, "logits");
  Matrix out = muser::scale(matmul_nt(eq, ek), std::exp(tau));
  ensure_finite(out, "logits");
  return out;
}

/// Diagonal cross-entropy along both axes of a square logit matrix.
inline std::pair<double, double> pair_loss(const Matrix& lm) {
  return {cross_entropy_diag(lm, Axis::kRows), cross_entropy_diag(lm, Axis::kCols)};
}

/// Scalar training objective; pass es = nullptr for the audio-text-only mode.
inline double muser_loss(const Matrix& ea, const Matrix& et, const Matrix* es, double tau) {
  return contrastive_loss_value(ea, et, es, tau).total;
}

/// Diagnostic variant of the pairwise objective in which the positive term is
/// excluded from the denominator and the similarity is divided by tau:
///   -(1/N) sum_i ln( exp(s_ii / tau) / sum_{j != i} exp(s_ij / tau) )
/// Needs N >= 2 and tau != 0. With orthonormal rows at N = 2 and tau = 1 the
/// value is exactly -1; with all-equal similarities it is ln(N - 1). Never
/// used by training; kept as an analysis tool.
inline double excluded_positive_loss(const Matrix& sims, double tau) {
  if (sims.rows != sims.cols) throw Error("excluded_positive_loss: similarity matrix must be square");
  if (sims.rows < 2) throw Error("excluded_positive_loss: need at least 2 rows");
  if (tau == 0.0) throw NumericError("excluded_positive_loss: tau must be nonzero");
  const std::size_t n = sims.rows;
  std::vector<double> per_row(n);
  for (std::size_t i = 0; i < n; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) m = std::max(m, sims(i, j) / tau);
    std::vector<double> exps;
    exps.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) exps.push_back(std::exp(sims(i, j) / tau - m));
    const double log_denom = m + std::log(detail::ordered_sum(exps));
    per_row[i] = -(sims(i, i) / tau - log_denom);
  }
  const double total = detail::ordered_sum(per_row) / static_cast<double>(n);
  if (!std::isfinite(total)) throw NumericError("excluded_positive_loss: non-finite result");
  return total;
}

inline double excluded_positive_loss(const Matrix& eq, const Matrix& ek, double tau) {
  detail::check_embed_pair(eq, ek, "excluded_positive_loss");
  return excluded_positive_loss(matmul_nt(eq, ek), tau);
}

}  // namespace muser
