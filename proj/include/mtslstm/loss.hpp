#pragma once

#include <vector>

#include "mtslstm/timeseries.hpp"

namespace mts {

// Pairing between a timescale and the next-finer one for the consistency
// penalty. Both windows end at the same instant, so the last
// `n_coarse_steps` coarse predictions line up with the last
// `n_coarse_steps * ratio` fine predictions.
struct LossPair {
  int coarse = 0;
  int fine = 0;
  int ratio = 1;
  int n_coarse_steps = 0;
};

struct LossBatch {
  std::vector<SequenceEntry> scales;  // coarsest first
  std::vector<LossPair> pairs;
  // per sample, per timescale; targets may contain NaN (masked)
  std::vector<std::vector<Vector>> pred;
  std::vector<std::vector<Vector>> target;
  std::vector<double> sigma_b;  // per sample, same units as pred/target

  void validate() const;
};

// Derives the adjacent-pair list from a sequence spec.
std::vector<LossPair> make_loss_pairs(const std::vector<SequenceEntry>& seq);

struct LossResult {
  double value = 0.0;
  std::vector<std::vector<Vector>> d_pred;  // same layout as batch.pred
};

// Denominators of the per-timescale means and the consistency means. Shards
// of one mini-batch share the full batch's normalizers so their partial
// losses and gradients sum exactly to the whole-batch result.
struct LossNorms {
  std::vector<std::int64_t> unmasked_per_scale;
  std::vector<std::int64_t> terms_per_pair;
};

LossNorms loss_norms(const LossBatch& batch);

// Squared-error term normalized by (sigma_b + eps)^2, averaged per timescale
// over unmasked steps and then over timescales, plus `reg_weight` times the
// mean squared difference between each coarse prediction and the mean of its
// fine predictions (predictions only; observations never enter the penalty).
LossResult nse_reg_loss(const LossBatch& batch, double epsilon,
                        double reg_weight);

// The unregularized variant.
LossResult nse_loss(const LossBatch& batch, double epsilon);

// Partial loss with caller-supplied normalizers; `allow_empty` skips the
// all-masked check (a shard may be empty even when the batch is not).
LossResult nse_reg_loss_normed(const LossBatch& batch, double epsilon,
                               double reg_weight, const LossNorms& norms,
                               bool allow_empty = false);

}  // namespace mts
