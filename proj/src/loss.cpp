#include "mtslstm/loss.hpp"

namespace mts {

std::vector<LossPair> make_loss_pairs(const std::vector<SequenceEntry>& seq) {
  std::vector<LossPair> pairs;
  for (std::size_t i = 1; i < seq.size(); ++i) {
    LossPair p;
    p.coarse = static_cast<int>(i - 1);
    p.fine = static_cast<int>(i);
    if (seq[i - 1].scale.step_hours % seq[i].scale.step_hours != 0)
      throw AlignmentError("paired timescales must have divisible steps");
    p.ratio = seq[i - 1].scale.step_hours / seq[i].scale.step_hours;
    // only coarse steps whose full block of fine steps was predicted
    p.n_coarse_steps =
        std::min(seq[i - 1].predict_window, seq[i].predict_window / p.ratio);
    if (p.n_coarse_steps > 0) pairs.push_back(p);
  }
  return pairs;
}

void LossBatch::validate() const {
  if (pred.empty()) throw ShapeError("empty loss batch");
  if (pred.size() != target.size() || pred.size() != sigma_b.size())
    throw ShapeError("loss batch arrays disagree on sample count");
  for (std::size_t s = 0; s < pred.size(); ++s) {
    if (pred[s].size() != scales.size() || target[s].size() != scales.size())
      throw ShapeError("loss sample is missing a timescale");
    for (std::size_t i = 0; i < scales.size(); ++i) {
      if (pred[s][i].size() != scales[i].predict_window ||
          target[s][i].size() != scales[i].predict_window)
        throw ShapeError("loss vectors do not match the predict window");
    }
  }
  for (const auto& p : pairs) {
    if (p.coarse < 0 || p.fine >= static_cast<int>(scales.size()) ||
        p.ratio < 1 || p.n_coarse_steps < 1)
      throw ShapeError("bad loss pair");
    if (p.n_coarse_steps > scales[p.coarse].predict_window ||
        p.n_coarse_steps * p.ratio > scales[p.fine].predict_window)
      throw ShapeError("loss pair exceeds a predict window");
  }
}

LossNorms loss_norms(const LossBatch& batch) {
  batch.validate();
  LossNorms norms;
  norms.unmasked_per_scale.assign(batch.scales.size(), 0);
  for (std::size_t i = 0; i < batch.scales.size(); ++i)
    for (std::size_t s = 0; s < batch.target.size(); ++s)
      for (Eigen::Index t = 0; t < batch.target[s][i].size(); ++t)
        if (!is_masked(batch.target[s][i][t])) ++norms.unmasked_per_scale[i];
  for (const auto& p : batch.pairs)
    norms.terms_per_pair.push_back(
        static_cast<std::int64_t>(batch.pred.size()) * p.n_coarse_steps);
  return norms;
}

LossResult nse_reg_loss_normed(const LossBatch& batch, double epsilon,
                               double reg_weight, const LossNorms& norms,
                               bool allow_empty) {
  if (!(epsilon > 0)) throw ShapeError("epsilon must be positive");
  batch.validate();
  if (norms.unmasked_per_scale.size() != batch.scales.size() ||
      norms.terms_per_pair.size() != batch.pairs.size())
    throw ShapeError("loss normalizers do not match the batch layout");
  const std::size_t n_samples = batch.pred.size();
  const std::size_t n_scales = batch.scales.size();

  LossResult res;
  res.d_pred.resize(n_samples);
  for (std::size_t s = 0; s < n_samples; ++s) {
    res.d_pred[s].resize(n_scales);
    for (std::size_t i = 0; i < n_scales; ++i)
      res.d_pred[s][i] = Vector::Zero(batch.pred[s][i].size());
  }

  // accuracy term: per-timescale mean over unmasked steps of
  // (pred - target)^2 / (sigma_b + eps)^2, then mean over timescales
  double total = 0.0;
  std::int64_t total_unmasked = 0;
  for (std::size_t i = 0; i < n_scales; ++i) {
    const std::int64_t count = norms.unmasked_per_scale[i];
    total_unmasked += count;
    if (count == 0) continue;
    const double inv = 1.0 / (static_cast<double>(count) * n_scales);
    double sum = 0.0;
    for (std::size_t s = 0; s < n_samples; ++s) {
      const double w = 1.0 / ((batch.sigma_b[s] + epsilon) *
                              (batch.sigma_b[s] + epsilon));
      const Vector& p = batch.pred[s][i];
      const Vector& y = batch.target[s][i];
      for (Eigen::Index t = 0; t < p.size(); ++t) {
        if (is_masked(y[t])) continue;
        sum += w * (p[t] - y[t]) * (p[t] - y[t]);
        res.d_pred[s][i][t] += 2.0 * inv * w * (p[t] - y[t]);
      }
    }
    total += sum * inv;
  }
  if (total_unmasked == 0 && !allow_empty)
    throw ShapeError("loss undefined: every target step in the batch is "
                     "masked");

  // consistency term: per pair, mean over (sample, paired coarse step) of
  // (coarse - mean of its fine block)^2; masks never apply here
  if (reg_weight != 0.0) {
    for (std::size_t pi = 0; pi < batch.pairs.size(); ++pi) {
      const LossPair& pair = batch.pairs[pi];
      const std::int64_t n_terms = norms.terms_per_pair[pi];
      if (n_terms == 0) continue;
      double sum = 0.0;
      for (std::size_t s = 0; s < n_samples; ++s) {
        const Vector& pc = batch.pred[s][pair.coarse];
        const Vector& pf = batch.pred[s][pair.fine];
        const Eigen::Index c0 = pc.size() - pair.n_coarse_steps;
        const Eigen::Index f0 =
            pf.size() -
            static_cast<Eigen::Index>(pair.n_coarse_steps) * pair.ratio;
        for (int k = 0; k < pair.n_coarse_steps; ++k) {
          const double fine_mean =
              pf.segment(f0 + static_cast<Eigen::Index>(k) * pair.ratio,
                         pair.ratio)
                  .mean();
          const double diff = pc[c0 + k] - fine_mean;
          sum += diff * diff;
          const double g =
              reg_weight * 2.0 * diff / static_cast<double>(n_terms);
          res.d_pred[s][pair.coarse][c0 + k] += g;
          res.d_pred[s][pair.fine]
              .segment(f0 + static_cast<Eigen::Index>(k) * pair.ratio,
                       pair.ratio)
              .array() -= g / pair.ratio;
        }
      }
      total += reg_weight * sum / static_cast<double>(n_terms);
    }
  }

  res.value = total;
  return res;
}

LossResult nse_reg_loss(const LossBatch& batch, double epsilon,
                        double reg_weight) {
  return nse_reg_loss_normed(batch, epsilon, reg_weight, loss_norms(batch));
}

LossResult nse_loss(const LossBatch& batch, double epsilon) {
  return nse_reg_loss(batch, epsilon, 0.0);
}

}  // namespace mts
