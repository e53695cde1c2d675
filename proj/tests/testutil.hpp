#pragma once

#include <functional>
#include <vector>

#include "mtslstm/common.hpp"
#include "mtslstm/mts_model.hpp"

namespace mts::testutil {

// Central finite differences against an analytic gradient, the oracle used
// throughout the gradient tests: perturbs every entry of every tensor by
// +/- step and compares (f(x+h) - f(x-h)) / 2h with the analytic value at
// relative tolerance |a - n| / max(1, |a|).
struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst;
};

inline GradCheckReport check_gradients(
    std::vector<TensorRef> params, const std::vector<TensorRef>& analytic,
    const std::function<double()>& eval, double step = 1e-5) {
  GradCheckReport report;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (Eigen::Index k = 0; k < params[i].size; ++k) {
      double& x = params[i].data[k];
      const double saved = x;
      x = saved + step;
      const double fp = eval();
      x = saved - step;
      const double fm = eval();
      x = saved;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[i].data[k];
      const double rel =
          std::abs(a - numeric) / std::max(1.0, std::abs(a));
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = params[i].name + "[" + std::to_string(k) + "]";
      }
    }
  }
  return report;
}

inline Matrix random_matrix(int rows, int cols, SplitMix64& rng, double lo,
                            double hi) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < m.size(); ++j)
    m.data()[j] = rng.uniform(lo, hi);
  return m;
}

// exact (no-tolerance) equality, the check behind the bit-reproducibility
// contracts
inline bool same_bits(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

inline bool same_bits(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace mts::testutil
