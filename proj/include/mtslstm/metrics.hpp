#pragma once

#include <array>
#include <string>
#include <vector>

#include "mtslstm/mts_model.hpp"
#include "mtslstm/timeseries.hpp"

namespace mts {

// Observed/simulated hydrograph at one timescale, same span, mm/h.
// NaN in `obs` masks the step out of every metric.
struct HydrographPair {
  Vector obs;
  Vector sim;
};

// All metrics return NaN when undefined (too few unmasked steps, constant
// observations, empty exceedance band, ...). Undefined values are emitted as
// empty CSV cells, never as zeros.

double nse(const HydrographPair& p);
double mse(const HydrographPair& p);
double rmse(const HydrographPair& p);
double pearson_r(const HydrographPair& p);
double alpha_nse(const HydrographPair& p);  // sigma_sim / sigma_obs
double beta_nse(const HydrographPair& p);   // (mu_sim - mu_obs) / sigma_obs
double kge(const HydrographPair& p);

// Flow-duration-curve biases, in percent. Quantiles everywhere in this
// module use linear interpolation between order statistics.
double fhv(const HydrographPair& p, double band = 0.02);
double flv(const HydrographPair& p, double band = 0.30);
double fms(const HydrographPair& p, double lower = 0.20, double upper = 0.80);

// Flows are clamped to this floor before any log transform.
inline constexpr double kLogFloor = 1e-6;

struct PeakTimingResult {
  double mean_abs_lag = 0.0;  // in steps
  int n_peaks = 0;
};

// Observed peaks: strict local maxima (plateaus count once, at their first
// index), pruned by topographic prominence < std(obs), then thinned by
// removing the smallest remaining peak until all peaks are >= min_distance
// apart. Each surviving peak is matched against the largest simulated value
// within +/- window_steps. NaN mean_abs_lag when no peak survives.
PeakTimingResult peak_timing(const HydrographPair& p, int window_steps,
                             int min_distance = 100);

// Search window convention: one day for sub-daily data, three steps at daily.
int peak_window_for(Timescale scale);

struct MetricReport {
  double nse, mse, rmse, kge, pearson_r, alpha_nse, beta_nse;
  double fhv, flv, fms;
  double peak_timing;
};

MetricReport metric_report(const HydrographPair& p, Timescale scale);

extern const std::array<std::string, 11> kMetricNames;
std::array<double, 11> metric_values(const MetricReport& r);

struct SignatureSet {
  double baseflow_index;
  double hfd_mean;
  double high_q_dur, high_q_freq;
  double low_q_dur, low_q_freq;
  double q5, q95, q_mean;
  double runoff_ratio;
  double slope_fdc;
  double stream_elas;
  double zero_q_freq;
};

extern const std::array<std::string, 13> kSignatureNames;
std::array<double, 13> signature_values(const SignatureSet& s);

// Hydrograph statistics of a single flow series. `precip` must share scale
// and span with `flow`; it feeds the runoff ratio and stream elasticity.
// Year-based signatures need at least one full hydrological year (Oct-Sep)
// and come back NaN otherwise.
SignatureSet signatures(const RegularSeries& flow, const RegularSeries& precip);

// Pearson correlation per signature across basins, dropping basins where
// either side is undefined; NaN with fewer than 3 defined pairs.
std::array<double, 13> signature_correlation(
    const std::vector<SignatureSet>& observed,
    const std::vector<SignatureSet>& simulated);

// Root mean squared deviation between coarse predictions and fine
// predictions aggregated to the coarse scale, converted to mm/day.
double consistency_rmsd(const RegularSeries& coarse_pred,
                        const RegularSeries& fine_pred);

// Same deviation over the overlapping span of two stitched prediction
// series, skipping coarse steps whose block has any uncovered (NaN) value.
double consistency_rmsd_masked(const RegularSeries& coarse_pred,
                               const RegularSeries& fine_pred);

// Elementwise mean of prediction bundles; metrics are then computed on the
// averaged hydrograph, not averaged over members.
PredictionBundle ensemble_mean(const std::vector<PredictionBundle>& bundles);

// Linear-interpolation quantile (numpy default convention) of the given
// values; ignores NaN. NaN on empty input.
double quantile(std::vector<double> values, double q);

double nan_median(std::vector<double> values);

}  // namespace mts
