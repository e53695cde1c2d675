#pragma once

#include <map>
#include <string>
#include <vector>

#include "mtslstm/common.hpp"
#include "mtslstm/timeutil.hpp"

namespace mts {

// A regular sampling frequency, expressed as hours per step.
struct Timescale {
  int step_hours = 1;

  bool operator==(const Timescale&) const = default;
};

inline Timescale hourly() { return {1}; }
inline Timescale daily() { return {24}; }

// Short label used in directory names and report columns, e.g. "1h", "24h".
std::string scale_label(Timescale scale);
Timescale parse_scale_label(const std::string& label);

// true iff `coarse` covers an integer number of `fine` steps
bool divides(Timescale fine, Timescale coarse);

// A gap-free series of values at one timescale. Value i belongs to the step
// starting at `start + i*step_hours`. Missing observations are stored as NaN;
// only discharge series may contain them.
struct RegularSeries {
  HourStamp start = 0;
  Timescale scale;
  Vector values;

  HourStamp end() const { return start + values.size() * scale.step_hours; }
};

inline bool is_masked(double v) { return !(v == v); }

// One model branch's window geometry.
struct SequenceEntry {
  Timescale scale;
  int seq_len = 0;
  int predict_window = 0;
};

// Per-timescale window list, coarsest first. `validate` enforces strictly
// decreasing step width, predict_window <= seq_len, and the split alignment
// rule for every adjacent pair.
struct SequenceSpec {
  std::vector<SequenceEntry> entries;

  void validate() const;
  int n_scales() const { return static_cast<int>(entries.size()); }
  // longest look-back over all entries, in hours
  int lookback_hours() const;
};

// Index of the coarse step whose state seeds the fine branch: after the
// coarse branch has consumed `i` steps, the remaining span of its window
// equals the fine window. Throws AlignmentError (quoting the fractional
// index) when the two windows do not meet at a shared step boundary.
int split_index(const SequenceEntry& coarse, const SequenceEntry& fine);

// Block-mean aggregation onto a coarser timescale. Any NaN inside a block
// makes the whole output step NaN. Start must sit on a target-scale boundary
// and the length must cover whole target steps.
RegularSeries aggregate(const RegularSeries& series, Timescale target);

// Repeats each coarse value across the finer steps it spans.
RegularSeries broadcast_coarse_features(const RegularSeries& coarse,
                                        Timescale fine_scale);

// Per-basin data at every timescale the model touches.
struct ScaleBlock {
  Timescale scale;
  HourStamp start = 0;
  std::vector<std::string> feature_names;
  Matrix forcings;   // rows = time steps, cols = features; gap-free
  Vector discharge;  // NaN = missing observation

  HourStamp end() const { return start + forcings.rows() * scale.step_hours; }
  int row_at(HourStamp t) const;  // throws AlignmentError if t off-grid
};

struct BasinDataset {
  std::string id;
  std::vector<std::string> attr_names;
  Vector static_attrs;
  std::vector<ScaleBlock> scales;

  const ScaleBlock& block(Timescale scale) const;
  ScaleBlock& block(Timescale scale);
  bool has_scale(Timescale scale) const;
};

// One training/prediction sample: per timescale, an input matrix
// (seq_len x features, static attributes appended to every row) and the last
// predict_window observed discharge values. All windows end at `anchor`.
struct TimescaleSample {
  Matrix inputs;
  Vector target;
};

struct Sample {
  HourStamp anchor = 0;
  std::vector<TimescaleSample> per_scale;
};

Sample extract_sample(const BasinDataset& dataset, const SequenceSpec& spec,
                      HourStamp anchor);

// Training-period moments used for feature/discharge standardization.
// All standard deviations are floored at `kStdFloor` so constant features
// standardize to zero instead of blowing up.
inline constexpr double kStdFloor = 1e-5;

struct FeatureStats {
  Vector mean;
  Vector std;
};

struct StandardizationStats {
  std::map<int, FeatureStats> forcings;  // key = step_hours
  FeatureStats attrs;
  double q_mean = 0.0;  // global discharge moments, mm/h,
  double q_std = 1.0;   // computed at the finest timescale
  std::map<std::string, double> sigma_b;  // per-basin discharge std, mm/h

  double sigma_for(const std::string& basin) const;
};

// Moments over the training period [train_start, train_end) of the fleet.
// sigma_b and the global discharge moments come from the finest timescale.
StandardizationStats compute_stats(const std::vector<BasinDataset>& fleet,
                                   HourStamp train_start, HourStamp train_end);

// (x - mean) / std per feature, applied to forcings and static attributes.
// Discharge is standardized with the global moments. Returns a new dataset.
BasinDataset standardize_dataset(const BasinDataset& ds,
                                 const StandardizationStats& stats);

Vector standardize_discharge(const Vector& q, const StandardizationStats& s);
Vector destandardize_discharge(const Vector& q, const StandardizationStats& s);

}  // namespace mts
