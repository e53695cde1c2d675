#include "mtslstm/timeseries.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace mts {

std::string scale_label(Timescale scale) {
  return std::to_string(scale.step_hours) + "h";
}

Timescale parse_scale_label(const std::string& label) {
  if (label.size() < 2 || label.back() != 'h')
    throw ConfigError("bad timescale label: " + label);
  int hours = 0;
  for (std::size_t i = 0; i + 1 < label.size(); ++i) {
    char c = label[i];
    if (c < '0' || c > '9') throw ConfigError("bad timescale label: " + label);
    hours = hours * 10 + (c - '0');
  }
  if (hours < 1) throw ConfigError("bad timescale label: " + label);
  return {hours};
}

bool divides(Timescale fine, Timescale coarse) {
  return coarse.step_hours % fine.step_hours == 0;
}

int split_index(const SequenceEntry& coarse, const SequenceEntry& fine) {
  const std::int64_t span_c =
      static_cast<std::int64_t>(coarse.seq_len) * coarse.scale.step_hours;
  const std::int64_t span_f =
      static_cast<std::int64_t>(fine.seq_len) * fine.scale.step_hours;
  const std::int64_t num = span_c - span_f;
  if (num < 0)
    throw AlignmentError("fine window is longer than the coarse window");
  if (num % coarse.scale.step_hours != 0) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f",
                  static_cast<double>(num) / coarse.scale.step_hours);
    throw AlignmentError(
        "timescale windows do not split at a shared step boundary: split "
        "index would be " +
        std::string(buf));
  }
  const std::int64_t idx = num / coarse.scale.step_hours;
  if (idx >= coarse.seq_len)
    throw AlignmentError("split index falls outside the coarse window");
  return static_cast<int>(idx);
}

void SequenceSpec::validate() const {
  if (entries.empty()) throw ConfigError("sequence spec has no timescales");
  for (const auto& e : entries) {
    if (e.scale.step_hours < 1)
      throw ConfigError("timescale step must be >= 1 hour");
    if (e.seq_len < 1) throw ConfigError("sequence length must be positive");
    if (e.predict_window < 1 || e.predict_window > e.seq_len)
      throw ConfigError("predict window must be in [1, seq_len]");
  }
  for (std::size_t i = 1; i < entries.size(); ++i) {
    const auto& c = entries[i - 1];
    const auto& f = entries[i];
    if (f.scale.step_hours >= c.scale.step_hours)
      throw ConfigError("timescales must be ordered coarsest to finest");
    if (!divides(f.scale, c.scale))
      throw ConfigError("adjacent timescales must have divisible steps");
    split_index(c, f);  // throws AlignmentError when the windows misalign
  }
}

int SequenceSpec::lookback_hours() const {
  int lb = 0;
  for (const auto& e : entries)
    lb = std::max(lb, e.seq_len * e.scale.step_hours);
  return lb;
}

RegularSeries aggregate(const RegularSeries& series, Timescale target) {
  const int in_step = series.scale.step_hours;
  if (target.step_hours % in_step != 0)
    throw AlignmentError("aggregation target is not a multiple of the source "
                         "step");
  const int ratio = target.step_hours / in_step;
  if (series.start % target.step_hours != 0)
    throw AlignmentError("series start is not aligned to the target scale");
  if (series.values.size() % ratio != 0)
    throw AlignmentError("series length does not cover whole target steps");
  const Eigen::Index n_out = series.values.size() / ratio;
  RegularSeries out;
  out.start = series.start;
  out.scale = target;
  out.values.resize(n_out);
  for (Eigen::Index i = 0; i < n_out; ++i) {
    out.values[i] = series.values.segment(i * ratio, ratio).mean();
  }
  return out;
}

RegularSeries broadcast_coarse_features(const RegularSeries& coarse,
                                        Timescale fine_scale) {
  if (coarse.scale.step_hours % fine_scale.step_hours != 0 ||
      coarse.scale.step_hours == fine_scale.step_hours)
    throw AlignmentError("broadcast requires a strictly coarser, divisible "
                         "source scale");
  const int ratio = coarse.scale.step_hours / fine_scale.step_hours;
  RegularSeries out;
  out.start = coarse.start;
  out.scale = fine_scale;
  out.values.resize(coarse.values.size() * ratio);
  for (Eigen::Index i = 0; i < coarse.values.size(); ++i)
    out.values.segment(i * ratio, ratio).setConstant(coarse.values[i]);
  return out;
}

int ScaleBlock::row_at(HourStamp t) const {
  const std::int64_t off = t - start;
  if (off % scale.step_hours != 0)
    throw AlignmentError("timestamp " + format_hour_utc(t) +
                         " is off the " + scale_label(scale) + " grid");
  return static_cast<int>(off / scale.step_hours);
}

const ScaleBlock& BasinDataset::block(Timescale scale) const {
  for (const auto& b : scales)
    if (b.scale == scale) return b;
  throw ConfigError("basin " + id + " has no " + scale_label(scale) + " data");
}

ScaleBlock& BasinDataset::block(Timescale scale) {
  for (auto& b : scales)
    if (b.scale == scale) return b;
  throw ConfigError("basin " + id + " has no " + scale_label(scale) + " data");
}

bool BasinDataset::has_scale(Timescale scale) const {
  for (const auto& b : scales)
    if (b.scale == scale) return true;
  return false;
}

Sample extract_sample(const BasinDataset& dataset, const SequenceSpec& spec,
                      HourStamp anchor) {
  spec.validate();
  const int coarse_step = spec.entries.front().scale.step_hours;
  if (anchor % coarse_step != 0)
    throw AlignmentError("anchor " + format_hour_utc(anchor) +
                         " is not a coarsest-scale boundary");
  Sample sample;
  sample.anchor = anchor;
  sample.per_scale.reserve(spec.entries.size());
  const Eigen::Index n_attrs = dataset.static_attrs.size();
  for (const auto& entry : spec.entries) {
    const ScaleBlock& blk = dataset.block(entry.scale);
    const HourStamp window_start =
        anchor - static_cast<std::int64_t>(entry.seq_len) *
                     entry.scale.step_hours;
    if (window_start < blk.start || anchor > blk.end())
      throw AlignmentError("sample window [" + format_hour_utc(window_start) +
                           ", " + format_hour_utc(anchor) + ") exceeds the " +
                           scale_label(entry.scale) + " data range of basin " +
                           dataset.id);
    const int row0 = blk.row_at(window_start);
    TimescaleSample ts;
    ts.inputs.resize(entry.seq_len, blk.forcings.cols() + n_attrs);
    ts.inputs.leftCols(blk.forcings.cols()) =
        blk.forcings.middleRows(row0, entry.seq_len);
    ts.inputs.rightCols(n_attrs).rowwise() = dataset.static_attrs.transpose();
    ts.target = blk.discharge.segment(row0 + entry.seq_len -
                                          entry.predict_window,
                                      entry.predict_window);
    sample.per_scale.push_back(std::move(ts));
  }
  return sample;
}

namespace {

double floored(double sd) { return sd < kStdFloor ? kStdFloor : sd; }

// mean/std over the rows [r0, r1) of each column, ignoring nothing: forcings
// are gap-free by contract.
FeatureStats column_stats(const std::vector<const Matrix*>& blocks, int r0,
                          int r1) {
  FeatureStats st;
  const Eigen::Index cols = blocks.front()->cols();
  st.mean = Vector::Zero(cols);
  st.std = Vector::Zero(cols);
  std::int64_t n = 0;
  for (const Matrix* m : blocks) {
    st.mean += m->middleRows(r0, r1 - r0).colwise().sum().transpose();
    n += r1 - r0;
  }
  st.mean /= static_cast<double>(n);
  for (const Matrix* m : blocks) {
    st.std += (m->middleRows(r0, r1 - r0).rowwise() - st.mean.transpose())
                  .array()
                  .square()
                  .colwise()
                  .sum()
                  .transpose()
                  .matrix();
  }
  st.std = (st.std / static_cast<double>(n)).cwiseSqrt();
  for (Eigen::Index i = 0; i < st.std.size(); ++i)
    st.std[i] = floored(st.std[i]);
  return st;
}

}  // namespace

double StandardizationStats::sigma_for(const std::string& basin) const {
  auto it = sigma_b.find(basin);
  if (it == sigma_b.end())
    throw ConfigError("no sigma_b recorded for basin " + basin);
  return it->second;
}

StandardizationStats compute_stats(const std::vector<BasinDataset>& fleet,
                                   HourStamp train_start,
                                   HourStamp train_end) {
  if (fleet.empty()) throw ConfigError("empty fleet");
  StandardizationStats stats;

  // forcings: pooled over basins, per timescale
  for (const auto& blk0 : fleet.front().scales) {
    std::vector<const Matrix*> ms;
    int r0 = -1, r1 = -1;
    for (const auto& ds : fleet) {
      const ScaleBlock& blk = ds.block(blk0.scale);
      int a = blk.row_at(train_start - (train_start - blk.start) %
                                           blk.scale.step_hours);
      int b = blk.row_at(train_end - (train_end - blk.start) %
                                         blk.scale.step_hours);
      if (r0 < 0) {
        r0 = a;
        r1 = b;
      } else if (a != r0 || b != r1) {
        throw AlignmentError("fleet basins do not share a time axis");
      }
      ms.push_back(&blk.forcings);
    }
    stats.forcings[blk0.scale.step_hours] = column_stats(ms, r0, r1);
  }

  // static attributes: across basins
  {
    const Eigen::Index n_attrs = fleet.front().static_attrs.size();
    stats.attrs.mean = Vector::Zero(n_attrs);
    stats.attrs.std = Vector::Zero(n_attrs);
    for (const auto& ds : fleet) stats.attrs.mean += ds.static_attrs;
    stats.attrs.mean /= static_cast<double>(fleet.size());
    for (const auto& ds : fleet)
      stats.attrs.std +=
          (ds.static_attrs - stats.attrs.mean).array().square().matrix();
    stats.attrs.std =
        (stats.attrs.std / static_cast<double>(fleet.size())).cwiseSqrt();
    for (Eigen::Index i = 0; i < n_attrs; ++i)
      stats.attrs.std[i] = floored(stats.attrs.std[i]);
  }

  // discharge: per-basin sigma_b and pooled global moments at the finest scale
  int finest = fleet.front().scales.front().scale.step_hours;
  for (const auto& blk : fleet.front().scales)
    finest = std::min(finest, blk.scale.step_hours);
  double gsum = 0, gsq = 0;
  std::int64_t gn = 0;
  for (const auto& ds : fleet) {
    const ScaleBlock& blk = ds.block({finest});
    const int a = blk.row_at(train_start);
    const int b = blk.row_at(train_end);
    double sum = 0, sq = 0;
    std::int64_t n = 0;
    for (int i = a; i < b; ++i) {
      const double v = blk.discharge[i];
      if (is_masked(v)) continue;
      sum += v;
      sq += v * v;
      ++n;
    }
    if (n == 0)
      throw ConfigError("basin " + ds.id +
                        " has no observed discharge in the training period");
    const double mean = sum / n;
    const double var = std::max(0.0, sq / n - mean * mean);
    stats.sigma_b[ds.id] = floored(std::sqrt(var));
    gsum += sum;
    gsq += sq;
    gn += n;
  }
  const double gmean = gsum / gn;
  stats.q_mean = gmean;
  stats.q_std = floored(std::sqrt(std::max(0.0, gsq / gn - gmean * gmean)));
  return stats;
}

BasinDataset standardize_dataset(const BasinDataset& ds,
                                 const StandardizationStats& stats) {
  BasinDataset out = ds;
  out.static_attrs = (ds.static_attrs - stats.attrs.mean)
                         .cwiseQuotient(stats.attrs.std);
  for (auto& blk : out.scales) {
    auto it = stats.forcings.find(blk.scale.step_hours);
    if (it == stats.forcings.end())
      throw ConfigError("no forcing stats for scale " +
                        scale_label(blk.scale));
    blk.forcings =
        (blk.forcings.rowwise() - it->second.mean.transpose()).array().rowwise() /
        it->second.std.transpose().array();
    blk.discharge = standardize_discharge(blk.discharge, stats);
  }
  return out;
}

Vector standardize_discharge(const Vector& q, const StandardizationStats& s) {
  return (q.array() - s.q_mean) / s.q_std;
}

Vector destandardize_discharge(const Vector& q,
                               const StandardizationStats& s) {
  return q.array() * s.q_std + s.q_mean;
}

}  // namespace mts
