#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mtslstm/loss.hpp"
#include "mtslstm/mts_model.hpp"
#include "mtslstm/timeseries.hpp"

namespace mts {

struct LrPoint {
  int start_epoch = 1;
  double rate = 0.0;
};

// Rate of the last schedule entry with start_epoch <= epoch.
double lr_at(const std::vector<LrPoint>& schedule, int epoch);

// Which dataset columns feed a branch: its own scale's forcings plus,
// optionally, features broadcast from a coarser scale.
struct BranchColumns {
  std::vector<int> own;
  int coarse_from_step_hours = 0;  // 0 = no broadcast features
  std::vector<int> coarse;
};

struct TrainSetup {
  MtsConfig model;  // input_sizes include broadcast features + static attrs
  std::vector<BranchColumns> columns;

  void validate(const BasinDataset& sample) const;
};

struct TrainPeriods {
  HourStamp train_start = 0, train_end = 0;
  HourStamp val_start = 0, val_end = 0;
  HourStamp test_start = 0, test_end = 0;

  void validate() const;
};

// First ~60% train, next ~20% validation, rest test, snapped to whole days.
TrainPeriods default_periods(HourStamp data_start, HourStamp data_end);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 256;
  std::vector<LrPoint> lr_schedule = {{1, 5e-4}, {10, 1e-4}, {25, 5e-5}};
  std::uint64_t seed = 0;
  double clip_norm = 1.0;
  bool regularization = true;
  double reg_weight = 1.0;
  double epsilon = 0.1;  // in standardized discharge units
  TrainPeriods periods;
  int jobs = 1;
  bool log_validation = true;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double lr = 0.0;
  std::vector<double> val_median_nse;  // per timescale; empty when disabled
};

struct TrainedModel {
  MtsModelParams params;
  StandardizationStats stats;
  std::vector<EpochLog> log;
};

// Per-basin matrices ready for row slicing: standardized forcings (with any
// broadcast coarse features) plus standardized static attributes appended to
// every step, and standardized discharge targets.
struct PreparedBasin {
  std::string id;
  double sigma_std = 1.0;  // sigma_b / global q_std
  std::vector<Matrix> inputs;     // per branch: steps x input_size
  std::vector<Vector> discharge;  // per branch scale, standardized
  std::vector<HourStamp> start;   // per branch block start
};

PreparedBasin prepare_basin(const BasinDataset& raw, const TrainSetup& setup,
                            const StandardizationStats& stats);

// Anchors stepping through [period_start, period_end] at the coarsest
// timescale, one per coarse step, such that every branch's look-back stays
// inside the data and every target window stays inside the period.
std::vector<HourStamp> valid_anchors(const BasinDataset& ds,
                                     const TrainSetup& setup,
                                     HourStamp period_start,
                                     HourStamp period_end);

// Scales all gradients by clip_norm/norm when the global norm exceeds
// clip_norm; returns the pre-clip norm.
double clip_gradients(std::vector<TensorRef>& grads, double clip_norm);

// Mini-batch SGD with Adam (beta1 0.9, beta2 0.999, eps 1e-8), global-norm
// gradient clipping, and the epoch-indexed learning-rate schedule. Batches
// are sharded into fixed-width column blocks whose gradients are reduced in
// shard order, so results do not depend on the number of worker threads.
// Throws DivergenceError when the loss stops being finite.
TrainedModel train_model(const TrainSetup& setup, const TrainConfig& config,
                         const std::vector<BasinDataset>& fleet);

// Stitched prediction series over [start, end): per timescale, each anchor
// contributes the earliest min(predict_window, coarse_step/step) steps of its
// window; uncovered steps stay NaN. Values in mm/h.
struct BasinPredictions {
  std::string basin;
  std::vector<RegularSeries> per_scale;
};

BasinPredictions predict_period(const MtsModelParams& params,
                                const TrainSetup& setup,
                                const StandardizationStats& stats,
                                const BasinDataset& raw, HourStamp start,
                                HourStamp end);

// Median per-timescale NSE across basins over a period (the validation and
// selection metric).
std::vector<double> median_nse(const MtsModelParams& params,
                               const TrainSetup& setup,
                               const StandardizationStats& stats,
                               const std::vector<BasinDataset>& fleet,
                               HourStamp start, HourStamp end, int jobs);

// Two-stage hyperparameter search. Stage 1 sweeps architecture axes at the
// base schedule/batch size; stage 2 takes the stage-1 winner and sweeps
// schedule x batch size. Cells are scored by the mean over seeds of the
// timescale-averaged median validation NSE; diverged cells sink to the
// bottom. Ties break toward smaller hidden size, then lower dropout.
struct GridSpec {
  std::vector<int> regularization;  // 0/1 axis
  std::vector<int> hidden_size;
  std::vector<int> fine_seq_len;
  std::vector<double> dropout;
  std::vector<std::vector<LrPoint>> lr_schedules;
  std::vector<int> batch_sizes;
  int seeds = 3;

  void validate() const;
};

struct GridCell {
  int stage = 1;
  bool regularization = true;
  int hidden_size = 0;
  int fine_seq_len = 0;
  double dropout = 0.0;
  std::vector<LrPoint> lr_schedule;
  int batch_size = 0;
  double score = 0.0;  // NaN when diverged
  bool diverged = false;
};

std::vector<GridCell> grid_search(const TrainSetup& base_setup,
                                  const TrainConfig& base_config,
                                  const GridSpec& grid,
                                  const std::vector<BasinDataset>& fleet);

// n independent runs seeded base_seed .. base_seed+n-1.
std::vector<TrainedModel> train_ensemble(const TrainSetup& setup,
                                         const TrainConfig& config, int n,
                                         std::uint64_t base_seed,
                                         const std::vector<BasinDataset>& fleet);

}  // namespace mts
