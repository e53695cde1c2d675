#include "mtslstm/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "mtslstm/metrics.hpp"

namespace mts {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Batches are cut into fixed-width column shards. Shard gradients are
// reduced in shard order, so the result is independent of how many worker
// threads picked them up.
constexpr int kShardWidth = 64;
constexpr int kPredictBatch = 256;

}  // namespace

double lr_at(const std::vector<LrPoint>& schedule, int epoch) {
  if (schedule.empty()) throw ConfigError("empty learning-rate schedule");
  if (epoch < 1) throw ConfigError("epochs are 1-based");
  double rate = schedule.front().rate;
  for (const auto& p : schedule) {
    if (p.start_epoch <= epoch) rate = p.rate;
  }
  return rate;
}

void TrainPeriods::validate() const {
  if (!(train_start < train_end && train_end <= val_start &&
        val_start < val_end && val_end <= test_start && test_start < test_end))
    throw ConfigError(
        "periods must be disjoint and ordered train < validation < test");
}

TrainPeriods default_periods(HourStamp data_start, HourStamp data_end) {
  const std::int64_t days = (data_end - data_start) / kHoursPerDay;
  TrainPeriods p;
  p.train_start = data_start;
  p.train_end = data_start + (days * 60 / 100) * kHoursPerDay;
  p.val_start = p.train_end;
  p.val_end = data_start + (days * 80 / 100) * kHoursPerDay;
  p.test_start = p.val_end;
  p.test_end = data_start + days * kHoursPerDay;
  p.validate();
  return p;
}

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1) throw ConfigError("bad epochs/batch size");
  if (lr_schedule.empty()) throw ConfigError("empty learning-rate schedule");
  if (lr_schedule.front().start_epoch != 1)
    throw ConfigError("learning-rate schedule must start at epoch 1");
  for (std::size_t i = 1; i < lr_schedule.size(); ++i)
    if (lr_schedule[i].start_epoch <= lr_schedule[i - 1].start_epoch)
      throw ConfigError("learning-rate epochs must increase strictly");
  if (clip_norm <= 0) throw ConfigError("clip_norm must be positive");
  if (!(epsilon > 0)) throw ConfigError("epsilon must be positive");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  periods.validate();
}

void TrainSetup::validate(const BasinDataset& sample) const {
  model.validate();
  if (columns.size() != static_cast<std::size_t>(model.n_branches()))
    throw ConfigError("column selection must cover every branch");
  const auto n_attrs = sample.static_attrs.size();
  for (int b = 0; b < model.n_branches(); ++b) {
    const auto& blk = sample.block(model.seq.entries[b].scale);
    for (int c : columns[b].own)
      if (c < 0 || c >= blk.forcings.cols())
        throw ConfigError("forcing column index out of range");
    int expected = static_cast<int>(columns[b].own.size() + n_attrs);
    if (columns[b].coarse_from_step_hours > 0) {
      const auto& donor =
          sample.block(Timescale{columns[b].coarse_from_step_hours});
      for (int c : columns[b].coarse)
        if (c < 0 || c >= donor.forcings.cols())
          throw ConfigError("broadcast column index out of range");
      if (donor.scale.step_hours <= model.seq.entries[b].scale.step_hours)
        throw ConfigError("broadcast features must come from a coarser scale");
      expected += static_cast<int>(columns[b].coarse.size());
    }
    if (model.input_sizes[b] != expected)
      throw ConfigError("branch input size does not match its feature list");
  }
}

PreparedBasin prepare_basin(const BasinDataset& raw, const TrainSetup& setup,
                            const StandardizationStats& stats) {
  setup.validate(raw);
  const BasinDataset ds = standardize_dataset(raw, stats);
  PreparedBasin out;
  out.id = ds.id;
  out.sigma_std = stats.sigma_for(ds.id) / stats.q_std;
  const int n = setup.model.n_branches();
  out.inputs.reserve(n);
  for (int b = 0; b < n; ++b) {
    const auto& blk = ds.block(setup.model.seq.entries[b].scale);
    const auto& cols = setup.columns[b];
    const Eigen::Index steps = blk.forcings.rows();
    // feature-per-row layout so one time step is one contiguous column
    Matrix x(setup.model.input_sizes[b], steps);
    Eigen::Index r = 0;
    for (int c : cols.own) x.row(r++) = blk.forcings.col(c).transpose();
    if (cols.coarse_from_step_hours > 0) {
      const auto& donor = ds.block(Timescale{cols.coarse_from_step_hours});
      const int ratio =
          cols.coarse_from_step_hours / blk.scale.step_hours;
      if (blk.start < donor.start ||
          blk.end() > donor.end())
        throw AlignmentError("broadcast donor scale does not cover branch " +
                             std::to_string(b));
      for (int c : cols.coarse) {
        const Eigen::Index d0 = (blk.start - donor.start) /
                                donor.scale.step_hours;
        for (Eigen::Index t = 0; t < steps; ++t)
          x(r, t) = donor.forcings(d0 + (t * blk.scale.step_hours) /
                                            cols.coarse_from_step_hours,
                                   c);
        ++r;
      }
    }
    for (Eigen::Index a = 0; a < ds.static_attrs.size(); ++a)
      x.row(r++).setConstant(ds.static_attrs[a]);
    out.inputs.push_back(std::move(x));
    out.discharge.push_back(blk.discharge);
    out.start.push_back(blk.start);
  }
  return out;
}

std::vector<HourStamp> valid_anchors(const BasinDataset& ds,
                                     const TrainSetup& setup,
                                     HourStamp period_start,
                                     HourStamp period_end) {
  const auto& entries = setup.model.seq.entries;
  const int stride = entries.front().scale.step_hours;
  HourStamp lo = period_start;
  HourStamp hi = period_end;
  for (const auto& e : entries) {
    const auto& blk = ds.block(e.scale);
    lo = std::max<HourStamp>(
        lo, blk.start + static_cast<std::int64_t>(e.seq_len) *
                            e.scale.step_hours);
    lo = std::max<HourStamp>(
        lo, period_start + static_cast<std::int64_t>(e.predict_window) *
                               e.scale.step_hours);
    hi = std::min<HourStamp>(hi, blk.end());
  }
  // snap up to the coarse grid (stamps here are always past the epoch)
  if (lo % stride != 0) lo += stride - lo % stride;
  std::vector<HourStamp> anchors;
  for (HourStamp a = lo; a <= hi; a += stride) anchors.push_back(a);
  return anchors;
}

namespace {

struct SampleRef {
  int basin = 0;
  HourStamp anchor = 0;
};

// Gathers one batch of samples into branch-blocked input/target tensors.
struct AssembledBatch {
  MtsBatchInput input;
  std::vector<std::vector<Vector>> targets;  // [sample][branch]
  std::vector<double> sigma;
};

AssembledBatch assemble(const std::vector<PreparedBasin>& prepared,
                        const TrainSetup& setup,
                        const std::vector<SampleRef>& refs, std::size_t first,
                        std::size_t count) {
  const int n = setup.model.n_branches();
  AssembledBatch out;
  out.input.B = static_cast<int>(count);
  out.input.x.resize(n);
  out.targets.resize(count);
  out.sigma.resize(count);
  for (int b = 0; b < n; ++b) {
    const auto& e = setup.model.seq.entries[b];
    const int T = e.seq_len;
    out.input.x[b].resize(setup.model.input_sizes[b],
                          static_cast<Eigen::Index>(T) * count);
  }
  for (std::size_t j = 0; j < count; ++j) {
    const SampleRef& ref = refs[first + j];
    const PreparedBasin& pb = prepared[ref.basin];
    out.sigma[j] = pb.sigma_std;
    out.targets[j].resize(n);
    for (int b = 0; b < n; ++b) {
      const auto& e = setup.model.seq.entries[b];
      const int T = e.seq_len;
      const auto row_end = (ref.anchor - pb.start[b]) / e.scale.step_hours;
      const auto row0 = row_end - T;
      auto& x = out.input.x[b];
      for (int t = 0; t < T; ++t)
        x.col(static_cast<Eigen::Index>(t) * count + j) =
            pb.inputs[b].col(row0 + t);
      out.targets[j][b] =
          pb.discharge[b].segment(row_end - e.predict_window,
                                  e.predict_window);
    }
  }
  return out;
}

struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  Vector m, v;
  std::int64_t t = 0;

  void step(std::vector<TensorRef>& params, std::vector<TensorRef>& grads,
            double lr) {
    Eigen::Index total = 0;
    for (const auto& p : params) total += p.size;
    if (m.size() == 0) {
      m = Vector::Zero(total);
      v = Vector::Zero(total);
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      for (Eigen::Index k = 0; k < params[i].size; ++k) {
        const double g = grads[i].data[k];
        double& mk = m[off + k];
        double& vk = v[off + k];
        mk = beta1 * mk + (1.0 - beta1) * g;
        vk = beta2 * vk + (1.0 - beta2) * g * g;
        params[i].data[k] -=
            lr * (mk / bc1) / (std::sqrt(vk / bc2) + eps);
      }
      off += params[i].size;
    }
  }
};

struct ShardResult {
  MtsGrads grads;
  double loss = 0.0;
  bool used = false;
};

}  // namespace

double clip_gradients(std::vector<TensorRef>& grads, double clip_norm) {
  double sq = 0;
  for (const auto& g : grads)
    sq += Eigen::Map<const Vector>(g.data, g.size).squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > clip_norm && norm > 0) {
    const double scale = clip_norm / norm;
    for (auto& g : grads) Eigen::Map<Vector>(g.data, g.size) *= scale;
  }
  return norm;
}

TrainedModel train_model(const TrainSetup& setup, const TrainConfig& config,
                         const std::vector<BasinDataset>& fleet) {
  config.validate();
  if (fleet.empty()) throw ConfigError("empty fleet");
  setup.validate(fleet.front());

  TrainedModel result;
  result.stats =
      compute_stats(fleet, config.periods.train_start, config.periods.train_end);

  std::vector<PreparedBasin> prepared;
  prepared.reserve(fleet.size());
  for (const auto& ds : fleet)
    prepared.push_back(prepare_basin(ds, setup, result.stats));

  std::vector<SampleRef> samples;
  for (std::size_t i = 0; i < fleet.size(); ++i) {
    for (HourStamp a : valid_anchors(fleet[i], setup,
                                     config.periods.train_start,
                                     config.periods.train_end)) {
      // no gradient step may consume validation- or test-period targets
      for (const auto& e : setup.model.seq.entries) {
        const HourStamp w0 =
            a - static_cast<std::int64_t>(e.predict_window) *
                    e.scale.step_hours;
        if (w0 < config.periods.train_start || a > config.periods.train_end)
          throw ConfigError("sampler produced a target outside the training "
                            "period");
      }
      samples.push_back({static_cast<int>(i), a});
    }
  }
  if (samples.empty())
    throw ConfigError("training period yields no valid anchors");

  result.params = build_mts(setup.model, config.seed);
  auto param_refs = tensor_refs(result.params);
  Adam adam;

  const auto& entries = setup.model.seq.entries;
  const std::vector<LossPair> pairs = make_loss_pairs(entries);
  const double reg_weight = config.regularization ? config.reg_weight : 0.0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    SplitMix64 shuffle_rng(subseed(config.seed, 0x5e0f, epoch));
    shuffle_rng.shuffle(samples);
    const double lr = lr_at(config.lr_schedule, epoch);

    double epoch_loss = 0.0;
    std::int64_t n_batches = 0;
    for (std::size_t batch0 = 0; batch0 < samples.size();
         batch0 += config.batch_size) {
      const std::size_t bsize =
          std::min<std::size_t>(config.batch_size, samples.size() - batch0);

      // whole-batch loss normalizers, so shard results sum exactly
      LossNorms norms;
      norms.unmasked_per_scale.assign(entries.size(), 0);
      for (std::size_t j = 0; j < bsize; ++j) {
        const SampleRef& ref = samples[batch0 + j];
        const PreparedBasin& pb = prepared[ref.basin];
        for (std::size_t b = 0; b < entries.size(); ++b) {
          const auto& e = entries[b];
          const auto row_end =
              (ref.anchor - pb.start[b]) / e.scale.step_hours;
          const auto tgt = pb.discharge[b].segment(
              row_end - e.predict_window, e.predict_window);
          for (Eigen::Index t = 0; t < tgt.size(); ++t)
            if (!is_masked(tgt[t])) ++norms.unmasked_per_scale[b];
        }
      }
      for (const auto& p : pairs)
        norms.terms_per_pair.push_back(static_cast<std::int64_t>(bsize) *
                                       p.n_coarse_steps);

      const int n_shards =
          static_cast<int>((bsize + kShardWidth - 1) / kShardWidth);
      std::vector<ShardResult> shards(n_shards);
      const int n_threads = std::min(config.jobs, n_shards);
      std::vector<std::exception_ptr> errors(n_threads);
      auto worker = [&](int tid) {
        try {
          for (int s = tid; s < n_shards; s += n_threads) {
            const std::size_t first = batch0 + s * kShardWidth;
            const std::size_t count =
                std::min<std::size_t>(kShardWidth, batch0 + bsize - first);
            AssembledBatch ab =
                assemble(prepared, setup, samples, first, count);
            MtsTape tape;
            MtsBatchOutput fw = forward_batch(
                result.params, setup.model, ab.input, true,
                subseed(config.seed, 0xd0, epoch, batch0 * 131 + s), &tape);
            LossBatch lb;
            lb.scales = entries;
            lb.pairs = pairs;
            lb.sigma_b = ab.sigma;
            lb.target = ab.targets;
            lb.pred.resize(count);
            for (std::size_t j = 0; j < count; ++j) {
              lb.pred[j].resize(entries.size());
              for (std::size_t b = 0; b < entries.size(); ++b)
                lb.pred[j][b] = fw.pred[b].col(static_cast<Eigen::Index>(j));
            }
            LossResult lres =
                nse_reg_loss_normed(lb, config.epsilon, reg_weight, norms,
                                    /*allow_empty=*/true);
            std::vector<Matrix> d_pred(entries.size());
            for (std::size_t b = 0; b < entries.size(); ++b) {
              d_pred[b].resize(entries[b].predict_window, count);
              for (std::size_t j = 0; j < count; ++j)
                d_pred[b].col(static_cast<Eigen::Index>(j)) = lres.d_pred[j][b];
            }
            shards[s].grads =
                backward_batch(result.params, setup.model, tape, d_pred);
            shards[s].loss = lres.value;
            shards[s].used = true;
          }
        } catch (...) {
          errors[tid] = std::current_exception();
        }
      };
      if (n_threads == 1) {
        worker(0);
      } else {
        std::vector<std::thread> pool;
        for (int tid = 0; tid < n_threads; ++tid)
          pool.emplace_back(worker, tid);
        for (auto& th : pool) th.join();
      }
      for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

      double batch_loss = shards[0].loss;
      MtsGrads grads = std::move(shards[0].grads);
      for (int s = 1; s < n_shards; ++s) {
        add_grads(grads, shards[s].grads);
        batch_loss += shards[s].loss;
      }
      if (!std::isfinite(batch_loss))
        throw DivergenceError("non-finite loss in epoch " +
                              std::to_string(epoch));

      auto grad_refs = tensor_refs(grads);
      clip_gradients(grad_refs, config.clip_norm);
      adam.step(param_refs, grad_refs, lr);

      epoch_loss += batch_loss;
      ++n_batches;
    }

    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    log.train_loss = epoch_loss / static_cast<double>(n_batches);
    if (config.log_validation)
      log.val_median_nse =
          median_nse(result.params, setup, result.stats, fleet,
                     config.periods.val_start, config.periods.val_end,
                     config.jobs);
    result.log.push_back(std::move(log));
  }
  return result;
}

BasinPredictions predict_period(const MtsModelParams& params,
                                const TrainSetup& setup,
                                const StandardizationStats& stats,
                                const BasinDataset& raw, HourStamp start,
                                HourStamp end) {
  const PreparedBasin pb = prepare_basin(raw, setup, stats);
  const auto& entries = setup.model.seq.entries;
  const int n = setup.model.n_branches();
  const int stride = entries.front().scale.step_hours;

  BasinPredictions out;
  out.basin = raw.id;
  out.per_scale.resize(n);
  for (int b = 0; b < n; ++b) {
    auto& s = out.per_scale[b];
    s.scale = entries[b].scale;
    s.start = start;
    if (start % s.scale.step_hours != 0 || end % s.scale.step_hours != 0)
      throw AlignmentError("prediction period must sit on every timescale's "
                           "grid");
    s.values = Vector::Constant((end - start) / s.scale.step_hours, kNaN);
  }

  // Earliest anchor with full look-back in the data; latest anchor bounded
  // by the data end and by the last step any branch can contribute.
  HourStamp lo = start;
  HourStamp hi_data = std::numeric_limits<HourStamp>::max();
  HourStamp hi_useful = end;
  for (int b = 0; b < n; ++b) {
    const auto& e = entries[b];
    const auto& blk = raw.block(e.scale);
    lo = std::max<HourStamp>(
        lo, blk.start +
                static_cast<std::int64_t>(e.seq_len) * e.scale.step_hours);
    hi_data = std::min<HourStamp>(hi_data, blk.end());
    hi_useful = std::max<HourStamp>(
        hi_useful, end + static_cast<std::int64_t>(e.predict_window) *
                             e.scale.step_hours);
  }
  const HourStamp hi = std::min(hi_data, hi_useful);
  if (lo % stride != 0) lo += stride - lo % stride;

  std::vector<HourStamp> anchors;
  for (HourStamp a = lo; a <= hi; a += stride) anchors.push_back(a);

  std::vector<SampleRef> refs;
  refs.reserve(anchors.size());
  for (HourStamp a : anchors) refs.push_back({0, a});
  std::vector<PreparedBasin> one{pb};

  for (std::size_t first = 0; first < refs.size(); first += kPredictBatch) {
    const std::size_t count =
        std::min<std::size_t>(kPredictBatch, refs.size() - first);
    AssembledBatch ab = assemble(one, setup, refs, first, count);
    MtsBatchOutput fw =
        forward_batch(params, setup.model, ab.input, false, 0, nullptr);
    for (int b = 0; b < n; ++b) {
      const auto& e = entries[b];
      const int step = e.scale.step_hours;
      // each anchor contributes the earliest steps of its window, enough to
      // tile the anchor stride without overlap
      const int k = std::min(e.predict_window, stride / step);
      for (std::size_t j = 0; j < count; ++j) {
        const HourStamp a = refs[first + j].anchor;
        const HourStamp w0 =
            a - static_cast<std::int64_t>(e.predict_window) * step;
        const Vector col = destandardize_discharge(
            fw.pred[b].col(static_cast<Eigen::Index>(j)), stats);
        for (int i = 0; i < k; ++i) {
          const HourStamp t = w0 + static_cast<std::int64_t>(i) * step;
          if (t < start || t >= end) continue;
          out.per_scale[b].values[(t - start) / step] = col[i];
        }
      }
    }
  }
  return out;
}

std::vector<double> median_nse(const MtsModelParams& params,
                               const TrainSetup& setup,
                               const StandardizationStats& stats,
                               const std::vector<BasinDataset>& fleet,
                               HourStamp start, HourStamp end, int jobs) {
  const int n = setup.model.n_branches();
  std::vector<std::vector<double>> per_scale(n);
  std::vector<std::vector<double>> basin_nse(fleet.size());

  const int n_threads =
      std::max(1, std::min<int>(jobs, static_cast<int>(fleet.size())));
  std::vector<std::exception_ptr> errors(n_threads);
  auto worker = [&](int tid) {
    try {
      for (std::size_t i = tid; i < fleet.size(); i += n_threads) {
        BasinPredictions pred =
            predict_period(params, setup, stats, fleet[i], start, end);
        basin_nse[i].resize(n);
        for (int b = 0; b < n; ++b) {
          const auto& blk = fleet[i].block(setup.model.seq.entries[b].scale);
          const auto i0 = (start - blk.start) / blk.scale.step_hours;
          HydrographPair pair;
          pair.obs = blk.discharge.segment(i0, pred.per_scale[b].values.size());
          pair.sim = pred.per_scale[b].values;
          basin_nse[i][b] = nse(pair);
        }
      }
    } catch (...) {
      errors[tid] = std::current_exception();
    }
  };
  if (n_threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (int tid = 0; tid < n_threads; ++tid) pool.emplace_back(worker, tid);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (const auto& bn : basin_nse)
    for (int b = 0; b < n; ++b) per_scale[b].push_back(bn[b]);
  std::vector<double> medians(n);
  for (int b = 0; b < n; ++b) medians[b] = nan_median(per_scale[b]);
  return medians;
}

void GridSpec::validate() const {
  if (regularization.empty() || hidden_size.empty() || fine_seq_len.empty() ||
      dropout.empty() || lr_schedules.empty() || batch_sizes.empty())
    throw ConfigError("grid axes must be non-empty");
  if (seeds < 1) throw ConfigError("grid needs at least one seed");
}

namespace {

struct CellKey {
  bool diverged;
  double score;
  int hidden;
  double dropout;
};

bool cell_better(const GridCell& a, const GridCell& b) {
  if (a.diverged != b.diverged) return !a.diverged;
  if (a.diverged) return false;
  if (a.score != b.score) return a.score > b.score;
  if (a.hidden_size != b.hidden_size) return a.hidden_size < b.hidden_size;
  return a.dropout < b.dropout;
}

GridCell run_cell(const TrainSetup& base_setup, const TrainConfig& base_config,
                  const std::vector<BasinDataset>& fleet, GridCell cell,
                  int seeds) {
  TrainSetup setup = base_setup;
  for (auto& h : setup.model.hidden_sizes) h = cell.hidden_size;
  setup.model.seq.entries.back().seq_len = cell.fine_seq_len;
  setup.model.dropout = cell.dropout;
  TrainConfig config = base_config;
  config.regularization = cell.regularization;
  config.lr_schedule = cell.lr_schedule;
  config.batch_size = cell.batch_size;
  config.log_validation = false;

  double sum = 0;
  int ok = 0;
  for (int s = 0; s < seeds; ++s) {
    config.seed = subseed(base_config.seed, 0x9d1d, cell.stage,
                          static_cast<std::uint64_t>(s) * 7919 +
                              static_cast<std::uint64_t>(cell.hidden_size));
    try {
      TrainedModel m = train_model(setup, config, fleet);
      const std::vector<double> med =
          median_nse(m.params, setup, m.stats, fleet,
                     config.periods.val_start, config.periods.val_end,
                     config.jobs);
      double mean = 0;
      for (double v : med) mean += v;
      sum += mean / static_cast<double>(med.size());
      ++ok;
    } catch (const DivergenceError&) {
      // diverged seed contributes nothing
    }
  }
  if (ok == 0) {
    cell.diverged = true;
    cell.score = kNaN;
  } else {
    cell.score = sum / ok;
  }
  return cell;
}

}  // namespace

std::vector<GridCell> grid_search(const TrainSetup& base_setup,
                                  const TrainConfig& base_config,
                                  const GridSpec& grid,
                                  const std::vector<BasinDataset>& fleet) {
  grid.validate();
  base_config.validate();

  std::vector<GridCell> cells;
  for (int reg : grid.regularization)
    for (int hidden : grid.hidden_size)
      for (int seq : grid.fine_seq_len)
        for (double drop : grid.dropout) {
          GridCell cell;
          cell.stage = 1;
          cell.regularization = reg != 0;
          cell.hidden_size = hidden;
          cell.fine_seq_len = seq;
          cell.dropout = drop;
          cell.lr_schedule = base_config.lr_schedule;
          cell.batch_size = base_config.batch_size;
          cells.push_back(run_cell(base_setup, base_config, fleet,
                                   std::move(cell), grid.seeds));
        }
  std::stable_sort(cells.begin(), cells.end(), cell_better);
  const GridCell winner = cells.front();

  std::vector<GridCell> stage2;
  if (!winner.diverged) {
    for (const auto& sched : grid.lr_schedules)
      for (int batch : grid.batch_sizes) {
        GridCell cell = winner;
        cell.stage = 2;
        cell.lr_schedule = sched;
        cell.batch_size = batch;
        cell.score = 0;
        cell.diverged = false;
        stage2.push_back(run_cell(base_setup, base_config, fleet,
                                  std::move(cell), grid.seeds));
      }
  }
  std::stable_sort(stage2.begin(), stage2.end(), cell_better);
  // ranked stage-2 cells first (they refine the stage-1 winner), then the
  // remaining stage-1 ranking
  std::vector<GridCell> out = std::move(stage2);
  out.insert(out.end(), cells.begin(), cells.end());
  return out;
}

std::vector<TrainedModel> train_ensemble(
    const TrainSetup& setup, const TrainConfig& config, int n,
    std::uint64_t base_seed, const std::vector<BasinDataset>& fleet) {
  if (n < 1) throw ConfigError("ensemble needs at least one member");
  std::vector<TrainedModel> members;
  members.reserve(n);
  for (int i = 0; i < n; ++i) {
    TrainConfig c = config;
    c.seed = base_seed + static_cast<std::uint64_t>(i);
    try {
      members.push_back(train_model(setup, c, fleet));
    } catch (const std::exception& e) {
      throw DivergenceError("ensemble member " + std::to_string(i) +
                            " failed: " + e.what());
    }
  }
  return members;
}

}  // namespace mts
