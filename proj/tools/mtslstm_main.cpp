#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "mtslstm/checkpoint.hpp"
#include "mtslstm/csvio.hpp"
#include "mtslstm/metrics.hpp"
#include "mtslstm/runconfig.hpp"
#include "mtslstm/synthdata.hpp"
#include "mtslstm/train.hpp"

namespace fs = std::filesystem;
using namespace mts;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitIo = 4;

void write_cell(std::ostream& out, double v) {
  if (!is_masked(v)) out << format_double(v);
}

int cmd_synth(int n_basins, std::uint64_t seed, int years,
              const std::string& out_dir) {
  SynthFleet fleet = generate_fleet(
      n_basins, seed, static_cast<std::int64_t>(years) * 365 * kHoursPerDay);
  write_fleet(out_dir, fleet.basins);
  write_fleet_manifest(out_dir, fleet);
  std::cout << "wrote " << n_basins << " basins (" << years << " years) to "
            << out_dir << "\n";
  return kExitOk;
}

void write_train_log(const std::string& path,
                     const std::vector<EpochLog>& log,
                     const std::vector<SequenceEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "epoch,train_loss,lr";
  for (const auto& e : entries)
    out << ",val_median_nse_" << scale_label(e.scale);
  out << '\n';
  for (const auto& l : log) {
    out << l.epoch << ',' << format_double(l.train_loss) << ','
        << format_double(l.lr);
    for (std::size_t i = 0; i < entries.size(); ++i) {
      out << ',';
      if (i < l.val_median_nse.size()) write_cell(out, l.val_median_nse[i]);
    }
    out << '\n';
  }
}

int cmd_train(const std::string& config_path, const std::string& model_kind,
              std::int64_t seed_override, int jobs) {
  RunConfig cfg = load_runconfig(config_path);
  if (!model_kind.empty()) cfg.model_kind = model_kind;
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  cfg.validate();
  if (cfg.out_dir.empty()) throw ConfigError("config needs out_dir to train");

  std::vector<BasinDataset> fleet = load_fleet(cfg.data_dir, cfg.basins);
  TrainSetup setup = resolve_setup(cfg, fleet);
  TrainConfig tc = resolve_train_config(cfg, fleet, jobs);

  TrainedModel model = train_model(setup, tc, fleet);

  fs::create_directories(cfg.out_dir);
  save_runconfig((fs::path(cfg.out_dir) / "config.json").string(), cfg);
  save_checkpoint((fs::path(cfg.out_dir) / "checkpoint.bin").string(),
                  model.params, runconfig_hash(cfg));
  save_stats((fs::path(cfg.out_dir) / "stats.json").string(), model.stats);
  write_train_log((fs::path(cfg.out_dir) / "train_log.csv").string(),
                  model.log, setup.model.seq.entries);
  std::cout << "model written to " << cfg.out_dir << "\n";
  return kExitOk;
}

int cmd_predict(const std::string& model_dir, const std::string& period_start,
                const std::string& period_end, const std::string& out_dir,
                int jobs) {
  RunConfig cfg =
      load_runconfig((fs::path(model_dir) / "config.json").string());
  std::vector<BasinDataset> fleet = load_fleet(cfg.data_dir, cfg.basins);
  TrainSetup setup = resolve_setup(cfg, fleet);
  MtsModelParams params =
      load_checkpoint((fs::path(model_dir) / "checkpoint.bin").string(),
                      runconfig_hash(cfg));
  StandardizationStats stats =
      load_stats((fs::path(model_dir) / "stats.json").string());

  const HourStamp start = parse_hour_utc(period_start);
  const HourStamp end = parse_hour_utc(period_end);
  if (start >= end) throw ConfigError("empty prediction period");

  for (const auto& e : setup.model.seq.entries)
    fs::create_directories(fs::path(out_dir) / scale_label(e.scale));

  const int n_threads =
      std::max(1, std::min<int>(jobs, static_cast<int>(fleet.size())));
  std::vector<std::exception_ptr> errors(n_threads);
  auto worker = [&](int tid) {
    try {
      for (std::size_t i = tid; i < fleet.size(); i += n_threads) {
        BasinPredictions pred =
            predict_period(params, setup, stats, fleet[i], start, end);
        for (const auto& series : pred.per_scale) {
          const fs::path path = fs::path(out_dir) /
                                scale_label(series.scale) /
                                (fleet[i].id + ".csv");
          write_prediction_csv(path.string(), series);
        }
      }
    } catch (...) {
      errors[tid] = std::current_exception();
    }
  };
  std::vector<std::thread> pool;
  for (int tid = 0; tid < n_threads; ++tid) pool.emplace_back(worker, tid);
  for (auto& th : pool) th.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::cout << "predictions written to " << out_dir << "\n";
  return kExitOk;
}

struct EvalRow {
  std::string basin;
  Timescale scale;
  MetricReport metrics;
  SignatureSet sim_signatures;
  SignatureSet obs_signatures;
  double consistency = std::numeric_limits<double>::quiet_NaN();
};

int cmd_evaluate(const std::string& pred_dir, const std::string& data_dir,
                 const std::string& report_path) {
  std::vector<Timescale> scales;
  for (const auto& e : fs::directory_iterator(pred_dir))
    if (e.is_directory())
      scales.push_back(parse_scale_label(e.path().filename().string()));
  if (scales.empty()) throw IoError("no timescale directories in " + pred_dir);
  std::sort(scales.begin(), scales.end(), [](Timescale a, Timescale b) {
    return a.step_hours > b.step_hours;  // coarsest first
  });

  std::vector<std::string> basins;
  for (const auto& e :
       fs::directory_iterator(fs::path(pred_dir) / scale_label(scales[0])))
    if (e.path().extension() == ".csv")
      basins.push_back(e.path().stem().string());
  std::sort(basins.begin(), basins.end());
  if (basins.empty()) throw IoError("no prediction files in " + pred_dir);

  std::vector<BasinDataset> fleet = load_fleet(data_dir, basins);

  std::vector<EvalRow> rows;
  for (const auto& ds : fleet) {
    std::vector<RegularSeries> preds;
    for (const auto scale : scales) {
      const fs::path path =
          fs::path(pred_dir) / scale_label(scale) / (ds.id + ".csv");
      preds.push_back(read_prediction_csv(path.string(), scale));
    }
    for (std::size_t si = 0; si < scales.size(); ++si) {
      const auto& blk = ds.block(scales[si]);
      const RegularSeries& sim = preds[si];
      const auto i0 = blk.row_at(sim.start);
      if (i0 < 0 || i0 + sim.values.size() > blk.discharge.size())
        throw AlignmentError("prediction span exceeds observed data for " +
                             ds.id);
      EvalRow row;
      row.basin = ds.id;
      row.scale = scales[si];
      HydrographPair pair;
      pair.obs = blk.discharge.segment(i0, sim.values.size());
      pair.sim = sim.values;
      row.metrics = metric_report(pair, scales[si]);

      // precipitation column for the flow signatures
      RegularSeries precip;
      precip.start = sim.start;
      precip.scale = sim.scale;
      const auto pit = std::find(blk.feature_names.begin(),
                                 blk.feature_names.end(),
                                 "total_precipitation");
      if (pit != blk.feature_names.end()) {
        precip.values = blk.forcings
                            .col(pit - blk.feature_names.begin())
                            .segment(i0, sim.values.size());
      } else {
        precip.values = Vector::Constant(
            sim.values.size(), std::numeric_limits<double>::quiet_NaN());
      }
      RegularSeries obs_series{sim.start, sim.scale, pair.obs};
      row.obs_signatures = signatures(obs_series, precip);
      row.sim_signatures = signatures(sim, precip);

      // cross-timescale consistency against the next-finer prediction
      if (si + 1 < scales.size())
        row.consistency = consistency_rmsd_masked(preds[si], preds[si + 1]);
      rows.push_back(std::move(row));
    }
  }

  std::ofstream out(report_path);
  if (!out) throw IoError("cannot write " + report_path);
  out << "basin,timescale";
  for (const auto& n : kMetricNames) out << ',' << n;
  for (const auto& n : kSignatureNames) out << ',' << n;
  out << ",consistency_rmsd_mm_per_day\n";
  for (const auto& row : rows) {
    out << row.basin << ',' << scale_label(row.scale);
    for (double v : metric_values(row.metrics)) {
      out << ',';
      write_cell(out, v);
    }
    for (double v : signature_values(row.sim_signatures)) {
      out << ',';
      write_cell(out, v);
    }
    out << ',';
    write_cell(out, row.consistency);
    out << '\n';
  }

  // summary: median of every column per timescale, then the across-basin
  // correlation between observed and simulated signatures
  for (const auto scale : scales) {
    std::vector<std::array<double, 11>> mvals;
    std::vector<std::array<double, 13>> svals;
    std::vector<double> cons;
    std::vector<SignatureSet> obs_sigs, sim_sigs;
    for (const auto& row : rows) {
      if (!(row.scale == scale)) continue;
      mvals.push_back(metric_values(row.metrics));
      svals.push_back(signature_values(row.sim_signatures));
      cons.push_back(row.consistency);
      obs_sigs.push_back(row.obs_signatures);
      sim_sigs.push_back(row.sim_signatures);
    }
    out << "MEDIAN," << scale_label(scale);
    for (std::size_t c = 0; c < kMetricNames.size(); ++c) {
      std::vector<double> col;
      for (const auto& v : mvals) col.push_back(v[c]);
      out << ',';
      write_cell(out, nan_median(col));
    }
    for (std::size_t c = 0; c < kSignatureNames.size(); ++c) {
      std::vector<double> col;
      for (const auto& v : svals) col.push_back(v[c]);
      out << ',';
      write_cell(out, nan_median(col));
    }
    out << ',';
    write_cell(out, nan_median(cons));
    out << '\n';

    out << "SIGNATURE_CORRELATION," << scale_label(scale);
    for (std::size_t c = 0; c < kMetricNames.size(); ++c) out << ',';
    const auto corr = signature_correlation(obs_sigs, sim_sigs);
    for (double v : corr) {
      out << ',';
      write_cell(out, v);
    }
    out << ",\n";
  }
  std::cout << "report written to " << report_path << "\n";
  return kExitOk;
}

int cmd_gridsearch(const std::string& config_path,
                   const std::string& grid_path, const std::string& out_dir,
                   int jobs) {
  RunConfig cfg = load_runconfig(config_path);
  GridSpec grid = load_gridspec(grid_path);
  std::vector<BasinDataset> fleet = load_fleet(cfg.data_dir, cfg.basins);
  TrainSetup setup = resolve_setup(cfg, fleet);
  TrainConfig tc = resolve_train_config(cfg, fleet, jobs);

  std::vector<GridCell> cells = grid_search(setup, tc, grid, fleet);

  fs::create_directories(out_dir);
  std::ofstream out(fs::path(out_dir) / "grid_ranking.csv");
  if (!out) throw IoError("cannot write grid_ranking.csv");
  out << "rank,stage,regularization,hidden_size,fine_seq_len,dropout,"
         "lr_schedule,batch_size,score,diverged\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    out << (i + 1) << ',' << c.stage << ',' << (c.regularization ? 1 : 0)
        << ',' << c.hidden_size << ',' << c.fine_seq_len << ','
        << format_double(c.dropout) << ',';
    for (std::size_t k = 0; k < c.lr_schedule.size(); ++k) {
      if (k) out << ' ';
      out << c.lr_schedule[k].start_epoch << ':'
          << format_double(c.lr_schedule[k].rate);
    }
    out << ',' << c.batch_size << ',';
    write_cell(out, c.score);
    out << ',' << (c.diverged ? 1 : 0) << '\n';
  }
  std::cout << "grid results written to " << out_dir << "\n";
  return kExitOk;
}

int cmd_benchmark(int hidden, int features, int samples) {
  // naive single-timescale hourly model vs the two-branch model at the same
  // hidden size; the step counts are 4320 vs 365 + 336
  MtsConfig naive;
  naive.seq.entries = {{hourly(), 4320, 24}};
  naive.input_sizes = {features};
  naive.hidden_sizes = {hidden};

  MtsConfig mts2;
  mts2.seq.entries = {{daily(), 365, 1}, {hourly(), 336, 24}};
  mts2.input_sizes = {features, features};
  mts2.hidden_sizes = {hidden, hidden};

  const MtsModelParams p_naive = build_mts(naive, 7);
  const MtsModelParams p_mts = build_mts(mts2, 7);

  auto make_input = [&](const MtsConfig& cfg) {
    MtsBatchInput in;
    in.B = 1;
    SplitMix64 rng(11);
    for (std::size_t b = 0; b < cfg.seq.entries.size(); ++b) {
      Matrix x(features, cfg.seq.entries[b].seq_len);
      for (Eigen::Index j = 0; j < x.size(); ++j)
        x.data()[j] = rng.uniform(-1, 1);
      in.x.push_back(std::move(x));
    }
    return in;
  };

  auto run_once = [](const MtsModelParams& params, const MtsConfig& cfg,
                     const MtsBatchInput& in) {
    MtsTape tape;
    MtsBatchOutput fw = forward_batch(params, cfg, in, false, 0, &tape);
    std::vector<Matrix> d_pred;
    for (const auto& pr : fw.pred) d_pred.push_back(Matrix::Ones(pr.rows(), 1));
    backward_batch(params, cfg, tape, d_pred);
    return fw;
  };

  const MtsBatchInput in_naive = make_input(naive);
  const MtsBatchInput in_mts = make_input(mts2);

  // shape gate before any timing
  {
    MtsBatchOutput a = run_once(p_naive, naive, in_naive);
    if (a.pred.size() != 1 || a.pred[0].rows() != 24)
      throw ShapeError("naive benchmark model has the wrong output shape");
    MtsBatchOutput b = run_once(p_mts, mts2, in_mts);
    if (b.pred.size() != 2 || b.pred[0].rows() != 1 || b.pred[1].rows() != 24)
      throw ShapeError("branched benchmark model has the wrong output shape");
  }

  auto time_model = [&](const MtsModelParams& params, const MtsConfig& cfg,
                        const MtsBatchInput& in) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int s = 0; s < samples; ++s) run_once(params, cfg, in);
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count() / samples;
  };

  const double t_naive = time_model(p_naive, naive, in_naive);
  const double t_mts = time_model(p_mts, mts2, in_mts);

  std::printf("step counts: naive-hourly 4320, branched 365+336 = 701\n");
  std::printf("step-count ratio: %.2f\n", 4320.0 / 701.0);
  std::printf("naive-hourly forward+backward per sample: %.3f ms\n",
              t_naive * 1e3);
  std::printf("branched forward+backward per sample:     %.3f ms\n",
              t_mts * 1e3);
  std::printf("measured speedup: %.2f\n", t_naive / t_mts);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-timescale LSTM rainfall-runoff toolkit"};
  app.require_subcommand(1);

  int jobs = 1;
  std::int64_t seed_override = -1;
  app.add_option("--jobs", jobs, "worker threads for parallel sections")
      ->capture_default_str();
  app.add_option("--seed", seed_override,
                 "override the config seed everywhere");

  auto* synth = app.add_subcommand("synth", "generate a synthetic fleet");
  int n_basins = 10, years = 12;
  std::uint64_t synth_seed = 1;
  std::string synth_out;
  synth->add_option("--basins", n_basins, "number of basins")
      ->capture_default_str();
  synth->add_option("--seed", synth_seed, "fleet seed")->capture_default_str();
  synth->add_option("--years", years, "series length in 365-day years")
      ->capture_default_str();
  synth->add_option("--out", synth_out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a model per the config");
  std::string train_config, model_kind;
  train->add_option("--config", train_config, "run config JSON")->required();
  train->add_option("--model-kind", model_kind,
                    "override model kind (naive|smts|mts)");

  auto* predict = app.add_subcommand("predict", "write prediction CSVs");
  std::string model_dir, period_start, period_end, pred_out;
  predict->add_option("--model", model_dir, "model directory")->required();
  predict
      ->add_option("--period", period_start,
                   "period start (YYYY-MM-DD or full timestamp)")
      ->required();
  predict->add_option("--period-end", period_end, "period end (exclusive)")
      ->required();
  predict->add_option("--out", pred_out, "output directory")->required();

  auto* evaluate = app.add_subcommand("evaluate", "score predictions");
  std::string eval_pred, eval_data, eval_out;
  evaluate->add_option("--pred", eval_pred, "prediction directory")
      ->required();
  evaluate->add_option("--data", eval_data, "dataset directory")->required();
  evaluate->add_option("--out", eval_out, "report CSV path")->required();

  auto* grid = app.add_subcommand("gridsearch", "two-stage tuning run");
  std::string grid_config, grid_file, grid_out;
  grid->add_option("--config", grid_config, "run config JSON")->required();
  grid->add_option("--grid", grid_file, "grid spec JSON")->required();
  grid->add_option("--out", grid_out, "output directory")->required();

  auto* bench = app.add_subcommand(
      "benchmark", "time the branched model against the naive hourly one");
  int bench_hidden = 64, bench_features = 19, bench_samples = 8;
  bench->add_option("--hidden", bench_hidden, "hidden size")
      ->capture_default_str();
  bench->add_option("--features", bench_features, "input feature count")
      ->capture_default_str();
  bench->add_option("--samples", bench_samples, "timed samples per model")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (synth->parsed())
      return cmd_synth(n_basins,
                       seed_override >= 0
                           ? static_cast<std::uint64_t>(seed_override)
                           : synth_seed,
                       years, synth_out);
    if (train->parsed())
      return cmd_train(train_config, model_kind, seed_override, jobs);
    if (predict->parsed())
      return cmd_predict(model_dir, period_start, period_end, pred_out, jobs);
    if (evaluate->parsed()) return cmd_evaluate(eval_pred, eval_data, eval_out);
    if (grid->parsed())
      return cmd_gridsearch(grid_config, grid_file, grid_out, jobs);
    if (bench->parsed())
      return cmd_benchmark(bench_hidden, bench_features, bench_samples);
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const AlignmentError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}
