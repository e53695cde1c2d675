#include "mtslstm/runconfig.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

namespace mts {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& allowed,
                    const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!allowed.count(key))
      throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

std::vector<LrPoint> parse_schedule(const json& j) {
  std::vector<LrPoint> sched;
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 2)
      throw ConfigError("lr_schedule entries are [start_epoch, rate] pairs");
    sched.push_back({e[0].get<int>(), e[1].get<double>()});
  }
  return sched;
}

json schedule_to_json(const std::vector<LrPoint>& sched) {
  json j = json::array();
  for (const auto& p : sched) j.push_back({p.start_epoch, p.rate});
  return j;
}

}  // namespace

void RunConfig::validate() const {
  if (data_dir.empty()) throw ConfigError("data_dir is required");
  if (model_kind != "naive" && model_kind != "smts" && model_kind != "mts")
    throw ConfigError("model_kind must be naive, smts, or mts");
  if (timescales.empty()) throw ConfigError("at least one timescale required");
  if (model_kind == "naive" && timescales.size() != 1)
    throw ConfigError("a naive model has exactly one timescale");

  SequenceSpec seq;
  for (const auto& e : timescales)
    seq.entries.push_back({Timescale{e.step_hours}, e.seq_len,
                           e.predict_window});
  seq.validate();  // throws on misaligned windows, quoting the bad split

  for (const auto& e : timescales) {
    if (e.hidden_size < 1) throw ConfigError("hidden_size must be positive");
    if (e.coarse_from_step_hours < 0)
      throw ConfigError("bad coarse_features_from scale");
    if (e.coarse_from_step_hours > 0 &&
        e.coarse_from_step_hours <= e.step_hours)
      throw ConfigError("coarse_features_from must name a coarser scale");
  }
  if (model_kind == "smts") {
    for (const auto& e : timescales)
      if (e.hidden_size != timescales.front().hidden_size)
        throw ConfigError("smts branches share one hidden size");
  }
  if (!(dropout >= 0 && dropout < 1)) throw ConfigError("bad dropout");
  if (epochs < 1 || batch_size < 1) throw ConfigError("bad epochs/batch size");
  if (lr_schedule.empty() || lr_schedule.front().start_epoch != 1)
    throw ConfigError("lr_schedule must start at epoch 1");
  const bool any_period = !train_start.empty() || !train_end.empty() ||
                          !val_start.empty() || !val_end.empty() ||
                          !test_start.empty() || !test_end.empty();
  const bool all_period = !train_start.empty() && !train_end.empty() &&
                          !val_start.empty() && !val_end.empty() &&
                          !test_start.empty() && !test_end.empty();
  if (any_period && !all_period)
    throw ConfigError("specify either all six period bounds or none");
}

RunConfig load_runconfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }

  reject_unknown(j, {"data_dir", "out_dir", "model_kind", "basins",
                     "timescales", "training"},
                 "config root");
  RunConfig cfg;
  cfg.data_dir = j.at("data_dir").get<std::string>();
  if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();
  if (j.contains("model_kind"))
    cfg.model_kind = j["model_kind"].get<std::string>();
  if (j.contains("basins"))
    cfg.basins = j["basins"].get<std::vector<std::string>>();

  for (const auto& e : j.at("timescales")) {
    reject_unknown(e,
                   {"step_hours", "seq_len", "predict_window", "hidden_size",
                    "features", "coarse_features_from", "coarse_features"},
                   "timescales entry");
    RunConfig::ScaleEntry s;
    s.step_hours = e.at("step_hours").get<int>();
    s.seq_len = e.at("seq_len").get<int>();
    s.predict_window = e.at("predict_window").get<int>();
    if (e.contains("hidden_size")) s.hidden_size = e["hidden_size"].get<int>();
    if (e.contains("features"))
      s.features = e["features"].get<std::vector<std::string>>();
    if (e.contains("coarse_features_from"))
      s.coarse_from_step_hours =
          parse_scale_label(e["coarse_features_from"].get<std::string>())
              .step_hours;
    if (e.contains("coarse_features"))
      s.coarse_features =
          e["coarse_features"].get<std::vector<std::string>>();
    cfg.timescales.push_back(std::move(s));
  }

  if (j.contains("training")) {
    const json& t = j["training"];
    reject_unknown(t,
                   {"epochs", "batch_size", "lr_schedule", "dropout",
                    "clip_norm", "regularization", "reg_weight", "epsilon",
                    "forget_bias", "seed", "train_period", "val_period",
                    "test_period"},
                   "training block");
    if (t.contains("epochs")) cfg.epochs = t["epochs"].get<int>();
    if (t.contains("batch_size")) cfg.batch_size = t["batch_size"].get<int>();
    if (t.contains("lr_schedule"))
      cfg.lr_schedule = parse_schedule(t["lr_schedule"]);
    if (t.contains("dropout")) cfg.dropout = t["dropout"].get<double>();
    if (t.contains("clip_norm")) cfg.clip_norm = t["clip_norm"].get<double>();
    if (t.contains("regularization"))
      cfg.regularization = t["regularization"].get<bool>();
    if (t.contains("reg_weight")) cfg.reg_weight = t["reg_weight"].get<double>();
    if (t.contains("epsilon")) cfg.epsilon = t["epsilon"].get<double>();
    if (t.contains("forget_bias"))
      cfg.forget_bias = t["forget_bias"].get<double>();
    if (t.contains("seed")) cfg.seed = t["seed"].get<std::uint64_t>();
    auto period = [&t](const char* key, std::string& a, std::string& b) {
      if (!t.contains(key)) return;
      const json& p = t[key];
      if (!p.is_array() || p.size() != 2)
        throw ConfigError(std::string(key) + " must be [start, end]");
      a = p[0].get<std::string>();
      b = p[1].get<std::string>();
    };
    period("train_period", cfg.train_start, cfg.train_end);
    period("val_period", cfg.val_start, cfg.val_end);
    period("test_period", cfg.test_start, cfg.test_end);
  }

  cfg.validate();
  return cfg;
}

namespace {

json runconfig_to_json(const RunConfig& cfg) {
  json j;
  j["data_dir"] = cfg.data_dir;
  j["out_dir"] = cfg.out_dir;
  j["model_kind"] = cfg.model_kind;
  j["basins"] = cfg.basins;
  j["timescales"] = json::array();
  for (const auto& e : cfg.timescales) {
    json s;
    s["step_hours"] = e.step_hours;
    s["seq_len"] = e.seq_len;
    s["predict_window"] = e.predict_window;
    s["hidden_size"] = e.hidden_size;
    s["features"] = e.features;
    if (e.coarse_from_step_hours > 0) {
      s["coarse_features_from"] =
          scale_label(Timescale{e.coarse_from_step_hours});
      s["coarse_features"] = e.coarse_features;
    }
    j["timescales"].push_back(std::move(s));
  }
  json t;
  t["epochs"] = cfg.epochs;
  t["batch_size"] = cfg.batch_size;
  t["lr_schedule"] = schedule_to_json(cfg.lr_schedule);
  t["dropout"] = cfg.dropout;
  t["clip_norm"] = cfg.clip_norm;
  t["regularization"] = cfg.regularization;
  t["reg_weight"] = cfg.reg_weight;
  t["epsilon"] = cfg.epsilon;
  t["forget_bias"] = cfg.forget_bias;
  t["seed"] = cfg.seed;
  if (!cfg.train_start.empty()) {
    t["train_period"] = {cfg.train_start, cfg.train_end};
    t["val_period"] = {cfg.val_start, cfg.val_end};
    t["test_period"] = {cfg.test_start, cfg.test_end};
  }
  j["training"] = std::move(t);
  return j;
}

}  // namespace

std::string runconfig_canonical(const RunConfig& cfg) {
  // nlohmann::json objects keep keys sorted, so dump() is canonical
  return runconfig_to_json(cfg).dump();
}

std::uint64_t runconfig_hash(const RunConfig& cfg) {
  return fnv1a(runconfig_canonical(cfg));
}

void save_runconfig(const std::string& path, const RunConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << runconfig_to_json(cfg).dump(2) << '\n';
}

namespace {

std::vector<int> resolve_columns(const std::vector<std::string>& names,
                                 const std::vector<std::string>& available,
                                 const std::string& where) {
  std::vector<int> cols;
  if (names.empty()) {
    cols.resize(available.size());
    for (std::size_t i = 0; i < available.size(); ++i)
      cols[i] = static_cast<int>(i);
    return cols;
  }
  for (const auto& n : names) {
    const auto it = std::find(available.begin(), available.end(), n);
    if (it == available.end())
      throw ConfigError("unknown feature '" + n + "' in " + where);
    cols.push_back(static_cast<int>(it - available.begin()));
  }
  return cols;
}

}  // namespace

TrainSetup resolve_setup(const RunConfig& cfg,
                         const std::vector<BasinDataset>& fleet) {
  cfg.validate();
  if (fleet.empty()) throw ConfigError("empty fleet");
  const BasinDataset& sample = fleet.front();

  TrainSetup setup;
  setup.model.shared_weights = cfg.model_kind == "smts";
  setup.model.dropout = cfg.dropout;
  setup.model.forget_bias = cfg.forget_bias;
  for (const auto& e : cfg.timescales) {
    const Timescale scale{e.step_hours};
    if (!sample.has_scale(scale))
      throw ConfigError("dataset has no " + scale_label(scale) + " data");
    const auto& blk = sample.block(scale);
    BranchColumns cols;
    cols.own = resolve_columns(e.features, blk.feature_names,
                               scale_label(scale) + " features");
    int width = static_cast<int>(cols.own.size());
    if (e.coarse_from_step_hours > 0) {
      const Timescale donor{e.coarse_from_step_hours};
      if (!sample.has_scale(donor))
        throw ConfigError("dataset has no " + scale_label(donor) +
                          " data for broadcasting");
      cols.coarse_from_step_hours = e.coarse_from_step_hours;
      cols.coarse =
          resolve_columns(e.coarse_features, sample.block(donor).feature_names,
                          scale_label(donor) + " broadcast features");
      width += static_cast<int>(cols.coarse.size());
    }
    width += static_cast<int>(sample.static_attrs.size());
    setup.model.seq.entries.push_back(
        {scale, e.seq_len, e.predict_window});
    setup.model.input_sizes.push_back(width);
    setup.model.hidden_sizes.push_back(e.hidden_size);
    setup.columns.push_back(std::move(cols));
  }
  setup.validate(sample);
  return setup;
}

TrainConfig resolve_train_config(const RunConfig& cfg,
                                 const std::vector<BasinDataset>& fleet,
                                 int jobs) {
  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.lr_schedule = cfg.lr_schedule;
  tc.seed = cfg.seed;
  tc.clip_norm = cfg.clip_norm;
  tc.regularization = cfg.regularization;
  tc.reg_weight = cfg.reg_weight;
  tc.epsilon = cfg.epsilon;
  tc.jobs = jobs;
  if (cfg.train_start.empty()) {
    HourStamp lo = std::numeric_limits<HourStamp>::max();
    HourStamp hi = std::numeric_limits<HourStamp>::min();
    for (const auto& blk : fleet.front().scales) {
      lo = std::min(lo, blk.start);
      hi = std::max(hi, blk.end());
    }
    tc.periods = default_periods(lo, hi);
  } else {
    tc.periods.train_start = parse_hour_utc(cfg.train_start);
    tc.periods.train_end = parse_hour_utc(cfg.train_end);
    tc.periods.val_start = parse_hour_utc(cfg.val_start);
    tc.periods.val_end = parse_hour_utc(cfg.val_end);
    tc.periods.test_start = parse_hour_utc(cfg.test_start);
    tc.periods.test_end = parse_hour_utc(cfg.test_end);
  }
  tc.validate();
  return tc;
}

GridSpec load_gridspec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open grid file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("grid file is not valid JSON: " + std::string(e.what()));
  }
  reject_unknown(j, {"stage1", "stage2", "seeds"}, "grid root");
  GridSpec grid;
  const json& s1 = j.at("stage1");
  reject_unknown(s1, {"regularization", "hidden_size", "fine_seq_len",
                      "dropout"},
                 "stage1");
  grid.regularization = s1.at("regularization").get<std::vector<int>>();
  grid.hidden_size = s1.at("hidden_size").get<std::vector<int>>();
  grid.fine_seq_len = s1.at("fine_seq_len").get<std::vector<int>>();
  grid.dropout = s1.at("dropout").get<std::vector<double>>();
  const json& s2 = j.at("stage2");
  reject_unknown(s2, {"lr_schedules", "batch_sizes"}, "stage2");
  for (const auto& sched : s2.at("lr_schedules"))
    grid.lr_schedules.push_back(parse_schedule(sched));
  grid.batch_sizes = s2.at("batch_sizes").get<std::vector<int>>();
  if (j.contains("seeds")) grid.seeds = j["seeds"].get<int>();
  grid.validate();
  return grid;
}

}  // namespace mts
