#pragma once

#include <string>
#include <vector>

#include "mtslstm/train.hpp"

namespace mts {

// One JSON file drives every CLI command. Unknown keys are rejected so typos
// fail loudly; the timescale list is validated against the window-alignment
// rules at load time.
struct RunConfig {
  std::string data_dir;
  std::string out_dir;
  std::string model_kind = "mts";  // naive | smts | mts
  std::vector<std::string> basins; // empty = every basin in the dataset

  struct ScaleEntry {
    int step_hours = 0;
    int seq_len = 0;
    int predict_window = 0;
    int hidden_size = 64;
    std::vector<std::string> features;  // empty = all forcing columns
    int coarse_from_step_hours = 0;     // broadcast donor scale, 0 = none
    std::vector<std::string> coarse_features;  // empty = all donor columns
  };
  std::vector<ScaleEntry> timescales;  // coarsest first

  int epochs = 30;
  int batch_size = 256;
  std::vector<LrPoint> lr_schedule = {{1, 5e-4}, {10, 1e-4}, {25, 5e-5}};
  double dropout = 0.4;
  double clip_norm = 1.0;
  bool regularization = true;
  double reg_weight = 1.0;
  double epsilon = 0.1;
  double forget_bias = 3.0;
  std::uint64_t seed = 0;
  // empty strings = derive a 60/20/20 split from the data span
  std::string train_start, train_end;
  std::string val_start, val_end;
  std::string test_start, test_end;

  void validate() const;
};

RunConfig load_runconfig(const std::string& path);
std::string runconfig_canonical(const RunConfig& cfg);
std::uint64_t runconfig_hash(const RunConfig& cfg);
void save_runconfig(const std::string& path, const RunConfig& cfg);

// Resolves feature names to column indices against the loaded fleet and
// produces the model/training structures.
TrainSetup resolve_setup(const RunConfig& cfg,
                         const std::vector<BasinDataset>& fleet);
TrainConfig resolve_train_config(const RunConfig& cfg,
                                 const std::vector<BasinDataset>& fleet,
                                 int jobs);

// Grid file for the two-stage hyperparameter search.
GridSpec load_gridspec(const std::string& path);

}  // namespace mts
