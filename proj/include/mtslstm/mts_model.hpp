#pragma once

#include <vector>

#include "mtslstm/lstm.hpp"
#include "mtslstm/timeseries.hpp"

namespace mts {

// Branched multi-timescale model. Branch 0 runs at the coarsest timescale
// from a zero state; every finer branch starts from the coarser branch's
// state at the aligned split step, passed through linear transfer layers.
// With shared weights the branches reuse one LSTM and one head, the transfer
// is the identity, and each input step carries a one-hot timescale tag. A
// single-branch config is the plain single-timescale LSTM.
struct MtsConfig {
  SequenceSpec seq;               // coarsest first
  std::vector<int> input_sizes;   // per branch, excluding the one-hot tag
  std::vector<int> hidden_sizes;  // per branch
  bool shared_weights = false;
  double dropout = 0.0;
  double forget_bias = 3.0;

  int n_branches() const { return seq.n_scales(); }
  // width the branch LSTM actually sees (one-hot tag included when shared)
  int lstm_input_size(int b) const;
  void validate() const;
};

struct MtsModelParams {
  std::vector<LstmWeights> lstm;          // n branches, or 1 when shared
  std::vector<LinearWeights> fc_h, fc_c;  // n-1 transfer pairs, none if shared
  std::vector<LinearWeights> head;        // hidden -> 1; n branches or 1
};

const LstmWeights& branch_lstm(const MtsModelParams& p, const MtsConfig& c,
                               int b);
const LinearWeights& branch_head(const MtsModelParams& p, const MtsConfig& c,
                                 int b);

MtsModelParams build_mts(const MtsConfig& config, std::uint64_t seed);

// Gradients in the same layout as the parameters.
struct MtsGrads {
  std::vector<LstmGrads> lstm;
  std::vector<LinearGrads> fc_h, fc_c;
  std::vector<LinearGrads> head;
};

MtsGrads zero_grads(const MtsModelParams& params);
void add_grads(MtsGrads& into, const MtsGrads& from);

// Inputs for a batch of B samples: x[b] is (input_sizes[b] x T_b*B), step t
// of sample j in column t*B + j. The one-hot tag is appended internally for
// shared-weight models.
struct MtsBatchInput {
  std::vector<Matrix> x;
  int B = 1;
};

struct MtsTape {
  std::vector<LstmTape> branch;
  std::vector<Matrix> split_h, split_c;    // coarse states fed to transfers
  std::vector<Matrix> head_in;             // per branch, H x (pw*B)
  int B = 1;
};

// pred[b] is (predict_window_b x B), standardized discharge.
struct MtsBatchOutput {
  std::vector<Matrix> pred;
};

MtsBatchOutput forward_batch(const MtsModelParams& params,
                             const MtsConfig& config,
                             const MtsBatchInput& input, bool training,
                             std::uint64_t dropout_seed, MtsTape* tape);

// d_pred[b] matches pred[b]; gradients flow from fine branches through the
// transfer layers into the coarse branch states.
MtsGrads backward_batch(const MtsModelParams& params, const MtsConfig& config,
                        const MtsTape& tape,
                        const std::vector<Matrix>& d_pred);

// Single-sample convenience: inputs[b] is (T_b x input_sizes[b]); returns
// one standardized prediction vector per branch.
std::vector<Vector> forward(const MtsModelParams& params,
                            const MtsConfig& config,
                            const std::vector<Matrix>& inputs, bool training,
                            std::uint64_t dropout_seed, MtsTape* tape);

// Predicted hydrographs in mm/h, one vector per timescale.
struct PredictionBundle {
  std::vector<Vector> per_scale;
};

PredictionBundle to_bundle(const std::vector<Vector>& standardized,
                           const StandardizationStats& stats);

// Flat parameter access in a fixed traversal order; used by the optimizer
// and the checkpoint writer.
struct TensorRef {
  std::string name;
  double* data;
  Eigen::Index size;
};

std::vector<TensorRef> tensor_refs(MtsModelParams& params);
std::vector<TensorRef> tensor_refs(MtsGrads& grads);

}  // namespace mts
