#pragma once

#include <vector>

#include "mtslstm/common.hpp"

namespace mts {

// Gate row order inside the stacked matrices: [input; forget; cell; output].
// Rows [H, 2H) of the bias are the forget-gate slice.
struct LstmWeights {
  int input_size = 0;
  int hidden_size = 0;
  Matrix w_ih;  // (4H x In)
  Matrix w_hh;  // (4H x H)
  Vector bias;  // (4H)

  void check_shapes() const;
};

struct LstmState {
  Vector h;
  Vector c;
};

// Everything the backward pass needs, recorded column-blocked: step t of a
// batch of width B occupies columns [t*B, (t+1)*B).
struct LstmTape {
  int T = 0;
  int B = 0;
  int hidden = 0;
  int input = 0;
  Matrix x;       // In x (T*B)
  Matrix gates;   // 4H x (T*B), post-activation [i; f; g; o]
  Matrix c;       // H x (T*B)
  Matrix tanh_c;  // H x (T*B)
  Matrix h;       // H x (T*B), raw (pre-dropout) hidden states
  Matrix h0, c0;  // H x B

  // Dropout applies only to the hidden states handed to output heads: the
  // last `n_exposed` steps. Mask entries are 0 or 1/(1-rate) (inverted
  // dropout); empty when rate is 0 or in evaluation mode.
  int n_exposed = 0;
  Matrix drop_mask;  // H x (n_exposed*B) or empty

  // Hidden state offered to heads for exposed step k in [0, n_exposed);
  // bitwise equal to the raw state when no mask was drawn.
  Matrix exposed_h(int k) const;
  // Raw states after consuming `steps` steps (steps = 0 -> initial state).
  Matrix h_after(int steps) const;
  Matrix c_after(int steps) const;
};

struct LstmForwardOpts {
  double dropout_rate = 0.0;
  bool training = false;
  int n_exposed = 0;
  std::uint64_t dropout_seed = 0;
};

// Standard LSTM recurrence over T steps for B samples at once:
//   i,f,o = sigmoid(...), g = tanh(...),
//   c_t = f*c_{t-1} + i*g,  h_t = o*tanh(c_t).
// The input projection w_ih*x is hoisted into one large matrix product; the
// per-step work is only the recurrent product and the elementwise update.
LstmTape lstm_forward_batch(const LstmWeights& w, const Matrix& h0,
                            const Matrix& c0, const Matrix& x, int T, int B,
                            const LstmForwardOpts& opts);

struct LstmGrads {
  Matrix w_ih;
  Matrix w_hh;
  Vector bias;
};

// Extra gradient injected into the raw (h, c) after `after_steps` steps have
// been consumed; after_steps = 0 targets the initial state. This is how a
// finer branch sends gradient back into the coarse branch it was seeded from.
struct StateTap {
  int after_steps = 0;
  Matrix dh;  // H x B
  Matrix dc;  // H x B
};

struct LstmBackwardResult {
  LstmGrads grads;
  Matrix dx;        // In x (T*B); empty unless want_dx
  Matrix dh0, dc0;  // H x B
};

// Exact reverse-mode differentiation of the recorded forward pass.
// `d_exposed` holds gradients w.r.t. the (dropped) exposed hidden states,
// blocked like the tape (H x n_exposed*B); it may be empty.
LstmBackwardResult lstm_backward_batch(const LstmWeights& w,
                                       const LstmTape& tape,
                                       const Matrix& d_exposed,
                                       const std::vector<StateTap>& taps,
                                       bool want_dx);

// Single-sample convenience wrappers; `inputs` is (T x input_size).
LstmTape lstm_forward(const LstmWeights& w, const LstmState& init,
                      const Matrix& inputs, const LstmForwardOpts& opts);
LstmState state_at(const LstmTape& tape, int t);

// Fully-connected layer, column-per-sample.
struct LinearWeights {
  Matrix w;  // out x in
  Vector b;  // out
};

struct LinearGrads {
  Matrix w;
  Vector b;
};

Matrix linear_forward(const LinearWeights& lw, const Matrix& x);
// Accumulates into `grads` (caller zeroes); returns dx when want_dx.
Matrix linear_backward(const LinearWeights& lw, const Matrix& x,
                       const Matrix& dy, LinearGrads& grads, bool want_dx);

LinearWeights identity_linear(int n);

// Uniform init in +/- 1/sqrt(hidden) for both weight matrices (drawn in
// column-major element order, w_ih then w_hh); biases zero except the
// forget-gate slice.
LstmWeights init_lstm_weights(int input_size, int hidden_size,
                              std::uint64_t seed, double forget_bias);

// Uniform init in +/- 1/sqrt(in), zero bias.
LinearWeights init_linear(int in, int out, std::uint64_t seed);

}  // namespace mts
