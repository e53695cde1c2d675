#include <doctest.h>

#include <cmath>

#include "mtslstm/lstm.hpp"
#include "testutil.hpp"

using namespace mts;
using mts::testutil::check_gradients;
using mts::testutil::random_matrix;
using mts::testutil::same_bits;

namespace {

LstmWeights zero_weights(int input, int hidden, double forget_bias = 0.0) {
  LstmWeights w;
  w.input_size = input;
  w.hidden_size = hidden;
  w.w_ih = Matrix::Zero(4 * hidden, input);
  w.w_hh = Matrix::Zero(4 * hidden, hidden);
  w.bias = Vector::Zero(4 * hidden);
  w.bias.segment(hidden, hidden).setConstant(forget_bias);
  return w;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("all-zero weights: states stay at zero") {
  SplitMix64 rng(1);
  const LstmWeights w = zero_weights(3, 4);
  const Matrix x = random_matrix(3, 5, rng, -2, 2);
  LstmTape tape = lstm_forward_batch(w, Matrix::Zero(4, 1), Matrix::Zero(4, 1),
                                     x, 5, 1, {});
  CHECK(tape.h.cwiseAbs().maxCoeff() == 0.0);
  CHECK(tape.c.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("zero weights with forget bias 3: geometric cell decay") {
  const int hidden = 4, T = 6;
  const LstmWeights w = zero_weights(2, hidden, 3.0);
  Vector v(hidden);
  v << 1.0, -2.0, 0.5, 3.0;
  LstmState init{Vector::Zero(hidden), v};
  LstmTape tape = lstm_forward(w, init, Matrix::Zero(T, 2), {});
  const double decay = std::pow(sigmoid(3.0), T);
  for (int i = 0; i < hidden; ++i)
    CHECK(state_at(tape, T - 1).c[i] ==
          doctest::Approx(decay * v[i]).epsilon(1e-12));

  // gradient w.r.t. the initial cell state is sigmoid(3)^T on the diagonal
  std::vector<StateTap> taps;
  taps.push_back({T, Matrix::Zero(hidden, 1), Matrix::Ones(hidden, 1)});
  LstmBackwardResult back = lstm_backward_batch(w, tape, Matrix(), taps, false);
  for (int i = 0; i < hidden; ++i)
    CHECK(back.dc0(i, 0) == doctest::Approx(decay).epsilon(1e-12));
}

TEST_CASE("single step against a hand-evaluated cell") {
  const int hidden = 2;
  LstmWeights w = zero_weights(1, hidden);
  // distinct, hand-picked entries
  w.w_ih << 0.3, -0.2, 0.5, 0.1, -0.4, 0.25, 0.6, -0.55;
  w.w_hh.setZero();
  w.w_hh(0, 0) = 0.11;
  w.w_hh(3, 1) = -0.07;
  w.w_hh(5, 0) = 0.2;
  w.bias << 0.01, -0.02, 0.3, 0.04, -0.05, 0.06, 0.07, -0.08;
  LstmState init{Vector::Zero(hidden), Vector::Zero(hidden)};
  init.h << 0.4, -0.3;
  init.c << 0.2, 0.1;
  Matrix x(1, 1);
  x(0, 0) = 0.7;

  LstmTape tape = lstm_forward(w, init, x, {});

  for (int j = 0; j < hidden; ++j) {
    const double pre_i = w.w_ih(j, 0) * 0.7 + w.w_hh.row(j).dot(init.h) +
                         w.bias[j];
    const double pre_f = w.w_ih(hidden + j, 0) * 0.7 +
                         w.w_hh.row(hidden + j).dot(init.h) +
                         w.bias[hidden + j];
    const double pre_g = w.w_ih(2 * hidden + j, 0) * 0.7 +
                         w.w_hh.row(2 * hidden + j).dot(init.h) +
                         w.bias[2 * hidden + j];
    const double pre_o = w.w_ih(3 * hidden + j, 0) * 0.7 +
                         w.w_hh.row(3 * hidden + j).dot(init.h) +
                         w.bias[3 * hidden + j];
    const double c = sigmoid(pre_f) * init.c[j] +
                     sigmoid(pre_i) * std::tanh(pre_g);
    const double h = sigmoid(pre_o) * std::tanh(c);
    CHECK(state_at(tape, 0).c[j] == doctest::Approx(c).epsilon(1e-12));
    CHECK(state_at(tape, 0).h[j] == doctest::Approx(h).epsilon(1e-12));
  }
}

TEST_CASE("zero upstream gradients produce zero parameter gradients") {
  SplitMix64 rng(2);
  LstmWeights w = init_lstm_weights(3, 4, 9, 3.0);
  const Matrix x = random_matrix(3, 5, rng, -1, 1);
  LstmForwardOpts opts;
  opts.n_exposed = 5;
  LstmTape tape = lstm_forward_batch(w, Matrix::Zero(4, 1), Matrix::Zero(4, 1),
                                     x, 5, 1, opts);
  LstmBackwardResult back = lstm_backward_batch(
      w, tape, Matrix::Zero(4, 5), {}, true);
  CHECK(back.grads.w_ih.cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.grads.w_hh.cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.grads.bias.cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.dx.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("finite differences: weights, inputs, and initial state") {
  const int input = 3, hidden = 4, T = 5, B = 2;
  SplitMix64 rng(5);
  LstmWeights w = init_lstm_weights(input, hidden, 17, 3.0);
  Matrix x = random_matrix(input, T * B, rng, -1, 1);
  Matrix h0 = random_matrix(hidden, B, rng, -0.5, 0.5);
  Matrix c0 = random_matrix(hidden, B, rng, -0.5, 0.5);

  // random linear functional over exposed states, the final state, and one
  // mid-sequence state tap
  const Matrix a = random_matrix(hidden, T * B, rng, -1, 1);
  const Matrix bh = random_matrix(hidden, B, rng, -1, 1);
  const Matrix bc = random_matrix(hidden, B, rng, -1, 1);
  const Matrix th = random_matrix(hidden, B, rng, -1, 1);
  const Matrix tc = random_matrix(hidden, B, rng, -1, 1);
  const int tap_step = 3;

  LstmForwardOpts opts;
  opts.n_exposed = T;
  auto eval = [&]() {
    LstmTape tape = lstm_forward_batch(w, h0, c0, x, T, B, opts);
    double loss = (tape.h.array() * a.array()).sum();
    loss += (tape.h_after(T).array() * bh.array()).sum();
    loss += (tape.c_after(T).array() * bc.array()).sum();
    loss += (tape.h_after(tap_step).array() * th.array()).sum();
    loss += (tape.c_after(tap_step).array() * tc.array()).sum();
    return loss;
  };

  LstmTape tape = lstm_forward_batch(w, h0, c0, x, T, B, opts);
  std::vector<StateTap> taps;
  taps.push_back({T, bh, bc});
  taps.push_back({tap_step, th, tc});
  LstmBackwardResult back = lstm_backward_batch(w, tape, a, taps, true);

  std::vector<TensorRef> params = {
      {"w_ih", w.w_ih.data(), w.w_ih.size()},
      {"w_hh", w.w_hh.data(), w.w_hh.size()},
      {"bias", w.bias.data(), w.bias.size()},
      {"x", x.data(), x.size()},
      {"h0", h0.data(), h0.size()},
      {"c0", c0.data(), c0.size()},
  };
  std::vector<TensorRef> analytic = {
      {"w_ih", back.grads.w_ih.data(), back.grads.w_ih.size()},
      {"w_hh", back.grads.w_hh.data(), back.grads.w_hh.size()},
      {"bias", back.grads.bias.data(), back.grads.bias.size()},
      {"x", back.dx.data(), back.dx.size()},
      {"h0", back.dh0.data(), back.dh0.size()},
      {"c0", back.dc0.data(), back.dc0.size()},
  };
  auto report = check_gradients(params, analytic, eval);
  INFO("worst: ", report.worst);
  CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("forward determinism and evaluation-mode immutability") {
  SplitMix64 rng(6);
  LstmWeights w = init_lstm_weights(2, 3, 4, 3.0);
  const Matrix w_ih_copy = w.w_ih;
  const Matrix x = random_matrix(2, 8, rng, -1, 1);
  LstmForwardOpts opts;
  opts.n_exposed = 8;
  LstmTape t1 = lstm_forward_batch(w, Matrix::Zero(3, 1), Matrix::Zero(3, 1),
                                   x, 8, 1, opts);
  LstmTape t2 = lstm_forward_batch(w, Matrix::Zero(3, 1), Matrix::Zero(3, 1),
                                   x, 8, 1, opts);
  CHECK(same_bits(t1.h, t2.h));
  CHECK(same_bits(t1.c, t2.c));
  CHECK(same_bits(w.w_ih, w_ih_copy));
}

TEST_CASE("dropout: identity in evaluation, unbiased in training") {
  SplitMix64 rng(7);
  LstmWeights w = init_lstm_weights(2, 3, 11, 3.0);
  const Matrix x = random_matrix(2, 4, rng, -1, 1);
  const int T = 4;

  LstmForwardOpts eval_opts;
  eval_opts.dropout_rate = 0.4;
  eval_opts.training = false;
  eval_opts.n_exposed = T;
  LstmTape eval_tape = lstm_forward_batch(w, Matrix::Zero(3, 1),
                                          Matrix::Zero(3, 1), x, T, 1,
                                          eval_opts);
  CHECK(eval_tape.drop_mask.size() == 0);
  CHECK(same_bits(eval_tape.exposed_h(2), eval_tape.h_after(3)));

  // Monte-Carlo average of inverted-dropout outputs converges to the
  // evaluation-mode output
  Matrix mean = Matrix::Zero(3, 1);
  const int n_masks = 10000;
  for (int s = 0; s < n_masks; ++s) {
    LstmForwardOpts opts = eval_opts;
    opts.training = true;
    opts.dropout_seed = 1000 + s;
    LstmTape t = lstm_forward_batch(w, Matrix::Zero(3, 1), Matrix::Zero(3, 1),
                                    x, T, 1, opts);
    mean += t.exposed_h(T - 1);
  }
  mean /= n_masks;
  const Matrix ref = eval_tape.exposed_h(T - 1);
  CHECK((mean - ref).cwiseAbs().maxCoeff() < 1e-2);
}

TEST_CASE("linear layer: identity, zero matrix, gradient check") {
  SplitMix64 rng(8);
  const LinearWeights id = identity_linear(4);
  const Matrix x = random_matrix(4, 3, rng, -2, 2);
  CHECK(same_bits(linear_forward(id, x), x));

  LinearWeights zw{Matrix::Zero(2, 4), Vector(2)};
  zw.b << 1.5, -2.5;
  const Matrix y = linear_forward(zw, x);
  for (int j = 0; j < 3; ++j) {
    CHECK(y(0, j) == 1.5);
    CHECK(y(1, j) == -2.5);
  }

  LinearWeights lw = init_linear(4, 2, 3);
  Matrix xx = random_matrix(4, 3, rng, -1, 1);
  const Matrix up = random_matrix(2, 3, rng, -1, 1);
  auto eval = [&]() {
    return (linear_forward(lw, xx).array() * up.array()).sum();
  };
  LinearGrads grads{Matrix::Zero(2, 4), Vector::Zero(2)};
  Matrix dx = linear_backward(lw, xx, up, grads, true);
  std::vector<TensorRef> params = {{"w", lw.w.data(), lw.w.size()},
                                   {"b", lw.b.data(), lw.b.size()},
                                   {"x", xx.data(), xx.size()}};
  std::vector<TensorRef> analytic = {{"w", grads.w.data(), grads.w.size()},
                                     {"b", grads.b.data(), grads.b.size()},
                                     {"x", dx.data(), dx.size()}};
  auto report = check_gradients(params, analytic, eval);
  CHECK(report.max_rel_err < 1e-7);
}

TEST_CASE("init_weights: forget slice, determinism, bounds") {
  LstmWeights w = init_lstm_weights(5, 16, 42, 3.0);
  for (int i = 0; i < 16; ++i) CHECK(w.bias[16 + i] == 3.0);
  CHECK(w.bias.head(16).cwiseAbs().maxCoeff() == 0.0);
  CHECK(w.bias.tail(32).cwiseAbs().maxCoeff() == 0.0);

  LstmWeights w2 = init_lstm_weights(5, 16, 42, 3.0);
  CHECK(same_bits(w.w_ih, w2.w_ih));
  CHECK(same_bits(w.w_hh, w2.w_hh));

  const double bound = 1.0 / std::sqrt(16.0);
  CHECK(w.w_ih.cwiseAbs().maxCoeff() <= bound);
  CHECK(w.w_hh.cwiseAbs().maxCoeff() <= bound);
  // the init actually spreads over the range
  CHECK(w.w_ih.cwiseAbs().maxCoeff() > 0.5 * bound);
}
