#include "mtslstm/lstm.hpp"

#include <cmath>

namespace mts {

void LstmWeights::check_shapes() const {
  if (w_ih.rows() != 4 * hidden_size || w_ih.cols() != input_size ||
      w_hh.rows() != 4 * hidden_size || w_hh.cols() != hidden_size ||
      bias.size() != 4 * hidden_size)
    throw ShapeError("LSTM weight shapes are inconsistent");
}

Matrix LstmTape::exposed_h(int k) const {
  if (k < 0 || k >= n_exposed) throw ShapeError("exposed step out of range");
  const int t = T - n_exposed + k;
  Matrix out = h.middleCols(t * B, B);
  if (drop_mask.size() > 0)
    out.array() *= drop_mask.middleCols(k * B, B).array();
  return out;
}

Matrix LstmTape::h_after(int steps) const {
  if (steps == 0) return h0;
  return h.middleCols((steps - 1) * B, B);
}

Matrix LstmTape::c_after(int steps) const {
  if (steps == 0) return c0;
  return c.middleCols((steps - 1) * B, B);
}

LstmTape lstm_forward_batch(const LstmWeights& w, const Matrix& h0,
                            const Matrix& c0, const Matrix& x, int T, int B,
                            const LstmForwardOpts& opts) {
  w.check_shapes();
  const int H = w.hidden_size;
  if (x.rows() != w.input_size || x.cols() != static_cast<Eigen::Index>(T) * B)
    throw ShapeError("LSTM input block has wrong shape");
  if (h0.rows() != H || h0.cols() != B || c0.rows() != H || c0.cols() != B)
    throw ShapeError("LSTM initial state has wrong shape");
  if (!(opts.dropout_rate >= 0.0 && opts.dropout_rate < 1.0))
    throw ShapeError("dropout rate must be in [0, 1)");
  if (opts.n_exposed < 0 || opts.n_exposed > T)
    throw ShapeError("n_exposed out of range");
  if (!x.allFinite()) throw ShapeError("non-finite LSTM input");

  LstmTape tape;
  tape.T = T;
  tape.B = B;
  tape.hidden = H;
  tape.input = w.input_size;
  tape.x = x;
  tape.h0 = h0;
  tape.c0 = c0;
  tape.n_exposed = opts.n_exposed;

  tape.gates.noalias() = w.w_ih * x;  // hoisted input projection
  tape.gates.colwise() += w.bias;
  tape.c.resize(H, static_cast<Eigen::Index>(T) * B);
  tape.tanh_c.resize(H, static_cast<Eigen::Index>(T) * B);
  tape.h.resize(H, static_cast<Eigen::Index>(T) * B);

  for (int t = 0; t < T; ++t) {
    const Eigen::Index col = static_cast<Eigen::Index>(t) * B;
    auto g4 = tape.gates.middleCols(col, B);
    if (t == 0)
      g4.noalias() += w.w_hh * h0;
    else
      g4.noalias() += w.w_hh * tape.h.middleCols(col - B, B);
    auto gi = g4.topRows(H).array();
    auto gf = g4.middleRows(H, H).array();
    auto gg = g4.middleRows(2 * H, H).array();
    auto go = g4.bottomRows(H).array();
    gi = 1.0 / (1.0 + (-gi).exp());
    gf = 1.0 / (1.0 + (-gf).exp());
    gg = gg.tanh();
    go = 1.0 / (1.0 + (-go).exp());

    auto ct = tape.c.middleCols(col, B);
    if (t == 0)
      ct.array() = gf * c0.array() + gi * gg;
    else
      ct.array() = gf * tape.c.middleCols(col - B, B).array() + gi * gg;
    auto tct = tape.tanh_c.middleCols(col, B);
    tct.array() = ct.array().tanh();
    tape.h.middleCols(col, B).array() = go * tct.array();
  }

  if (opts.training && opts.dropout_rate > 0.0 && opts.n_exposed > 0) {
    SplitMix64 rng(opts.dropout_seed);
    const double keep_scale = 1.0 / (1.0 - opts.dropout_rate);
    tape.drop_mask.resize(H, static_cast<Eigen::Index>(opts.n_exposed) * B);
    for (Eigen::Index j = 0; j < tape.drop_mask.cols(); ++j)
      for (Eigen::Index i = 0; i < H; ++i)
        tape.drop_mask(i, j) =
            rng.uniform() < opts.dropout_rate ? 0.0 : keep_scale;
  }
  return tape;
}

LstmBackwardResult lstm_backward_batch(const LstmWeights& w,
                                       const LstmTape& tape,
                                       const Matrix& d_exposed,
                                       const std::vector<StateTap>& taps,
                                       bool want_dx) {
  const int H = tape.hidden;
  const int T = tape.T;
  const int B = tape.B;
  if (d_exposed.size() > 0 &&
      (d_exposed.rows() != H ||
       d_exposed.cols() != static_cast<Eigen::Index>(tape.n_exposed) * B))
    throw ShapeError("exposed-gradient block has wrong shape");
  for (const auto& tap : taps) {
    if (tap.after_steps < 0 || tap.after_steps > T)
      throw ShapeError("state tap out of range");
    if (tap.dh.rows() != H || tap.dh.cols() != B || tap.dc.rows() != H ||
        tap.dc.cols() != B)
      throw ShapeError("state tap has wrong shape");
  }

  // Pre-activation gate gradients, filled in the reverse loop, then turned
  // into weight gradients with two large matrix products.
  Matrix dgates(4 * H, static_cast<Eigen::Index>(T) * B);

  Matrix dh = Matrix::Zero(H, B);  // dL/dh_t accumulated from the future
  Matrix dc = Matrix::Zero(H, B);  // dL/dc_t accumulated from the future
  for (int t = T - 1; t >= 0; --t) {
    const int k = t - (T - tape.n_exposed);  // exposed index or negative
    if (k >= 0 && d_exposed.size() > 0) {
      if (tape.drop_mask.size() > 0)
        dh.array() += d_exposed.middleCols(static_cast<Eigen::Index>(k) * B, B)
                          .array() *
                      tape.drop_mask.middleCols(
                              static_cast<Eigen::Index>(k) * B, B)
                          .array();
      else
        dh += d_exposed.middleCols(static_cast<Eigen::Index>(k) * B, B);
    }
    for (const auto& tap : taps) {
      if (tap.after_steps == t + 1) {
        dh += tap.dh;
        dc += tap.dc;
      }
    }

    const auto g4 = tape.gates.middleCols(static_cast<Eigen::Index>(t) * B, B);
    const auto gi = g4.topRows(H).array();
    const auto gf = g4.middleRows(H, H).array();
    const auto gg = g4.middleRows(2 * H, H).array();
    const auto go = g4.bottomRows(H).array();
    const auto tct =
        tape.tanh_c.middleCols(static_cast<Eigen::Index>(t) * B, B).array();
    const Matrix c_prev = tape.c_after(t);

    dc.array() += dh.array() * go * (1.0 - tct.square());

    auto d4 = dgates.middleCols(static_cast<Eigen::Index>(t) * B, B);
    d4.topRows(H).array() = dc.array() * gg * gi * (1.0 - gi);          // di
    d4.middleRows(H, H).array() =
        dc.array() * c_prev.array() * gf * (1.0 - gf);                  // df
    d4.middleRows(2 * H, H).array() = dc.array() * gi * (1.0 - gg.square());
    d4.bottomRows(H).array() = dh.array() * tct * go * (1.0 - go);      // do

    dc.array() *= gf;                  // flows to c_{t-1}
    dh.noalias() = w.w_hh.transpose() * d4;  // flows to h_{t-1}
  }
  for (const auto& tap : taps) {
    if (tap.after_steps == 0) {
      dh += tap.dh;
      dc += tap.dc;
    }
  }

  LstmBackwardResult res;
  res.grads.w_ih.noalias() = dgates * tape.x.transpose();
  res.grads.w_hh.resize(4 * H, H);
  res.grads.w_hh.noalias() = dgates.leftCols(B) * tape.h0.transpose();
  if (T > 1)
    res.grads.w_hh.noalias() +=
        dgates.rightCols(static_cast<Eigen::Index>(T - 1) * B) *
        tape.h.leftCols(static_cast<Eigen::Index>(T - 1) * B).transpose();
  res.grads.bias = dgates.rowwise().sum();
  if (want_dx) res.dx.noalias() = w.w_ih.transpose() * dgates;
  res.dh0 = dh;
  res.dc0 = dc;
  return res;
}

LstmTape lstm_forward(const LstmWeights& w, const LstmState& init,
                      const Matrix& inputs, const LstmForwardOpts& opts) {
  const int T = static_cast<int>(inputs.rows());
  LstmForwardOpts o = opts;
  if (o.n_exposed == 0) o.n_exposed = T;
  return lstm_forward_batch(w, init.h, init.c, inputs.transpose(), T, 1, o);
}

LstmState state_at(const LstmTape& tape, int t) {
  if (t < 0 || t >= tape.T) throw ShapeError("state index out of range");
  return {tape.h.col(t), tape.c.col(t)};
}

Matrix linear_forward(const LinearWeights& lw, const Matrix& x) {
  if (lw.w.cols() != x.rows() || lw.b.size() != lw.w.rows())
    throw ShapeError("linear layer shape mismatch");
  Matrix y = lw.w * x;
  y.colwise() += lw.b;
  return y;
}

Matrix linear_backward(const LinearWeights& lw, const Matrix& x,
                       const Matrix& dy, LinearGrads& grads, bool want_dx) {
  if (dy.rows() != lw.w.rows() || dy.cols() != x.cols())
    throw ShapeError("linear backward shape mismatch");
  grads.w.noalias() += dy * x.transpose();
  grads.b += dy.rowwise().sum();
  if (!want_dx) return {};
  return lw.w.transpose() * dy;
}

LinearWeights identity_linear(int n) {
  return {Matrix::Identity(n, n), Vector::Zero(n)};
}

LstmWeights init_lstm_weights(int input_size, int hidden_size,
                              std::uint64_t seed, double forget_bias) {
  if (input_size < 1 || hidden_size < 1)
    throw ShapeError("LSTM sizes must be positive");
  LstmWeights w;
  w.input_size = input_size;
  w.hidden_size = hidden_size;
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_size));
  SplitMix64 rng(seed);
  w.w_ih.resize(4 * hidden_size, input_size);
  for (Eigen::Index j = 0; j < w.w_ih.cols(); ++j)
    for (Eigen::Index i = 0; i < w.w_ih.rows(); ++i)
      w.w_ih(i, j) = rng.uniform(-bound, bound);
  w.w_hh.resize(4 * hidden_size, hidden_size);
  for (Eigen::Index j = 0; j < w.w_hh.cols(); ++j)
    for (Eigen::Index i = 0; i < w.w_hh.rows(); ++i)
      w.w_hh(i, j) = rng.uniform(-bound, bound);
  w.bias = Vector::Zero(4 * hidden_size);
  w.bias.segment(hidden_size, hidden_size).setConstant(forget_bias);
  return w;
}

LinearWeights init_linear(int in, int out, std::uint64_t seed) {
  if (in < 1 || out < 1) throw ShapeError("linear sizes must be positive");
  LinearWeights lw;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  SplitMix64 rng(seed);
  lw.w.resize(out, in);
  for (Eigen::Index j = 0; j < in; ++j)
    for (Eigen::Index i = 0; i < out; ++i)
      lw.w(i, j) = rng.uniform(-bound, bound);
  lw.b = Vector::Zero(out);
  return lw;
}

}  // namespace mts
