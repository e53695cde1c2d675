#include "mtslstm/mts_model.hpp"

namespace mts {

int MtsConfig::lstm_input_size(int b) const {
  return input_sizes[b] + (shared_weights ? n_branches() : 0);
}

void MtsConfig::validate() const {
  seq.validate();
  const int n = n_branches();
  if (static_cast<int>(input_sizes.size()) != n ||
      static_cast<int>(hidden_sizes.size()) != n)
    throw ConfigError("per-branch size lists must match the timescale list");
  for (int b = 0; b < n; ++b) {
    if (input_sizes[b] < 1 || hidden_sizes[b] < 1)
      throw ConfigError("branch sizes must be positive");
  }
  if (shared_weights) {
    for (int b = 1; b < n; ++b) {
      if (hidden_sizes[b] != hidden_sizes[0])
        throw ConfigError("shared weights require equal hidden sizes");
      if (input_sizes[b] != input_sizes[0])
        throw ConfigError("shared weights require equal input widths");
    }
  }
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw ConfigError("dropout must be in [0, 1)");
}

const LstmWeights& branch_lstm(const MtsModelParams& p, const MtsConfig& c,
                               int b) {
  return p.lstm[c.shared_weights ? 0 : b];
}

const LinearWeights& branch_head(const MtsModelParams& p, const MtsConfig& c,
                                 int b) {
  return p.head[c.shared_weights ? 0 : b];
}

MtsModelParams build_mts(const MtsConfig& config, std::uint64_t seed) {
  config.validate();
  MtsModelParams params;
  const int n = config.n_branches();
  if (config.shared_weights) {
    params.lstm.push_back(init_lstm_weights(config.lstm_input_size(0),
                                            config.hidden_sizes[0],
                                            subseed(seed, 1),
                                            config.forget_bias));
    params.head.push_back(
        init_linear(config.hidden_sizes[0], 1, subseed(seed, 2)));
    return params;
  }
  for (int b = 0; b < n; ++b) {
    params.lstm.push_back(init_lstm_weights(config.lstm_input_size(b),
                                            config.hidden_sizes[b],
                                            subseed(seed, 10 + b),
                                            config.forget_bias));
    params.head.push_back(
        init_linear(config.hidden_sizes[b], 1, subseed(seed, 100 + b)));
  }
  for (int b = 1; b < n; ++b) {
    params.fc_h.push_back(init_linear(config.hidden_sizes[b - 1],
                                      config.hidden_sizes[b],
                                      subseed(seed, 200 + b)));
    params.fc_c.push_back(init_linear(config.hidden_sizes[b - 1],
                                      config.hidden_sizes[b],
                                      subseed(seed, 300 + b)));
  }
  return params;
}

MtsGrads zero_grads(const MtsModelParams& params) {
  MtsGrads g;
  for (const auto& w : params.lstm)
    g.lstm.push_back({Matrix::Zero(w.w_ih.rows(), w.w_ih.cols()),
                      Matrix::Zero(w.w_hh.rows(), w.w_hh.cols()),
                      Vector::Zero(w.bias.size())});
  auto zero_lin = [](const LinearWeights& lw) {
    return LinearGrads{Matrix::Zero(lw.w.rows(), lw.w.cols()),
                       Vector::Zero(lw.b.size())};
  };
  for (const auto& lw : params.fc_h) g.fc_h.push_back(zero_lin(lw));
  for (const auto& lw : params.fc_c) g.fc_c.push_back(zero_lin(lw));
  for (const auto& lw : params.head) g.head.push_back(zero_lin(lw));
  return g;
}

void add_grads(MtsGrads& into, const MtsGrads& from) {
  for (std::size_t i = 0; i < into.lstm.size(); ++i) {
    into.lstm[i].w_ih += from.lstm[i].w_ih;
    into.lstm[i].w_hh += from.lstm[i].w_hh;
    into.lstm[i].bias += from.lstm[i].bias;
  }
  auto add_lin = [](std::vector<LinearGrads>& a,
                    const std::vector<LinearGrads>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i].w += b[i].w;
      a[i].b += b[i].b;
    }
  };
  add_lin(into.fc_h, from.fc_h);
  add_lin(into.fc_c, from.fc_c);
  add_lin(into.head, from.head);
}

namespace {

// Appends the one-hot timescale rows for shared-weight models.
Matrix augment_one_hot(const Matrix& x, int branch, int n_branches) {
  Matrix aug(x.rows() + n_branches, x.cols());
  aug.topRows(x.rows()) = x;
  aug.bottomRows(n_branches).setZero();
  aug.row(x.rows() + branch).setOnes();
  return aug;
}

}  // namespace

MtsBatchOutput forward_batch(const MtsModelParams& params,
                             const MtsConfig& config,
                             const MtsBatchInput& input, bool training,
                             std::uint64_t dropout_seed, MtsTape* tape) {
  config.validate();
  const int n = config.n_branches();
  const int B = input.B;
  if (static_cast<int>(input.x.size()) != n)
    throw ShapeError("batch input must have one block per branch");

  MtsTape local;
  MtsTape& tp = tape ? *tape : local;
  tp = MtsTape{};
  tp.B = B;
  tp.branch.reserve(n);

  MtsBatchOutput out;
  out.pred.reserve(n);

  for (int b = 0; b < n; ++b) {
    const auto& entry = config.seq.entries[b];
    const int T = entry.seq_len;
    const int pw = entry.predict_window;
    const LstmWeights& w = branch_lstm(params, config, b);
    if (input.x[b].rows() != config.input_sizes[b] ||
        input.x[b].cols() != static_cast<Eigen::Index>(T) * B)
      throw ShapeError("branch " + std::to_string(b) +
                       " input block has wrong shape");

    Matrix h0, c0;
    const int H = config.hidden_sizes[b];
    if (b == 0) {
      h0 = Matrix::Zero(H, B);
      c0 = Matrix::Zero(H, B);
    } else {
      const int split =
          split_index(config.seq.entries[b - 1], config.seq.entries[b]);
      Matrix hs = tp.branch[b - 1].h_after(split);
      Matrix cs = tp.branch[b - 1].c_after(split);
      if (config.shared_weights) {
        h0 = std::move(hs);
        c0 = std::move(cs);
      } else {
        h0 = linear_forward(params.fc_h[b - 1], hs);
        c0 = linear_forward(params.fc_c[b - 1], cs);
        tp.split_h.push_back(std::move(hs));
        tp.split_c.push_back(std::move(cs));
      }
    }

    LstmForwardOpts opts;
    opts.dropout_rate = config.dropout;
    opts.training = training;
    opts.n_exposed = pw;
    opts.dropout_seed = subseed(dropout_seed, 0xd0b + b);
    if (config.shared_weights) {
      tp.branch.push_back(lstm_forward_batch(
          w, h0, c0, augment_one_hot(input.x[b], b, n), T, B, opts));
    } else {
      tp.branch.push_back(
          lstm_forward_batch(w, h0, c0, input.x[b], T, B, opts));
    }

    // Head over the exposed (dropout-applied) hidden states.
    Matrix head_in(H, static_cast<Eigen::Index>(pw) * B);
    for (int k = 0; k < pw; ++k)
      head_in.middleCols(static_cast<Eigen::Index>(k) * B, B) =
          tp.branch[b].exposed_h(k);
    Matrix head_out = linear_forward(branch_head(params, config, b), head_in);
    Matrix pred(pw, B);
    for (int k = 0; k < pw; ++k)
      pred.row(k) = head_out.middleCols(static_cast<Eigen::Index>(k) * B, B);
    tp.head_in.push_back(std::move(head_in));
    out.pred.push_back(std::move(pred));
  }
  return out;
}

MtsGrads backward_batch(const MtsModelParams& params, const MtsConfig& config,
                        const MtsTape& tape,
                        const std::vector<Matrix>& d_pred) {
  const int n = config.n_branches();
  const int B = tape.B;
  if (static_cast<int>(d_pred.size()) != n)
    throw ShapeError("need one prediction-gradient block per branch");

  MtsGrads grads = zero_grads(params);
  // Gradient arriving at each branch's initial state; filled fine->coarse.
  Matrix dh_init, dc_init;

  for (int b = n - 1; b >= 0; --b) {
    const auto& entry = config.seq.entries[b];
    const int pw = entry.predict_window;
    if (d_pred[b].rows() != pw || d_pred[b].cols() != B)
      throw ShapeError("prediction gradient block has wrong shape");

    Matrix d_head_out(1, static_cast<Eigen::Index>(pw) * B);
    for (int k = 0; k < pw; ++k)
      d_head_out.middleCols(static_cast<Eigen::Index>(k) * B, B) =
          d_pred[b].row(k);
    const int head_idx = config.shared_weights ? 0 : b;
    Matrix d_exposed =
        linear_backward(params.head[head_idx], tape.head_in[b], d_head_out,
                        grads.head[head_idx], true);

    std::vector<StateTap> taps;
    if (b + 1 < n) {
      // dh_init/dc_init currently hold the gradient at branch b+1's initial
      // state; push it through the transfer layers into branch b's state at
      // the split step.
      const int split =
          split_index(config.seq.entries[b], config.seq.entries[b + 1]);
      StateTap tap;
      tap.after_steps = split;
      if (config.shared_weights) {
        tap.dh = std::move(dh_init);
        tap.dc = std::move(dc_init);
      } else {
        tap.dh = linear_backward(params.fc_h[b], tape.split_h[b], dh_init,
                                 grads.fc_h[b], true);
        tap.dc = linear_backward(params.fc_c[b], tape.split_c[b], dc_init,
                                 grads.fc_c[b], true);
      }
      taps.push_back(std::move(tap));
    }

    const int lstm_idx = config.shared_weights ? 0 : b;
    LstmBackwardResult res = lstm_backward_batch(
        params.lstm[lstm_idx], tape.branch[b], d_exposed, taps, false);
    grads.lstm[lstm_idx].w_ih += res.grads.w_ih;
    grads.lstm[lstm_idx].w_hh += res.grads.w_hh;
    grads.lstm[lstm_idx].bias += res.grads.bias;
    dh_init = std::move(res.dh0);
    dc_init = std::move(res.dc0);
  }
  return grads;
}

std::vector<Vector> forward(const MtsModelParams& params,
                            const MtsConfig& config,
                            const std::vector<Matrix>& inputs, bool training,
                            std::uint64_t dropout_seed, MtsTape* tape) {
  MtsBatchInput batch;
  batch.B = 1;
  for (const auto& m : inputs) batch.x.push_back(m.transpose());
  MtsBatchOutput out =
      forward_batch(params, config, batch, training, dropout_seed, tape);
  std::vector<Vector> preds;
  preds.reserve(out.pred.size());
  for (auto& p : out.pred) preds.push_back(p.col(0));
  return preds;
}

PredictionBundle to_bundle(const std::vector<Vector>& standardized,
                           const StandardizationStats& stats) {
  PredictionBundle bundle;
  bundle.per_scale.reserve(standardized.size());
  for (const auto& v : standardized)
    bundle.per_scale.push_back(destandardize_discharge(v, stats));
  return bundle;
}

namespace {

void push_ref(std::vector<TensorRef>& refs, const std::string& name,
              Matrix& m) {
  refs.push_back({name, m.data(), m.size()});
}

void push_ref(std::vector<TensorRef>& refs, const std::string& name,
              Vector& v) {
  refs.push_back({name, v.data(), v.size()});
}

// Shared traversal so parameters, gradients, and checkpoints agree on order.
template <typename L, typename F>
std::vector<TensorRef> collect_refs(std::vector<L>& lstm, std::vector<F>& fc_h,
                                    std::vector<F>& fc_c,
                                    std::vector<F>& head) {
  std::vector<TensorRef> refs;
  for (std::size_t i = 0; i < lstm.size(); ++i) {
    const std::string p = "lstm" + std::to_string(i);
    push_ref(refs, p + ".w_ih", lstm[i].w_ih);
    push_ref(refs, p + ".w_hh", lstm[i].w_hh);
    push_ref(refs, p + ".bias", lstm[i].bias);
  }
  auto linear_group = [&refs](const char* tag, std::vector<F>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::string p = tag + std::to_string(i);
      push_ref(refs, p + ".w", v[i].w);
      push_ref(refs, p + ".b", v[i].b);
    }
  };
  linear_group("fc_h", fc_h);
  linear_group("fc_c", fc_c);
  linear_group("head", head);
  return refs;
}

}  // namespace

std::vector<TensorRef> tensor_refs(MtsModelParams& params) {
  return collect_refs(params.lstm, params.fc_h, params.fc_c, params.head);
}

std::vector<TensorRef> tensor_refs(MtsGrads& grads) {
  return collect_refs(grads.lstm, grads.fc_h, grads.fc_c, grads.head);
}

}  // namespace mts
