#include <doctest.h>

#include "mtslstm/mts_model.hpp"
#include "testutil.hpp"

using namespace mts;
using mts::testutil::check_gradients;
using mts::testutil::random_matrix;
using mts::testutil::same_bits;

namespace {

MtsConfig toy_config(bool shared) {
  MtsConfig cfg;
  cfg.seq.entries = {{Timescale{4}, 8, 2}, {Timescale{2}, 6, 4}};
  cfg.input_sizes = {2, 2};
  cfg.hidden_sizes = shared ? std::vector<int>{4, 4} : std::vector<int>{4, 3};
  cfg.shared_weights = shared;
  return cfg;
}

std::vector<Matrix> toy_inputs(const MtsConfig& cfg, SplitMix64& rng) {
  std::vector<Matrix> inputs;
  for (int b = 0; b < cfg.n_branches(); ++b)
    inputs.push_back(random_matrix(cfg.seq.entries[b].seq_len,
                                   cfg.input_sizes[b], rng, -1, 1));
  return inputs;
}

Matrix with_one_hot(const Matrix& x, int branch, int n) {
  Matrix aug(x.rows(), x.cols() + n);
  aug.leftCols(x.cols()) = x;
  aug.rightCols(n).setZero();
  aug.col(x.cols() + branch).setOnes();
  return aug;
}

}  // namespace

TEST_CASE("single-branch config reproduces the plain LSTM bitwise") {
  MtsConfig cfg;
  cfg.seq.entries = {{daily(), 12, 3}};
  cfg.input_sizes = {3};
  cfg.hidden_sizes = {5};
  MtsModelParams params = build_mts(cfg, 21);

  SplitMix64 rng(2);
  const Matrix inputs = random_matrix(12, 3, rng, -1, 1);
  std::vector<Vector> pred = forward(params, cfg, {inputs}, false, 0, nullptr);
  REQUIRE(pred.size() == 1);
  REQUIRE(pred[0].size() == 3);

  // the same computation composed by hand from the core pieces
  LstmState init{Vector::Zero(5), Vector::Zero(5)};
  LstmForwardOpts opts;
  opts.n_exposed = 3;
  LstmTape tape = lstm_forward(params.lstm[0], init, inputs, opts);
  Matrix head_in(5, 3);
  for (int k = 0; k < 3; ++k) head_in.col(k) = tape.exposed_h(k);
  const Matrix out = linear_forward(params.head[0], head_in);
  for (int k = 0; k < 3; ++k) CHECK(pred[0][k] == out(0, k));
}

TEST_CASE("shared-weight equivalence: one-hot MTS equals the shared model") {
  SplitMix64 rng(3);
  for (int rep = 0; rep < 10; ++rep) {
    MtsConfig smts = toy_config(true);
    smts.seq.entries[0].seq_len = 6 + static_cast<int>(rng.below(6));
    // an even fine length keeps the 4h/2h windows aligned, and its span
    // stays below the shortest coarse span used here
    const int fine_len = 2 * (1 + static_cast<int>(rng.below(4)));
    smts.seq.entries[1].seq_len = fine_len;
    smts.seq.entries[1].predict_window = std::min(4, fine_len);
    smts.validate();
    MtsModelParams shared = build_mts(smts, 100 + rep);

    // explicit two-branch model with the same weights, identity transfers,
    // and manually appended one-hot rows
    MtsConfig mts = smts;
    mts.shared_weights = false;
    mts.input_sizes = {smts.lstm_input_size(0), smts.lstm_input_size(1)};
    MtsModelParams explicit_params;
    explicit_params.lstm = {shared.lstm[0], shared.lstm[0]};
    explicit_params.fc_h = {identity_linear(4)};
    explicit_params.fc_c = {identity_linear(4)};
    explicit_params.head = {shared.head[0], shared.head[0]};

    std::vector<Matrix> raw = toy_inputs(smts, rng);
    std::vector<Matrix> augmented = {with_one_hot(raw[0], 0, 2),
                                     with_one_hot(raw[1], 1, 2)};

    std::vector<Vector> a = forward(shared, smts, raw, false, 0, nullptr);
    std::vector<Vector> b =
        forward(explicit_params, mts, augmented, false, 0, nullptr);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(same_bits(a[i], b[i]));
  }
}

TEST_CASE("zero weights and zero-bias heads predict zero") {
  MtsConfig cfg = toy_config(false);
  MtsModelParams params = build_mts(cfg, 5);
  for (auto& w : params.lstm) {
    w.w_ih.setZero();
    w.w_hh.setZero();
    w.bias.setZero();
  }
  for (auto& h : params.head) {
    h.w.setZero();
    h.b.setZero();
  }
  for (auto& t : params.fc_h) {
    t.w.setZero();
    t.b.setZero();
  }
  for (auto& t : params.fc_c) {
    t.w.setZero();
    t.b.setZero();
  }
  SplitMix64 rng(4);
  std::vector<Vector> pred =
      forward(params, cfg, toy_inputs(cfg, rng), false, 0, nullptr);
  for (const auto& p : pred) CHECK(p.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  MtsConfig cfg = toy_config(false);
  MtsModelParams params = build_mts(cfg, 6);
  SplitMix64 rng(5);
  MtsBatchInput input;
  input.B = 1;
  for (const auto& m : toy_inputs(cfg, rng)) input.x.push_back(m.transpose());
  MtsTape tape;
  forward_batch(params, cfg, input, false, 0, &tape);
  std::vector<Matrix> d_pred = {Matrix::Zero(2, 1), Matrix::Zero(4, 1)};
  MtsGrads grads = backward_batch(params, cfg, tape, d_pred);
  for (auto& ref : tensor_refs(grads))
    CHECK(Eigen::Map<Vector>(ref.data, ref.size).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("full-model finite differences, including transfer layers") {
  for (bool shared : {false, true}) {
    CAPTURE(shared);
    MtsConfig cfg = toy_config(shared);
    MtsModelParams params = build_mts(cfg, 7);
    SplitMix64 rng(6);
    MtsBatchInput input;
    input.B = 2;
    for (int b = 0; b < cfg.n_branches(); ++b)
      input.x.push_back(random_matrix(cfg.input_sizes[b],
                                      cfg.seq.entries[b].seq_len * 2, rng, -1,
                                      1));
    const Matrix up0 = random_matrix(2, 2, rng, -1, 1);
    const Matrix up1 = random_matrix(4, 2, rng, -1, 1);

    auto eval = [&]() {
      MtsBatchOutput out =
          forward_batch(params, cfg, input, false, 0, nullptr);
      return (out.pred[0].array() * up0.array()).sum() +
             (out.pred[1].array() * up1.array()).sum();
    };

    MtsTape tape;
    forward_batch(params, cfg, input, false, 0, &tape);
    MtsGrads grads = backward_batch(params, cfg, tape, {up0, up1});
    auto report =
        check_gradients(tensor_refs(params), tensor_refs(grads), eval);
    INFO("worst: ", report.worst);
    CHECK(report.max_rel_err < 1e-5);
  }
}

TEST_CASE("cut transfer layers isolate the coarse branch from fine loss") {
  MtsConfig cfg = toy_config(false);
  MtsModelParams params = build_mts(cfg, 8);
  for (auto& t : params.fc_h) t.w.setZero();
  for (auto& t : params.fc_c) t.w.setZero();

  SplitMix64 rng(7);
  MtsBatchInput input;
  input.B = 1;
  for (const auto& m : toy_inputs(cfg, rng)) input.x.push_back(m.transpose());

  MtsTape tape;
  forward_batch(params, cfg, input, false, 0, &tape);
  // gradient only on the fine branch
  MtsGrads g_fine = backward_batch(params, cfg, tape,
                                   {Matrix::Zero(2, 1), Matrix::Ones(4, 1)});
  CHECK(g_fine.lstm[0].w_ih.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g_fine.lstm[0].w_hh.cwiseAbs().maxCoeff() == 0.0);

  // with live transfers the coarse branch does receive gradient
  MtsModelParams live = build_mts(cfg, 8);
  MtsTape tape2;
  forward_batch(live, cfg, input, false, 0, &tape2);
  MtsGrads g_live = backward_batch(live, cfg, tape2,
                                   {Matrix::Zero(2, 1), Matrix::Ones(4, 1)});
  CHECK(g_live.lstm[0].w_ih.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("look-back: coarse inputs after the split cannot move fine output") {
  MtsConfig cfg = toy_config(false);
  MtsModelParams params = build_mts(cfg, 9);
  SplitMix64 rng(8);
  std::vector<Matrix> inputs = toy_inputs(cfg, rng);
  std::vector<Vector> base = forward(params, cfg, inputs, false, 0, nullptr);

  const int split = split_index(cfg.seq.entries[0], cfg.seq.entries[1]);
  REQUIRE(split < cfg.seq.entries[0].seq_len);
  std::vector<Matrix> poked = inputs;
  poked[0].row(split).array() += 10.0;  // first step after the handoff
  std::vector<Vector> moved = forward(params, cfg, poked, false, 0, nullptr);
  CHECK(same_bits(base[1], moved[1]));       // fine branch untouched
  CHECK_FALSE(same_bits(base[0], moved[0]));  // coarse prediction does move
}

TEST_CASE("build: shapes for the default two-branch and shared setups") {
  MtsConfig cfg;
  cfg.seq.entries = {{daily(), 365, 1}, {hourly(), 336, 24}};
  cfg.input_sizes = {19, 19};
  cfg.hidden_sizes = {64, 64};
  MtsModelParams params = build_mts(cfg, 1);
  REQUIRE(params.lstm.size() == 2);
  CHECK(params.lstm[0].w_hh.rows() == 256);
  REQUIRE(params.fc_h.size() == 1);
  CHECK(params.fc_h[0].w.rows() == 64);
  CHECK(params.fc_h[0].w.cols() == 64);
  CHECK(params.head.size() == 2);

  cfg.shared_weights = true;
  MtsModelParams shared = build_mts(cfg, 1);
  CHECK(shared.lstm.size() == 1);
  CHECK(shared.head.size() == 1);
  CHECK(shared.fc_h.empty());
  CHECK(shared.lstm[0].input_size == 19 + 2);  // one-hot appended

  // four-branch chain: one daily helper plus 6h/3h/1h
  MtsConfig four;
  four.seq.entries = {{daily(), 365, 1},
                      {Timescale{6}, 360, 120},
                      {Timescale{3}, 168, 80},
                      {hourly(), 168, 18}};
  four.input_sizes = {19, 19, 19, 19};
  four.hidden_sizes = {64, 64, 64, 64};
  MtsModelParams p4 = build_mts(four, 2);
  CHECK(p4.lstm.size() == 4);
  CHECK(p4.fc_h.size() == 3);
  CHECK(p4.fc_c.size() == 3);

  // output lengths follow the predict windows
  SplitMix64 rng(9);
  std::vector<Matrix> inputs;
  for (int b = 0; b < four.n_branches(); ++b)
    inputs.push_back(random_matrix(four.seq.entries[b].seq_len, 19, rng, -1,
                                   1));
  std::vector<Vector> pred = forward(p4, four, inputs, false, 0, nullptr);
  CHECK(pred[0].size() == 1);
  CHECK(pred[1].size() == 120);
  CHECK(pred[2].size() == 80);
  CHECK(pred[3].size() == 18);
}

TEST_CASE("shared config validation") {
  MtsConfig cfg = toy_config(true);
  cfg.hidden_sizes = {4, 3};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = toy_config(true);
  cfg.input_sizes = {2, 3};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
