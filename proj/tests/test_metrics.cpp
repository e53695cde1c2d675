#include <doctest.h>

#include <cmath>
#include <cstring>

#include "mtslstm/metrics.hpp"
#include "testutil.hpp"

using namespace mts;
using mts::testutil::random_matrix;
using mts::testutil::same_bits;

namespace {

HydrographPair pair_of(std::vector<double> obs, std::vector<double> sim) {
  HydrographPair p;
  p.obs = Eigen::Map<Vector>(obs.data(), static_cast<Eigen::Index>(obs.size()));
  p.sim = Eigen::Map<Vector>(sim.data(), static_cast<Eigen::Index>(sim.size()));
  return p;
}

Vector random_flow(int n, SplitMix64& rng, double lo = 0.1, double hi = 5.0) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return v;
}

const HourStamp kOct1 = parse_hour_utc("1990-10-01T00:00:00Z");

}  // namespace

TEST_CASE("error metrics on simple fixtures") {
  SplitMix64 rng(1);
  Vector obs = random_flow(200, rng);
  HydrographPair perfect{obs, obs};
  CHECK(nse(perfect) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pearson_r(perfect) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(alpha_nse(perfect) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(beta_nse(perfect) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(kge(perfect) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mse(perfect) == 0.0);

  HydrographPair mean_pred{obs, Vector::Constant(200, obs.mean())};
  CHECK(nse(mean_pred) == doctest::Approx(0.0).epsilon(1e-12));

  auto p = pair_of({1, 2, 3, 4}, {2, 2, 4, 4});
  CHECK(nse(p) == doctest::Approx(0.6).epsilon(1e-12));

  HydrographPair doubled{obs, 2.0 * obs};
  CHECK(kge(doubled) ==
        doctest::Approx(1.0 - std::sqrt(2.0)).epsilon(1e-12));

  auto anti = pair_of({1, 2, 3}, {3, 2, 1});
  CHECK(kge(anti) == doctest::Approx(-1.0).epsilon(1e-12));

  // constant observations are undefined, not zero
  auto flat = pair_of({2, 2, 2, 2}, {1, 2, 3, 4});
  CHECK(is_masked(nse(flat)));
  CHECK(is_masked(pearson_r(flat)));
}

TEST_CASE("NSE decomposition identity") {
  SplitMix64 rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    HydrographPair p{random_flow(300, rng), random_flow(300, rng)};
    const double a = alpha_nse(p);
    const double r = pearson_r(p);
    const double b = beta_nse(p);
    CHECK(nse(p) ==
          doctest::Approx(2 * a * r - a * a - b * b).epsilon(1e-9));
  }
}

TEST_CASE("masked steps are excluded") {
  SplitMix64 rng(3);
  Vector obs = random_flow(100, rng);
  Vector sim = random_flow(100, rng);
  HydrographPair full{obs.head(90), sim.head(90)};
  Vector obs_masked = obs;
  for (int i = 90; i < 100; ++i) obs_masked[i] = std::nan("");
  HydrographPair masked{obs_masked, sim};
  CHECK(nse(masked) == doctest::Approx(nse(full)).epsilon(1e-13));
  CHECK(kge(masked) == doctest::Approx(kge(full)).epsilon(1e-13));
}

TEST_CASE("order invariance where the definition allows it") {
  SplitMix64 rng(4);
  Vector obs = random_flow(64, rng);
  Vector sim = random_flow(64, rng);
  // reverse both series: NSE/KGE/quantile metrics cannot move
  Vector obs_r = obs.reverse();
  Vector sim_r = sim.reverse();
  HydrographPair a{obs, sim}, b{obs_r, sim_r};
  CHECK(nse(a) == doctest::Approx(nse(b)).epsilon(1e-13));
  CHECK(kge(a) == doctest::Approx(kge(b)).epsilon(1e-13));
  CHECK(fhv(a) == doctest::Approx(fhv(b)).epsilon(1e-13));
}

TEST_CASE("flow-duration-curve biases") {
  SplitMix64 rng(5);
  Vector obs = random_flow(500, rng);
  HydrographPair same{obs, obs};
  CHECK(fhv(same) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(flv(same) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(fms(same) == doctest::Approx(0.0).epsilon(1e-12));

  HydrographPair scaled{obs, 1.10 * obs};
  CHECK(fhv(scaled) == doctest::Approx(10.0).epsilon(1e-9));

  // equal log-slope between the 20th and 80th percentile -> zero FMS bias
  Vector shifted = 3.0 * obs;  // log shift preserves the slope difference
  HydrographPair slope_same{obs, shifted};
  CHECK(fms(slope_same) == doctest::Approx(0.0).epsilon(1e-9));

  // too few points for the 2% band -> undefined
  auto tiny = pair_of({1, 2, 3}, {1, 2, 3});
  CHECK(is_masked(fhv(tiny)));
}

TEST_CASE("peak timing") {
  const int n = 400;
  Vector obs = Vector::Zero(n);
  Vector sim = Vector::Zero(n);
  obs[100] = 10.0;
  sim[100] = 9.0;
  PeakTimingResult r = peak_timing({obs, sim}, 24);
  CHECK(r.n_peaks == 1);
  CHECK(r.mean_abs_lag == 0.0);

  sim.setZero();
  sim[102] = 9.0;
  r = peak_timing({obs, sim}, 24);
  CHECK(r.n_peaks == 1);
  CHECK(r.mean_abs_lag == doctest::Approx(2.0));

  // two close peaks: the smaller one is removed
  Vector obs2 = Vector::Zero(n);
  obs2[100] = 10.0;
  obs2[150] = 6.0;
  Vector sim2 = Vector::Zero(n);
  sim2[101] = 5.0;
  sim2[149] = 4.0;
  r = peak_timing({obs2, sim2}, 24);
  CHECK(r.n_peaks == 1);
  CHECK(r.mean_abs_lag == doctest::Approx(1.0));

  // far-apart peaks both survive
  Vector obs3 = Vector::Zero(n);
  obs3[100] = 10.0;
  obs3[300] = 8.0;
  Vector sim3 = Vector::Zero(n);
  sim3[103] = 5.0;
  sim3[299] = 7.0;
  r = peak_timing({obs3, sim3}, 24);
  CHECK(r.n_peaks == 2);
  CHECK(r.mean_abs_lag == doctest::Approx(2.0));
  CHECK(r.mean_abs_lag <= 24.0);

  // no qualifying peak -> undefined
  Vector flat = Vector::Constant(n, 1.0);
  CHECK(is_masked(peak_timing({flat, sim}, 24).mean_abs_lag));

  CHECK(peak_window_for(hourly()) == 24);
  CHECK(peak_window_for(daily()) == 3);
  CHECK(peak_window_for(Timescale{3}) == 8);
}

TEST_CASE("signatures on simple fixtures") {
  // constant positive flow over three hydrological years
  const int n_days = 3 * 365 + 40;
  RegularSeries flow{kOct1, daily(), Vector::Constant(n_days, 2.0)};
  RegularSeries precip{kOct1, daily(), Vector::Constant(n_days, 4.0)};
  SignatureSet s = signatures(flow, precip);
  CHECK(s.baseflow_index == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.zero_q_freq == 0.0);
  CHECK(s.slope_fdc == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(s.q_mean == doctest::Approx(2.0));
  CHECK(s.runoff_ratio == doctest::Approx(0.5));
  CHECK(s.high_q_freq == 0.0);
  CHECK(s.low_q_freq == 0.0);
  // constant flow crosses half the annual volume near mid-year
  CHECK(s.hfd_mean == doctest::Approx(183.0).epsilon(0.01));

  RegularSeries zf{kOct1, daily(), Vector(4)};
  zf.values << 0, 0, 1, 1;
  RegularSeries zp{kOct1, daily(), Vector::Constant(4, 1.0)};
  CHECK(signatures(zf, zp).zero_q_freq == doctest::Approx(0.5));
}

TEST_CASE("q95 uses linear interpolation between order statistics") {
  std::vector<double> v(100);
  for (int i = 0; i < 100; ++i) v[i] = i + 1;
  CHECK(quantile(v, 0.95) == doctest::Approx(95.05).epsilon(1e-12));
  CHECK(quantile(v, 0.05) == doctest::Approx(5.95).epsilon(1e-12));
}

namespace {

SignatureSet from_array(const std::array<double, 13>& v) {
  static_assert(sizeof(SignatureSet) == 13 * sizeof(double));
  SignatureSet s;
  std::memcpy(&s, v.data(), sizeof(s));
  return s;
}

}  // namespace

TEST_CASE("signature correlation across basins") {
  SplitMix64 rng(6);
  std::vector<SignatureSet> obs;
  for (int b = 0; b < 6; ++b) {
    std::array<double, 13> v;
    for (auto& x : v) x = rng.uniform(0.0, 2.0);
    obs.push_back(from_array(v));
  }
  auto r_same = signature_correlation(obs, obs);
  for (double r : r_same) CHECK(r == doctest::Approx(1.0).epsilon(1e-12));

  // constant offset leaves the correlation at one
  std::vector<SignatureSet> shifted;
  for (const auto& s : obs) {
    auto v = signature_values(s);
    for (auto& x : v) x += 3.0;
    shifted.push_back(from_array(v));
  }
  auto r_shift = signature_correlation(obs, shifted);
  for (double r : r_shift) CHECK(r == doctest::Approx(1.0).epsilon(1e-12));

  // anti-ordered values give rho of minus one
  std::vector<SignatureSet> anti;
  for (const auto& s : obs) {
    auto v = signature_values(s);
    for (auto& x : v) x = -x;
    anti.push_back(from_array(v));
  }
  auto r_anti = signature_correlation(obs, anti);
  for (double r : r_anti) CHECK(r == doctest::Approx(-1.0).epsilon(1e-12));

  // fewer than three defined pairs -> undefined
  std::vector<SignatureSet> two(obs.begin(), obs.begin() + 2);
  auto r_two = signature_correlation(two, two);
  for (double r : r_two) CHECK(is_masked(r));
}

TEST_CASE("cross-timescale consistency deviation") {
  RegularSeries day{kOct1, daily(), Vector(2)};
  day.values << 1.5, 3.5;
  RegularSeries hour = broadcast_coarse_features(day, hourly());
  CHECK(consistency_rmsd(day, hour) == 0.0);

  RegularSeries d1{kOct1, daily(), Vector::Constant(1, 2.0)};
  RegularSeries h1{kOct1, hourly(), Vector::Constant(24, 1.0)};
  CHECK(consistency_rmsd(d1, h1) == doctest::Approx(24.0).epsilon(1e-12));

  // shift invariance
  SplitMix64 rng(7);
  RegularSeries d2{kOct1, daily(), random_flow(5, rng)};
  RegularSeries h2{kOct1, hourly(), random_flow(120, rng)};
  const double base = consistency_rmsd(d2, h2);
  RegularSeries d3 = d2, h3 = h2;
  d3.values.array() += 1.23;
  h3.values.array() += 1.23;
  CHECK(consistency_rmsd(d3, h3) == doctest::Approx(base).epsilon(1e-12));

  RegularSeries short_h{kOct1, hourly(), Vector::Constant(23, 1.0)};
  CHECK_THROWS_AS(consistency_rmsd(d1, short_h), AlignmentError);
}

TEST_CASE("masked consistency skips uncovered blocks") {
  RegularSeries day{kOct1, daily(), Vector(3)};
  day.values << 2.0, std::nan(""), 4.0;
  RegularSeries hour{kOct1, hourly(), Vector::Constant(72, 1.0)};
  hour.values[60] = std::nan("");  // poisons day 2
  // only day 0 remains: deviation 1 mm/h = 24 mm/day
  CHECK(consistency_rmsd_masked(day, hour) ==
        doctest::Approx(24.0).epsilon(1e-12));
}

TEST_CASE("ensemble mean") {
  SplitMix64 rng(8);
  PredictionBundle a, b;
  a.per_scale = {random_flow(4, rng), random_flow(24, rng)};
  b.per_scale = {random_flow(4, rng), random_flow(24, rng)};

  PredictionBundle same = ensemble_mean({a, a, a, a});
  CHECK(same_bits(same.per_scale[0], a.per_scale[0]));
  CHECK(same_bits(same.per_scale[1], a.per_scale[1]));

  PredictionBundle mean = ensemble_mean({a, b});
  for (int i = 0; i < 4; ++i)
    CHECK(mean.per_scale[0][i] ==
          doctest::Approx((a.per_scale[0][i] + b.per_scale[0][i]) / 2));
}
