#include "mtslstm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mts {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// unmasked (obs, sim) pairs
struct Paired {
  std::vector<double> obs, sim;
};

// Steps with a masked observation are excluded everywhere; a masked
// simulation value (a step the stitched prediction did not cover) drops the
// step as well.
Paired unmask(const HydrographPair& p) {
  if (p.obs.size() != p.sim.size())
    throw ShapeError("hydrograph pair lengths differ");
  Paired out;
  out.obs.reserve(p.obs.size());
  out.sim.reserve(p.obs.size());
  for (Eigen::Index i = 0; i < p.obs.size(); ++i) {
    if (is_masked(p.obs[i]) || is_masked(p.sim[i])) continue;
    out.obs.push_back(p.obs[i]);
    out.sim.push_back(p.sim[i]);
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// population standard deviation; metrics in this module use ddof = 0
// consistently so the NSE = 2*alpha*r - alpha^2 - beta^2 decomposition holds
// exactly
double std_of(const std::vector<double>& v, double mean) {
  double s = 0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

double quantile(std::vector<double> values, double q) {
  values.erase(std::remove_if(values.begin(), values.end(),
                              [](double v) { return is_masked(v); }),
               values.end());
  if (values.empty()) return kNaN;
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double nan_median(std::vector<double> values) {
  return quantile(std::move(values), 0.5);
}

double nse(const HydrographPair& p) {
  const Paired d = unmask(p);
  if (d.obs.size() < 2) return kNaN;
  const double mu = mean_of(d.obs);
  double err = 0, dev = 0;
  for (std::size_t i = 0; i < d.obs.size(); ++i) {
    err += (d.sim[i] - d.obs[i]) * (d.sim[i] - d.obs[i]);
    dev += (d.obs[i] - mu) * (d.obs[i] - mu);
  }
  if (dev <= 0) return kNaN;  // constant observations
  return 1.0 - err / dev;
}

double mse(const HydrographPair& p) {
  const Paired d = unmask(p);
  if (d.obs.empty()) return kNaN;
  double err = 0;
  for (std::size_t i = 0; i < d.obs.size(); ++i)
    err += (d.sim[i] - d.obs[i]) * (d.sim[i] - d.obs[i]);
  return err / static_cast<double>(d.obs.size());
}

double rmse(const HydrographPair& p) { return std::sqrt(mse(p)); }

double pearson_r(const HydrographPair& p) {
  const Paired d = unmask(p);
  if (d.obs.size() < 2) return kNaN;
  const double mo = mean_of(d.obs), ms = mean_of(d.sim);
  double cov = 0, vo = 0, vs = 0;
  for (std::size_t i = 0; i < d.obs.size(); ++i) {
    cov += (d.obs[i] - mo) * (d.sim[i] - ms);
    vo += (d.obs[i] - mo) * (d.obs[i] - mo);
    vs += (d.sim[i] - ms) * (d.sim[i] - ms);
  }
  if (vo <= 0 || vs <= 0) return kNaN;
  return cov / std::sqrt(vo * vs);
}

double alpha_nse(const HydrographPair& p) {
  const Paired d = unmask(p);
  if (d.obs.size() < 2) return kNaN;
  const double so = std_of(d.obs, mean_of(d.obs));
  if (so <= 0) return kNaN;
  return std_of(d.sim, mean_of(d.sim)) / so;
}

double beta_nse(const HydrographPair& p) {
  const Paired d = unmask(p);
  if (d.obs.size() < 2) return kNaN;
  const double mo = mean_of(d.obs);
  const double so = std_of(d.obs, mo);
  if (so <= 0) return kNaN;
  return (mean_of(d.sim) - mo) / so;
}

double kge(const HydrographPair& p) {
  const Paired d = unmask(p);
  if (d.obs.size() < 2) return kNaN;
  const double mo = mean_of(d.obs), ms = mean_of(d.sim);
  const double so = std_of(d.obs, mo), ss = std_of(d.sim, ms);
  const double r = pearson_r(p);
  if (mo == 0.0 || so <= 0 || is_masked(r)) return kNaN;
  const double a = ss / so - 1.0;
  const double b = ms / mo - 1.0;
  return 1.0 - std::sqrt((r - 1.0) * (r - 1.0) + a * a + b * b);
}

double fhv(const HydrographPair& p, double band) {
  Paired d = unmask(p);
  const auto m = static_cast<std::size_t>(
      std::llround(band * static_cast<double>(d.obs.size())));
  if (m < 1) return kNaN;
  std::sort(d.obs.begin(), d.obs.end(), std::greater<>());
  std::sort(d.sim.begin(), d.sim.end(), std::greater<>());
  double num = 0, den = 0;
  for (std::size_t i = 0; i < m; ++i) {
    num += d.sim[i] - d.obs[i];
    den += d.obs[i];
  }
  if (den == 0) return kNaN;
  return 100.0 * num / den;
}

double flv(const HydrographPair& p, double band) {
  Paired d = unmask(p);
  const auto m = static_cast<std::size_t>(
      std::llround(band * static_cast<double>(d.obs.size())));
  if (m < 1) return kNaN;
  std::sort(d.obs.begin(), d.obs.end());
  std::sort(d.sim.begin(), d.sim.end());
  // log-domain deviations from the lowest flow of the band
  std::vector<double> lo(m), ls(m);
  for (std::size_t i = 0; i < m; ++i) {
    lo[i] = std::log(std::max(d.obs[i], kLogFloor));
    ls[i] = std::log(std::max(d.sim[i], kLogFloor));
  }
  double qol = 0, qsl = 0;
  for (std::size_t i = 0; i < m; ++i) {
    qol += lo[i] - lo[0];
    qsl += ls[i] - ls[0];
  }
  if (qol == 0) return kNaN;
  return -100.0 * (qsl - qol) / qol;
}

double fms(const HydrographPair& p, double lower, double upper) {
  const Paired d = unmask(p);
  if (d.obs.size() < 2) return kNaN;
  const double om1 = std::log(std::max(quantile(d.obs, lower), kLogFloor));
  const double om2 = std::log(std::max(quantile(d.obs, upper), kLogFloor));
  const double sm1 = std::log(std::max(quantile(d.sim, lower), kLogFloor));
  const double sm2 = std::log(std::max(quantile(d.sim, upper), kLogFloor));
  if (om2 - om1 == 0) return kNaN;
  return 100.0 * ((sm2 - sm1) - (om2 - om1)) / (om2 - om1);
}

namespace {

struct Peak {
  int index;
  double height;
};

// strict local maxima; a plateau counts once, at its first index
std::vector<Peak> find_peaks(const Vector& v) {
  std::vector<Peak> peaks;
  const Eigen::Index n = v.size();
  Eigen::Index i = 1;
  while (i + 1 <= n - 1) {
    if (!(v[i] > v[i - 1])) {
      ++i;
      continue;
    }
    Eigen::Index j = i;
    while (j + 1 <= n - 1 && v[j + 1] == v[i]) ++j;
    if (j + 1 <= n - 1 && v[j + 1] < v[i])
      peaks.push_back({static_cast<int>(i), v[i]});
    i = j + 1;
  }
  return peaks;
}

double prominence(const Vector& v, int p) {
  double left_base = v[p], right_base = v[p];
  for (int i = p - 1; i >= 0; --i) {
    if (v[i] > v[p]) break;
    left_base = std::min(left_base, v[i]);
  }
  for (int i = p + 1; i < v.size(); ++i) {
    if (v[i] > v[p]) break;
    right_base = std::min(right_base, v[i]);
  }
  return v[p] - std::max(left_base, right_base);
}

}  // namespace

PeakTimingResult peak_timing(const HydrographPair& p, int window_steps,
                             int min_distance) {
  // masked steps cannot host or bound a peak; treat them as deep valleys
  Vector obs = p.obs;
  for (Eigen::Index i = 0; i < obs.size(); ++i)
    if (is_masked(obs[i])) obs[i] = -std::numeric_limits<double>::infinity();
  Vector sim = p.sim;
  for (Eigen::Index i = 0; i < sim.size(); ++i)
    if (is_masked(sim[i])) sim[i] = -std::numeric_limits<double>::infinity();

  const Paired d = unmask(p);
  if (d.obs.size() < 3) return {kNaN, 0};
  const double sd = std_of(d.obs, mean_of(d.obs));

  std::vector<Peak> peaks = find_peaks(obs);
  peaks.erase(std::remove_if(peaks.begin(), peaks.end(),
                             [&](const Peak& pk) {
                               return prominence(obs, pk.index) < sd;
                             }),
              peaks.end());

  // Thin to the minimum spacing by repeatedly dropping the smallest
  // remaining peak (the later one on ties) while any two are too close.
  auto too_close = [&]() {
    for (std::size_t a = 1; a < peaks.size(); ++a)
      if (peaks[a].index - peaks[a - 1].index < min_distance) return true;
    return false;
  };
  while (peaks.size() > 1 && too_close()) {
    std::size_t smallest = 0;
    for (std::size_t a = 1; a < peaks.size(); ++a)
      if (peaks[a].height <= peaks[smallest].height) smallest = a;
    peaks.erase(peaks.begin() + static_cast<std::ptrdiff_t>(smallest));
  }
  if (peaks.empty()) return {kNaN, 0};

  double lag_sum = 0;
  for (const Peak& pk : peaks) {
    const int lo = std::max(0, pk.index - window_steps);
    const int hi =
        std::min(static_cast<int>(sim.size()) - 1, pk.index + window_steps);
    int best = lo;
    for (int i = lo + 1; i <= hi; ++i)
      if (sim[i] > sim[best]) best = i;
    lag_sum += std::abs(best - pk.index);
  }
  return {lag_sum / static_cast<double>(peaks.size()),
          static_cast<int>(peaks.size())};
}

int peak_window_for(Timescale scale) {
  if (scale.step_hours >= 24) return 3;  // three steps at daily resolution
  return 24 / scale.step_hours;          // one day at sub-daily resolutions
}

const std::array<std::string, 11> kMetricNames = {
    "nse", "mse",  "rmse", "kge", "pearson_r",  "alpha_nse",
    "beta_nse", "fhv", "flv", "fms", "peak_timing"};

MetricReport metric_report(const HydrographPair& p, Timescale scale) {
  MetricReport r{};
  r.nse = nse(p);
  r.mse = mse(p);
  r.rmse = rmse(p);
  r.kge = kge(p);
  r.pearson_r = pearson_r(p);
  r.alpha_nse = alpha_nse(p);
  r.beta_nse = beta_nse(p);
  r.fhv = fhv(p);
  r.flv = flv(p);
  r.fms = fms(p);
  r.peak_timing = peak_timing(p, peak_window_for(scale)).mean_abs_lag;
  return r;
}

std::array<double, 11> metric_values(const MetricReport& r) {
  return {r.nse, r.mse, r.rmse, r.kge, r.pearson_r, r.alpha_nse,
          r.beta_nse, r.fhv, r.flv, r.fms, r.peak_timing};
}

const std::array<std::string, 13> kSignatureNames = {
    "baseflow_index", "hfd_mean",   "high_q_dur", "high_q_freq", "low_q_dur",
    "low_q_freq",     "q5",         "q95",        "q_mean",      "runoff_ratio",
    "slope_fdc",      "stream_elas", "zero_q_freq"};

std::array<double, 13> signature_values(const SignatureSet& s) {
  return {s.baseflow_index, s.hfd_mean, s.high_q_dur, s.high_q_freq,
          s.low_q_dur, s.low_q_freq, s.q5, s.q95, s.q_mean, s.runoff_ratio,
          s.slope_fdc, s.stream_elas, s.zero_q_freq};
}

namespace {

// One direction of the Lyne-Hollick digital filter, quickflow initialized to
// zero so a constant series is pure baseflow.
std::vector<double> lyne_hollick_pass(const std::vector<double>& q,
                                      double alpha) {
  std::vector<double> base(q.size());
  double qf = 0.0;
  base[0] = q[0];
  for (std::size_t i = 1; i < q.size(); ++i) {
    qf = alpha * qf + 0.5 * (1.0 + alpha) * (q[i] - q[i - 1]);
    base[i] = q[i] - std::max(0.0, qf);
    if (base[i] < 0) base[i] = 0;
  }
  return base;
}

// Three passes (forward, backward, forward) over a series padded with 30
// reflected values at each end.
double baseflow_index_of(const std::vector<double>& q, double alpha = 0.925) {
  if (q.size() < 2) return kNaN;
  const std::size_t pad = std::min<std::size_t>(30, q.size() - 1);
  std::vector<double> x;
  x.reserve(q.size() + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) x.push_back(q[i]);
  x.insert(x.end(), q.begin(), q.end());
  for (std::size_t i = 2; i <= pad + 1; ++i) x.push_back(q[q.size() - i]);

  std::vector<double> b = lyne_hollick_pass(x, alpha);
  std::reverse(b.begin(), b.end());
  b = lyne_hollick_pass(b, alpha);
  std::reverse(b.begin(), b.end());
  b = lyne_hollick_pass(b, alpha);

  double qb = 0, qt = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    qb += b[pad + i];
    qt += q[i];
  }
  if (qt == 0) return kNaN;
  return qb / qt;
}

struct RunStats {
  double mean_duration = kNaN;
  double frequency = kNaN;
};

// mean length of maximal runs satisfying `above`, and the fraction of
// unmasked steps satisfying it; masked steps break runs
template <typename Pred>
RunStats run_stats(const Vector& v, Pred above) {
  std::int64_t n_unmasked = 0, n_hit = 0, n_runs = 0, run = 0, run_total = 0;
  for (Eigen::Index i = 0; i <= v.size(); ++i) {
    const bool in = i < v.size() && !is_masked(v[i]) && above(v[i]);
    if (i < v.size() && !is_masked(v[i])) {
      ++n_unmasked;
      if (above(v[i])) ++n_hit;
    }
    if (in) {
      ++run;
    } else if (run > 0) {
      ++n_runs;
      run_total += run;
      run = 0;
    }
  }
  RunStats st;
  if (n_unmasked > 0) st.frequency = static_cast<double>(n_hit) / n_unmasked;
  if (n_runs > 0)
    st.mean_duration = static_cast<double>(run_total) / n_runs;
  else if (n_unmasked > 0)
    st.mean_duration = 0.0;
  return st;
}

}  // namespace

SignatureSet signatures(const RegularSeries& flow,
                        const RegularSeries& precip) {
  if (precip.scale != flow.scale || precip.start != flow.start ||
      precip.values.size() != flow.values.size())
    throw AlignmentError("precipitation series must match the flow series");

  SignatureSet s{};
  std::vector<double> q;
  q.reserve(flow.values.size());
  for (Eigen::Index i = 0; i < flow.values.size(); ++i)
    if (!is_masked(flow.values[i])) q.push_back(flow.values[i]);
  if (q.empty()) throw ShapeError("flow series is fully masked");

  s.q5 = quantile(q, 0.05);
  s.q95 = quantile(q, 0.95);
  s.q_mean = mean_of(q);
  s.zero_q_freq =
      static_cast<double>(std::count_if(q.begin(), q.end(),
                                        [](double v) { return v <= 0.0; })) /
      static_cast<double>(q.size());

  // masked steps are skipped by compaction before filtering
  s.baseflow_index = baseflow_index_of(q);

  const double med = nan_median(q);
  const auto high = run_stats(flow.values,
                              [med](double v) { return v > 9.0 * med; });
  s.high_q_dur = high.mean_duration;
  s.high_q_freq = high.frequency;
  const double mean_q = s.q_mean;
  const auto low = run_stats(flow.values,
                             [mean_q](double v) { return v < 0.2 * mean_q; });
  s.low_q_dur = low.mean_duration;
  s.low_q_freq = low.frequency;

  const double p_mean = precip.values.mean();
  s.runoff_ratio = p_mean > 0 ? s.q_mean / p_mean : kNaN;

  s.slope_fdc = (std::log(std::max(quantile(q, 0.66), kLogFloor)) -
                 std::log(std::max(quantile(q, 0.33), kLogFloor))) /
                (0.66 - 0.33);

  // year-based signatures over complete hydrological years (Oct 1 - Sep 30)
  s.hfd_mean = kNaN;
  s.stream_elas = kNaN;
  {
    const int step = flow.scale.step_hours;
    std::vector<double> hfd_days, q_year, p_year;
    HourStamp year = hydro_year_start(flow.start);
    if (year < flow.start) year = hydro_year_start(year + 366 * 24);
    while (true) {
      const HourStamp next = hydro_year_start(year + 370 * 24);
      if (next > flow.end()) break;
      const auto i0 = static_cast<Eigen::Index>((year - flow.start) / step);
      const auto i1 = static_cast<Eigen::Index>((next - flow.start) / step);
      double total = 0, ptotal = 0;
      for (Eigen::Index i = i0; i < i1; ++i) {
        if (!is_masked(flow.values[i])) total += flow.values[i];
        ptotal += precip.values[i];
      }
      q_year.push_back(total * step);  // mm over the year
      p_year.push_back(ptotal * step);
      double cum = 0;
      double hfd = kNaN;
      for (Eigen::Index i = i0; i < i1; ++i) {
        if (!is_masked(flow.values[i])) cum += flow.values[i];
        if (cum >= total / 2.0) {
          hfd = std::floor(static_cast<double>(i - i0) * step / 24.0) + 1.0;
          break;
        }
      }
      if (!is_masked(hfd)) hfd_days.push_back(hfd);
      year = next;
    }
    if (!hfd_days.empty()) s.hfd_mean = mean_of(hfd_days);
    if (q_year.size() >= 2) {
      const double qbar = mean_of(q_year);
      const double pbar = mean_of(p_year);
      std::vector<double> elas;
      for (std::size_t y = 1; y < q_year.size(); ++y) {
        const double dq = (q_year[y] - q_year[y - 1]) / qbar;
        const double dp = (p_year[y] - p_year[y - 1]) / pbar;
        const double e = dq / dp;
        if (std::isfinite(e)) elas.push_back(e);
      }
      if (!elas.empty()) s.stream_elas = nan_median(elas);
    }
  }
  return s;
}

std::array<double, 13> signature_correlation(
    const std::vector<SignatureSet>& observed,
    const std::vector<SignatureSet>& simulated) {
  if (observed.size() != simulated.size())
    throw ShapeError("signature lists differ in length");
  std::array<double, 13> out;
  for (std::size_t f = 0; f < out.size(); ++f) {
    std::vector<double> o, s;
    for (std::size_t b = 0; b < observed.size(); ++b) {
      const double ov = signature_values(observed[b])[f];
      const double sv = signature_values(simulated[b])[f];
      if (is_masked(ov) || is_masked(sv)) continue;
      o.push_back(ov);
      s.push_back(sv);
    }
    if (o.size() < 3) {
      out[f] = kNaN;
      continue;
    }
    HydrographPair pr;
    pr.obs = Eigen::Map<Vector>(o.data(), static_cast<Eigen::Index>(o.size()));
    pr.sim = Eigen::Map<Vector>(s.data(), static_cast<Eigen::Index>(s.size()));
    out[f] = pearson_r(pr);
  }
  return out;
}

double consistency_rmsd(const RegularSeries& coarse_pred,
                        const RegularSeries& fine_pred) {
  const int cs = coarse_pred.scale.step_hours;
  const int fs = fine_pred.scale.step_hours;
  if (cs % fs != 0 || cs == fs)
    throw AlignmentError("consistency needs a strictly coarser first series");
  if (coarse_pred.start != fine_pred.start)
    throw AlignmentError("consistency series must share their start");
  const int ratio = cs / fs;
  if (fine_pred.values.size() !=
      coarse_pred.values.size() * static_cast<Eigen::Index>(ratio))
    throw AlignmentError("consistency series must cover the same span");
  double sum = 0;
  const Eigen::Index n = coarse_pred.values.size();
  if (n == 0) throw ShapeError("empty consistency series");
  for (Eigen::Index t = 0; t < n; ++t) {
    const double fine_mean =
        fine_pred.values.segment(t * ratio, ratio).mean();
    const double diff = coarse_pred.values[t] - fine_mean;
    sum += diff * diff;
  }
  // deviations are in mm/h; report in mm/day
  return std::sqrt(sum / static_cast<double>(n)) * 24.0;
}

double consistency_rmsd_masked(const RegularSeries& coarse_pred,
                               const RegularSeries& fine_pred) {
  const int cs = coarse_pred.scale.step_hours;
  const int fs = fine_pred.scale.step_hours;
  if (cs % fs != 0 || cs == fs)
    throw AlignmentError("consistency needs a strictly coarser first series");
  const int ratio = cs / fs;
  const HourStamp lo = std::max(coarse_pred.start, fine_pred.start);
  const HourStamp hi = std::min(coarse_pred.end(), fine_pred.end());
  double sum = 0;
  std::int64_t n = 0;
  for (HourStamp t = lo + (cs - (lo - coarse_pred.start) % cs) % cs;
       t + cs <= hi; t += cs) {
    const double c =
        coarse_pred.values[(t - coarse_pred.start) / cs];
    if (is_masked(c)) continue;
    const auto f0 = (t - fine_pred.start) / fs;
    double fsum = 0;
    bool ok = true;
    for (int k = 0; k < ratio; ++k) {
      const double v = fine_pred.values[f0 + k];
      if (is_masked(v)) {
        ok = false;
        break;
      }
      fsum += v;
    }
    if (!ok) continue;
    const double diff = c - fsum / ratio;
    sum += diff * diff;
    ++n;
  }
  if (n == 0) return kNaN;
  return std::sqrt(sum / static_cast<double>(n)) * 24.0;
}

PredictionBundle ensemble_mean(const std::vector<PredictionBundle>& bundles) {
  if (bundles.empty()) throw ShapeError("empty ensemble");
  PredictionBundle out = bundles.front();
  for (std::size_t m = 1; m < bundles.size(); ++m) {
    if (bundles[m].per_scale.size() != out.per_scale.size())
      throw ShapeError("ensemble members disagree on timescales");
    for (std::size_t i = 0; i < out.per_scale.size(); ++i) {
      if (bundles[m].per_scale[i].size() != out.per_scale[i].size())
        throw ShapeError("ensemble members disagree on shapes");
      out.per_scale[i] += bundles[m].per_scale[i];
    }
  }
  for (auto& v : out.per_scale) v /= static_cast<double>(bundles.size());
  return out;
}

}  // namespace mts
