#include "mtslstm/synthdata.hpp"

#include <cmath>
#include <cstdio>

namespace mts {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Knuth's Poisson sampler; fine for the small hourly rates used here.
int poisson(SplitMix64& rng, double lambda) {
  const double limit = std::exp(-lambda);
  double p = 1.0;
  int k = 0;
  do {
    ++k;
    p *= rng.uniform();
  } while (p > limit);
  return k - 1;
}

double exponential(SplitMix64& rng, double mean) {
  double u;
  do {
    u = rng.uniform();
  } while (u <= 0.0);
  return -mean * std::log(u);
}

}  // namespace

void SynthBasinConfig::validate() const {
  if (n_hours < 2 * 365 * 24)
    throw ConfigError("synthetic basin needs at least two years of hours");
  if (!(fast_k > 0 && fast_k < 1) || !(slow_k > 0 && slow_k < 1))
    throw ConfigError("reservoir recession coefficients must be in (0, 1)");
  if (fast_fraction < 0 || fast_fraction > 1)
    throw ConfigError("fast_fraction must be in [0, 1]");
  if (rain_event_rate < 0 || rain_event_depth < 0 || pet_amplitude < 0)
    throw ConfigError("rates and depths must be non-negative");
  if (start % kHoursPerDay != 0)
    throw ConfigError("synthetic series must start at a day boundary");
}

const std::vector<std::string>& forcing_names() {
  static const std::vector<std::string> names = {
      "total_precipitation",  // mm per hour
      "air_temperature",      // K
      "surface_pressure",     // Pa
      "longwave_radiation",   // W/m^2
      "shortwave_radiation",  // W/m^2
      "specific_humidity",    // kg/kg
      "potential_energy",     // J/kg
      "potential_evaporation",  // J/kg
      "convective_fraction",
      "wind_u",  // m/s
      "wind_v",  // m/s
  };
  return names;
}

BasinDataset generate_basin(const SynthBasinConfig& config) {
  config.validate();
  const std::int64_t n = config.n_hours;
  const std::int64_t n_days = n / kHoursPerDay;
  if (n % kHoursPerDay != 0)
    throw ConfigError("n_hours must cover whole days");

  SplitMix64 rain_rng(subseed(config.seed, 1));
  SplitMix64 noise_rng(subseed(config.seed, 2));

  Matrix forcings(n, static_cast<Eigen::Index>(forcing_names().size()));
  Vector discharge(n);

  const double hourly_rate = config.rain_event_rate / kHoursPerDay;
  double fast_storage = config.init_fast_storage;
  double slow_storage = config.init_slow_storage;

  for (std::int64_t t = 0; t < n; ++t) {
    const double hour_of_day = static_cast<double>((config.start + t) %
                                                   kHoursPerDay);
    const double day_of_year =
        static_cast<double>(((config.start + t) / kHoursPerDay) % 365);
    const double diurnal = std::sin(2 * kPi * (hour_of_day - 6.0) / 24.0);
    const double annual = std::sin(2 * kPi * (day_of_year - 80.0) / 365.0);

    double precip = 0.0;
    const int events = poisson(rain_rng, hourly_rate);
    for (int e = 0; e < events; ++e)
      precip += exponential(rain_rng, config.rain_event_depth);

    const double temperature = 283.0 + 12.0 * annual + 5.0 * diurnal +
                               0.5 * (noise_rng.uniform() - 0.5);
    const double shortwave =
        std::max(0.0, 600.0 * diurnal * (0.7 + 0.3 * annual));
    const double longwave = 280.0 + 40.0 * annual + 10.0 * diurnal;
    const double pressure = 98000.0 + 500.0 * annual;
    const double humidity = 0.006 + 0.004 * annual + 0.001 * diurnal;
    const double pot_energy = 1200.0;
    const double pet_mm = config.pet_amplitude * shortwave / 600.0;  // mm/h
    const double pot_evap_j = 2.5e6 * pet_mm / 3600.0;  // rough J/kg scale
    const double convective = 0.3 + 0.2 * annual;
    const double wind_u = 2.0 * std::sin(2 * kPi * day_of_year / 365.0 + 1.0);
    const double wind_v = 1.5 * std::cos(2 * kPi * day_of_year / 365.0);

    const double effective = std::max(0.0, precip - pet_mm);
    fast_storage += config.fast_fraction * effective;
    slow_storage += (1.0 - config.fast_fraction) * effective;
    const double q_fast = config.fast_k * fast_storage;
    const double q_slow = config.slow_k * slow_storage;
    fast_storage -= q_fast;
    slow_storage -= q_slow;
    discharge[t] = q_fast + q_slow;  // mm/h

    forcings(t, 0) = precip;
    forcings(t, 1) = temperature;
    forcings(t, 2) = pressure;
    forcings(t, 3) = longwave;
    forcings(t, 4) = shortwave;
    forcings(t, 5) = humidity;
    forcings(t, 6) = pot_energy;
    forcings(t, 7) = pot_evap_j;
    forcings(t, 8) = convective;
    forcings(t, 9) = wind_u;
    forcings(t, 10) = wind_v;
  }

  BasinDataset ds;
  char idbuf[32];
  std::snprintf(idbuf, sizeof(idbuf), "synth%08llu",
                static_cast<unsigned long long>(config.seed % 100000000ULL));
  ds.id = idbuf;
  ds.static_attrs = config.static_attrs;
  if (ds.static_attrs.size() == 0) {
    ds.static_attrs.resize(8);
    ds.static_attrs << config.fast_k, config.slow_k, config.fast_fraction,
        config.rain_event_rate, config.rain_event_depth, config.pet_amplitude,
        config.init_fast_storage, config.init_slow_storage;
  }
  ds.attr_names = {"fast_k", "slow_k", "fast_fraction", "rain_event_rate",
                   "rain_event_depth", "pet_amplitude", "init_fast_storage",
                   "init_slow_storage"};
  if (ds.static_attrs.size() != 8) {
    ds.attr_names.clear();
    for (Eigen::Index i = 0; i < ds.static_attrs.size(); ++i)
      ds.attr_names.push_back("attr" + std::to_string(i));
  }

  ScaleBlock hourly_blk;
  hourly_blk.scale = hourly();
  hourly_blk.start = config.start;
  hourly_blk.feature_names = forcing_names();
  hourly_blk.forcings = std::move(forcings);
  hourly_blk.discharge = std::move(discharge);

  ScaleBlock daily_blk;
  daily_blk.scale = daily();
  daily_blk.start = config.start;
  daily_blk.feature_names = forcing_names();
  daily_blk.forcings.resize(n_days, hourly_blk.forcings.cols());
  {
    RegularSeries tmp{config.start, hourly(), Vector()};
    for (Eigen::Index c = 0; c < hourly_blk.forcings.cols(); ++c) {
      tmp.values = hourly_blk.forcings.col(c);
      daily_blk.forcings.col(c) = aggregate(tmp, daily()).values;
    }
    tmp.values = hourly_blk.discharge;
    daily_blk.discharge = aggregate(tmp, daily()).values;
  }

  ds.scales.push_back(std::move(hourly_blk));
  ds.scales.push_back(std::move(daily_blk));
  return ds;
}

SynthFleet generate_fleet(int n_basins, std::uint64_t base_seed,
                          std::int64_t n_hours, HourStamp start) {
  if (n_basins < 1) throw ConfigError("fleet needs at least one basin");
  SynthFleet fleet;
  SplitMix64 rng(subseed(base_seed, 0xf1ee7));
  for (int i = 0; i < n_basins; ++i) {
    SynthBasinConfig cfg;
    cfg.seed = subseed(base_seed, 100 + static_cast<std::uint64_t>(i));
    cfg.n_hours = n_hours;
    cfg.start = start;
    cfg.rain_event_rate = rng.uniform(2.0, 8.0);
    cfg.rain_event_depth = rng.uniform(0.5, 2.0);
    cfg.pet_amplitude = rng.uniform(0.05, 0.2);
    cfg.fast_k = rng.uniform(0.03, 0.25);
    cfg.slow_k = rng.uniform(0.002, 0.01);
    cfg.fast_fraction = rng.uniform(0.3, 0.8);
    cfg.init_fast_storage = rng.uniform(0.5, 2.0);
    cfg.init_slow_storage = rng.uniform(10.0, 60.0);
    BasinDataset ds = generate_basin(cfg);
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "basin%03d", i);
    ds.id = idbuf;
    fleet.configs.push_back(cfg);
    fleet.basins.push_back(std::move(ds));
  }
  return fleet;
}

}  // namespace mts
