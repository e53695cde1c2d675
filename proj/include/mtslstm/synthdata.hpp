#pragma once

#include <vector>

#include "mtslstm/timeseries.hpp"

namespace mts {

// Two-bucket linear reservoir watershed driven by a seeded Poisson rain
// process. Simple on purpose: fast bucket gives flashy response, slow bucket
// gives long memory, both linear so mass balance is easy to audit in tests.
struct SynthBasinConfig {
  std::uint64_t seed = 0;
  std::int64_t n_hours = 0;
  HourStamp start = parse_hour_utc("1990-10-01T00:00:00Z");
  double rain_event_rate = 4.0;   // expected events per day
  double rain_event_depth = 1.2;  // mean mm per event
  double pet_amplitude = 0.12;    // mm/h at peak radiation
  double fast_k = 0.08;           // fast reservoir recession per hour
  double slow_k = 0.004;          // slow reservoir recession per hour
  double fast_fraction = 0.5;     // share of effective rain to fast bucket
  double init_fast_storage = 1.0;   // mm
  double init_slow_storage = 25.0;  // mm
  Vector static_attrs;  // stand-in for catchment attributes

  void validate() const;
};

// Column order of the hourly forcing matrix; daily forcings are block means.
const std::vector<std::string>& forcing_names();

// Deterministic generation: identical config -> bit-identical dataset.
// Produces hourly forcings/discharge plus their daily aggregates (daily
// series are exactly aggregate(hourly)).
BasinDataset generate_basin(const SynthBasinConfig& config);

// Fleet with per-basin parameters drawn from fixed ranges; static attributes
// carry the true generating parameters so a model can identify the basin.
struct SynthFleet {
  std::vector<SynthBasinConfig> configs;
  std::vector<BasinDataset> basins;
};

SynthFleet generate_fleet(int n_basins, std::uint64_t base_seed,
                          std::int64_t n_hours,
                          HourStamp start = parse_hour_utc(
                              "1990-10-01T00:00:00Z"));

}  // namespace mts
