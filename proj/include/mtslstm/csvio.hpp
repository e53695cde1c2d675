#pragma once

#include <string>
#include <vector>

#include "mtslstm/synthdata.hpp"
#include "mtslstm/timeseries.hpp"

namespace mts {

// Canonical on-disk fleet layout:
//   DIR/forcings/<scale>/<basin>.csv    timestamp + one column per feature
//   DIR/discharge/<scale>/<basin>.csv   timestamp + qobs_mm_per_hour
//   DIR/attributes.csv                  basin_id + one column per attribute
//   DIR/fleet.json                      generation manifest (synthetic data)
// Timestamps are ISO-8601 UTC on whole hours; missing discharge is an empty
// cell. Doubles are written with 17 significant digits so files round-trip
// bit-exactly.

std::string format_double(double v);

void write_fleet(const std::string& dir,
                 const std::vector<BasinDataset>& basins);

void write_fleet_manifest(const std::string& dir, const SynthFleet& fleet);

// Loads every basin listed in attributes.csv (or the given subset). Forcing
// gaps or malformed timestamps are rejected; missing discharge cells load as
// NaN.
std::vector<BasinDataset> load_fleet(const std::string& dir,
                                     const std::vector<std::string>& only = {});

// Prediction series: timestamp + qsim_mm_per_hour; steps the model did not
// cover are simply absent from the file.
void write_prediction_csv(const std::string& path, const RegularSeries& pred);
RegularSeries read_prediction_csv(const std::string& path, Timescale scale);

// Minimal strict CSV splitting (no quoting; our files never need it).
std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace mts
