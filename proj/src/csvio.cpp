#include "mtslstm/csvio.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include <json.hpp>

namespace fs = std::filesystem;

namespace mts {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t comma = line.find(',', pos);
    if (comma == std::string::npos) {
      out.push_back(line.substr(pos));
      break;
    }
    out.push_back(line.substr(pos, comma - pos));
    pos = comma + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r')
    out.back().pop_back();
  return out;
}

namespace {

double parse_cell(const std::string& cell, const std::string& where) {
  if (cell.empty()) return std::numeric_limits<double>::quiet_NaN();
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (end != cell.c_str() + cell.size())
    throw IoError("bad numeric cell '" + cell + "' in " + where);
  return v;
}

void write_series_csv(const fs::path& path,
                      const std::vector<std::string>& columns,
                      HourStamp start, Timescale scale, const Matrix& values,
                      bool blank_nan) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "timestamp";
  for (const auto& c : columns) out << ',' << c;
  out << '\n';
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    out << format_hour_utc(start + r * scale.step_hours);
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      out << ',';
      const double v = values(r, c);
      if (blank_nan && is_masked(v)) continue;
      out << format_double(v);
    }
    out << '\n';
  }
  if (!out) throw IoError("failed while writing " + path.string());
}

struct CsvTable {
  std::vector<std::string> columns;  // without the timestamp column
  HourStamp start = 0;
  Matrix values;
};

CsvTable read_series_csv(const fs::path& path, Timescale scale,
                         bool allow_blank) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty file " + path.string());
  auto header = split_csv_line(line);
  if (header.empty() || header[0] != "timestamp")
    throw IoError(path.string() + ": first column must be 'timestamp'");
  CsvTable table;
  table.columns.assign(header.begin() + 1, header.end());

  std::vector<std::vector<double>> rows;
  HourStamp expect = 0;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw IoError(path.string() + ": row has " +
                    std::to_string(cells.size()) + " cells, expected " +
                    std::to_string(header.size()));
    const HourStamp t = parse_hour_utc(cells[0]);
    if (first) {
      table.start = t;
      if (t % scale.step_hours != 0)
        throw IoError(path.string() + ": series start is off the " +
                      scale_label(scale) + " grid");
      expect = t;
      first = false;
    }
    if (t != expect)
      throw IoError(path.string() + ": gap or disorder at " + cells[0]);
    expect = t + scale.step_hours;
    std::vector<double> row;
    row.reserve(cells.size() - 1);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      const double v = parse_cell(cells[c], path.string());
      if (!allow_blank && is_masked(v))
        throw IoError(path.string() + ": missing value at " + cells[0] +
                      " (forcings must be gap-free)");
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError(path.string() + ": no data rows");
  table.values.resize(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(table.columns.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      table.values(static_cast<Eigen::Index>(r),
                   static_cast<Eigen::Index>(c)) = rows[r][c];
  return table;
}

}  // namespace

void write_fleet(const std::string& dir,
                 const std::vector<BasinDataset>& basins) {
  if (basins.empty()) throw ConfigError("nothing to write: empty fleet");
  const fs::path root(dir);
  for (const auto& ds : basins) {
    for (const auto& blk : ds.scales) {
      const fs::path fdir = root / "forcings" / scale_label(blk.scale);
      const fs::path qdir = root / "discharge" / scale_label(blk.scale);
      fs::create_directories(fdir);
      fs::create_directories(qdir);
      write_series_csv(fdir / (ds.id + ".csv"), blk.feature_names, blk.start,
                       blk.scale, blk.forcings, false);
      write_series_csv(qdir / (ds.id + ".csv"), {"qobs_mm_per_hour"},
                       blk.start, blk.scale, blk.discharge, true);
    }
  }
  std::ofstream attrs(root / "attributes.csv");
  if (!attrs) throw IoError("cannot write attributes.csv");
  attrs << "basin_id";
  for (const auto& n : basins.front().attr_names) attrs << ',' << n;
  attrs << '\n';
  for (const auto& ds : basins) {
    attrs << ds.id;
    for (Eigen::Index i = 0; i < ds.static_attrs.size(); ++i)
      attrs << ',' << format_double(ds.static_attrs[i]);
    attrs << '\n';
  }
}

void write_fleet_manifest(const std::string& dir, const SynthFleet& fleet) {
  nlohmann::json manifest;
  for (std::size_t i = 0; i < fleet.configs.size(); ++i) {
    const auto& c = fleet.configs[i];
    nlohmann::json j;
    j["seed"] = c.seed;
    j["n_hours"] = c.n_hours;
    j["start"] = format_hour_utc(c.start);
    j["rain_event_rate"] = c.rain_event_rate;
    j["rain_event_depth"] = c.rain_event_depth;
    j["pet_amplitude"] = c.pet_amplitude;
    j["fast_k"] = c.fast_k;
    j["slow_k"] = c.slow_k;
    j["fast_fraction"] = c.fast_fraction;
    j["init_fast_storage"] = c.init_fast_storage;
    j["init_slow_storage"] = c.init_slow_storage;
    manifest[fleet.basins[i].id] = j;
  }
  std::ofstream out(fs::path(dir) / "fleet.json");
  if (!out) throw IoError("cannot write fleet.json");
  out << manifest.dump(2) << '\n';
}

std::vector<BasinDataset> load_fleet(const std::string& dir,
                                     const std::vector<std::string>& only) {
  const fs::path root(dir);
  std::ifstream attrs(root / "attributes.csv");
  if (!attrs) throw IoError("cannot open " + (root / "attributes.csv").string());
  std::string line;
  if (!std::getline(attrs, line)) throw IoError("empty attributes.csv");
  auto header = split_csv_line(line);
  if (header.empty() || header[0] != "basin_id")
    throw IoError("attributes.csv must start with basin_id");

  std::vector<BasinDataset> fleet;
  while (std::getline(attrs, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw IoError("attributes.csv row width mismatch");
    if (!only.empty() &&
        std::find(only.begin(), only.end(), cells[0]) == only.end())
      continue;
    BasinDataset ds;
    ds.id = cells[0];
    ds.attr_names.assign(header.begin() + 1, header.end());
    ds.static_attrs.resize(static_cast<Eigen::Index>(cells.size()) - 1);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      const double v = parse_cell(cells[c], "attributes.csv");
      if (is_masked(v)) throw IoError("missing attribute for " + ds.id);
      ds.static_attrs[static_cast<Eigen::Index>(c - 1)] = v;
    }
    fleet.push_back(std::move(ds));
  }
  if (fleet.empty()) throw IoError("no basins selected from " + dir);

  // discover the timescales present on disk
  std::vector<Timescale> scales;
  const fs::path fdir = root / "forcings";
  if (!fs::is_directory(fdir)) throw IoError("missing " + fdir.string());
  for (const auto& e : fs::directory_iterator(fdir))
    if (e.is_directory())
      scales.push_back(parse_scale_label(e.path().filename().string()));
  std::sort(scales.begin(), scales.end(),
            [](Timescale a, Timescale b) { return a.step_hours < b.step_hours; });
  if (scales.empty()) throw IoError("no timescale directories under forcings/");

  for (auto& ds : fleet) {
    for (const auto scale : scales) {
      const fs::path fpath =
          fdir / scale_label(scale) / (ds.id + ".csv");
      const fs::path qpath =
          root / "discharge" / scale_label(scale) / (ds.id + ".csv");
      CsvTable forc = read_series_csv(fpath, scale, false);
      CsvTable q = read_series_csv(qpath, scale, true);
      if (q.columns.size() != 1 || q.columns[0] != "qobs_mm_per_hour")
        throw IoError(qpath.string() +
                      ": discharge files carry a single qobs_mm_per_hour "
                      "column");
      if (q.start != forc.start || q.values.rows() != forc.values.rows())
        throw IoError("forcings and discharge disagree on the time axis for " +
                      ds.id + " at " + scale_label(scale));
      ScaleBlock blk;
      blk.scale = scale;
      blk.start = forc.start;
      blk.feature_names = forc.columns;
      blk.forcings = std::move(forc.values);
      blk.discharge = q.values.col(0);
      ds.scales.push_back(std::move(blk));
    }
  }
  return fleet;
}

void write_prediction_csv(const std::string& path, const RegularSeries& pred) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "timestamp,qsim_mm_per_hour\n";
  for (Eigen::Index i = 0; i < pred.values.size(); ++i) {
    if (is_masked(pred.values[i])) continue;  // uncovered step
    out << format_hour_utc(pred.start + i * pred.scale.step_hours) << ','
        << format_double(pred.values[i]) << '\n';
  }
}

RegularSeries read_prediction_csv(const std::string& path, Timescale scale) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty file " + path);
  auto header = split_csv_line(line);
  if (header.size() != 2 || header[0] != "timestamp")
    throw IoError(path + ": expected timestamp,qsim_mm_per_hour");
  std::vector<std::pair<HourStamp, double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != 2) throw IoError(path + ": bad row");
    rows.emplace_back(parse_hour_utc(cells[0]), parse_cell(cells[1], path));
  }
  if (rows.empty()) throw IoError(path + ": no predictions");
  RegularSeries out;
  out.scale = scale;
  out.start = rows.front().first;
  if (out.start % scale.step_hours != 0)
    throw IoError(path + ": start is off the " + scale_label(scale) + " grid");
  const HourStamp last = rows.back().first;
  const auto n = (last - out.start) / scale.step_hours + 1;
  out.values = Vector::Constant(n, std::numeric_limits<double>::quiet_NaN());
  for (const auto& [t, v] : rows) {
    const auto off = t - out.start;
    if (off < 0 || off % scale.step_hours != 0)
      throw IoError(path + ": timestamp off the grid: " + format_hour_utc(t));
    out.values[off / scale.step_hours] = v;
  }
  return out;
}

}  // namespace mts
