#include "mtslstm/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

namespace mts {

namespace {

constexpr std::uint64_t kMagic = 0x314d54534c53544dULL;  // "MTSLSTM1"
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

void put_matrix(std::ostream& out, const Matrix& m) {
  put_u64(out, static_cast<std::uint64_t>(m.rows()));
  put_u64(out, static_cast<std::uint64_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
}

Matrix get_matrix(std::istream& in) {
  const auto rows = static_cast<Eigen::Index>(get_u64(in));
  const auto cols = static_cast<Eigen::Index>(get_u64(in));
  if (!in || rows < 0 || cols < 0 || rows > (1 << 24) || cols > (1 << 24))
    throw IoError("corrupt checkpoint: bad matrix header");
  Matrix m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!in) throw IoError("corrupt checkpoint: truncated matrix");
  return m;
}

void put_vector(std::ostream& out, const Vector& v) {
  put_u64(out, static_cast<std::uint64_t>(v.size()));
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

Vector get_vector(std::istream& in) {
  const auto n = static_cast<Eigen::Index>(get_u64(in));
  if (!in || n < 0 || n > (1 << 28))
    throw IoError("corrupt checkpoint: bad vector header");
  Vector v(n);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!in) throw IoError("corrupt checkpoint: truncated vector");
  return v;
}

void put_linear(std::ostream& out, const LinearWeights& lw) {
  put_matrix(out, lw.w);
  put_vector(out, lw.b);
}

LinearWeights get_linear(std::istream& in) {
  LinearWeights lw;
  lw.w = get_matrix(in);
  lw.b = get_vector(in);
  return lw;
}

}  // namespace

void save_checkpoint(const std::string& path, const MtsModelParams& params,
                     std::uint64_t config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  put_u64(out, kMagic);
  put_u32(out, kVersion);
  put_u64(out, config_hash);
  put_u32(out, static_cast<std::uint32_t>(params.lstm.size()));
  for (const auto& w : params.lstm) {
    put_u32(out, static_cast<std::uint32_t>(w.input_size));
    put_u32(out, static_cast<std::uint32_t>(w.hidden_size));
    put_matrix(out, w.w_ih);
    put_matrix(out, w.w_hh);
    put_vector(out, w.bias);
  }
  put_u32(out, static_cast<std::uint32_t>(params.fc_h.size()));
  for (std::size_t i = 0; i < params.fc_h.size(); ++i) {
    put_linear(out, params.fc_h[i]);
    put_linear(out, params.fc_c[i]);
  }
  put_u32(out, static_cast<std::uint32_t>(params.head.size()));
  for (const auto& h : params.head) put_linear(out, h);
  if (!out) throw IoError("failed while writing " + path);
}

MtsModelParams load_checkpoint(const std::string& path,
                               std::uint64_t expected_config_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  if (get_u64(in) != kMagic) throw IoError(path + " is not a checkpoint");
  if (get_u32(in) != kVersion)
    throw IoError(path + ": unsupported checkpoint version");
  const std::uint64_t hash = get_u64(in);
  if (hash != expected_config_hash)
    throw ConfigError("checkpoint was written for a different config (hash " +
                      std::to_string(hash) + " != " +
                      std::to_string(expected_config_hash) + ")");
  MtsModelParams params;
  const std::uint32_t n_lstm = get_u32(in);
  for (std::uint32_t i = 0; i < n_lstm; ++i) {
    LstmWeights w;
    w.input_size = static_cast<int>(get_u32(in));
    w.hidden_size = static_cast<int>(get_u32(in));
    w.w_ih = get_matrix(in);
    w.w_hh = get_matrix(in);
    w.bias = get_vector(in);
    w.check_shapes();
    params.lstm.push_back(std::move(w));
  }
  const std::uint32_t n_fc = get_u32(in);
  for (std::uint32_t i = 0; i < n_fc; ++i) {
    params.fc_h.push_back(get_linear(in));
    params.fc_c.push_back(get_linear(in));
  }
  const std::uint32_t n_head = get_u32(in);
  for (std::uint32_t i = 0; i < n_head; ++i)
    params.head.push_back(get_linear(in));
  return params;
}

void save_stats(const std::string& path, const StandardizationStats& stats) {
  nlohmann::json j;
  for (const auto& [step, fs] : stats.forcings) {
    nlohmann::json e;
    e["mean"] = std::vector<double>(fs.mean.data(), fs.mean.data() + fs.mean.size());
    e["std"] = std::vector<double>(fs.std.data(), fs.std.data() + fs.std.size());
    j["forcings"][std::to_string(step)] = e;
  }
  j["attrs"]["mean"] = std::vector<double>(
      stats.attrs.mean.data(), stats.attrs.mean.data() + stats.attrs.mean.size());
  j["attrs"]["std"] = std::vector<double>(
      stats.attrs.std.data(), stats.attrs.std.data() + stats.attrs.std.size());
  j["q_mean"] = stats.q_mean;
  j["q_std"] = stats.q_std;
  j["sigma_b"] = stats.sigma_b;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << '\n';
}

namespace {

Vector to_vector(const nlohmann::json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i)
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

}  // namespace

StandardizationStats load_stats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  in >> j;
  StandardizationStats stats;
  for (const auto& [key, e] : j.at("forcings").items()) {
    FeatureStats fs;
    fs.mean = to_vector(e.at("mean"));
    fs.std = to_vector(e.at("std"));
    stats.forcings[std::stoi(key)] = std::move(fs);
  }
  stats.attrs.mean = to_vector(j.at("attrs").at("mean"));
  stats.attrs.std = to_vector(j.at("attrs").at("std"));
  stats.q_mean = j.at("q_mean").get<double>();
  stats.q_std = j.at("q_std").get<double>();
  for (const auto& [key, v] : j.at("sigma_b").items())
    stats.sigma_b[key] = v.get<double>();
  return stats;
}

}  // namespace mts
