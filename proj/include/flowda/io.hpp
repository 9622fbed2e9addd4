#pragma once

// Trajectory files, per-cycle RMSE records and the JSON run summary.

#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "flowda/dynamics.hpp"
#include "flowda/error.hpp"
#include "flowda/flow.hpp"

namespace flowda {

// ---------------------------------------------------------------------------
// Trajectory file: "FDATRJ1", u32 LE T, H, W, V, u32 LE byte length of the
// newline-joined variable names, the names, then T*H*W*V float32 LE values in
// (t, h, w, v) order. A `<path>.meta.json` sidecar records the dynamics.

inline constexpr char kTrajectoryMagic[7] = {'F', 'D', 'A', 'T', 'R', 'J', '1'};

inline nlohmann::json dynamics_json(const DynamicsConfig& c) {
  return {{"system", to_string(c.system)}, {"H", c.H},         {"W", c.W},
          {"F", c.F},                      {"c", c.c},         {"dt", c.dt},
          {"substeps", c.substeps},        {"forcing_error", c.forcing_error}};
}

inline DynamicsConfig dynamics_from_json(const nlohmann::json& j) {
  DynamicsConfig c;
  c.system = parse_system(j.at("system").get<std::string>());
  c.H = j.at("H").get<int>();
  c.W = j.at("W").get<int>();
  c.F = j.at("F").get<double>();
  c.c = j.at("c").get<double>();
  c.dt = j.at("dt").get<double>();
  c.substeps = j.at("substeps").get<int>();
  c.forcing_error = j.at("forcing_error").get<double>();
  return c;
}

inline void write_trajectory(const Trajectory& traj, const std::string& path) {
  if (traj.states.empty()) throw DataError("write_trajectory: empty trajectory");
  const GridShape shape = traj.states.front().shape();
  const auto& names = traj.states.front().variable_names();
  std::string joined;
  for (std::size_t i = 0; i < names.size(); ++i) joined += (i ? "\n" : "") + names[i];

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open trajectory '" + path + "' for writing");
  out.write(kTrajectoryMagic, 7);
  detail::put_u32(out, static_cast<std::uint32_t>(traj.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(shape.H));
  detail::put_u32(out, static_cast<std::uint32_t>(shape.W));
  detail::put_u32(out, static_cast<std::uint32_t>(shape.V));
  detail::put_u32(out, static_cast<std::uint32_t>(joined.size()));
  out.write(joined.data(), static_cast<std::streamsize>(joined.size()));
  for (const auto& s : traj.states) {
    if (!(s.shape() == shape)) throw ShapeError("write_trajectory: states differ in shape");
    for (double x : s.values()) detail::put_f32(out, static_cast<float>(x));
  }
  if (!out) throw DataError("write failed for trajectory '" + path + "'");

  nlohmann::json meta = {{"T", traj.size()},
                         {"H", shape.H},
                         {"W", shape.W},
                         {"V", shape.V},
                         {"variables", names},
                         {"seed", traj.seed},
                         {"dynamics", dynamics_json(traj.config)}};
  std::ofstream m(path + ".meta.json");
  if (!m) throw DataError("cannot write '" + path + ".meta.json'");
  m << meta.dump(2) << "\n";
}

/// Reads a trajectory; dynamics and seed come from the sidecar when present.
inline Trajectory read_trajectory(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open trajectory '" + path + "'");
  char magic[7];
  if (!in.read(magic, 7)) throw FormatError(path + ": truncated file");
  if (std::memcmp(magic, kTrajectoryMagic, 7) != 0) throw FormatError(path + ": bad magic bytes (not a trajectory)");
  const auto T = detail::get_u32(in, path);
  const int H = static_cast<int>(detail::get_u32(in, path));
  const int W = static_cast<int>(detail::get_u32(in, path));
  const int V = static_cast<int>(detail::get_u32(in, path));
  const auto nlen = detail::get_u32(in, path);
  if (nlen > (1u << 20)) throw FormatError(path + ": implausible name block length");
  std::string joined(nlen, '\0');
  if (!in.read(joined.data(), nlen)) throw FormatError(path + ": truncated file");
  std::vector<std::string> names;
  std::istringstream ns(joined);
  for (std::string line; std::getline(ns, line);) names.push_back(line);
  if (names.size() != static_cast<std::size_t>(V))
    throw FormatError(path + ": " + std::to_string(names.size()) + " variable names for V=" + std::to_string(V));
  const GridShape shape{H, W, V};

  Trajectory traj;
  traj.states.reserve(T);
  for (std::uint32_t t = 0; t < T; ++t) {
    std::vector<double> v(shape.size());
    for (auto& x : v) x = detail::get_f32(in, path);
    try {
      traj.states.emplace_back(shape, names, std::move(v));
    } catch (const Error& e) {
      throw FormatError(path + ": state " + std::to_string(t) + ": " + e.what());
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path + ": trailing bytes after states");

  traj.config.H = H;
  traj.config.W = W;
  traj.config.system = H == 1 ? System::ring : System::torus;
  std::ifstream m(path + ".meta.json");
  if (m) {
    try {
      const auto meta = nlohmann::json::parse(m);
      traj.config = dynamics_from_json(meta.at("dynamics"));
      traj.seed = meta.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ".meta.json: " + e.what());
    }
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Records: one row per (cycle, variable).

struct Record {
  std::string experiment;
  double alpha = 0.0;
  double sigma_noise = 0.0;
  std::string location_mode;
  int cycle = 0;
  long time_index = 0;
  std::string variable;
  double rmse_background = 0.0;
  double rmse_analysis = 0.0;
  double rmse_freerun = std::numeric_limits<double>::quiet_NaN();  ///< NaN outside cycling
  double wall_ms = 0.0;
};

inline constexpr const char* kRecordHeader =
    "experiment,alpha,sigma_noise,location_mode,cycle,time_index,variable,rmse_background,rmse_analysis,rmse_freerun,"
    "wall_ms";

inline void write_records_csv(const std::vector<Record>& records, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << kRecordHeader << "\n";
  for (const auto& r : records) {
    out << r.experiment << ',' << r.alpha << ',' << r.sigma_noise << ',' << r.location_mode << ',' << r.cycle << ','
        << r.time_index << ',' << r.variable << ',' << r.rmse_background << ',' << r.rmse_analysis << ',';
    if (std::isfinite(r.rmse_freerun)) out << r.rmse_freerun;
    out << ',' << r.wall_ms << '\n';
  }
  if (!out) throw DataError("write failed for '" + path + "'");
}

inline std::vector<Record> read_records_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open records '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != kRecordHeader)
    throw FormatError(path + ": missing or unexpected header");
  std::vector<Record> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() == 10 && !line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 11) throw FormatError(path + ":" + std::to_string(lineno) + ": expected 11 fields");
    try {
      Record r;
      r.experiment = f[0];
      r.alpha = std::stod(f[1]);
      r.sigma_noise = std::stod(f[2]);
      r.location_mode = f[3];
      r.cycle = std::stoi(f[4]);
      r.time_index = std::stol(f[5]);
      r.variable = f[6];
      r.rmse_background = std::stod(f[7]);
      r.rmse_analysis = std::stod(f[8]);
      r.rmse_freerun = f[9].empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(f[9]);
      r.wall_ms = std::stod(f[10]);
      out.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Summary: means grouped by (experiment, alpha, sigma_noise, location_mode,
// variable). Cycling rows before `from_cycle` are excluded.

struct SummaryGroup {
  std::string experiment;
  double alpha = 0.0;
  double sigma_noise = 0.0;
  std::string location_mode;
  std::string variable;
  std::size_t count = 0;
  double rmse_background = 0.0;
  double rmse_analysis = 0.0;
  double rmse_freerun = std::numeric_limits<double>::quiet_NaN();
  double wall_ms = 0.0;
};

inline bool is_cycling(const std::string& experiment) { return experiment == "cycle"; }

inline std::vector<SummaryGroup> summarize(const std::vector<Record>& records, int from_cycle) {
  using Key = std::tuple<std::string, double, double, std::string, std::string>;
  std::map<Key, SummaryGroup> groups;
  std::map<Key, std::size_t> freerun_count;
  for (const auto& r : records) {
    if (is_cycling(r.experiment) && r.cycle < from_cycle) continue;
    const Key key{r.experiment, r.alpha, r.sigma_noise, r.location_mode, r.variable};
    auto& g = groups[key];
    if (g.count == 0) {
      g.experiment = r.experiment;
      g.alpha = r.alpha;
      g.sigma_noise = r.sigma_noise;
      g.location_mode = r.location_mode;
      g.variable = r.variable;
    }
    ++g.count;
    g.rmse_background += r.rmse_background;
    g.rmse_analysis += r.rmse_analysis;
    g.wall_ms += r.wall_ms;
    if (std::isfinite(r.rmse_freerun)) {
      g.rmse_freerun = (freerun_count[key]++ == 0 ? 0.0 : g.rmse_freerun) + r.rmse_freerun;
    }
  }
  std::vector<SummaryGroup> out;
  for (auto& [key, g] : groups) {
    const double n = static_cast<double>(g.count);
    g.rmse_background /= n;
    g.rmse_analysis /= n;
    g.wall_ms /= n;
    const auto fc = freerun_count[key];
    if (fc > 0) g.rmse_freerun /= static_cast<double>(fc);
    out.push_back(g);
  }
  return out;
}

inline nlohmann::json summary_json(const std::vector<Record>& records, int from_cycle) {
  const auto groups = summarize(records, from_cycle);
  nlohmann::json j;
  j["empty"] = groups.empty();
  j["summary_from_cycle"] = from_cycle;
  j["groups"] = nlohmann::json::array();
  for (const auto& g : groups) {
    nlohmann::json e = {{"experiment", g.experiment},
                        {"alpha", g.alpha},
                        {"sigma_noise", g.sigma_noise},
                        {"location_mode", g.location_mode},
                        {"variable", g.variable},
                        {"count", g.count},
                        {"rmse_background", g.rmse_background},
                        {"rmse_analysis", g.rmse_analysis},
                        {"wall_ms", g.wall_ms}};
    e["rmse_freerun"] = std::isfinite(g.rmse_freerun) ? nlohmann::json(g.rmse_freerun) : nlohmann::json(nullptr);
    j["groups"].push_back(std::move(e));
  }
  return j;
}

inline void write_summary_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << j.dump(2) << "\n";
  if (!out) throw DataError("write failed for '" + path + "'");
}

}  // namespace flowda
