#pragma once

// Flat `key = value` experiment configuration with dotted keys, `#` comments
// and strict key checking.

#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "flowda/baselines.hpp"
#include "flowda/dynamics.hpp"
#include "flowda/error.hpp"
#include "flowda/flow.hpp"
#include "flowda/train.hpp"

namespace flowda {

enum class LocationMode { fixed, shuffled };

inline const char* to_string(LocationMode m) { return m == LocationMode::fixed ? "fixed" : "shuffled"; }

inline LocationMode parse_location_mode(const std::string& s) {
  if (s == "fixed") return LocationMode::fixed;
  if (s == "shuffled") return LocationMode::shuffled;
  throw ConfigError("unknown location mode '" + s + "' (expected fixed|shuffled)");
}

enum class AssimMethod { flowda, interp, oi };

inline const char* to_string(AssimMethod m) {
  switch (m) {
    case AssimMethod::flowda: return "flowda";
    case AssimMethod::interp: return "interp";
    case AssimMethod::oi: return "oi";
  }
  return "?";
}

inline AssimMethod parse_assim_method(const std::string& s) {
  if (s == "flowda") return AssimMethod::flowda;
  if (s == "interp") return AssimMethod::interp;
  if (s == "oi") return AssimMethod::oi;
  throw ConfigError("unknown assimilator '" + s + "' (expected flowda|interp|oi)");
}

struct DataConfig {
  int spinup = 500;
  int train_length = 20000;
  int test_length = 2000;
  std::uint64_t train_seed = 101;
  std::uint64_t test_seed = 202;  ///< must differ from train_seed (held-out segment)
  std::string train_path = "data/train.fdatrj";
  std::string test_path = "data/test.fdatrj";
};

struct AssimilatorConfig {
  AssimMethod method = AssimMethod::flowda;
  std::string checkpoint = "runs/stage2.ckpt";
  double interp_ell = 0.25;
  OIConfig oi;
  bool oi_sigma_o_auto = true;  ///< sigma_o = max(sigma_noise, 0.01)
};

struct EvalConfig {
  std::vector<double> alphas{0.05, 0.1, 0.2, 0.4};
  std::vector<double> sigmas{0.0, 0.05, 0.10, 0.20};
  LocationMode location_mode = LocationMode::shuffled;
  int n_cycles = 60;
  int free_run = 8;
  int times = 64;
  int lead = 8;
  double sigma_ic = 0.05;
  double cycle_alpha = 0.2;
  double cycle_sigma = 0.0;
  int summary_from_cycle = 10;
  bool record_wall_time = true;
};

struct ExperimentConfig {
  std::uint64_t seed = 7;
  DynamicsConfig dynamics;
  DataConfig data;
  FlowConfig flow;
  ModelArch model;
  TrainConfig train;
  std::string train_log = "runs/train_log.csv";
  AssimilatorConfig assim;
  EvalConfig eval;

  void validate() const {
    dynamics.validate();
    flow.validate();
    train.validate();
    assim.oi.validate();
    validate_window(model.window_k, dynamics.H, dynamics.W);
    if (data.train_length < 10 || data.test_length < 10) throw ConfigError("data lengths must be >= 10");
    if (data.train_seed == data.test_seed) throw ConfigError("data.train_seed and data.test_seed must differ");
    if (eval.n_cycles < 1) throw ConfigError("eval.n_cycles must be >= 1");
    if (eval.free_run < 0 || eval.lead < 0) throw ConfigError("eval.free_run and eval.lead must be >= 0");
    if (eval.times < 1) throw ConfigError("eval.times must be >= 1");
    for (double a : eval.alphas)
      if (!(a > 0.0 && a <= 1.0)) throw ConfigError("eval.alphas entries must lie in (0, 1]");
    if (!(eval.cycle_alpha > 0.0 && eval.cycle_alpha <= 1.0)) throw ConfigError("eval.cycle_alpha must lie in (0, 1]");
    for (double s : eval.sigmas)
      if (!(s >= 0.0)) throw ConfigError("eval.sigmas entries must be >= 0");
    if (!(assim.interp_ell > 0.0)) throw ConfigError("assim.interp_ell must be > 0");
  }

  /// The train config with the experiment seed folded in.
  TrainConfig train_config() const {
    TrainConfig t = train;
    t.seed = derive_seed(seed, {0x7472ULL});
    return t;
  }
};

namespace detail {

template <class T>
std::string fmt_value(const T& v) {
  std::ostringstream os;
  if constexpr (std::is_floating_point_v<T>) os << std::setprecision(std::numeric_limits<double>::max_digits10);
  os << v;
  return os.str();
}

template <class T>
std::string fmt_list(const std::vector<T>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? ", " : "") + fmt_value(xs[i]);
  return s;
}

inline double parse_double(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + s + "'");
  }
}

inline long parse_long(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + s + "'");
  }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& s) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != s.size() || s.front() == '-') throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + s + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config key '" + key + "': expected true|false, got '" + s + "'");
}

inline std::vector<double> parse_doubles(const std::string& key, const std::string& s) {
  std::vector<double> out;
  for (auto& part : split(s, ',')) out.push_back(parse_double(key, trim(part)));
  return out;
}

inline std::vector<int> parse_ints(const std::string& key, const std::string& s) {
  std::vector<int> out;
  for (auto& part : split(s, ',')) out.push_back(static_cast<int>(parse_long(key, trim(part))));
  return out;
}

}  // namespace detail

struct ConfigKey {
  std::string key;
  std::string comment;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

inline const std::vector<ConfigKey>& config_keys() {
  using C = ExperimentConfig;
  using namespace detail;
  static const std::vector<ConfigKey> keys = {
      {"seed", "experiment seed (observations, backgrounds, training draws)",
       [](const C& c) { return fmt_value(c.seed); }, [](C& c, const std::string& v) { c.seed = parse_u64("seed", v); }},

      {"dynamics.system", "ring (Lorenz-96, H = 1) | torus (coupled L96 rows)",
       [](const C& c) { return std::string(to_string(c.dynamics.system)); },
       [](C& c, const std::string& v) { c.dynamics.system = parse_system(v); }},
      {"dynamics.H", "grid rows (1 for ring)", [](const C& c) { return fmt_value(c.dynamics.H); },
       [](C& c, const std::string& v) { c.dynamics.H = static_cast<int>(parse_long("dynamics.H", v)); }},
      {"dynamics.W", "grid columns", [](const C& c) { return fmt_value(c.dynamics.W); },
       [](C& c, const std::string& v) { c.dynamics.W = static_cast<int>(parse_long("dynamics.W", v)); }},
      {"dynamics.F", "forcing", [](const C& c) { return fmt_value(c.dynamics.F); },
       [](C& c, const std::string& v) { c.dynamics.F = parse_double("dynamics.F", v); }},
      {"dynamics.c", "row coupling strength (torus only)", [](const C& c) { return fmt_value(c.dynamics.c); },
       [](C& c, const std::string& v) { c.dynamics.c = parse_double("dynamics.c", v); }},
      {"dynamics.dt", "RK4 step (model time units)", [](const C& c) { return fmt_value(c.dynamics.dt); },
       [](C& c, const std::string& v) { c.dynamics.dt = parse_double("dynamics.dt", v); }},
      {"dynamics.substeps", "RK4 steps per DA interval (1 interval ~ 6 h)",
       [](const C& c) { return fmt_value(c.dynamics.substeps); },
       [](C& c, const std::string& v) { c.dynamics.substeps = static_cast<int>(parse_long("dynamics.substeps", v)); }},
      {"dynamics.forcing_error", "forecast model runs with F + forcing_error (0 = perfect model)",
       [](const C& c) { return fmt_value(c.dynamics.forcing_error); },
       [](C& c, const std::string& v) { c.dynamics.forcing_error = parse_double("dynamics.forcing_error", v); }},

      {"data.spinup", "spin-up intervals discarded before recording", [](const C& c) { return fmt_value(c.data.spinup); },
       [](C& c, const std::string& v) { c.data.spinup = static_cast<int>(parse_long("data.spinup", v)); }},
      {"data.train_length", "training trajectory length (intervals)",
       [](const C& c) { return fmt_value(c.data.train_length); },
       [](C& c, const std::string& v) { c.data.train_length = static_cast<int>(parse_long("data.train_length", v)); }},
      {"data.test_length", "held-out trajectory length (intervals)", [](const C& c) { return fmt_value(c.data.test_length); },
       [](C& c, const std::string& v) { c.data.test_length = static_cast<int>(parse_long("data.test_length", v)); }},
      {"data.train_seed", "seed of the training trajectory", [](const C& c) { return fmt_value(c.data.train_seed); },
       [](C& c, const std::string& v) { c.data.train_seed = parse_u64("data.train_seed", v); }},
      {"data.test_seed", "seed of the held-out trajectory (must differ)", [](const C& c) { return fmt_value(c.data.test_seed); },
       [](C& c, const std::string& v) { c.data.test_seed = parse_u64("data.test_seed", v); }},
      {"data.train_path", "training trajectory file", [](const C& c) { return c.data.train_path; },
       [](C& c, const std::string& v) { c.data.train_path = v; }},
      {"data.test_path", "held-out trajectory file", [](const C& c) { return c.data.test_path; },
       [](C& c, const std::string& v) { c.data.test_path = v; }},

      {"flow.L", "Euler steps at inference (dtau = 1/L)", [](const C& c) { return fmt_value(c.flow.L); },
       [](C& c, const std::string& v) { c.flow.L = static_cast<int>(parse_long("flow.L", v)); }},

      {"model.width", "channels of the residual network", [](const C& c) { return fmt_value(c.model.width); },
       [](C& c, const std::string& v) { c.model.width = static_cast<int>(parse_long("model.width", v)); }},
      {"model.depth", "residual blocks", [](const C& c) { return fmt_value(c.model.depth); },
       [](C& c, const std::string& v) { c.model.depth = static_cast<int>(parse_long("model.depth", v)); }},
      {"model.conv_kernel", "odd convolution size (1 x k on ring, k x k on torus)",
       [](const C& c) { return fmt_value(c.model.conv_kernel); },
       [](C& c, const std::string& v) { c.model.conv_kernel = static_cast<int>(parse_long("model.conv_kernel", v)); }},
      {"model.tau_dim", "pseudo-time embedding channels (even)", [](const C& c) { return fmt_value(c.model.tau_dim); },
       [](C& c, const std::string& v) { c.model.tau_dim = static_cast<int>(parse_long("model.tau_dim", v)); }},
      {"model.tau_max_freq", "highest pseudo-time embedding frequency",
       [](const C& c) { return fmt_value(c.model.tau_max_freq); },
       [](C& c, const std::string& v) { c.model.tau_max_freq = parse_double("model.tau_max_freq", v); }},

      {"model.innovation_channel", "add rho/(1+rho) * (x_o - X_tau) conditioning channels (false = plain concatenation)",
       [](const C& c) { return std::string(c.model.innovation_channel ? "true" : "false"); },
       [](C& c, const std::string& v) { c.model.innovation_channel = parse_bool("model.innovation_channel", v); }},

      {"kernel.mode", "SetConv kernel: learned (MLP_h x MLP_w) | gaussian",
       [](const C& c) { return std::string(to_string(c.model.kernel_mode)); },
       [](C& c, const std::string& v) { c.model.kernel_mode = parse_kernel_mode(v); }},
      {"kernel.k", "odd neighbor window (grid units)", [](const C& c) { return fmt_value(c.model.window_k); },
       [](C& c, const std::string& v) { c.model.window_k = static_cast<int>(parse_long("kernel.k", v)); }},
      {"kernel.ell_h", "gaussian scale along rows (also the learned kernel's initial fit)",
       [](const C& c) { return fmt_value(c.model.ell_h); },
       [](C& c, const std::string& v) { c.model.ell_h = parse_double("kernel.ell_h", v); }},
      {"kernel.ell_w", "gaussian scale along columns", [](const C& c) { return fmt_value(c.model.ell_w); },
       [](C& c, const std::string& v) { c.model.ell_w = parse_double("kernel.ell_w", v); }},
      {"kernel.hidden", "hidden layer sizes of each kernel MLP", [](const C& c) { return fmt_list(c.model.kernel_hidden); },
       [](C& c, const std::string& v) { c.model.kernel_hidden = parse_ints("kernel.hidden", v); }},

      {"train.lr", "AdamW learning rate", [](const C& c) { return fmt_value(c.train.lr); },
       [](C& c, const std::string& v) { c.train.lr = parse_double("train.lr", v); }},
      {"train.stage2_lr", "AdamW learning rate for Stage-II fine-tuning", [](const C& c) { return fmt_value(c.train.stage2_lr); },
       [](C& c, const std::string& v) { c.train.stage2_lr = parse_double("train.stage2_lr", v); }},
      {"train.stage1_iterations", "Stage-I optimizer steps", [](const C& c) { return fmt_value(c.train.stage1_iterations); },
       [](C& c, const std::string& v) { c.train.stage1_iterations = parse_long("train.stage1_iterations", v); }},
      {"train.stage2_iterations", "Stage-II optimizer steps (about 1/12 of Stage I)",
       [](const C& c) { return fmt_value(c.train.stage2_iterations); },
       [](C& c, const std::string& v) { c.train.stage2_iterations = parse_long("train.stage2_iterations", v); }},
      {"train.batch_size", "samples per Stage-I step", [](const C& c) { return fmt_value(c.train.batch_size); },
       [](C& c, const std::string& v) { c.train.batch_size = static_cast<int>(parse_long("train.batch_size", v)); }},
      {"train.alpha_min", "lower end of the log-uniform observation-rate range",
       [](const C& c) { return fmt_value(c.train.alpha_min); },
       [](C& c, const std::string& v) { c.train.alpha_min = parse_double("train.alpha_min", v); }},
      {"train.alpha_max", "upper end of the observation-rate range", [](const C& c) { return fmt_value(c.train.alpha_max); },
       [](C& c, const std::string& v) { c.train.alpha_max = parse_double("train.alpha_max", v); }},
      {"train.lead", "background lead in intervals (8 ~ 48 h)", [](const C& c) { return fmt_value(c.train.lead); },
       [](C& c, const std::string& v) { c.train.lead = static_cast<int>(parse_long("train.lead", v)); }},
      {"train.rollout_max", "Stage-II rollout length T ~ U{1..rollout_max}",
       [](const C& c) { return fmt_value(c.train.rollout_max); },
       [](C& c, const std::string& v) { c.train.rollout_max = static_cast<int>(parse_long("train.rollout_max", v)); }},
      {"train.stage2_rollouts", "independent rollouts per Stage-II iteration",
       [](const C& c) { return fmt_value(c.train.stage2_rollouts); },
       [](C& c, const std::string& v) { c.train.stage2_rollouts = static_cast<int>(parse_long("train.stage2_rollouts", v)); }},
      {"train.sigma_ic", "background IC perturbation (climatological std units)",
       [](const C& c) { return fmt_value(c.train.sigma_ic); },
       [](C& c, const std::string& v) { c.train.sigma_ic = parse_double("train.sigma_ic", v); }},
      {"train.sigma_noise_max", "observation noise during training, U[0, max] per sample (0 = clean)",
       [](const C& c) { return fmt_value(c.train.sigma_noise_max); },
       [](C& c, const std::string& v) { c.train.sigma_noise_max = parse_double("train.sigma_noise_max", v); }},
      {"train.source_noise", "noise added to X_0 during training (0 = deterministic background)",
       [](const C& c) { return fmt_value(c.train.source_noise); },
       [](C& c, const std::string& v) { c.train.source_noise = parse_double("train.source_noise", v); }},
      {"train.weight_decay", "decoupled weight decay", [](const C& c) { return fmt_value(c.train.weight_decay); },
       [](C& c, const std::string& v) { c.train.weight_decay = parse_double("train.weight_decay", v); }},
      {"train.log", "training log CSV", [](const C& c) { return c.train_log; },
       [](C& c, const std::string& v) { c.train_log = v; }},

      {"assim.method", "flowda | interp | oi", [](const C& c) { return std::string(to_string(c.assim.method)); },
       [](C& c, const std::string& v) { c.assim.method = parse_assim_method(v); }},
      {"assim.checkpoint", "checkpoint used by the flowda assimilator", [](const C& c) { return c.assim.checkpoint; },
       [](C& c, const std::string& v) { c.assim.checkpoint = v; }},
      {"assim.interp_ell", "gaussian scale of the interpolation-blend baseline",
       [](const C& c) { return fmt_value(c.assim.interp_ell); },
       [](C& c, const std::string& v) { c.assim.interp_ell = parse_double("assim.interp_ell", v); }},
      {"oi.ell_b", "background-error correlation length (grid units)", [](const C& c) { return fmt_value(c.assim.oi.ell_b); },
       [](C& c, const std::string& v) { c.assim.oi.ell_b = parse_double("oi.ell_b", v); }},
      {"oi.sigma_b", "background-error std (climatological std units)",
       [](const C& c) { return fmt_value(c.assim.oi.sigma_b); },
       [](C& c, const std::string& v) { c.assim.oi.sigma_b = parse_double("oi.sigma_b", v); }},
      {"oi.sigma_o", "observation-error std; 'auto' = max(noise level, 0.01)",
       [](const C& c) { return c.assim.oi_sigma_o_auto ? std::string("auto") : fmt_value(c.assim.oi.sigma_o); },
       [](C& c, const std::string& v) {
         if (v == "auto") {
           c.assim.oi_sigma_o_auto = true;
         } else {
           c.assim.oi_sigma_o_auto = false;
           c.assim.oi.sigma_o = parse_double("oi.sigma_o", v);
         }
       }},

      {"eval.alphas", "observation rates of single-step and noise-sweep runs",
       [](const C& c) { return fmt_list(c.eval.alphas); },
       [](C& c, const std::string& v) { c.eval.alphas = parse_doubles("eval.alphas", v); }},
      {"eval.sigmas", "relative observation-noise levels of the noise sweep",
       [](const C& c) { return fmt_list(c.eval.sigmas); },
       [](C& c, const std::string& v) { c.eval.sigmas = parse_doubles("eval.sigmas", v); }},
      {"eval.location_mode", "cycling observation locations: fixed | shuffled",
       [](const C& c) { return std::string(to_string(c.eval.location_mode)); },
       [](C& c, const std::string& v) { c.eval.location_mode = parse_location_mode(v); }},
      {"eval.n_cycles", "cycles of the cycling run (60 ~ 15 days)", [](const C& c) { return fmt_value(c.eval.n_cycles); },
       [](C& c, const std::string& v) { c.eval.n_cycles = static_cast<int>(parse_long("eval.n_cycles", v)); }},
      {"eval.free_run", "free-run intervals producing the cycle-0 background (8 ~ 2 days)",
       [](const C& c) { return fmt_value(c.eval.free_run); },
       [](C& c, const std::string& v) { c.eval.free_run = static_cast<int>(parse_long("eval.free_run", v)); }},
      {"eval.times", "evaluation times drawn from the held-out trajectory", [](const C& c) { return fmt_value(c.eval.times); },
       [](C& c, const std::string& v) { c.eval.times = static_cast<int>(parse_long("eval.times", v)); }},
      {"eval.lead", "single-step background lead (intervals)", [](const C& c) { return fmt_value(c.eval.lead); },
       [](C& c, const std::string& v) { c.eval.lead = static_cast<int>(parse_long("eval.lead", v)); }},
      {"eval.sigma_ic", "background IC perturbation at evaluation", [](const C& c) { return fmt_value(c.eval.sigma_ic); },
       [](C& c, const std::string& v) { c.eval.sigma_ic = parse_double("eval.sigma_ic", v); }},
      {"eval.cycle_alpha", "observation rate of the cycling run", [](const C& c) { return fmt_value(c.eval.cycle_alpha); },
       [](C& c, const std::string& v) { c.eval.cycle_alpha = parse_double("eval.cycle_alpha", v); }},
      {"eval.cycle_sigma", "observation noise of the cycling run", [](const C& c) { return fmt_value(c.eval.cycle_sigma); },
       [](C& c, const std::string& v) { c.eval.cycle_sigma = parse_double("eval.cycle_sigma", v); }},
      {"eval.summary_from_cycle", "first cycle included in cycling summary means",
       [](const C& c) { return fmt_value(c.eval.summary_from_cycle); },
       [](C& c, const std::string& v) {
         c.eval.summary_from_cycle = static_cast<int>(parse_long("eval.summary_from_cycle", v));
       }},
      {"eval.record_wall_time", "write assimilation wall time to reports (false gives byte-reproducible reports)",
       [](const C& c) { return std::string(c.eval.record_wall_time ? "true" : "false"); },
       [](C& c, const std::string& v) { c.eval.record_wall_time = parse_bool("eval.record_wall_time", v); }},
  };
  return keys;
}

/// Apply one `key = value` assignment; unknown keys are errors.
inline void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : config_keys()) {
    if (k.key == key) {
      k.set(cfg, value);
      // The ring carries a single row.
      if (key == "dynamics.system" && cfg.dynamics.system == System::ring) cfg.dynamics.H = 1;
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

inline void apply_config_text(ExperimentConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    try {
      set_config_value(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  ExperimentConfig cfg;
  apply_config_text(cfg, ss.str(), path);
  return cfg;
}

/// Fully commented configuration holding the given (default) values.
inline std::string config_template(const ExperimentConfig& cfg = {}) {
  std::ostringstream os;
  os << "# flowda experiment configuration\n"
     << "# Flat key = value pairs; '#' starts a comment; unknown keys are rejected.\n"
     << "# One DA interval ~ 6 h: lead 8 ~ 48 h, 60 cycles ~ 15 days, free run 8 ~ 2 days.\n";
  std::string section;
  for (const auto& k : config_keys()) {
    const auto dot = k.key.find('.');
    const std::string sec = dot == std::string::npos ? "" : k.key.substr(0, dot);
    if (sec != section) {
      os << "\n";
      section = sec;
    }
    os << "# " << k.comment << "\n" << k.key << " = " << k.get(cfg) << "\n";
  }
  return os.str();
}

inline void emit_config_template(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << config_template();
  if (!out) throw DataError("write failed for '" + path + "'");
}

}  // namespace flowda
