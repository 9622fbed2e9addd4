// flowda command-line driver.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "flowda/flowda.hpp"

namespace fs = std::filesystem;
using namespace flowda;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "configuration file (key = value)");
  sub->add_option("--set", c.sets, "override, e.g. --set flow.L=16 (repeatable)");
  sub->add_option("--seed", c.seed, "experiment seed");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    set_config_value(cfg, detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)));
  }
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

void ensure_parent(const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

Trajectory load_or_fail(const std::string& path, const char* what) {
  if (!fs::exists(path))
    throw DataError(std::string(what) + " trajectory '" + path + "' not found (run `flowda gen-data` first)");
  return read_trajectory(path);
}

struct Setup {
  Assimilator assim;
  VariableStats stats;
};

Setup make_assimilator(const ExperimentConfig& cfg) {
  switch (cfg.assim.method) {
    case AssimMethod::flowda: {
      if (!fs::exists(cfg.assim.checkpoint)) throw DataError("checkpoint '" + cfg.assim.checkpoint + "' not found");
      auto model = std::make_shared<const VelocityModel<float>>(load_checkpoint<float>(cfg.assim.checkpoint, &cfg.model));
      return {flowda_assimilator<float>(model, cfg.flow), model->stats()};
    }
    case AssimMethod::interp: {
      auto stats = trajectory_stats(load_or_fail(cfg.data.train_path, "training"));
      return {interp_assimilator(cfg.assim.interp_ell, cfg.model.window_k), stats};
    }
    case AssimMethod::oi: {
      auto stats = trajectory_stats(load_or_fail(cfg.data.train_path, "training"));
      return {oi_assimilator(cfg.assim.oi, stats, cfg.assim.oi_sigma_o_auto), stats};
    }
  }
  throw ConfigError("unknown assimilator");
}

void write_report(const std::vector<Record>& records, const std::string& prefix, int from_cycle,
                  const nlohmann::json& extra = {}) {
  ensure_parent(prefix);
  write_records_csv(records, prefix + ".csv");
  auto j = summary_json(records, from_cycle);
  if (!extra.is_null()) j["runs"] = extra;
  write_summary_json(j, prefix + ".json");
  std::cout << "wrote " << prefix << ".csv (" << records.size() << " rows) and " << prefix << ".json\n";
}

void print_summary(const std::vector<Record>& records, int from_cycle) {
  for (const auto& g : summarize(records, from_cycle)) {
    std::cout << g.experiment << " alpha=" << g.alpha << " sigma=" << g.sigma_noise << " " << g.location_mode << " "
              << g.variable << ": background " << g.rmse_background << "  analysis " << g.rmse_analysis;
    if (std::isfinite(g.rmse_freerun)) std::cout << "  free-run " << g.rmse_freerun;
    std::cout << "  (" << g.count << " rows)\n";
  }
}

void progress_line(const IterationRecord& r, long total) {
  if (r.iteration % 100 == 0 || r.iteration + 1 == total)
    std::cerr << "stage " << r.stage << " iter " << r.iteration << "/" << total << " loss " << r.loss << " T " << r.T
              << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flow-matching data assimilation on Lorenz-96 twin experiments"};
  app.require_subcommand(1);

  Common gen_c, s1_c, s2_c, as_c, ss_c, ns_c, cy_c, rp_c, ct_c;
  std::string s1_out = "runs/stage1.ckpt", s1_log;
  std::string s2_in = "runs/stage1.ckpt", s2_out = "runs/stage2.ckpt", s2_log;
  std::string as_bg, as_obs, as_out = "analysis.fdatrj";
  std::size_t as_index = 0;
  std::string ss_out = "runs/single_step", ns_out = "runs/noise_sweep", cy_out = "runs/cycle";
  int cy_runs = 1;
  std::string cy_mode;
  std::string rp_in, rp_out;
  std::string ct_out = "flowda.conf";

  auto* gen = app.add_subcommand("gen-data", "generate training and held-out trajectories");
  add_common(gen, gen_c);
  auto* s1 = app.add_subcommand("train-stage1", "Stage-I single-step training");
  add_common(s1, s1_c);
  s1->add_option("--out", s1_out, "checkpoint to write");
  s1->add_option("--log", s1_log, "training log CSV (default: train.log from config)");
  auto* s2 = app.add_subcommand("train-stage2", "Stage-II cycling fine-tuning from a Stage-I checkpoint");
  add_common(s2, s2_c);
  s2->add_option("--init", s2_in, "Stage-I checkpoint");
  s2->add_option("--out", s2_out, "checkpoint to write");
  s2->add_option("--log", s2_log, "training log CSV (appended)");
  auto* as = app.add_subcommand("assimilate", "assimilate one observation CSV into one background state");
  add_common(as, as_c);
  as->add_option("--background", as_bg, "trajectory file holding the background")->required();
  as->add_option("--index", as_index, "state index within the background file");
  as->add_option("--obs", as_obs, "observation CSV (h,w,v0,...)")->required();
  as->add_option("--out", as_out, "analysis trajectory file (one state)");
  auto* ss = app.add_subcommand("single-step", "single-step assimilation at the evaluation lead");
  add_common(ss, ss_c);
  ss->add_option("--out", ss_out, "report prefix (.csv and .json)");
  auto* ns = app.add_subcommand("noise-sweep", "single-step assimilation over observation-noise levels");
  add_common(ns, ns_c);
  ns->add_option("--out", ns_out, "report prefix (.csv and .json)");
  auto* cy = app.add_subcommand("cycle", "cycling assimilation with a free-run reference");
  add_common(cy, cy_c);
  cy->add_option("--out", cy_out, "report prefix (.csv and .json)");
  cy->add_option("--runs", cy_runs, "independent cycling runs (start times and draws)")->check(CLI::PositiveNumber);
  cy->add_option("--mode", cy_mode, "fixed | shuffled | both (default: eval.location_mode)");
  auto* rp = app.add_subcommand("report", "recompute the JSON summary of a records CSV");
  add_common(rp, rp_c);
  rp->add_option("--in", rp_in, "records CSV")->required();
  rp->add_option("--out", rp_out, "summary JSON (default: <in>.json)");
  auto* ct = app.add_subcommand("config-template", "write a fully commented default configuration");
  add_common(ct, ct_c);
  ct->add_option("--out", ct_out, "output path ('-' for stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      const auto cfg = resolve(gen_c);
      for (const auto& [path, len, seed] : {std::tuple{cfg.data.train_path, cfg.data.train_length, cfg.data.train_seed},
                                            std::tuple{cfg.data.test_path, cfg.data.test_length, cfg.data.test_seed}}) {
        const auto traj = generate_dataset(cfg.dynamics, cfg.data.spinup, len, seed);
        ensure_parent(path);
        write_trajectory(traj, path);
        std::cout << "wrote " << path << " (" << traj.size() << " states, seed " << seed << ")\n";
      }
    } else if (*s1) {
      const auto cfg = resolve(s1_c);
      const auto train = load_or_fail(cfg.data.train_path, "training");
      auto model = VelocityModel<float>::initialized(cfg.model, train.states.front().shape(),
                                                     train.states.front().variable_names(), trajectory_stats(train),
                                                     derive_seed(cfg.seed, Stream::model_init));
      const auto tc = cfg.train_config();
      const std::string log_path = s1_log.empty() ? cfg.train_log : s1_log;
      ensure_parent(log_path);
      TrainingLog log(log_path);
      train_stage1(model, train, tc, &log, [&](const IterationRecord& r) { progress_line(r, tc.stage1_iterations); });
      ensure_parent(s1_out);
      save_checkpoint(model, s1_out);
      std::cout << "wrote " << s1_out << "\n";
    } else if (*s2) {
      const auto cfg = resolve(s2_c);
      const auto train = load_or_fail(cfg.data.train_path, "training");
      auto model = load_checkpoint<float>(s2_in, &cfg.model);
      const auto tc = cfg.train_config();
      const std::string log_path = s2_log.empty() ? cfg.train_log : s2_log;
      ensure_parent(log_path);
      TrainingLog log(log_path, true);
      train_stage2(model, train, tc, cfg.flow, &log,
                   [&](const IterationRecord& r) { progress_line(r, tc.stage2_iterations); });
      ensure_parent(s2_out);
      save_checkpoint(model, s2_out);
      std::cout << "wrote " << s2_out << "\n";
    } else if (*as) {
      const auto cfg = resolve(as_c);
      const auto bg = read_trajectory(as_bg);
      if (as_index >= bg.size()) throw DataError("--index " + std::to_string(as_index) + " out of range");
      const auto obs = read_observations_csv(as_obs);
      obs.validate(bg[as_index].H(), bg[as_index].W());
      const auto setup = make_assimilator(cfg);
      Trajectory out;
      out.config = bg.config;
      out.seed = bg.seed;
      out.states.push_back(setup.assim({bg[as_index], obs, as_index, 0.0}));
      ensure_parent(as_out);
      write_trajectory(out, as_out);
      std::cout << "wrote " << as_out << "\n";
    } else if (*ss || *ns) {
      const auto cfg = resolve(*ss ? ss_c : ns_c);
      const auto test = load_or_fail(cfg.data.test_path, "held-out");
      const auto setup = make_assimilator(cfg);
      const auto records = *ss ? run_single_step(cfg, test, setup.stats, setup.assim)
                               : run_noise_sweep(cfg, test, setup.stats, setup.assim);
      print_summary(records, cfg.eval.summary_from_cycle);
      write_report(records, *ss ? ss_out : ns_out, cfg.eval.summary_from_cycle);
    } else if (*cy) {
      const auto cfg = resolve(cy_c);
      const auto test = load_or_fail(cfg.data.test_path, "held-out");
      const auto setup = make_assimilator(cfg);
      std::vector<LocationMode> modes{cfg.eval.location_mode};
      if (cy_mode == "both")
        modes = {LocationMode::fixed, LocationMode::shuffled};
      else if (!cy_mode.empty())
        modes = {parse_location_mode(cy_mode)};
      std::vector<Record> all;
      nlohmann::json runs = nlohmann::json::array();
      bool aborted = false;
      for (auto mode : modes) {
        for (int r = 0; r < cy_runs; ++r) {
          auto res = run_cycling(cfg, test, setup.stats, setup.assim, mode, static_cast<std::uint64_t>(r));
          nlohmann::json run = {{"mode", to_string(mode)}, {"run", r}, {"start_time", res.start_time},
                                {"freerun_observations_used", res.freerun_observations_used}};
          if (res.aborted_cycle) {
            aborted = true;
            run["aborted_cycle"] = *res.aborted_cycle;
            run["abort_reason"] = res.abort_reason;
            std::cerr << "run " << r << " (" << to_string(mode) << ") aborted at cycle " << *res.aborted_cycle << ": "
                      << res.abort_reason << "\n";
          }
          runs.push_back(std::move(run));
          all.insert(all.end(), res.records.begin(), res.records.end());
        }
      }
      print_summary(all, cfg.eval.summary_from_cycle);
      write_report(all, cy_out, cfg.eval.summary_from_cycle, runs);
      if (aborted) return exit_code(ErrorKind::numerical);
    } else if (*rp) {
      const auto cfg = resolve(rp_c);
      const auto records = read_records_csv(rp_in);
      std::string out = rp_out;
      if (out.empty()) out = (rp_in.size() > 4 && rp_in.ends_with(".csv") ? rp_in.substr(0, rp_in.size() - 4) : rp_in) + ".json";
      write_summary_json(summary_json(records, cfg.eval.summary_from_cycle), out);
      print_summary(records, cfg.eval.summary_from_cycle);
      std::cout << "wrote " << out << "\n";
    } else if (*ct) {
      const auto cfg = resolve(ct_c);
      if (ct_out == "-") {
        std::cout << config_template(cfg);
      } else {
        ensure_parent(ct_out);
        std::ofstream out(ct_out);
        if (!out) throw DataError("cannot open '" + ct_out + "' for writing");
        out << config_template(cfg);
        std::cout << "wrote " << ct_out << "\n";
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(ErrorKind::data);
  }
  return 0;
}
