// Command-line front end for the supervisory prediction experiments.
//
// Subcommands: simulate (plant only), run (full supervisory experiment),
// meanfield (averaged-dynamics integration / stationary points), sweep
// (multi-config multi-seed medians), emit (one named CSV series from a
// trace), audit (round-trip consistency check of an output directory).
//
// Exit codes: 0 success, 2 configuration/usage error, 3 numerical failure.
// The default output directory is $SWITCHPRED_OUT, falling back to ./out.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "switchpred/harness.hpp"

namespace {

using namespace switchpred;

ExperimentConfig make_config(const std::string& config_path,
                             const std::vector<std::string>& overrides,
                             const std::string& out_dir) {
  ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
  for (const std::string& s : overrides) apply_override(cfg, s);
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  return cfg;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError("sweep: bad seed '" + tok + "'");
    }
  }
  return seeds;
}

int cmd_simulate(const std::string& config_path, const std::vector<std::string>& overrides,
                 const std::string& out_dir, std::size_t samples) {
  ExperimentConfig cfg = make_config(config_path, overrides, out_dir);
  cfg.validate();
  if (cfg.plant != "thermal") {
    throw ConfigError("simulate: only the thermal plant can be simulated");
  }
  const std::size_t horizon =
      samples > 0 ? samples : cfg.evaluations * cfg.grid.samples_per_evaluation;
  const BilinearSystem sys = thermal_zone_preset();
  const SignalGenerator inputs = SignalGenerator::piecewise_constant_random(
      sys.input_domains, cfg.hold_samples, derive_seed(cfg.seed, seed_stream::kInputs));
  const SignalGenerator disturbances = thermal_disturbance_trace(
      horizon + 1, cfg.grid.ts_hours, derive_seed(cfg.seed, seed_stream::kDisturbances));
  SimulationOptions opt;
  opt.substeps = cfg.substeps;
  opt.noise_std = cfg.noise_std;
  opt.noise_seed = derive_seed(cfg.seed, seed_stream::kNoise);
  const Eigen::VectorXd x0 =
      equilibrium_state(sys, Eigen::VectorXd::Zero(2), disturbances.value_at(0, 0.0));
  const History h = run_plant(sys, cfg.grid, inputs, disturbances, horizon, x0, opt);

  const std::filesystem::path dir(cfg.resolved_out_dir());
  std::filesystem::create_directories(dir);
  const auto path = dir / "history.jsonl";
  std::ofstream f(path);
  if (!f) throw std::runtime_error("simulate: cannot write " + path.string());
  write_history_jsonl(h, f);
  std::cout << "simulate: wrote " << h.size() << " samples to " << path.string() << '\n';
  return 0;
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides,
            const std::string& out_dir) {
  const ExperimentConfig cfg = make_config(config_path, overrides, out_dir);
  const ExperimentResult res = run_experiment(cfg, /*write_outputs=*/true);
  const MetricSeries& m = res.metrics;
  std::cout << "run: " << res.trace.size() << " evaluations on plant '" << cfg.plant << "'\n";
  if (!m.running_avg_error.empty()) {
    std::cout << "  final running-average error: " << m.running_avg_error.back() << '\n'
              << "  modal selection: profile " << m.modal_profile << ", models";
    for (std::size_t mm : m.modal_models) std::cout << ' ' << mm;
    std::cout << "\n  fraction of evaluations on modal selection: " << m.fraction_of_time.back()
              << '\n';
  }
  std::cout << "  trainings: " << res.counters.trainings
            << ", persistence fallbacks: " << res.counters.persistence_fallbacks
            << ", gain clamps: " << res.counters.gain_clamps
            << ", performance caps: " << res.counters.performance_caps << '\n';
  for (const std::string& path : res.written) std::cout << "  wrote " << path << '\n';
  return 0;
}

int cmd_meanfield(const std::string& scenario_path, bool stationary, double duration, double step,
                  std::size_t record_every, const std::string& scaling_name,
                  const std::string& out_dir) {
  std::ifstream f(scenario_path);
  if (!f) throw ConfigError("meanfield: cannot open scenario '" + scenario_path + "'");
  const MeanFieldScenario sc = parse_meanfield_scenario(f);
  TimeScaling scaling = TimeScaling::Uniform;
  if (scaling_name == "visitation") scaling = TimeScaling::Visitation;
  else if (scaling_name != "uniform") throw ConfigError("meanfield: scaling must be uniform|visitation");

  const MeanFieldPoint start = MeanFieldPoint::uniform(sc);
  if (stationary) {
    StationaryOptions opt;
    opt.scaling = scaling;
    const StationaryResult res = stationary_point(sc, start, opt);
    if (!res.converged) {
      throw std::runtime_error("meanfield: stationary-point iteration did not converge (residual " +
                               std::to_string(res.residual) + ")");
    }
    const AssumptionReport rep = check_assumptions(sc);
    std::cout << "stationary residual = " << res.residual << '\n'
              << "iterations = " << res.iterations << '\n'
              << "distance to best pure selection = "
              << distance_to_pure_selection(res.point, rep.best_profile, rep.best_models) << '\n';
    std::ostringstream ss;
    write_meanfield_csv(sc, {res.point}, 0.0, 1, ss);
    std::cout << ss.str();
    return 0;
  }

  IntegrationOptions opt;
  opt.step = step;
  opt.duration = duration;
  opt.record_every = record_every;
  opt.scaling = scaling;
  const std::vector<MeanFieldPoint> traj = integrate(sc, start, opt);

  std::string resolved = out_dir;
  if (resolved.empty()) {
    if (const char* env = std::getenv("SWITCHPRED_OUT"); env && *env) resolved = env;
    else resolved = "out";
  }
  const std::filesystem::path dir(resolved);
  std::filesystem::create_directories(dir);
  const auto path = dir / "meanfield.csv";
  std::ofstream out(path);
  if (!out) throw std::runtime_error("meanfield: cannot write " + path.string());
  write_meanfield_csv(sc, traj, step, record_every, out);
  std::cout << "meanfield: wrote " << traj.size() << " points to " << path.string() << '\n';
  return 0;
}

int cmd_sweep(const std::vector<std::string>& config_paths,
              const std::vector<std::string>& overrides, const std::string& seed_text,
              const std::string& out_dir) {
  std::vector<std::pair<std::string, ExperimentConfig>> configs;
  for (const std::string& path : config_paths) {
    configs.emplace_back(std::filesystem::path(path).stem().string(),
                         make_config(path, overrides, ""));
  }
  const std::vector<std::uint64_t> seeds = parse_seed_list(seed_text);
  const std::vector<SweepRow> rows = sweep(configs, seeds);

  std::string resolved = out_dir;
  if (resolved.empty()) {
    if (const char* env = std::getenv("SWITCHPRED_OUT"); env && *env) resolved = env;
    else resolved = "out";
  }
  const std::filesystem::path dir(resolved);
  std::filesystem::create_directories(dir);
  const auto path = dir / "sweep.csv";
  std::ofstream f(path);
  if (!f) throw std::runtime_error("sweep: cannot write " + path.string());
  write_sweep_csv(rows, f);
  std::ostringstream echo;
  write_sweep_csv(rows, echo);
  std::cout << echo.str() << "sweep: wrote " << path.string() << '\n';
  return 0;
}

int cmd_emit(const std::string& trace_path, const std::string& series,
             const std::string& out_dir) {
  std::ifstream f(trace_path);
  if (!f) throw ConfigError("emit: cannot open trace '" + trace_path + "'");
  const std::vector<TraceRow> trace = read_trace_jsonl(f);

  std::string resolved = out_dir;
  if (resolved.empty()) {
    if (const char* env = std::getenv("SWITCHPRED_OUT"); env && *env) resolved = env;
    else resolved = "out";
  }
  const std::filesystem::path dir(resolved);
  std::filesystem::create_directories(dir);
  const auto path = dir / (series + ".csv");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("emit: cannot write " + path.string());
  emit_plot_data(trace, series, out);
  std::cout << "emit: wrote " << path.string() << '\n';
  return 0;
}

int cmd_audit(const std::string& dir) {
  const AuditReport report = audit_outputs(dir);
  if (report.ok) {
    std::cout << "audit: ok (" << dir << ")\n";
    return 0;
  }
  std::cerr << "audit: FAILED\n";
  for (const std::string& issue : report.issues) std::cerr << "  - " << issue << '\n';
  return 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Supervisory one-step output prediction for bilinear plants: switched\n"
      "regression models and partition profiles selected online by\n"
      "reinforcement on probability simplices."};
  app.require_subcommand(1);

  std::string config_path, out_dir, seed_text = "1";
  std::vector<std::string> overrides;
  std::vector<std::string> config_paths;
  std::size_t samples = 0;

  auto* sim = app.add_subcommand("simulate", "Simulate the plant only and write history.jsonl");
  sim->add_option("-c,--config", config_path, "Config file");
  sim->add_option("-s,--set", overrides, "Override key=value (repeatable)");
  sim->add_option("-o,--out", out_dir, "Output directory");
  sim->add_option("--samples", samples, "Sample count (default: evaluations * N)");

  auto* run = app.add_subcommand("run", "Run the full supervisory experiment");
  run->add_option("-c,--config", config_path, "Config file");
  run->add_option("-s,--set", overrides, "Override key=value (repeatable)");
  run->add_option("-o,--out", out_dir, "Output directory");

  std::string scenario_path, scaling_name = "uniform";
  bool stationary = false;
  double duration = 50.0, step = 0.01;
  std::size_t record_every = 10;
  auto* mf = app.add_subcommand("meanfield", "Integrate the averaged selection dynamics");
  mf->add_option("--scenario", scenario_path, "Scenario file")->required();
  mf->add_flag("--stationary", stationary, "Solve for the stationary point instead");
  mf->add_option("--duration", duration, "Integration length in rescaled time");
  mf->add_option("--step", step, "RK4 step");
  mf->add_option("--record-every", record_every, "Keep every n-th point");
  mf->add_option("--scaling", scaling_name, "uniform|visitation");
  mf->add_option("-o,--out", out_dir, "Output directory");

  auto* sw = app.add_subcommand("sweep", "Median metrics across configs and seeds");
  sw->add_option("-c,--config", config_paths, "Config file (repeatable)");
  sw->add_option("-s,--set", overrides, "Override key=value applied to every config");
  sw->add_option("--seeds", seed_text, "Comma-separated seed list");
  sw->add_option("-o,--out", out_dir, "Output directory");

  std::string trace_path, series;
  auto* em = app.add_subcommand("emit", "Write one CSV series from a trace");
  em->add_option("--trace", trace_path, "trace.jsonl path")->required();
  em->add_option("--series", series,
                 "profile-weights|running-error|model-weights|mean-performance")
      ->required();
  em->add_option("-o,--out", out_dir, "Output directory");

  std::string audit_dir;
  auto* au = app.add_subcommand("audit", "Round-trip check of an output directory");
  au->add_option("--dir", audit_dir, "Directory holding trace.jsonl and CSVs")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (app.got_subcommand(sim)) return cmd_simulate(config_path, overrides, out_dir, samples);
    if (app.got_subcommand(run)) return cmd_run(config_path, overrides, out_dir);
    if (app.got_subcommand(mf)) {
      return cmd_meanfield(scenario_path, stationary, duration, step, record_every, scaling_name,
                           out_dir);
    }
    if (app.got_subcommand(sw)) return cmd_sweep(config_paths, overrides, seed_text, out_dir);
    if (app.got_subcommand(em)) return cmd_emit(trace_path, series, out_dir);
    if (app.got_subcommand(au)) return cmd_audit(audit_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
