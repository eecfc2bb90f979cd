#pragma once

// Experiment orchestration: plain-text configuration with CLI-style
// overrides, the closed supervisory loop over a simulated or recorded plant,
// metric series (running-average error, probability trajectories,
// fraction-of-time-on-modal-selection), JSONL trace and CSV emission,
// multi-seed sweeps, and a round-trip audit of emitted files.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "switchpred/errors.hpp"
#include "switchpred/meanfield.hpp"
#include "switchpred/models.hpp"
#include "switchpred/partition.hpp"
#include "switchpred/plant.hpp"
#include "switchpred/supervisor.hpp"

namespace switchpred {

// --- configuration -----------------------------------------------------------

// Flat key/value experiment description. Every key can come from a config
// file ("key = value" lines, full-line '#' comments) or from an override
// string "key=value"; later assignments win.
//
// Keys:
//   plant                        thermal | recorded
//   history                      input JSONL path (required for recorded)
//   out_dir                      output directory (default: $SWITCHPRED_OUT or ./out)
//   grid.ts_hours                sampling period, hours
//   grid.samples_per_evaluation  N, samples per supervisory interval
//   grid.rho                     training-window length in samples (0 = N)
//   run.evaluations              number of supervisory intervals
//   run.seed                     master seed
//   run.noise_std                measurement-noise standard deviation
//   run.substeps                 RK4 substeps per sampling step
//   run.write_history            0|1, also write the sample history JSONL
//   inputs.hold_samples          hold length of the random input signal
//   models                       comma list of model names (lin<k>, bil<k>)
//   partitions                   profile menu: profiles split by ';', inputs
//                                by '|', breakpoints by ','  (empty list =
//                                unpartitioned input)
//   supervisor.epsilon           learning rate
//   supervisor.lambda            exploration weight
//   supervisor.performance_cap   cap on the inverse-error performance
struct ExperimentConfig {
  std::string plant = "thermal";
  std::string history_path;
  TimeGrid grid{1.0 / 12.0, 400, 0};
  std::size_t evaluations = 600;
  std::uint64_t seed = 1;
  double noise_std = 0.4;
  std::size_t substeps = 10;
  bool write_history = false;
  std::size_t hold_samples = 6;
  std::vector<std::string> models = {"lin2", "lin3", "bil2"};
  std::string partitions = "|;0.5|0.5";
  double epsilon = 0.05;
  double lambda = 0.03;
  double performance_cap = 1e6;
  std::string out_dir;

  void apply(const std::string& key, const std::string& value) {
    auto as_double = [&](const std::string& s) {
      try {
        std::size_t used = 0;
        const double x = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return x;
      } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' needs a number, got '" + s + "'");
      }
    };
    auto as_u64 = [&](const std::string& s) {
      try {
        std::size_t used = 0;
        const unsigned long long x = std::stoull(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return static_cast<std::uint64_t>(x);
      } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' needs a nonnegative integer, got '" + s + "'");
      }
    };

    if (key == "plant") plant = value;
    else if (key == "history") history_path = value;
    else if (key == "out_dir") out_dir = value;
    else if (key == "grid.ts_hours") grid.ts_hours = as_double(value);
    else if (key == "grid.samples_per_evaluation") grid.samples_per_evaluation = as_u64(value);
    else if (key == "grid.rho") grid.rho = as_u64(value);
    else if (key == "run.evaluations") evaluations = as_u64(value);
    else if (key == "run.seed") seed = as_u64(value);
    else if (key == "run.noise_std") noise_std = as_double(value);
    else if (key == "run.substeps") substeps = as_u64(value);
    else if (key == "run.write_history") write_history = as_u64(value) != 0;
    else if (key == "inputs.hold_samples") hold_samples = as_u64(value);
    else if (key == "models") {
      models.clear();
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b == std::string::npos) continue;
        models.push_back(item.substr(b, e - b + 1));
      }
      if (models.empty()) throw ConfigError("config: 'models' must list at least one model");
    } else if (key == "partitions") partitions = value;
    else if (key == "supervisor.epsilon") epsilon = as_double(value);
    else if (key == "supervisor.lambda") lambda = as_double(value);
    else if (key == "supervisor.performance_cap") performance_cap = as_double(value);
    else throw ConfigError("config: unknown key '" + key + "'");
  }

  void validate() const {
    if (plant != "thermal" && plant != "recorded") {
      throw ConfigError("config: plant must be 'thermal' or 'recorded'");
    }
    if (plant == "recorded" && history_path.empty()) {
      throw ConfigError("config: plant=recorded requires 'history'");
    }
    if (evaluations == 0) throw ConfigError("config: run.evaluations must be >= 1");
    if (!(grid.ts_hours > 0.0)) throw ConfigError("config: grid.ts_hours must be > 0");
    if (grid.samples_per_evaluation == 0) {
      throw ConfigError("config: grid.samples_per_evaluation must be >= 1");
    }
    if (!(epsilon > 0.0)) throw ConfigError("config: supervisor.epsilon must be > 0");
    if (!(lambda >= 0.0) || lambda >= 1.0) {
      throw ConfigError("config: supervisor.lambda must lie in [0, 1)");
    }
    if (!(performance_cap > 0.0)) throw ConfigError("config: supervisor.performance_cap must be > 0");
    if (!(noise_std >= 0.0)) throw ConfigError("config: run.noise_std must be >= 0");
    if (substeps == 0) throw ConfigError("config: run.substeps must be >= 1");
    if (hold_samples == 0) throw ConfigError("config: inputs.hold_samples must be >= 1");
    if (models.empty()) throw ConfigError("config: need at least one model");
  }

  std::string resolved_out_dir() const {
    if (!out_dir.empty()) return out_dir;
    if (const char* env = std::getenv("SWITCHPRED_OUT"); env && *env) return env;
    return "out";
  }
};

// "key=value" override, as accepted on the command line.
inline void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("config: override must look like key=value, got '" + assignment + "'");
  }
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  cfg.apply(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

inline ExperimentConfig parse_config(std::istream& is) {
  ExperimentConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(lineno) + " is not 'key = value'");
    }
    auto trim = [](std::string s) {
      const auto x = s.find_first_not_of(" \t\r");
      const auto y = s.find_last_not_of(" \t\r");
      return x == std::string::npos ? std::string() : s.substr(x, y - x + 1);
    };
    cfg.apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open '" + path + "'");
  return parse_config(f);
}

// Partition-profile menu from its textual form, against the given per-input
// domains. Example with two inputs: "|;0.5|0.25,0.75" declares one
// unpartitioned profile and one profile splitting input 0 at 0.5 and input 1
// at 0.25 and 0.75.
inline std::vector<PartitionProfile> parse_partition_menu(const std::string& text,
                                                          const std::vector<Interval>& domains) {
  auto split = [](const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string item;
    std::stringstream ss(s);
    while (std::getline(ss, item, sep)) out.push_back(item);
    if (s.empty() || s.back() == sep) out.push_back("");
    return out;
  };
  std::vector<PartitionProfile> menu;
  for (const std::string& profile_text : split(text, ';')) {
    const std::vector<std::string> per_input = split(profile_text, '|');
    if (per_input.size() != domains.size()) {
      throw ConfigError("config: partition profile '" + profile_text + "' declares " +
                        std::to_string(per_input.size()) + " inputs, plant has " +
                        std::to_string(domains.size()));
    }
    std::vector<PartitionPattern> patterns;
    for (std::size_t i = 0; i < per_input.size(); ++i) {
      std::vector<double> breaks;
      for (const std::string& tok : split(per_input[i], ',')) {
        const auto b = tok.find_first_not_of(" \t");
        if (b == std::string::npos) continue;
        const auto e = tok.find_last_not_of(" \t");
        try {
          std::size_t used = 0;
          const std::string num = tok.substr(b, e - b + 1);
          breaks.push_back(std::stod(num, &used));
          if (used != num.size()) throw std::invalid_argument(num);
        } catch (const std::exception&) {
          throw ConfigError("config: bad breakpoint '" + tok + "' in partitions");
        }
      }
      try {
        patterns.emplace_back(domains[i], std::move(breaks));
      } catch (const std::invalid_argument& ex) {
        throw ConfigError(std::string("config: ") + ex.what());
      }
    }
    menu.emplace_back(std::move(patterns));
  }
  if (menu.empty()) throw ConfigError("config: partitions must declare >= 1 profile");
  return menu;
}

// --- thermal scenario signals ---------------------------------------------------

// Disturbance trace for the thermal preset: a 24 h outdoor-temperature
// sinusoid (8 +- 6 deg C peaking at 15:00), a seeded daily solar pulse
// (half-sine between 06:00 and 18:00 with a per-day amplitude in
// [0.2, 1] kW), and a constant 45 deg C water supply temperature.
inline SignalGenerator thermal_disturbance_trace(std::size_t samples, double ts_hours,
                                                 std::uint64_t seed) {
  std::vector<Eigen::VectorXd> trace;
  trace.reserve(samples);
  for (std::size_t j = 0; j < samples; ++j) {
    const double t = static_cast<double>(j) * ts_hours;
    const double t_day = t - 24.0 * std::floor(t / 24.0);
    const auto day = static_cast<std::uint64_t>(std::floor(t / 24.0));
    RngStream day_rng(derive_seed(seed, day));
    const double q_day = day_rng.uniform(0.2, 1.0);
    Eigen::VectorXd d(3);
    d(0) = 8.0 + 6.0 * std::sin(2.0 * M_PI * (t - 9.0) / 24.0);
    d(1) = q_day * std::max(0.0, std::sin(M_PI * (t_day - 6.0) / 12.0));
    d(2) = 45.0;
    trace.push_back(d);
  }
  return SignalGenerator::recorded_trace(std::move(trace));
}

// --- per-run records ------------------------------------------------------------

// One line of the per-evaluation trace: what ran during interval k, how it
// scored, and the post-update strategy state.
struct TraceRow {
  std::size_t k = 0;
  std::size_t profile = 0;
  std::vector<std::size_t> models;                 // assignment evaluated, per subset
  std::vector<double> r;                           // per subset (0 when unvisited)
  double R = 0.0;
  double mse = 0.0;
  std::size_t trainings = 0;
  std::vector<double> w;                           // post-update profile strategy
  std::vector<std::vector<std::vector<double>>> v; // post-update [profile][subset][model]
};

struct MetricSeries {
  std::vector<double> mse;                 // per evaluation
  std::vector<double> running_avg_error;   // cumulative mean of mse
  std::vector<std::vector<double>> w;      // per evaluation snapshot
  std::vector<std::size_t> profile;        // profile evaluated at k
  std::vector<std::vector<std::size_t>> models;  // assignment evaluated at k
  std::vector<double> aggregate;           // R per evaluation
  std::size_t modal_profile = 0;           // most frequent selection over the final half
  std::vector<std::size_t> modal_models;   // its most frequent per-subset assignment
  std::vector<double> fraction_of_time;    // cumulative share of evaluations on the modal pair
};

inline MetricSeries compute_metrics(const std::vector<TraceRow>& trace) {
  MetricSeries out;
  const std::size_t n = trace.size();
  out.mse.reserve(n);
  out.running_avg_error.reserve(n);
  double err_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const TraceRow& row = trace[i];
    out.mse.push_back(row.mse);
    err_sum += row.mse;
    out.running_avg_error.push_back(err_sum / static_cast<double>(i + 1));
    out.w.push_back(row.w);
    out.profile.push_back(row.profile);
    out.models.push_back(row.models);
    out.aggregate.push_back(row.R);
  }
  if (n == 0) return out;

  // Modal selection over the final half, counted on (profile, assignment).
  std::map<std::pair<std::size_t, std::vector<std::size_t>>, std::size_t> counts;
  for (std::size_t i = n / 2; i < n; ++i) {
    ++counts[{trace[i].profile, trace[i].models}];
  }
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  out.modal_profile = best->first.first;
  out.modal_models = best->first.second;

  out.fraction_of_time.reserve(n);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (trace[i].profile == out.modal_profile && trace[i].models == out.modal_models) ++hits;
    out.fraction_of_time.push_back(static_cast<double>(hits) / static_cast<double>(i + 1));
  }
  return out;
}

// --- trace serialization ----------------------------------------------------------

inline void write_trace_jsonl(const std::vector<TraceRow>& trace, std::ostream& os) {
  for (const TraceRow& row : trace) {
    nlohmann::ordered_json line;
    line["k"] = row.k;
    line["profile"] = row.profile;
    nlohmann::ordered_json models = nlohmann::ordered_json::object();
    for (std::size_t a = 0; a < row.models.size(); ++a) {
      models[std::to_string(a)] = row.models[a];
    }
    line["models"] = models;
    nlohmann::ordered_json r = nlohmann::ordered_json::object();
    for (std::size_t a = 0; a < row.r.size(); ++a) r[std::to_string(a)] = row.r[a];
    line["r"] = r;
    line["R"] = row.R;
    line["w"] = row.w;
    nlohmann::ordered_json v = nlohmann::ordered_json::object();
    for (std::size_t p = 0; p < row.v.size(); ++p) {
      nlohmann::ordered_json per_profile = nlohmann::ordered_json::object();
      for (std::size_t a = 0; a < row.v[p].size(); ++a) {
        per_profile[std::to_string(a)] = row.v[p][a];
      }
      v[std::to_string(p)] = per_profile;
    }
    line["v"] = v;
    line["mse"] = row.mse;
    line["trainings"] = row.trainings;
    os << line.dump() << '\n';
  }
}

inline std::vector<TraceRow> read_trace_jsonl(std::istream& is) {
  std::vector<TraceRow> trace;
  std::string text;
  while (std::getline(is, text)) {
    if (text.empty()) continue;
    const nlohmann::json obj = nlohmann::json::parse(text);
    TraceRow row;
    row.k = obj.at("k").get<std::size_t>();
    row.profile = obj.at("profile").get<std::size_t>();
    const auto& models = obj.at("models");
    row.models.resize(models.size());
    for (auto it = models.begin(); it != models.end(); ++it) {
      row.models.at(std::stoul(it.key())) = it.value().get<std::size_t>();
    }
    const auto& r = obj.at("r");
    row.r.resize(r.size());
    for (auto it = r.begin(); it != r.end(); ++it) {
      row.r.at(std::stoul(it.key())) = it.value().get<double>();
    }
    row.R = obj.at("R").get<double>();
    row.w = obj.at("w").get<std::vector<double>>();
    const auto& v = obj.at("v");
    row.v.resize(v.size());
    for (auto pit = v.begin(); pit != v.end(); ++pit) {
      auto& per_profile = row.v.at(std::stoul(pit.key()));
      per_profile.resize(pit.value().size());
      for (auto ait = pit.value().begin(); ait != pit.value().end(); ++ait) {
        per_profile.at(std::stoul(ait.key())) = ait.value().get<std::vector<double>>();
      }
    }
    row.mse = obj.at("mse").get<double>();
    row.trainings = obj.at("trainings").get<std::size_t>();
    trace.push_back(std::move(row));
  }
  return trace;
}

// --- CSV emission ------------------------------------------------------------------

namespace detail {
inline std::string format_number(double x) {
  std::ostringstream ss;
  ss << std::setprecision(17) << x;
  return ss.str();
}
}  // namespace detail

inline void write_metrics_csv(const std::vector<TraceRow>& trace, const MetricSeries& m,
                              std::ostream& os) {
  const std::size_t P = trace.empty() ? 0 : trace.front().w.size();
  os << "k,profile,R,mse,running_avg_error,fraction_of_time";
  for (std::size_t p = 0; p < P; ++p) os << ",w" << p;
  os << '\n';
  for (std::size_t i = 0; i < trace.size(); ++i) {
    os << trace[i].k << ',' << trace[i].profile << ',' << detail::format_number(trace[i].R) << ','
       << detail::format_number(trace[i].mse) << ','
       << detail::format_number(m.running_avg_error[i]) << ','
       << detail::format_number(m.fraction_of_time[i]);
    for (double wp : trace[i].w) os << ',' << detail::format_number(wp);
    os << '\n';
  }
}

// Tidy per-series CSV exports from the trace. Series ids:
//   profile-weights   profile-probability trajectories (k, one column per
//                     profile)
//   running-error     cumulative-mean prediction error (k, running_avg_error)
//   model-weights     model-probability trajectories (k, one column per
//                     profile/subset/model triple)
//   mean-performance  running-average measured performance per
//                     profile/subset/model, averaged over the evaluations in
//                     which that triple was selected
inline void emit_plot_data(const std::vector<TraceRow>& trace, const std::string& series,
                           std::ostream& os) {
  if (series == "profile-weights") {
    const std::size_t P = trace.empty() ? 0 : trace.front().w.size();
    os << "k";
    for (std::size_t p = 0; p < P; ++p) os << ",w" << p;
    os << '\n';
    for (const TraceRow& row : trace) {
      os << row.k;
      for (double wp : row.w) os << ',' << detail::format_number(wp);
      os << '\n';
    }
    return;
  }
  if (series == "running-error") {
    const MetricSeries m = compute_metrics(trace);
    os << "k,running_avg_error\n";
    for (std::size_t i = 0; i < trace.size(); ++i) {
      os << trace[i].k << ',' << detail::format_number(m.running_avg_error[i]) << '\n';
    }
    return;
  }
  if (series == "model-weights") {
    os << "k";
    if (!trace.empty()) {
      for (std::size_t p = 0; p < trace.front().v.size(); ++p) {
        for (std::size_t a = 0; a < trace.front().v[p].size(); ++a) {
          for (std::size_t i = 0; i < trace.front().v[p][a].size(); ++i) {
            os << ",v" << p << "_" << a << "_" << i;
          }
        }
      }
    }
    os << '\n';
    for (const TraceRow& row : trace) {
      os << row.k;
      for (const auto& per_profile : row.v) {
        for (const auto& block : per_profile) {
          for (double x : block) os << ',' << detail::format_number(x);
        }
      }
      os << '\n';
    }
    return;
  }
  if (series == "mean-performance") {
    if (trace.empty()) {
      os << "k\n";
      return;
    }
    const std::size_t P = trace.front().v.size();
    std::vector<std::vector<std::vector<double>>> sums(P);
    std::vector<std::vector<std::vector<std::size_t>>> hits(P);
    os << "k";
    for (std::size_t p = 0; p < P; ++p) {
      sums[p].resize(trace.front().v[p].size());
      hits[p].resize(trace.front().v[p].size());
      for (std::size_t a = 0; a < sums[p].size(); ++a) {
        sums[p][a].assign(trace.front().v[p][a].size(), 0.0);
        hits[p][a].assign(trace.front().v[p][a].size(), 0);
        for (std::size_t i = 0; i < sums[p][a].size(); ++i) {
          os << ",rbar" << p << "_" << a << "_" << i;
        }
      }
    }
    os << '\n';
    for (const TraceRow& row : trace) {
      for (std::size_t a = 0; a < row.models.size(); ++a) {
        sums[row.profile][a][row.models[a]] += row.r[a];
        ++hits[row.profile][a][row.models[a]];
      }
      os << row.k;
      for (std::size_t p = 0; p < P; ++p) {
        for (std::size_t a = 0; a < sums[p].size(); ++a) {
          for (std::size_t i = 0; i < sums[p][a].size(); ++i) {
            if (hits[p][a][i] == 0) {
              os << ",nan";
            } else {
              os << ',' << detail::format_number(sums[p][a][i] / static_cast<double>(hits[p][a][i]));
            }
          }
        }
      }
      os << '\n';
    }
    return;
  }
  throw ConfigError("emit_plot_data: unknown series id '" + series + "'");
}

// --- experiment loop ---------------------------------------------------------------

struct ExperimentResult {
  std::vector<TraceRow> trace;
  MetricSeries metrics;
  SupervisorCounters counters;
  std::vector<std::string> written;  // files produced, in creation order
};

// Deterministic substream ids hung off the master seed.
namespace seed_stream {
constexpr std::uint64_t kInputs = 1;
constexpr std::uint64_t kDisturbances = 2;
constexpr std::uint64_t kNoise = 3;
constexpr std::uint64_t kSupervisor = 4;
}  // namespace seed_stream

// Runs the full supervisory prediction experiment described by the config:
// simulate (or replay) the plant sample by sample, serve one-step
// predictions from the currently selected switched model, and once per N
// samples score the interval, reinforce, reselect, and retrain. Writes
// trace.jsonl and metrics.csv (plus history.jsonl on request) under the
// resolved output directory.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write_outputs = true) {
  cfg.validate();
  const std::size_t N = cfg.grid.samples_per_evaluation;
  const std::size_t horizon = cfg.evaluations * N;

  // Sample source: either the thermal preset driven by synthetic signals or
  // a recorded history replayed as-is.
  std::optional<BilinearSystem> sys;
  std::optional<SignalGenerator> inputs;
  std::optional<SignalGenerator> disturbances;
  std::optional<RngStream> noise_rng;
  History recorded;
  std::vector<Interval> input_domains;
  Eigen::VectorXd x;

  if (cfg.plant == "thermal") {
    sys = thermal_zone_preset();
    input_domains = sys->input_domains;
    inputs = SignalGenerator::piecewise_constant_random(input_domains, cfg.hold_samples,
                                                        derive_seed(cfg.seed, seed_stream::kInputs));
    disturbances = thermal_disturbance_trace(horizon + 1, cfg.grid.ts_hours,
                                             derive_seed(cfg.seed, seed_stream::kDisturbances));
    noise_rng.emplace(derive_seed(cfg.seed, seed_stream::kNoise));
    x = equilibrium_state(*sys, Eigen::VectorXd::Zero(2), disturbances->value_at(0, 0.0));
  } else {
    std::ifstream f(cfg.history_path);
    if (!f) throw ConfigError("config: cannot open history '" + cfg.history_path + "'");
    recorded = read_history_jsonl(f);
    if (recorded.size() < horizon + 1) {
      throw ConfigError("config: recorded history has " + std::to_string(recorded.size()) +
                        " samples, run needs " + std::to_string(horizon + 1));
    }
    const SignalGenerator env = trace_from_history(recorded, /*use_inputs=*/true);
    input_domains = env.domains();
  }

  SupervisorConfig sup_cfg;
  sup_cfg.epsilon = cfg.epsilon;
  sup_cfg.lambda = cfg.lambda;
  sup_cfg.samples_per_evaluation = N;
  sup_cfg.performance_cap = cfg.performance_cap;
  sup_cfg.window = TrainingWindow{cfg.grid.effective_rho()};

  std::vector<PredictorSpec> menu;
  for (const std::string& name : cfg.models) {
    try {
      menu.push_back(model_from_name(name));
    } catch (const std::invalid_argument& ex) {
      throw ConfigError(std::string("config: ") + ex.what());
    }
  }
  Supervisor sup(parse_partition_menu(cfg.partitions, input_domains), menu, sup_cfg,
                 derive_seed(cfg.seed, seed_stream::kSupervisor));

  auto measure = [&](const Eigen::VectorXd& state) {
    Eigen::VectorXd y = sys->output(state);
    if (cfg.noise_std > 0.0) {
      for (Eigen::Index c = 0; c < y.size(); ++c) y(c) += noise_rng->normal(0.0, cfg.noise_std);
    }
    return y;
  };

  History h;
  if (cfg.plant == "thermal") {
    h.append(HistorySample{0, 0.0, inputs->value_at(0, 0.0), disturbances->value_at(0, 0.0),
                           measure(x)});
  } else {
    h.append(recorded[0]);
  }

  std::vector<TraceRow> trace;
  trace.reserve(cfg.evaluations);
  std::vector<PredictionRecord> preds;
  preds.reserve(N);

  for (std::size_t j = 0; j < horizon; ++j) {
    std::size_t subset = 0;
    Eigen::VectorXd y_hat = sup.predict_next(h, j, &subset);

    if (cfg.plant == "thermal") {
      x = simulate_step(*sys, x, h.u(j), h.d(j), cfg.grid.ts_hours, cfg.substeps);
      const double t = cfg.grid.t_of(j + 1);
      h.append(HistorySample{j + 1, t, inputs->value_at(j + 1, t),
                             disturbances->value_at(j + 1, t), measure(x)});
    } else {
      h.append(recorded[j + 1]);
    }
    preds.push_back(PredictionRecord{j + 1, subset, std::move(y_hat)});

    if ((j + 1) % N == 0) {
      const EvaluationRecord rec = sup.step(h, preds);
      preds.clear();
      TraceRow row;
      row.k = rec.k;
      row.profile = rec.profile;
      row.models = rec.models;
      row.r.reserve(rec.performance.size());
      for (const auto& perf : rec.performance) row.r.push_back(perf.has_data() ? perf.r : 0.0);
      row.R = rec.aggregate;
      row.mse = rec.mse;
      row.trainings = rec.trainings;
      row.w = sup.w().weights();
      row.v.resize(sup.profile_count());
      for (std::size_t p = 0; p < sup.profile_count(); ++p) {
        for (std::size_t a = 0; a < sup.profiles()[p].subset_count(); ++a) {
          row.v[p].push_back(sup.v(p, a).weights());
        }
      }
      trace.push_back(std::move(row));
    }
  }

  ExperimentResult result;
  result.trace = std::move(trace);
  result.metrics = compute_metrics(result.trace);
  result.counters = sup.counters();

  if (write_outputs) {
    const std::filesystem::path dir(cfg.resolved_out_dir());
    std::filesystem::create_directories(dir);
    {
      const auto path = dir / "trace.jsonl";
      std::ofstream f(path);
      if (!f) throw std::runtime_error("run_experiment: cannot write " + path.string());
      write_trace_jsonl(result.trace, f);
      result.written.push_back(path.string());
    }
    {
      const auto path = dir / "metrics.csv";
      std::ofstream f(path);
      if (!f) throw std::runtime_error("run_experiment: cannot write " + path.string());
      write_metrics_csv(result.trace, result.metrics, f);
      result.written.push_back(path.string());
    }
    if (cfg.write_history) {
      const auto path = dir / "history.jsonl";
      std::ofstream f(path);
      if (!f) throw std::runtime_error("run_experiment: cannot write " + path.string());
      write_history_jsonl(h, f);
      result.written.push_back(path.string());
    }
  }
  return result;
}

// --- sweep -----------------------------------------------------------------------

struct SweepRow {
  std::string label;
  std::size_t seeds = 0;
  double median_final_fraction = 0.0;     // fraction_of_time at the last evaluation
  double median_final_error = 0.0;        // running_avg_error at the last evaluation
};

inline double median_of(std::vector<double> xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

// Runs every config against every seed (outputs suppressed) and reports the
// per-config medians of the final fraction-of-time and running-error
// metrics.
inline std::vector<SweepRow> sweep(const std::vector<std::pair<std::string, ExperimentConfig>>& configs,
                                   const std::vector<std::uint64_t>& seeds) {
  std::vector<SweepRow> rows;
  for (const auto& [label, base] : configs) {
    SweepRow row;
    row.label = label;
    row.seeds = seeds.size();
    std::vector<double> fractions;
    std::vector<double> errors;
    for (std::uint64_t s : seeds) {
      ExperimentConfig cfg = base;
      cfg.seed = s;
      const ExperimentResult res = run_experiment(cfg, /*write_outputs=*/false);
      if (!res.metrics.fraction_of_time.empty()) {
        fractions.push_back(res.metrics.fraction_of_time.back());
        errors.push_back(res.metrics.running_avg_error.back());
      }
    }
    row.median_final_fraction = median_of(fractions);
    row.median_final_error = median_of(errors);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& os) {
  os << "config,seeds,median_final_fraction,median_final_error\n";
  for (const auto& row : rows) {
    os << row.label << ',' << row.seeds << ',' << detail::format_number(row.median_final_fraction)
       << ',' << detail::format_number(row.median_final_error) << '\n';
  }
}

// --- audit -----------------------------------------------------------------------

struct AuditReport {
  bool ok = true;
  std::vector<std::string> issues;

  void fail(std::string msg) {
    ok = false;
    issues.push_back(std::move(msg));
  }
};

// Round-trip check of an output directory: the trace must be internally
// consistent (aggregates match the per-subset entries, strategy vectors stay
// on their simplices) and every emitted CSV must be regenerable from the
// trace byte for byte.
inline AuditReport audit_outputs(const std::string& dir_path) {
  AuditReport report;
  const std::filesystem::path dir(dir_path);
  const auto trace_path = dir / "trace.jsonl";
  std::ifstream tf(trace_path);
  if (!tf) {
    report.fail("missing " + trace_path.string());
    return report;
  }
  const std::vector<TraceRow> trace = read_trace_jsonl(tf);

  for (const TraceRow& row : trace) {
    double r_sum = 0.0;
    for (double r : row.r) r_sum += r;
    if (std::abs(r_sum - row.R) > 1e-9 * std::max(1.0, std::abs(row.R))) {
      report.fail("k=" + std::to_string(row.k) + ": R != sum of per-subset r");
    }
    double w_sum = 0.0;
    for (double wp : row.w) {
      w_sum += wp;
      if (wp < -1e-12 || wp > 1.0 + 1e-12) report.fail("k=" + std::to_string(row.k) + ": w entry outside [0, 1]");
    }
    if (std::abs(w_sum - 1.0) > 1e-9) report.fail("k=" + std::to_string(row.k) + ": w does not sum to 1");
    for (const auto& per_profile : row.v) {
      for (const auto& block : per_profile) {
        double v_sum = 0.0;
        for (double x : block) v_sum += x;
        if (std::abs(v_sum - 1.0) > 1e-9) {
          report.fail("k=" + std::to_string(row.k) + ": model strategy does not sum to 1");
        }
      }
    }
  }

  auto compare_file = [&](const std::filesystem::path& path, const std::string& regenerated) {
    std::ifstream f(path, std::ios::binary);
    if (!f) return;  // nothing emitted, nothing to check
    std::ostringstream existing;
    existing << f.rdbuf();
    if (existing.str() != regenerated) {
      report.fail(path.filename().string() + " does not match its regeneration from the trace");
    }
  };

  {
    std::ostringstream ss;
    write_metrics_csv(trace, compute_metrics(trace), ss);
    compare_file(dir / "metrics.csv", ss.str());
  }
  for (const std::string fig :
       {"profile-weights", "running-error", "model-weights", "mean-performance"}) {
    const auto path = dir / (fig + ".csv");
    if (!std::filesystem::exists(path)) continue;
    std::ostringstream ss;
    emit_plot_data(trace, fig, ss);
    compare_file(path, ss.str());
  }
  return report;
}

// --- mean-field scenario files -----------------------------------------------------

// Scenario description for the averaged dynamics, in the same key/value
// format: `lambda = ...` plus one `rewards.p<k>` line per profile, subsets
// split by ';', model rewards by ','.
inline MeanFieldScenario parse_meanfield_scenario(std::istream& is) {
  MeanFieldScenario sc;
  std::map<std::size_t, std::vector<std::vector<double>>> per_profile;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("scenario: line " + std::to_string(lineno) + " is not 'key = value'");
    }
    auto trim = [](std::string s) {
      const auto x = s.find_first_not_of(" \t\r");
      const auto y = s.find_last_not_of(" \t\r");
      return x == std::string::npos ? std::string() : s.substr(x, y - x + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "lambda") {
      try {
        sc.lambda = std::stod(value);
      } catch (const std::exception&) {
        throw ConfigError("scenario: bad lambda '" + value + "'");
      }
    } else if (key.rfind("rewards.p", 0) == 0) {
      std::size_t p = 0;
      try {
        p = std::stoul(key.substr(9));
      } catch (const std::exception&) {
        throw ConfigError("scenario: bad profile key '" + key + "'");
      }
      std::vector<std::vector<double>> subsets;
      std::stringstream subset_ss(value);
      std::string subset_text;
      while (std::getline(subset_ss, subset_text, ';')) {
        std::vector<double> rewards;
        std::stringstream model_ss(subset_text);
        std::string tok;
        while (std::getline(model_ss, tok, ',')) {
          try {
            rewards.push_back(std::stod(tok));
          } catch (const std::exception&) {
            throw ConfigError("scenario: bad reward '" + tok + "'");
          }
        }
        if (!rewards.empty()) subsets.push_back(std::move(rewards));
      }
      per_profile[p] = std::move(subsets);
    } else {
      throw ConfigError("scenario: unknown key '" + key + "'");
    }
  }
  for (std::size_t p = 0; p < per_profile.size(); ++p) {
    auto it = per_profile.find(p);
    if (it == per_profile.end()) {
      throw ConfigError("scenario: profiles must be numbered contiguously from p0");
    }
    sc.rewards.push_back(it->second);
  }
  try {
    sc.validate();
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(std::string("scenario: ") + ex.what());
  }
  return sc;
}

// CSV export of an averaged-dynamics trajectory: rescaled time plus one
// column per simplex coordinate.
inline void write_meanfield_csv(const MeanFieldScenario& sc,
                                const std::vector<MeanFieldPoint>& traj, double step,
                                std::size_t record_every, std::ostream& os) {
  os << "t";
  for (std::size_t p = 0; p < sc.profile_count(); ++p) {
    for (std::size_t a = 0; a < sc.subset_count(p); ++a) {
      for (std::size_t i = 0; i < sc.model_count(); ++i) os << ",v" << p << "_" << a << "_" << i;
    }
  }
  for (std::size_t p = 0; p < sc.profile_count(); ++p) os << ",w" << p;
  os << '\n';
  for (std::size_t s = 0; s < traj.size(); ++s) {
    os << detail::format_number(static_cast<double>(s) * step * static_cast<double>(record_every));
    for (std::size_t p = 0; p < sc.profile_count(); ++p) {
      for (std::size_t a = 0; a < sc.subset_count(p); ++a) {
        for (std::size_t i = 0; i < sc.model_count(); ++i) {
          os << ',' << detail::format_number(traj[s].v[p][a][i]);
        }
      }
    }
    for (std::size_t p = 0; p < sc.profile_count(); ++p) {
      os << ',' << detail::format_number(traj[s].w[p]);
    }
    os << '\n';
  }
}

}  // namespace switchpred
