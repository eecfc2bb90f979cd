#pragma once

// Supervisory selection layer: evaluates the running prediction setup once
// per evaluation interval, reinforces the strategy vectors (one per subset
// for model choice, one global for partition-profile choice), draws the next
// configuration with lambda-perturbed sampling, and retrains the models
// selected for the next interval.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "switchpred/models.hpp"
#include "switchpred/partition.hpp"
#include "switchpred/plant.hpp"
#include "switchpred/simplex.hpp"

namespace switchpred {

struct SupervisorConfig {
  double epsilon = 0.05;                 // learning rate
  double lambda = 0.03;                  // exploration weight of the selection law
  std::size_t samples_per_evaluation = 400;
  double performance_cap = 1e6;          // upper bound on the inverse-error measure
  TrainingWindow window{};               // rows used when refitting models

  void validate() const {
    if (!(epsilon > 0.0)) throw std::invalid_argument("SupervisorConfig: epsilon must be > 0");
    if (!(lambda >= 0.0) || lambda >= 1.0) {
      throw std::invalid_argument("SupervisorConfig: lambda must lie in [0, 1)");
    }
    if (samples_per_evaluation == 0) {
      throw std::invalid_argument("SupervisorConfig: samples_per_evaluation must be >= 1");
    }
    if (!(performance_cap > 0.0)) {
      throw std::invalid_argument("SupervisorConfig: performance_cap must be > 0");
    }
  }
};

// Inverse-mean-squared prediction error of one subset over one evaluation
// interval: r = count / sum of squared errors, capped. count == 0 flags an
// interval in which the subset was never visited (no-data).
struct SubsetPerformance {
  double r = 0.0;
  std::size_t count = 0;
  bool has_data() const { return count > 0; }
};

// One stored prediction: the sample index it predicts and the subset (of the
// profile active at prediction time) that produced it.
struct PredictionRecord {
  std::size_t target = 0;  // index j+1 of the predicted sample
  std::size_t subset = 0;  // flat subset index of u(t_j) under the active profile
  Eigen::VectorXd y_hat;
};

struct SupervisorCounters {
  std::uint64_t gain_clamps = 0;          // epsilon * r exceeded 1
  std::uint64_t renormalizations = 0;     // strategy sum drifted beyond 1e-12
  std::uint64_t performance_caps = 0;     // r hit the cap
  std::uint64_t persistence_fallbacks = 0;// predictions served by yhat = y(t_j)
  std::uint64_t trainings = 0;            // model fits performed
  std::uint64_t empty_subset_skips = 0;   // subset updates skipped for lack of data
};

// Everything that happened in one supervisory step k: what was evaluated,
// the measured performances, the strategy snapshot consequences, and the
// configuration chosen for interval k+1.
struct EvaluationRecord {
  std::size_t k = 0;                          // completed evaluation index (1-based)
  std::size_t profile = 0;                    // profile evaluated over interval k
  std::vector<std::size_t> models;            // model assignment evaluated, by flat subset
  std::vector<SubsetPerformance> performance; // per flat subset of `profile`
  double aggregate = 0.0;                     // sum of per-subset r (no-data counts as 0)
  double mse = 0.0;                           // mean squared prediction error over the interval
  std::size_t trainings = 0;                  // fits performed for the next interval
  std::size_t next_profile = 0;
  std::vector<std::size_t> next_models;       // assignment for `next_profile`
  std::size_t strategy_update_ops = 0;        // coordinate touches in strategy updates
  std::size_t selection_ops = 0;              // coordinate touches in selection draws
};

// Per-subset inverse-error performances of one evaluation interval.
// `subset` filters the predictions; predictions for other subsets are
// ignored. A sum of squared errors of exactly zero saturates at the cap.
inline SubsetPerformance evaluate_model(const History& h, const std::vector<PredictionRecord>& preds,
                                        std::size_t subset, double performance_cap,
                                        bool* capped = nullptr) {
  double err_sum = 0.0;
  std::size_t count = 0;
  for (const auto& p : preds) {
    if (p.subset != subset) continue;
    if (p.target >= h.size()) {
      throw std::invalid_argument("evaluate_model: prediction target beyond recorded history");
    }
    err_sum += (h.y(p.target) - p.y_hat).squaredNorm();
    ++count;
  }
  SubsetPerformance perf;
  perf.count = count;
  if (capped) *capped = false;
  if (count == 0) return perf;
  if (err_sum <= 0.0) {
    perf.r = performance_cap;
    if (capped) *capped = true;
    return perf;
  }
  perf.r = static_cast<double>(count) / err_sum;
  if (perf.r > performance_cap) {
    perf.r = performance_cap;
    if (capped) *capped = true;
  }
  return perf;
}

// Rewards injected in place of measured performances when the selection
// dynamics are studied on their own: reward(profile, subset, model).
using RewardFn = std::function<double(std::size_t, std::size_t, std::size_t)>;

class Supervisor {
 public:
  Supervisor(std::vector<PartitionProfile> profiles, std::vector<PredictorSpec> menu,
             SupervisorConfig cfg, std::uint64_t seed)
      : profiles_(std::move(profiles)),
        menu_(std::move(menu)),
        cfg_(cfg),
        rng_(seed),
        w_(StrategyVector::uniform(std::max<std::size_t>(profiles_.size(), 1))) {
    cfg_.validate();
    if (profiles_.empty()) throw std::invalid_argument("Supervisor: need >= 1 profile");
    if (menu_.empty()) throw std::invalid_argument("Supervisor: need >= 1 model");
    const std::size_t input_count = profiles_.front().input_count();
    for (const auto& p : profiles_) {
      if (p.input_count() != input_count) {
        throw std::invalid_argument("Supervisor: profiles must partition the same input box");
      }
    }
    v_.reserve(profiles_.size());
    assignments_.reserve(profiles_.size());
    trained_.resize(profiles_.size());
    for (std::size_t p = 0; p < profiles_.size(); ++p) {
      const std::size_t subsets = profiles_[p].subset_count();
      v_.emplace_back(subsets, StrategyVector::uniform(menu_.size()));
      assignments_.emplace_back(subsets, 0);  // every subset starts on the first menu entry
      trained_[p].resize(subsets);
      for (auto& slot : trained_[p]) slot.resize(menu_.size());
    }
  }

  std::size_t evaluation_count() const { return k_; }
  std::size_t profile_count() const { return profiles_.size(); }
  std::size_t model_count() const { return menu_.size(); }
  const std::vector<PartitionProfile>& profiles() const { return profiles_; }
  const std::vector<PredictorSpec>& menu() const { return menu_; }
  const SupervisorConfig& config() const { return cfg_; }
  const SupervisorCounters& counters() const { return counters_; }

  // Profile whose models serve predictions during the interval now running.
  std::size_t active_profile() const { return active_profile_; }
  const StrategyVector& w() const { return w_; }
  const StrategyVector& v(std::size_t profile, std::size_t subset) const {
    return v_.at(profile).at(subset);
  }
  const std::vector<std::size_t>& assignment(std::size_t profile) const {
    return assignments_.at(profile);
  }
  const std::optional<PredictorSpec>& trained_model(std::size_t profile, std::size_t subset,
                                                    std::size_t model) const {
    return trained_.at(profile).at(subset).at(model);
  }

  // Total strategy vectors held: one per (profile, subset) plus the profile
  // vector itself.
  std::size_t stored_strategy_vectors() const {
    std::size_t n = 1;
    for (const auto& per_profile : v_) n += per_profile.size();
    return n;
  }

  // One-step prediction of sample j+1 using the active profile's assignment.
  // Untrained or not-yet-ready models fall back to persistence.
  Eigen::VectorXd predict_next(const History& h, std::size_t j, std::size_t* subset_out = nullptr) {
    const SubsetId id = locate(profiles_[active_profile_], h.u(j), active_profile_);
    if (subset_out) *subset_out = id.flat;
    const std::size_t model = assignments_[active_profile_][id.flat];
    const auto& slot = trained_[active_profile_][id.flat][model];
    if (!slot.has_value() || !slot->trained()) {
      ++counters_.persistence_fallbacks;
      return h.y(j);
    }
    bool fallback = false;
    Eigen::VectorXd y_hat = predict(*slot, h, j, &fallback);
    if (fallback) ++counters_.persistence_fallbacks;
    return y_hat;
  }

  // Full supervisory step on recorded data: score the predictions of the
  // closing interval per subset, reinforce the model strategies of the
  // evaluated profile and the profile strategy, draw the next profile and
  // its per-subset models, and retrain exactly those models on the history.
  EvaluationRecord step(const History& h, const std::vector<PredictionRecord>& preds) {
    auto [perfs, mse] = score_interval(h, preds);
    EvaluationRecord rec = learn_and_select(perfs, /*update_w=*/true, /*draw_profile=*/true,
                                            /*draw_models=*/true);
    rec.mse = mse;
    train_next(rec, h);
    return rec;
  }

  // Full supervisory step with injected rewards instead of measured
  // performances; no models are trained.
  EvaluationRecord step_synthetic(const RewardFn& reward) {
    EvaluationRecord rec = learn_and_select(synthetic_performance(reward), /*update_w=*/true,
                                            /*draw_profile=*/true, /*draw_models=*/true);
    rec.mse = std::numeric_limits<double>::quiet_NaN();
    return rec;
  }

  // Inner recursion alone: model strategies of the active profile are
  // reinforced and new models drawn and retrained for that same profile; the
  // profile choice is left untouched.
  EvaluationRecord step_model_selection(const History& h, const std::vector<PredictionRecord>& preds) {
    auto [perfs, mse] = score_interval(h, preds);
    EvaluationRecord rec = learn_and_select(perfs, /*update_w=*/false, /*draw_profile=*/false,
                                            /*draw_models=*/true);
    rec.mse = mse;
    train_next(rec, h);
    return rec;
  }

  // Inner recursion alone with injected rewards.
  EvaluationRecord step_model_selection_synthetic(const RewardFn& reward) {
    EvaluationRecord rec = learn_and_select(synthetic_performance(reward), /*update_w=*/false,
                                            /*draw_profile=*/false, /*draw_models=*/true);
    rec.mse = std::numeric_limits<double>::quiet_NaN();
    return rec;
  }

  // Outer recursion alone: the profile strategy is reinforced with the
  // aggregate of the supplied per-subset performances and the next profile
  // drawn; model assignments of every profile persist unchanged.
  EvaluationRecord step_partition_selection(const std::vector<SubsetPerformance>& perfs) {
    EvaluationRecord rec = learn_and_select(perfs, /*update_w=*/true, /*draw_profile=*/true,
                                            /*draw_models=*/false);
    rec.mse = std::numeric_limits<double>::quiet_NaN();
    return rec;
  }

 private:
  std::pair<std::vector<SubsetPerformance>, double> score_interval(
      const History& h, const std::vector<PredictionRecord>& preds) const {
    const std::size_t subsets = profiles_[active_profile_].subset_count();
    std::vector<SubsetPerformance> perfs(subsets);
    double err_sum = 0.0;
    std::size_t n = 0;
    for (const auto& p : preds) {
      if (p.subset >= subsets) {
        throw std::invalid_argument("Supervisor: prediction subset index out of range");
      }
      if (p.target >= h.size()) {
        throw std::invalid_argument("Supervisor: prediction target beyond recorded history");
      }
      err_sum += (h.y(p.target) - p.y_hat).squaredNorm();
      ++n;
    }
    for (std::size_t a = 0; a < subsets; ++a) {
      bool capped = false;
      perfs[a] = evaluate_model(h, preds, a, cfg_.performance_cap, &capped);
      if (capped) ++counters_.performance_caps;
    }
    const double mse = n > 0 ? err_sum / static_cast<double>(n)
                             : std::numeric_limits<double>::quiet_NaN();
    return {std::move(perfs), mse};
  }

  std::vector<SubsetPerformance> synthetic_performance(const RewardFn& reward) const {
    const std::size_t subsets = profiles_[active_profile_].subset_count();
    std::vector<SubsetPerformance> perfs(subsets);
    for (std::size_t a = 0; a < subsets; ++a) {
      double r = reward(active_profile_, a, assignments_[active_profile_][a]);
      if (!(r >= 0.0)) throw std::invalid_argument("Supervisor: rewards must be >= 0");
      if (r > cfg_.performance_cap) {
        r = cfg_.performance_cap;
        ++counters_.performance_caps;
      }
      perfs[a] = SubsetPerformance{r, 1};
    }
    return perfs;
  }

  EvaluationRecord learn_and_select(const std::vector<SubsetPerformance>& perfs, bool update_w,
                                    bool draw_profile, bool draw_models) {
    const std::size_t p = active_profile_;
    if (perfs.size() != profiles_[p].subset_count()) {
      throw std::invalid_argument("Supervisor: need one performance entry per subset");
    }
    EvaluationRecord rec;
    rec.k = ++k_;
    rec.profile = p;
    rec.models = assignments_[p];
    rec.performance = perfs;
    for (const auto& perf : perfs) rec.aggregate += perf.has_data() ? perf.r : 0.0;

    ReplicatorDiagnostics diag;
    if (update_w) {
      w_ = replicator_update(w_, UnitVector(profiles_.size(), p), cfg_.epsilon * rec.aggregate,
                             &diag);
      rec.strategy_update_ops += profiles_.size();
    }
    for (std::size_t a = 0; a < perfs.size(); ++a) {
      if (!perfs[a].has_data()) {
        ++counters_.empty_subset_skips;
        continue;
      }
      v_[p][a] = replicator_update(v_[p][a], UnitVector(menu_.size(), assignments_[p][a]),
                                   cfg_.epsilon * perfs[a].r, &diag);
      rec.strategy_update_ops += menu_.size();
    }
    counters_.gain_clamps += diag.gain_clamps;
    counters_.renormalizations += diag.renormalizations;

    std::size_t next_p = p;
    if (draw_profile) {
      next_p = perturbed_sample(w_, cfg_.lambda, rng_);
      rec.selection_ops += profiles_.size();
    }
    if (draw_models) {
      for (std::size_t a = 0; a < profiles_[next_p].subset_count(); ++a) {
        assignments_[next_p][a] = perturbed_sample(v_[next_p][a], cfg_.lambda, rng_);
        rec.selection_ops += menu_.size();
      }
    }
    active_profile_ = next_p;
    rec.next_profile = next_p;
    rec.next_models = assignments_[next_p];
    return rec;
  }

  void train_next(EvaluationRecord& rec, const History& h) {
    const std::size_t p = rec.next_profile;
    for (std::size_t a = 0; a < assignments_[p].size(); ++a) {
      const std::size_t model = assignments_[p][a];
      trained_[p][a][model] = train(menu_[model], h, cfg_.window);
      ++rec.trainings;
      ++counters_.trainings;
    }
  }

  std::vector<PartitionProfile> profiles_;
  std::vector<PredictorSpec> menu_;
  SupervisorConfig cfg_;
  RngStream rng_;
  StrategyVector w_;
  std::vector<std::vector<StrategyVector>> v_;          // [profile][subset]
  std::vector<std::vector<std::size_t>> assignments_;   // [profile][subset] -> model
  std::vector<std::vector<std::vector<std::optional<PredictorSpec>>>> trained_;
  std::size_t active_profile_ = 0;
  std::size_t k_ = 0;
  mutable SupervisorCounters counters_;
};

// Brute-force reference selector: every candidate is trained on the history
// before the earliest query target and scored by its total squared one-step
// error over the queries; returns the index of the best candidate (ties go
// to the lowest index). Untrained-infeasible candidates never win.
inline std::size_t exhaustive_baseline(const std::vector<PredictorSpec>& menu, const History& h,
                                       const std::vector<std::size_t>& query_targets,
                                       const TrainingWindow& window = {}) {
  if (menu.empty()) throw std::invalid_argument("exhaustive_baseline: empty menu");
  if (query_targets.empty()) throw std::invalid_argument("exhaustive_baseline: no queries");
  std::size_t min_target = query_targets.front();
  for (std::size_t t : query_targets) {
    if (t == 0 || t >= h.size()) {
      throw std::invalid_argument("exhaustive_baseline: query target out of range");
    }
    min_target = std::min(min_target, t);
  }

  std::size_t best = 0;
  double best_err = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < menu.size(); ++m) {
    double err = 0.0;
    bool feasible = true;
    PredictorSpec fitted;
    try {
      fitted = train(menu[m], h, window, min_target);
    } catch (const std::invalid_argument&) {
      feasible = false;
    } catch (const IllConditionedError&) {
      feasible = false;
    }
    if (!feasible) continue;
    for (std::size_t t : query_targets) {
      err += (h.y(t) - predict(fitted, h, t - 1)).squaredNorm();
    }
    if (err < best_err) {
      best_err = err;
      best = m;
    }
  }
  if (!std::isfinite(best_err)) {
    throw std::invalid_argument("exhaustive_baseline: no candidate could be trained");
  }
  return best;
}

}  // namespace switchpred
