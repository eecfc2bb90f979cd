#pragma once

// Averaged (mean-field) dynamics of the selection recursions: the expected
// per-step drift of every strategy vector under fixed per-(profile, subset,
// model) rewards, an RK4 integrator for the resulting ODE on a product of
// simplices, a damped fixed-point solver for its stationary points, and the
// Lyapunov-style potential that certifies descent toward the best pure
// selection.

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "switchpred/simplex.hpp"

namespace switchpred {

// Fixed nonnegative rewards r[profile][subset][model] standing in for the
// asymptotic per-subset performances, plus the exploration weight lambda of
// the selection law. lambda = 0 gives the unperturbed dynamics.
struct MeanFieldScenario {
  std::vector<std::vector<std::vector<double>>> rewards;
  double lambda = 0.0;

  void validate() const {
    if (rewards.empty()) throw std::invalid_argument("MeanFieldScenario: need >= 1 profile");
    if (!(lambda >= 0.0) || lambda >= 1.0) {
      throw std::invalid_argument("MeanFieldScenario: lambda must lie in [0, 1)");
    }
    std::size_t models = 0;
    for (const auto& per_profile : rewards) {
      if (per_profile.empty()) throw std::invalid_argument("MeanFieldScenario: empty profile");
      for (const auto& per_subset : per_profile) {
        if (per_subset.empty()) throw std::invalid_argument("MeanFieldScenario: empty subset");
        if (models == 0) models = per_subset.size();
        if (per_subset.size() != models) {
          throw std::invalid_argument("MeanFieldScenario: model count must be uniform");
        }
        for (double r : per_subset) {
          if (!(r >= 0.0) || !std::isfinite(r)) {
            throw std::invalid_argument("MeanFieldScenario: rewards must be finite and >= 0");
          }
        }
      }
    }
  }

  std::size_t profile_count() const { return rewards.size(); }
  std::size_t subset_count(std::size_t p) const { return rewards.at(p).size(); }
  std::size_t model_count() const { return rewards.front().front().size(); }

  double max_reward() const {
    double m = 0.0;
    for (const auto& pp : rewards)
      for (const auto& ps : pp)
        for (double r : ps) m = std::max(m, r);
    return m;
  }
};

// Structural requirements for a unique best pure selection: within every
// (profile, subset) the model rewards are pairwise distinct, and with each
// subset at its best model exactly one profile attains the largest
// aggregate reward.
struct AssumptionReport {
  bool distinct_rewards = false;
  bool unique_best_profile = false;
  std::size_t best_profile = 0;
  std::vector<std::vector<std::size_t>> best_models;  // [profile][subset]
  std::vector<double> best_aggregate;                 // per profile, subsets at their best

  bool ok() const { return distinct_rewards && unique_best_profile; }
};

inline AssumptionReport check_assumptions(const MeanFieldScenario& sc) {
  sc.validate();
  AssumptionReport rep;
  rep.distinct_rewards = true;
  rep.best_models.resize(sc.profile_count());
  rep.best_aggregate.assign(sc.profile_count(), 0.0);
  for (std::size_t p = 0; p < sc.profile_count(); ++p) {
    rep.best_models[p].resize(sc.subset_count(p));
    for (std::size_t a = 0; a < sc.subset_count(p); ++a) {
      const auto& r = sc.rewards[p][a];
      std::size_t best = 0;
      for (std::size_t i = 0; i < r.size(); ++i) {
        if (r[i] > r[best]) best = i;
        for (std::size_t l = i + 1; l < r.size(); ++l) {
          if (r[i] == r[l]) rep.distinct_rewards = false;
        }
      }
      rep.best_models[p][a] = best;
      rep.best_aggregate[p] += r[best];
    }
  }
  rep.best_profile = 0;
  rep.unique_best_profile = true;
  for (std::size_t p = 1; p < sc.profile_count(); ++p) {
    if (rep.best_aggregate[p] > rep.best_aggregate[rep.best_profile]) rep.best_profile = p;
  }
  for (std::size_t p = 0; p < sc.profile_count(); ++p) {
    if (p != rep.best_profile && !(rep.best_aggregate[p] < rep.best_aggregate[rep.best_profile])) {
      rep.unique_best_profile = false;
    }
  }
  return rep;
}

// Joint state of the averaged dynamics: one model-strategy block per
// (profile, subset) and the profile-strategy block.
struct MeanFieldPoint {
  std::vector<std::vector<StrategyVector>> v;  // [profile][subset]
  StrategyVector w;

  MeanFieldPoint() : w(StrategyVector::uniform(1)) {}

  static MeanFieldPoint uniform(const MeanFieldScenario& sc) {
    sc.validate();
    MeanFieldPoint pt;
    pt.v.resize(sc.profile_count());
    for (std::size_t p = 0; p < sc.profile_count(); ++p) {
      pt.v[p].assign(sc.subset_count(p), StrategyVector::uniform(sc.model_count()));
    }
    pt.w = StrategyVector::uniform(sc.profile_count());
    return pt;
  }
};

namespace detail {

// Expected drift of one model-strategy block under the perturbed selection
// law q_i = (1 - lambda) v_i + lambda / n:
//   g_i = r_i q_i - v_i * sum_l r_l q_l.
inline Eigen::VectorXd g_raw(const std::vector<double>& rewards, double lambda,
                             const Eigen::VectorXd& v) {
  const std::size_t n = rewards.size();
  double total = 0.0;
  Eigen::VectorXd rq(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const double q = (1.0 - lambda) * v(static_cast<Eigen::Index>(i)) +
                     lambda / static_cast<double>(n);
    rq(static_cast<Eigen::Index>(i)) = rewards[i] * q;
    total += rewards[i] * q;
  }
  Eigen::VectorXd g(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    g(static_cast<Eigen::Index>(i)) = rq(static_cast<Eigen::Index>(i)) -
                                      v(static_cast<Eigen::Index>(i)) * total;
  }
  return g;
}

// Expected aggregate reward of profile p when each of its subsets plays by
// its strategy block; `perturbed` selects the lambda-perturbed model law.
inline double aggregate_raw(const MeanFieldScenario& sc, std::size_t p,
                            const std::vector<Eigen::VectorXd>& v_blocks, bool perturbed) {
  const double lambda = perturbed ? sc.lambda : 0.0;
  const std::size_t n = sc.model_count();
  double total = 0.0;
  for (std::size_t a = 0; a < sc.subset_count(p); ++a) {
    for (std::size_t i = 0; i < n; ++i) {
      const double q = (1.0 - lambda) * v_blocks[a](static_cast<Eigen::Index>(i)) +
                       lambda / static_cast<double>(n);
      total += sc.rewards[p][a][i] * q;
    }
  }
  return total;
}

}  // namespace detail

// Expected per-step drift of the model strategy of subset (p, a).
inline Eigen::VectorXd g_field(const MeanFieldScenario& sc, std::size_t p, std::size_t a,
                               const StrategyVector& v) {
  sc.validate();
  if (v.size() != sc.model_count()) {
    throw std::invalid_argument("g_field: strategy dimension != model count");
  }
  return detail::g_raw(sc.rewards.at(p).at(a), sc.lambda, v.as_vector());
}

// Expected per-step drift of the profile strategy,
//   f_p = qw_p * Rbar_p - w_p * sum_{p'} qw_{p'} * Rbar_{p'},
// where qw is the perturbed profile law and Rbar_p the expected aggregate
// reward of profile p under the perturbed model law.
inline Eigen::VectorXd f_field(const MeanFieldScenario& sc, const MeanFieldPoint& pt) {
  sc.validate();
  const std::size_t P = sc.profile_count();
  if (pt.w.size() != P || pt.v.size() != P) {
    throw std::invalid_argument("f_field: point shape does not match scenario");
  }
  Eigen::VectorXd rbar(static_cast<Eigen::Index>(P));
  for (std::size_t p = 0; p < P; ++p) {
    std::vector<Eigen::VectorXd> blocks;
    blocks.reserve(pt.v[p].size());
    for (const auto& b : pt.v[p]) blocks.push_back(b.as_vector());
    rbar(static_cast<Eigen::Index>(p)) = detail::aggregate_raw(sc, p, blocks, /*perturbed=*/true);
  }
  double total = 0.0;
  Eigen::VectorXd qw(static_cast<Eigen::Index>(P));
  for (std::size_t p = 0; p < P; ++p) {
    qw(static_cast<Eigen::Index>(p)) =
        (1.0 - sc.lambda) * pt.w[p] + sc.lambda / static_cast<double>(P);
    total += qw(static_cast<Eigen::Index>(p)) * rbar(static_cast<Eigen::Index>(p));
  }
  Eigen::VectorXd f(static_cast<Eigen::Index>(P));
  for (std::size_t p = 0; p < P; ++p) {
    f(static_cast<Eigen::Index>(p)) =
        qw(static_cast<Eigen::Index>(p)) * rbar(static_cast<Eigen::Index>(p)) -
        pt.w[p] * total;
  }
  return f;
}

// Clock convention of the averaged ODE. Uniform puts every block on the
// common evaluation clock. Visitation additionally scales each model block
// by the probability that its profile is the active one — the exact
// conditional mean of the discrete recursion, since a subset's strategy only
// moves in intervals where its profile was selected. The two fields have the
// same stationary sets whenever the profile law keeps every profile at
// positive probability; only the time parametrization differs.
enum class TimeScaling { Uniform, Visitation };

namespace detail {

struct FlatLayout {
  std::vector<std::vector<Eigen::Index>> v_offset;  // [profile][subset]
  Eigen::Index w_offset = 0;
  Eigen::Index total = 0;

  static FlatLayout of(const MeanFieldScenario& sc) {
    FlatLayout lay;
    Eigen::Index at = 0;
    const auto M = static_cast<Eigen::Index>(sc.model_count());
    lay.v_offset.resize(sc.profile_count());
    for (std::size_t p = 0; p < sc.profile_count(); ++p) {
      for (std::size_t a = 0; a < sc.subset_count(p); ++a) {
        lay.v_offset[p].push_back(at);
        at += M;
      }
    }
    lay.w_offset = at;
    lay.total = at + static_cast<Eigen::Index>(sc.profile_count());
    return lay;
  }
};

inline Eigen::VectorXd flatten(const MeanFieldScenario& sc, const MeanFieldPoint& pt) {
  const FlatLayout lay = FlatLayout::of(sc);
  Eigen::VectorXd x(lay.total);
  const auto M = static_cast<Eigen::Index>(sc.model_count());
  for (std::size_t p = 0; p < sc.profile_count(); ++p) {
    for (std::size_t a = 0; a < sc.subset_count(p); ++a) {
      x.segment(lay.v_offset[p][a], M) = pt.v[p][a].as_vector();
    }
  }
  x.segment(lay.w_offset, static_cast<Eigen::Index>(sc.profile_count())) = pt.w.as_vector();
  return x;
}

inline MeanFieldPoint unflatten(const MeanFieldScenario& sc, const Eigen::VectorXd& x) {
  const FlatLayout lay = FlatLayout::of(sc);
  const auto M = static_cast<Eigen::Index>(sc.model_count());
  MeanFieldPoint pt;
  pt.v.resize(sc.profile_count());
  auto to_strategy = [](Eigen::VectorXd seg) {
    std::vector<double> w(seg.data(), seg.data() + seg.size());
    return StrategyVector(std::move(w));
  };
  for (std::size_t p = 0; p < sc.profile_count(); ++p) {
    for (std::size_t a = 0; a < sc.subset_count(p); ++a) {
      pt.v[p].push_back(to_strategy(x.segment(lay.v_offset[p][a], M)));
    }
  }
  pt.w = to_strategy(x.segment(lay.w_offset, static_cast<Eigen::Index>(sc.profile_count())));
  return pt;
}

// Full drift on the flattened state; tolerant of slightly off-simplex
// inputs so it can serve as an RK4 stage evaluation.
inline Eigen::VectorXd field_raw(const MeanFieldScenario& sc, const FlatLayout& lay,
                                 const Eigen::VectorXd& x, TimeScaling scaling) {
  const auto M = static_cast<Eigen::Index>(sc.model_count());
  const auto P = static_cast<Eigen::Index>(sc.profile_count());
  Eigen::VectorXd dx(lay.total);

  // Profile block first: expected aggregates under the perturbed model law.
  Eigen::VectorXd rbar(P);
  for (std::size_t p = 0; p < sc.profile_count(); ++p) {
    double total = 0.0;
    for (std::size_t a = 0; a < sc.subset_count(p); ++a) {
      const Eigen::VectorXd v = x.segment(lay.v_offset[p][a], M);
      for (std::size_t i = 0; i < sc.model_count(); ++i) {
        const double q = (1.0 - sc.lambda) * v(static_cast<Eigen::Index>(i)) +
                         sc.lambda / static_cast<double>(sc.model_count());
        total += sc.rewards[p][a][i] * q;
      }
    }
    rbar(static_cast<Eigen::Index>(p)) = total;
  }
  const Eigen::VectorXd w = x.segment(lay.w_offset, P);
  Eigen::VectorXd qw(P);
  double wtotal = 0.0;
  for (Eigen::Index p = 0; p < P; ++p) {
    qw(p) = (1.0 - sc.lambda) * w(p) + sc.lambda / static_cast<double>(P);
    wtotal += qw(p) * rbar(p);
  }
  for (Eigen::Index p = 0; p < P; ++p) {
    dx(lay.w_offset + p) = qw(p) * rbar(p) - w(p) * wtotal;
  }

  for (std::size_t p = 0; p < sc.profile_count(); ++p) {
    const double scale =
        scaling == TimeScaling::Visitation ? qw(static_cast<Eigen::Index>(p)) : 1.0;
    for (std::size_t a = 0; a < sc.subset_count(p); ++a) {
      dx.segment(lay.v_offset[p][a], M) =
          scale * g_raw(sc.rewards[p][a], sc.lambda, x.segment(lay.v_offset[p][a], M));
    }
  }
  return dx;
}

// Project every simplex block back onto the simplex (clamp at zero, rescale).
inline void renormalize_blocks(const MeanFieldScenario& sc, const FlatLayout& lay,
                               Eigen::VectorXd& x) {
  const auto M = static_cast<Eigen::Index>(sc.model_count());
  auto fix = [](Eigen::Ref<Eigen::VectorXd> seg) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < seg.size(); ++i) {
      if (seg(i) < 0.0) seg(i) = 0.0;
      sum += seg(i);
    }
    if (sum <= 0.0) {
      seg.setConstant(1.0 / static_cast<double>(seg.size()));
    } else if (std::abs(sum - 1.0) > StrategyVector::kRenormTolerance) {
      seg /= sum;
    }
  };
  for (std::size_t p = 0; p < sc.profile_count(); ++p) {
    for (std::size_t a = 0; a < sc.subset_count(p); ++a) {
      fix(x.segment(lay.v_offset[p][a], M));
    }
  }
  fix(x.segment(lay.w_offset, static_cast<Eigen::Index>(sc.profile_count())));
}

}  // namespace detail

struct IntegrationOptions {
  double step = 0.01;           // RK4 step in rescaled time
  double duration = 1.0;
  std::size_t record_every = 1; // keep every k-th point (the endpoints always)
  TimeScaling scaling = TimeScaling::Uniform;
};

// Fixed-step RK4 integration of the averaged dynamics with per-step
// projection back onto the simplices. Returns the recorded trajectory,
// starting with the initial point.
inline std::vector<MeanFieldPoint> integrate(const MeanFieldScenario& sc,
                                             const MeanFieldPoint& start,
                                             const IntegrationOptions& opt = {}) {
  sc.validate();
  if (!(opt.step > 0.0) || !(opt.duration >= 0.0)) {
    throw std::invalid_argument("integrate: need step > 0 and duration >= 0");
  }
  const auto lay = detail::FlatLayout::of(sc);
  Eigen::VectorXd x = detail::flatten(sc, start);
  const auto steps = static_cast<std::size_t>(std::llround(opt.duration / opt.step));
  std::vector<MeanFieldPoint> out;
  out.reserve(steps / std::max<std::size_t>(opt.record_every, 1) + 2);
  out.push_back(start);
  for (std::size_t s = 1; s <= steps; ++s) {
    const Eigen::VectorXd k1 = detail::field_raw(sc, lay, x, opt.scaling);
    const Eigen::VectorXd k2 = detail::field_raw(sc, lay, x + 0.5 * opt.step * k1, opt.scaling);
    const Eigen::VectorXd k3 = detail::field_raw(sc, lay, x + 0.5 * opt.step * k2, opt.scaling);
    const Eigen::VectorXd k4 = detail::field_raw(sc, lay, x + opt.step * k3, opt.scaling);
    x += (opt.step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    detail::renormalize_blocks(sc, lay, x);
    if (s % std::max<std::size_t>(opt.record_every, 1) == 0) {
      out.push_back(detail::unflatten(sc, x));
    }
  }
  return out;
}

struct StationaryOptions {
  double damping = 0.0;          // 0 = auto (0.5 / max reward)
  double tolerance = 1e-10;      // sup-norm of the drift at the returned point
  std::size_t max_iterations = 5'000'000;
  TimeScaling scaling = TimeScaling::Uniform;
};

struct StationaryResult {
  MeanFieldPoint point;
  double residual = std::numeric_limits<double>::infinity();
  std::size_t iterations = 0;
  bool converged = false;
};

// Damped fixed-point iteration x <- x + eta * F(x) with per-step projection.
// The drift of every simplex block vanishes at the returned point to within
// the requested tolerance.
inline StationaryResult stationary_point(const MeanFieldScenario& sc, const MeanFieldPoint& start,
                                         const StationaryOptions& opt = {}) {
  sc.validate();
  const auto lay = detail::FlatLayout::of(sc);
  Eigen::VectorXd x = detail::flatten(sc, start);
  const double max_r = sc.max_reward();
  const double eta = opt.damping > 0.0 ? opt.damping : 0.5 / std::max(max_r, 1e-12);
  StationaryResult res;
  for (std::size_t it = 0; it < opt.max_iterations; ++it) {
    const Eigen::VectorXd f = detail::field_raw(sc, lay, x, opt.scaling);
    const double resid = f.lpNorm<Eigen::Infinity>();
    if (resid < opt.tolerance) {
      res.point = detail::unflatten(sc, x);
      res.residual = resid;
      res.iterations = it;
      res.converged = true;
      return res;
    }
    x += eta * f;
    detail::renormalize_blocks(sc, lay, x);
  }
  res.point = detail::unflatten(sc, x);
  res.residual = detail::field_raw(sc, lay, x, opt.scaling).lpNorm<Eigen::Infinity>();
  res.iterations = opt.max_iterations;
  res.converged = res.residual < opt.tolerance;
  return res;
}

// Potential V(v, w) = (best reachable expected aggregate) - w^T Rbar(v),
// where Rbar uses the unperturbed model law. Nonnegative, and zero exactly
// at the best pure selection; non-increasing along the averaged flow away
// from the pure-selection set.
inline double lyapunov_value(const MeanFieldScenario& sc, const MeanFieldPoint& pt) {
  const AssumptionReport rep = check_assumptions(sc);
  double current = 0.0;
  for (std::size_t p = 0; p < sc.profile_count(); ++p) {
    std::vector<Eigen::VectorXd> blocks;
    blocks.reserve(pt.v[p].size());
    for (const auto& b : pt.v[p]) blocks.push_back(b.as_vector());
    current += pt.w[p] * detail::aggregate_raw(sc, p, blocks, /*perturbed=*/false);
  }
  return rep.best_aggregate[rep.best_profile] - current;
}

// Euclidean distance from the point to the set of fully pure selections
// (every strategy block at some vertex).
inline double distance_to_pure_set(const MeanFieldPoint& pt) {
  double d2 = 0.0;
  for (const auto& per_profile : pt.v) {
    for (const auto& block : per_profile) {
      const double d = block.distance_to_nearest_vertex();
      d2 += d * d;
    }
  }
  const double dw = pt.w.distance_to_nearest_vertex();
  return std::sqrt(d2 + dw * dw);
}

// Euclidean distance from the point to one specific pure selection: profile
// vertex `profile`, and every (p, a) block at vertex models[p][a].
inline double distance_to_pure_selection(const MeanFieldPoint& pt, std::size_t profile,
                                         const std::vector<std::vector<std::size_t>>& models) {
  double d2 = 0.0;
  for (std::size_t p = 0; p < pt.v.size(); ++p) {
    for (std::size_t a = 0; a < pt.v[p].size(); ++a) {
      const double d = pt.v[p][a].distance_to_vertex(models.at(p).at(a));
      d2 += d * d;
    }
  }
  const double dw = pt.w.distance_to_vertex(profile);
  return std::sqrt(d2 + dw * dw);
}

// Sup-norm distance between two points of the same shape.
inline double sup_distance(const MeanFieldPoint& a, const MeanFieldPoint& b) {
  double m = 0.0;
  for (std::size_t p = 0; p < a.v.size(); ++p) {
    for (std::size_t s = 0; s < a.v[p].size(); ++s) {
      for (std::size_t i = 0; i < a.v[p][s].size(); ++i) {
        m = std::max(m, std::abs(a.v[p][s][i] - b.v[p][s][i]));
      }
    }
  }
  for (std::size_t p = 0; p < a.w.size(); ++p) m = std::max(m, std::abs(a.w[p] - b.w[p]));
  return m;
}

}  // namespace switchpred
