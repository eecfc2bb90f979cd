#pragma once

// Probability-simplex primitives for discrete-selection learning: strategy
// vectors, the multiplicative-toward-a-vertex update used by the selection
// recursions, perturbed categorical sampling, and the simplex "covariance"
// matrices that appear in the averaged dynamics.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace switchpred {

// --- seeding -----------------------------------------------------------

// splitmix64: cheap, well-mixed 64-bit finalizer. Used to derive
// independent substream seeds from a master seed so that components
// (input signal, noise, selection draws, ...) stay decoupled and a
// substream can be re-derived at random access time.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream_id) {
  return splitmix64(master ^ splitmix64(stream_id));
}

// Seeded random stream. The generator algorithm is pinned (mt19937_64) and
// recorded so that runs are reproducible across builds and platforms.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  static const char* algorithm() { return "mt19937_64"; }

  // Uniform draw in [0, 1).
  double uniform01() {
    return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
  }

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }

  double normal(double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }

  std::uint64_t next_u64() { return engine_(); }

  // Derive an independent stream keyed by `stream_id`.
  RngStream split(std::uint64_t stream_id) const {
    return RngStream(derive_seed(seed_, stream_id));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

// --- strategy vectors ---------------------------------------------------

// Probability vector on the unit simplex. Entries are in [0, 1] and sum to
// one within 1e-9; construction validates, updates renormalize whenever the
// accumulated drift of the sum exceeds 1e-12.
class StrategyVector {
 public:
  static constexpr double kSumTolerance = 1e-9;
  static constexpr double kRenormTolerance = 1e-12;

  explicit StrategyVector(std::vector<double> weights) : w_(std::move(weights)) {
    if (w_.empty()) {
      throw std::invalid_argument("StrategyVector: dimension must be >= 1");
    }
    double sum = 0.0;
    for (double x : w_) {
      if (!std::isfinite(x) || x < -kSumTolerance || x > 1.0 + kSumTolerance) {
        throw std::invalid_argument("StrategyVector: entry " + std::to_string(x) +
                                    " outside [0, 1]");
      }
      sum += x;
    }
    if (std::abs(sum - 1.0) > kSumTolerance) {
      throw std::invalid_argument("StrategyVector: entries sum to " +
                                  std::to_string(sum) + ", expected 1");
    }
    for (double& x : w_) {
      if (x < 0.0) x = 0.0;
      if (x > 1.0) x = 1.0;
    }
    renormalize_if_needed();
  }

  static StrategyVector uniform(std::size_t n) {
    if (n == 0) throw std::invalid_argument("StrategyVector: dimension must be >= 1");
    return StrategyVector(std::vector<double>(n, 1.0 / static_cast<double>(n)));
  }

  static StrategyVector vertex(std::size_t n, std::size_t index) {
    if (index >= n) throw std::invalid_argument("StrategyVector: vertex index out of range");
    std::vector<double> w(n, 0.0);
    w[index] = 1.0;
    return StrategyVector(std::move(w));
  }

  std::size_t size() const { return w_.size(); }
  double operator[](std::size_t i) const { return w_[i]; }
  const std::vector<double>& weights() const { return w_; }

  Eigen::VectorXd as_vector() const {
    return Eigen::Map<const Eigen::VectorXd>(w_.data(), static_cast<Eigen::Index>(w_.size()));
  }

  double sum() const {
    double s = 0.0;
    for (double x : w_) s += x;
    return s;
  }

  std::size_t argmax() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < w_.size(); ++i) {
      if (w_[i] > w_[best]) best = i;
    }
    return best;
  }

  // Euclidean distance to the vertex e_index.
  double distance_to_vertex(std::size_t index) const {
    double d2 = 0.0;
    for (std::size_t i = 0; i < w_.size(); ++i) {
      const double diff = w_[i] - (i == index ? 1.0 : 0.0);
      d2 += diff * diff;
    }
    return std::sqrt(d2);
  }

  // Distance to the nearest simplex vertex (the set of pure strategies).
  double distance_to_nearest_vertex() const { return distance_to_vertex(argmax()); }

  // Returns true if a renormalization was applied.
  bool renormalize_if_needed() {
    const double s = sum();
    if (std::abs(s - 1.0) <= kRenormTolerance) return false;
    for (double& x : w_) x /= s;
    return true;
  }

 private:
  std::vector<double> w_;
};

// Pure strategy e_index on a simplex of the given dimension.
struct UnitVector {
  std::size_t dimension;
  std::size_t index;

  UnitVector(std::size_t dim, std::size_t idx) : dimension(dim), index(idx) {
    if (dim == 0) throw std::invalid_argument("UnitVector: dimension must be >= 1");
    if (idx >= dim) throw std::invalid_argument("UnitVector: index out of range");
  }
};

// Counters for numerically notable events inside the update rules.
struct ReplicatorDiagnostics {
  std::uint64_t gain_clamps = 0;      // step size epsilon*r exceeded 1 and was clamped
  std::uint64_t renormalizations = 0; // sum drifted beyond 1e-12 and was rescaled
};

// One selection-learning update: move v toward the chosen vertex with step
// size `gain`,
//   v' = v + gain * (e_chosen - v) = (1 - gain) * v + gain * e_chosen.
// The gain is the product of the learning rate and the (nonnegative)
// performance measure; it is clamped to [0, 1] so the update is always a
// convex combination and cannot leave the simplex. Clamps are counted in
// `diag` because a clamped update means the learning rate is too large for
// the observed performance scale.
inline StrategyVector replicator_update(const StrategyVector& v, const UnitVector& chosen,
                                        double gain, ReplicatorDiagnostics* diag = nullptr) {
  if (chosen.dimension != v.size()) {
    throw std::invalid_argument("replicator_update: unit vector dimension " +
                                std::to_string(chosen.dimension) + " != strategy dimension " +
                                std::to_string(v.size()));
  }
  if (!std::isfinite(gain) || gain < 0.0) {
    throw std::invalid_argument("replicator_update: gain must be finite and >= 0");
  }
  double g = gain;
  if (g > 1.0) {
    g = 1.0;
    if (diag) ++diag->gain_clamps;
  }
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = (1.0 - g) * v[i] + (i == chosen.index ? g : 0.0);
  }
  StrategyVector result{std::move(out)};
  if (result.renormalize_if_needed() && diag) ++diag->renormalizations;
  return result;
}

// Deterministic categorical pick: smallest index i such that
// u <= w_0 + ... + w_i. A draw landing exactly on a cumulative boundary is
// assigned to the lower index. The weights need not be normalized; `u`
// should be a uniform draw on [0, sum(w)).
inline std::size_t categorical_index(const std::vector<double>& weights, double u) {
  if (weights.empty()) throw std::invalid_argument("categorical_index: empty weights");
  double cum = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] < 0.0) {
      throw std::invalid_argument("categorical_index: negative weight");
    }
    cum += weights[i];
    if (u <= cum) return i;
  }
  return weights.size() - 1;  // numerical tail guard
}

// Sample an index with the lambda-perturbed law
//   P(i) = (1 - lambda) * v_i + lambda / n,
// i.e. with probability 1-lambda follow the strategy vector, otherwise pick
// uniformly. Exactly one uniform draw is consumed per call.
inline std::size_t perturbed_sample(const StrategyVector& v, double lambda, RngStream& rng) {
  if (!(lambda >= 0.0) || lambda >= 1.0) {
    throw std::invalid_argument("perturbed_sample: lambda must lie in [0, 1)");
  }
  const double n = static_cast<double>(v.size());
  std::vector<double> q(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    q[i] = (1.0 - lambda) * v[i] + lambda / n;
  }
  return categorical_index(q, rng.uniform01());
}

// The symmetric matrix V(v) with diagonal v_i (1 - v_i) and off-diagonal
// -v_i v_j. It is positive semidefinite on the simplex and the quadratic
// form r^T V(v) r equals sum_{i<j} v_i v_j (r_i - r_j)^2, so it is strictly
// positive at interior points when the entries of r are not all equal.
inline Eigen::MatrixXd v_matrix(const StrategyVector& v) {
  const Eigen::Index n = static_cast<Eigen::Index>(v.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double vi = v[static_cast<std::size_t>(i)];
      const double vj = v[static_cast<std::size_t>(j)];
      m(j, i) = (i == j) ? vi * (1.0 - vi) : -vj * vi;
    }
  }
  return m;
}

// Same structure on the coordination (profile-selection) simplex.
inline Eigen::MatrixXd w_matrix(const StrategyVector& w) { return v_matrix(w); }

}  // namespace switchpred
