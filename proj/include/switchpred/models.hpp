#pragma once

// One-step output predictors: lagged linear/bilinear regression bases, ridge
// least-squares fitting on a recorded history, and the switched predictor
// that dispatches to a per-subset model through the input partition.

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "switchpred/errors.hpp"
#include "switchpred/partition.hpp"
#include "switchpred/plant.hpp"

namespace switchpred {

// Lag structure of the regression vector used to predict y(t_{j+1}) from
// samples up to t_j. With q outputs, m inputs and nd disturbance channels
// the regressor is laid out as
//   [ y(t_j) ... y(t_{j-ny+1}) |
//     u(t_j) ... u(t_{j-nu+1}) |
//     d(t_j) ... d(t_{j-ndl+1}) |
//     for each product lag l = 0..np-1, input i:
//       u_i(t_{j-l}) * y(t_{j-l}),  u_i(t_{j-l}) * d(t_{j-l}) ]
// so product_lags = 0 gives a purely linear (ARX-style) model and
// product_lags > 0 adds the input-state and input-disturbance products that
// a sampled bilinear plant generates.
struct RegressionBasis {
  std::size_t output_lags = 2;
  std::size_t input_lags = 2;
  std::size_t disturbance_lags = 2;
  std::size_t product_lags = 0;

  void validate() const {
    if (output_lags == 0 || input_lags == 0) {
      throw std::invalid_argument("RegressionBasis: need >= 1 output lag and >= 1 input lag");
    }
  }

  std::size_t max_lag() const {
    std::size_t l = output_lags;
    if (input_lags > l) l = input_lags;
    if (disturbance_lags > l) l = disturbance_lags;
    if (product_lags > l) l = product_lags;
    return l;
  }

  std::size_t regressor_length(std::size_t q, std::size_t m, std::size_t nd) const {
    return output_lags * q + input_lags * m + disturbance_lags * nd +
           product_lags * (m * q + m * nd);
  }
};

// Number of most recent regression rows used when fitting; 0 means all
// available rows.
struct TrainingWindow {
  std::size_t max_samples = 0;
};

// A predictor candidate: a named basis plus (once trained) its coefficient
// matrix theta (regressor_length x q), so that yhat(t_{j+1}) = theta^T phi_j.
struct PredictorSpec {
  std::string name;
  RegressionBasis basis;
  double ridge = 1e-6;
  Eigen::MatrixXd theta;  // empty until trained

  bool trained() const { return theta.size() > 0; }
};

// Regression vector phi_j for predicting y(t_{j+1}). Returns nullopt while
// the history is too short to fill every lag (the not-ready signal).
inline std::optional<Eigen::VectorXd> build_regressor(const PredictorSpec& spec, const History& h,
                                                      std::size_t j) {
  spec.basis.validate();
  if (j >= h.size()) throw std::invalid_argument("build_regressor: sample index out of range");
  const std::size_t need = spec.basis.max_lag();
  if (j + 1 < need) return std::nullopt;

  const std::size_t q = static_cast<std::size_t>(h.y(j).size());
  const std::size_t m = static_cast<std::size_t>(h.u(j).size());
  const std::size_t nd = static_cast<std::size_t>(h.d(j).size());
  Eigen::VectorXd phi(static_cast<Eigen::Index>(spec.basis.regressor_length(q, m, nd)));
  Eigen::Index at = 0;
  for (std::size_t l = 0; l < spec.basis.output_lags; ++l) {
    phi.segment(at, static_cast<Eigen::Index>(q)) = h.y(j - l);
    at += static_cast<Eigen::Index>(q);
  }
  for (std::size_t l = 0; l < spec.basis.input_lags; ++l) {
    phi.segment(at, static_cast<Eigen::Index>(m)) = h.u(j - l);
    at += static_cast<Eigen::Index>(m);
  }
  for (std::size_t l = 0; l < spec.basis.disturbance_lags; ++l) {
    phi.segment(at, static_cast<Eigen::Index>(nd)) = h.d(j - l);
    at += static_cast<Eigen::Index>(nd);
  }
  for (std::size_t l = 0; l < spec.basis.product_lags; ++l) {
    const Eigen::VectorXd& u = h.u(j - l);
    const Eigen::VectorXd& y = h.y(j - l);
    const Eigen::VectorXd& d = h.d(j - l);
    for (std::size_t i = 0; i < m; ++i) {
      const double ui = u(static_cast<Eigen::Index>(i));
      phi.segment(at, static_cast<Eigen::Index>(q)) = ui * y;
      at += static_cast<Eigen::Index>(q);
      phi.segment(at, static_cast<Eigen::Index>(nd)) = ui * d;
      at += static_cast<Eigen::Index>(nd);
    }
  }
  return phi;
}

// Batch ridge least squares of y(t_{j+1}) on phi_j over the most recent
// window of the history. With ridge = 0 the fit falls back to a
// rank-revealing QR and reports rank deficiency instead of returning
// meaningless coefficients. `prefix` restricts the fit to the first
// `prefix` samples (as if the history ended there) without copying them.
inline PredictorSpec train(const PredictorSpec& spec, const History& h,
                           const TrainingWindow& window = {},
                           std::size_t prefix = std::numeric_limits<std::size_t>::max()) {
  spec.basis.validate();
  const std::size_t size = std::min(h.size(), prefix);
  if (size < 2) throw std::invalid_argument("train: history too short");
  const std::size_t last_source = size - 2;  // last j with a recorded target j+1
  const std::size_t min_source = spec.basis.max_lag() - 1;
  if (last_source < min_source) {
    throw std::invalid_argument("train: history shorter than the basis lag depth");
  }
  std::size_t first_source = min_source;
  if (window.max_samples > 0) {
    const std::size_t rows_available = last_source - min_source + 1;
    if (rows_available > window.max_samples) {
      first_source = last_source - window.max_samples + 1;
    }
  }

  const std::size_t q = static_cast<std::size_t>(h.y(0).size());
  const std::size_t rows = last_source - first_source + 1;
  const auto phi0 = build_regressor(spec, h, first_source);
  const Eigen::Index p = phi0->size();
  if (rows < static_cast<std::size_t>(p)) {
    throw std::invalid_argument("train: fewer regression rows (" + std::to_string(rows) +
                                ") than coefficients (" + std::to_string(p) + ")");
  }

  Eigen::MatrixXd Phi(static_cast<Eigen::Index>(rows), p);
  Eigen::MatrixXd Y(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(q));
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t j = first_source + r;
    Phi.row(static_cast<Eigen::Index>(r)) = build_regressor(spec, h, j)->transpose();
    Y.row(static_cast<Eigen::Index>(r)) = h.y(j + 1).transpose();
  }

  PredictorSpec out = spec;
  if (spec.ridge > 0.0) {
    const Eigen::MatrixXd G =
        Phi.transpose() * Phi + spec.ridge * Eigen::MatrixXd::Identity(p, p);
    out.theta = Eigen::LDLT<Eigen::MatrixXd>(G).solve(Phi.transpose() * Y);
  } else {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Phi);
    if (qr.rank() < p) {
      throw IllConditionedError("train: regression matrix is rank deficient (rank " +
                                std::to_string(qr.rank()) + " of " + std::to_string(p) +
                                ") and no ridge term was requested");
    }
    out.theta = qr.solve(Y);
  }
  if (!out.theta.allFinite()) {
    throw IllConditionedError("train: non-finite coefficients");
  }
  return out;
}

// One-step prediction yhat(t_{j+1}) = theta^T phi_j. An untrained model is
// an error; a trained model asked to predict before its lags are filled
// falls back to persistence (yhat = y(t_j)).
inline Eigen::VectorXd predict(const PredictorSpec& spec, const History& h, std::size_t j,
                               bool* used_fallback = nullptr) {
  if (!spec.trained()) {
    throw UntrainedModelError("predict: model '" + spec.name + "' has no coefficients");
  }
  const auto phi = build_regressor(spec, h, j);
  if (!phi.has_value()) {
    if (used_fallback) *used_fallback = true;
    return h.y(j);
  }
  if (used_fallback) *used_fallback = false;
  return spec.theta.transpose() * (*phi);
}

// A full switched predictor for one partition profile: one model per subset,
// dispatched on the current input vector.
struct SwitchedPredictor {
  PartitionProfile profile;
  std::size_t profile_id = 0;
  std::vector<PredictorSpec> subset_models;  // indexed by flat subset index

  void validate() const {
    if (subset_models.size() != profile.subset_count()) {
      throw std::invalid_argument("SwitchedPredictor: need one model per subset (" +
                                  std::to_string(profile.subset_count()) + "), got " +
                                  std::to_string(subset_models.size()));
    }
  }
};

inline Eigen::VectorXd predict_switched(const SwitchedPredictor& sw, const History& h,
                                        std::size_t j, std::size_t* subset_out = nullptr,
                                        bool* used_fallback = nullptr) {
  sw.validate();
  const SubsetId id = locate(sw.profile, h.u(j), sw.profile_id);
  if (subset_out) *subset_out = id.flat;
  return predict(sw.subset_models[id.flat], h, j, used_fallback);
}

// The standard three-candidate menu: second- and third-order linear lagged
// models and a second-order model with bilinear product terms.
inline std::vector<PredictorSpec> model_preset_menu() {
  PredictorSpec lin2{"lin2", RegressionBasis{2, 2, 2, 0}, 1e-6, {}};
  PredictorSpec lin3{"lin3", RegressionBasis{3, 3, 3, 0}, 1e-6, {}};
  PredictorSpec bil2{"bil2", RegressionBasis{2, 2, 2, 2}, 1e-6, {}};
  return {lin2, lin3, bil2};
}

inline const PredictorSpec& find_model(const std::vector<PredictorSpec>& menu,
                                       const std::string& name) {
  for (const auto& m : menu) {
    if (m.name == name) return m;
  }
  throw std::invalid_argument("find_model: no model named '" + name + "'");
}

// Candidate from its name: "lin<k>" is a k-th-order linear lagged model,
// "bil<k>" the same with k product lags added.
inline PredictorSpec model_from_name(const std::string& name) {
  auto order_of = [&](std::size_t prefix_len) {
    const std::string digits = name.substr(prefix_len);
    if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos) {
      throw std::invalid_argument("model_from_name: cannot parse order in '" + name + "'");
    }
    const unsigned long k = std::stoul(digits);
    if (k == 0 || k > 12) {
      throw std::invalid_argument("model_from_name: order must be in 1..12, got '" + name + "'");
    }
    return static_cast<std::size_t>(k);
  };
  if (name.rfind("lin", 0) == 0) {
    const std::size_t k = order_of(3);
    return PredictorSpec{name, RegressionBasis{k, k, k, 0}, 1e-6, {}};
  }
  if (name.rfind("bil", 0) == 0) {
    const std::size_t k = order_of(3);
    return PredictorSpec{name, RegressionBasis{k, k, k, k}, 1e-6, {}};
  }
  throw std::invalid_argument("model_from_name: unknown model family in '" + name + "'");
}

}  // namespace switchpred
