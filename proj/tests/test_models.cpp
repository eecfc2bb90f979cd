#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "switchpred/errors.hpp"
#include "switchpred/models.hpp"
#include "switchpred/simplex.hpp"

using namespace switchpred;

namespace {

Eigen::VectorXd vec1(double a) {
  Eigen::VectorXd v(1);
  v << a;
  return v;
}

// Scalar-channel history following y_{j+1} = t0*y_j + t1*u_j + t2*d_j with
// uniformly random exogenous signals; exactly realizable by the first-order
// linear basis.
History linear_recursion_history(const Eigen::Vector3d& theta, std::size_t samples,
                                 std::uint64_t seed, std::size_t regime_switch_at = 0,
                                 const Eigen::Vector3d* theta_after = nullptr) {
  RngStream rng(seed);
  History h;
  double y = 1.0;
  for (std::size_t j = 0; j < samples; ++j) {
    const double u = rng.uniform01();
    const double d = rng.uniform01();
    h.append(HistorySample{j, 0.1 * static_cast<double>(j), vec1(u), vec1(d), vec1(y)});
    const Eigen::Vector3d& th =
        (theta_after != nullptr && regime_switch_at > 0 && j >= regime_switch_at) ? *theta_after
                                                                                  : theta;
    y = th(0) * y + th(1) * u + th(2) * d;
  }
  return h;
}

}  // namespace

TEST_CASE("regressor lengths follow the lag structure", "[models]") {
  // One output, two inputs, two disturbance channels.
  CHECK(RegressionBasis{2, 2, 2, 0}.regressor_length(1, 2, 2) == 10);
  CHECK(RegressionBasis{3, 3, 3, 0}.regressor_length(1, 2, 2) == 15);
  CHECK(RegressionBasis{2, 2, 2, 2}.regressor_length(1, 2, 2) == 22);
  CHECK(RegressionBasis{2, 1, 3, 1}.max_lag() == 3);
  CHECK_THROWS_AS((RegressionBasis{0, 1, 1, 0}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((RegressionBasis{1, 0, 1, 0}.validate()), std::invalid_argument);
}

TEST_CASE("the regression vector is laid out lags-first then products", "[models]") {
  History h;
  Eigen::VectorXd u0(2), u1(2);
  u0 << 0.3, 0.6;
  u1 << 0.4, 0.8;
  h.append(HistorySample{0, 0.0, u0, vec1(2.0), vec1(5.0)});
  h.append(HistorySample{1, 0.1, u1, vec1(3.0), vec1(7.0)});

  PredictorSpec spec{"probe", RegressionBasis{2, 1, 1, 1}, 1e-6, {}};
  CHECK_FALSE(build_regressor(spec, h, 0).has_value());  // lags not yet filled
  const auto phi = build_regressor(spec, h, 1);
  REQUIRE(phi.has_value());
  REQUIRE(phi->size() == 9);
  const std::vector<double> expected{7.0, 5.0, 0.4, 0.8, 3.0,
                                     0.4 * 7.0, 0.4 * 3.0, 0.8 * 7.0, 0.8 * 3.0};
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK((*phi)(static_cast<Eigen::Index>(i)) == expected[i]);
  }
  CHECK_THROWS_AS(build_regressor(spec, h, 2), std::invalid_argument);
}

TEST_CASE("fitting recovers exact coefficients from realizable data", "[models]") {
  const Eigen::Vector3d truth(0.8, 0.5, -0.3);
  const History h = linear_recursion_history(truth, 200, 17);

  PredictorSpec exact{"lin1", RegressionBasis{1, 1, 1, 0}, 0.0, {}};
  const PredictorSpec fitted = train(exact, h);
  REQUIRE(fitted.trained());
  REQUIRE(fitted.theta.rows() == 3);
  REQUIRE(fitted.theta.cols() == 1);
  for (int i = 0; i < 3; ++i) CHECK(fitted.theta(i, 0) == Catch::Approx(truth(i)).margin(1e-10));

  // The default ridge only perturbs the solution at the regularization scale.
  PredictorSpec ridged = exact;
  ridged.ridge = 1e-6;
  const PredictorSpec fitted2 = train(ridged, h);
  for (int i = 0; i < 3; ++i) CHECK(fitted2.theta(i, 0) == Catch::Approx(truth(i)).margin(1e-5));

  // One-step predictions on the training data are exact for the exact fit.
  for (std::size_t j = 0; j + 1 < h.size(); j += 17) {
    const Eigen::VectorXd yhat = predict(fitted, h, j);
    CHECK(yhat(0) == Catch::Approx(h.y(j + 1)(0)).margin(1e-9));
  }
}

TEST_CASE("a bounded window fits only the recent regime", "[models]") {
  const Eigen::Vector3d before(0.8, 0.5, -0.3);
  const Eigen::Vector3d after(0.6, -0.2, 0.4);
  const History h = linear_recursion_history(before, 300, 23, 150, &after);

  PredictorSpec spec{"lin1", RegressionBasis{1, 1, 1, 0}, 0.0, {}};
  const PredictorSpec recent = train(spec, h, TrainingWindow{100});
  for (int i = 0; i < 3; ++i) CHECK(recent.theta(i, 0) == Catch::Approx(after(i)).margin(1e-8));

  PredictorSpec ridged = spec;  // full-history fit straddles the switch
  ridged.ridge = 1e-9;
  const PredictorSpec full = train(ridged, h);
  CHECK((full.theta.col(0) - after).norm() > 1e-2);
}

TEST_CASE("rank-deficient fits are reported rather than returned", "[models]") {
  // Disturbance identically equal to the input makes two regressor columns
  // collide; with no ridge the fit must refuse.
  RngStream rng(5);
  History h;
  double y = 1.0;
  for (std::size_t j = 0; j < 60; ++j) {
    const double u = rng.uniform01();
    h.append(HistorySample{j, 0.1 * static_cast<double>(j), vec1(u), vec1(u), vec1(y)});
    y = 0.7 * y + 0.4 * u;
  }
  PredictorSpec spec{"lin1", RegressionBasis{1, 1, 1, 0}, 0.0, {}};
  CHECK_THROWS_AS(train(spec, h), IllConditionedError);
  spec.ridge = 1e-6;  // the regularized fit is defined
  CHECK_NOTHROW(train(spec, h));
}

TEST_CASE("fitting guards against short histories", "[models]") {
  const Eigen::Vector3d truth(0.5, 0.2, 0.1);
  PredictorSpec spec{"lin2", RegressionBasis{2, 2, 2, 0}, 1e-6, {}};
  const History tiny = linear_recursion_history(truth, 4, 3);
  CHECK_THROWS_AS(train(spec, tiny), std::invalid_argument);  // fewer rows than coefficients
  const History one = linear_recursion_history(truth, 1, 3);
  CHECK_THROWS_AS(train(spec, one), std::invalid_argument);
}

TEST_CASE("prediction requires training and falls back to persistence", "[models]") {
  const Eigen::Vector3d truth(0.8, 0.5, -0.3);
  const History h = linear_recursion_history(truth, 50, 29);

  const PredictorSpec untrained{"lin2", RegressionBasis{2, 2, 2, 0}, 1e-6, {}};
  CHECK_THROWS_AS(predict(untrained, h, 10), UntrainedModelError);

  const PredictorSpec fitted = train(untrained, h);
  bool fallback = false;
  const Eigen::VectorXd early = predict(fitted, h, 0, &fallback);  // lags not filled at j = 0
  CHECK(fallback);
  CHECK(early == h.y(0));
  (void)predict(fitted, h, 10, &fallback);
  CHECK_FALSE(fallback);
}

TEST_CASE("switched prediction dispatches on the input cell", "[models]") {
  const PartitionProfile profile{{PartitionPattern{Interval{0.0, 1.0}, {0.5}}}};
  Eigen::MatrixXd t0(3, 1), t1(3, 1);
  t0 << 1.0, 0.0, 0.0;  // predicts y_j
  t1 << 2.0, 0.0, 0.0;  // predicts 2 y_j
  SwitchedPredictor sw{profile, 0,
                       {PredictorSpec{"low", RegressionBasis{1, 1, 1, 0}, 0.0, t0},
                        PredictorSpec{"high", RegressionBasis{1, 1, 1, 0}, 0.0, t1}}};

  History h;
  h.append(HistorySample{0, 0.0, vec1(0.2), vec1(0.0), vec1(3.0)});
  h.append(HistorySample{1, 0.1, vec1(0.9), vec1(0.0), vec1(3.0)});

  std::size_t subset = 99;
  CHECK(predict_switched(sw, h, 0, &subset)(0) == Catch::Approx(3.0));
  CHECK(subset == 0);
  CHECK(predict_switched(sw, h, 1, &subset)(0) == Catch::Approx(6.0));
  CHECK(subset == 1);

  SwitchedPredictor wrong = sw;
  wrong.subset_models.pop_back();
  CHECK_THROWS_AS(predict_switched(wrong, h, 0), std::invalid_argument);
}

TEST_CASE("the candidate menu and name parser agree", "[models]") {
  const auto menu = model_preset_menu();
  REQUIRE(menu.size() == 3);
  CHECK(menu[0].name == "lin2");
  CHECK(menu[1].name == "lin3");
  CHECK(menu[2].name == "bil2");
  CHECK(menu[2].basis.product_lags == 2);
  CHECK(find_model(menu, "lin3").basis.output_lags == 3);
  CHECK_THROWS_AS(find_model(menu, "lin9"), std::invalid_argument);

  for (const auto& m : menu) {
    const PredictorSpec parsed = model_from_name(m.name);
    CHECK(parsed.basis.output_lags == m.basis.output_lags);
    CHECK(parsed.basis.input_lags == m.basis.input_lags);
    CHECK(parsed.basis.disturbance_lags == m.basis.disturbance_lags);
    CHECK(parsed.basis.product_lags == m.basis.product_lags);
  }
  CHECK(model_from_name("bil5").basis.product_lags == 5);
  CHECK_THROWS_AS(model_from_name("quad2"), std::invalid_argument);
  CHECK_THROWS_AS(model_from_name("lin0"), std::invalid_argument);
  CHECK_THROWS_AS(model_from_name("lin13"), std::invalid_argument);
  CHECK_THROWS_AS(model_from_name("lin"), std::invalid_argument);
  CHECK_THROWS_AS(model_from_name("linx"), std::invalid_argument);
}
