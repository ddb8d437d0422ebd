#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/QR>

#include <cmath>
#include <random>

#include "tvcm/boosting.hpp"
#include "tvcm/data.hpp"
#include "tvcm/errors.hpp"
#include "tvcm/model.hpp"
#include "tvcm/rng.hpp"

using namespace tvcm;

namespace {

Dataset numeric_data(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  Dataset d;
  d.y = y;
  d.w = w;
  d.x = x;
  for (Eigen::Index j = 0; j < x.cols(); ++j) d.x_names.push_back("x" + std::to_string(j + 1));
  d.z = x;
  d.z_names = d.x_names;
  return d;
}

Design unscaled(const Dataset& d) {
  return Design{d, Scaling::identity(d.x.cols()), Scaling::identity(d.z.cols())};
}

// Poisson data with log-mean 0.3 + 0.4 x1 - 0.2 x2 and random exposures.
Dataset poisson_data(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(0.2, 1.0);
  Eigen::MatrixXd x(n, 3);
  Eigen::VectorXd y(n), w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = nd(gen);
    w(i) = ud(gen);
    std::poisson_distribution<int> pd(w(i) * std::exp(0.3 + 0.4 * x(i, 0) - 0.2 * x(i, 1)));
    y(i) = pd(gen) / w(i);
  }
  return numeric_data(x, y, w);
}

// Attaches `count` random depth-2 trees to every dimension.
void add_random_trees(TvcmModel& m, const Design& design, int count, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  const ModifierIndex index(design.data.z);
  for (Eigen::Index j = 0; j < m.p(); ++j) {
    auto& c = m.coefficients[static_cast<std::size_t>(j)];
    for (int k = 0; k < count; ++k) {
      std::vector<double> g(static_cast<std::size_t>(design.data.rows()));
      for (double& v : g) v = nd(gen);
      TreeFit fit = fit_partition(g, index, c.modifier_columns, {2, 5});
      for (TreeNode& node : fit.tree.nodes) {
        if (node.is_leaf()) node.value = nd(gen);
      }
      fit.tree.dimension = static_cast<int>(j);
      c.trees.push_back(fit.tree);
    }
  }
}

}  // namespace

TEST_CASE("glm exact linear recovery") {
  std::mt19937_64 gen(1);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd x(500, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = nd(gen);
  const Eigen::VectorXd y = 0.5 * x.col(0);
  const GlmCoefficients g = fit_glm(unscaled(numeric_data(x, y, Eigen::VectorXd::Ones(500))), kGaussianLoss, kIdentityLink);
  CHECK(std::abs(g.beta0) <= 1e-8);
  CHECK(std::abs(g.beta(0) - 0.5) <= 1e-8);
  CHECK(std::abs(g.beta(1)) <= 1e-8);
  CHECK(std::abs(g.beta(2)) <= 1e-8);
}

TEST_CASE("gaussian glm matches weighted least squares") {
  std::mt19937_64 gen(2);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(0.5, 2.0);
  const Eigen::Index n = 400;
  Eigen::MatrixXd x(n, 4);
  Eigen::VectorXd y(n), w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < 4; ++j) x(i, j) = nd(gen);
    y(i) = 1.0 + x(i, 0) - 2.0 * x(i, 3) + nd(gen);
    w(i) = ud(gen);
  }
  const GlmCoefficients g = fit_glm(unscaled(numeric_data(x, y, w)), kGaussianLoss, kIdentityLink);
  Eigen::MatrixXd a(n, 5);
  a.col(0).setOnes();
  a.rightCols(4) = x;
  const Eigen::VectorXd sw = w.cwiseSqrt();
  const Eigen::VectorXd ref = (sw.asDiagonal() * a).colPivHouseholderQr().solve(sw.asDiagonal() * y);
  CHECK(std::abs(g.beta0 - ref(0)) <= 1e-6);
  for (Eigen::Index j = 0; j < 4; ++j) CHECK(std::abs(g.beta(j) - ref(j + 1)) <= 1e-6);
}

TEST_CASE("poisson intercept-only glm has the closed form") {
  Dataset d = poisson_data(300, 4);
  d.x.resize(300, 0);
  d.z.resize(300, 0);
  d.x_names.clear();
  d.z_names.clear();
  const GlmCoefficients g = fit_glm(unscaled(d), kPoissonLoss, kLogLink);
  CHECK(g.beta.size() == 0);
  CHECK(g.beta0 == doctest::Approx(std::log(d.w.dot(d.y) / d.w.sum())).epsilon(1e-12));
}

TEST_CASE("poisson glm solves the score equations") {
  const Dataset d = poisson_data(5000, 5);
  const GlmCoefficients g = fit_glm(unscaled(d), kPoissonLoss, kLogLink);
  Eigen::MatrixXd a(d.rows(), 4);
  a.col(0).setOnes();
  a.rightCols(3) = d.x;
  Eigen::VectorXd beta(4);
  beta << g.beta0, g.beta;
  const Eigen::VectorXd mu = (a * beta).array().exp();
  const Eigen::VectorXd score = a.transpose() * (d.w.array() * (d.y - mu).array()).matrix();
  CHECK(score.cwiseAbs().maxCoeff() <= 1e-6 * d.w.sum());
  CHECK(g.beta(0) == doctest::Approx(0.4).epsilon(0.15));
  CHECK(g.beta(1) == doctest::Approx(-0.2).epsilon(0.25));
}

TEST_CASE("glm on the simulated data recovers the coefficient means") {
  const Simulation sim = simulate({.n = 100000, .seed = 8});
  const GlmCoefficients g = fit_glm(standardize(sim.data), kGaussianLoss, kIdentityLink);
  CHECK(std::abs(g.beta(0) - 0.5) <= 0.05);
  CHECK(std::abs(g.beta(5) - 0.125) <= 0.05);
}

TEST_CASE("glm rejects non-canonical pairs and empty data") {
  const Dataset d = poisson_data(50, 1);
  CHECK_THROWS_AS(fit_glm(unscaled(d), kPoissonLoss, kIdentityLink), ContractError);
  Dataset zero = d;
  zero.y.setZero();
  CHECK_THROWS_AS(fit_glm(unscaled(zero), kPoissonLoss, kLogLink), FitError);
}

TEST_CASE("beta_of and delta_of") {
  const Dataset d = poisson_data(200, 2);
  const Design design = unscaled(d);
  GlmCoefficients glm{0.1, Eigen::Vector3d(0.2, -0.3, 0.4)};
  TvcmModel m = make_glm_model(design, glm, kPoissonLoss, kLogLink);
  const Eigen::Vector3d z(0.5, -1.0, 2.0);
  CHECK(beta_of(m, z) == glm.beta);
  CHECK(delta_of(m, z) == Eigen::VectorXd::Zero(3));

  RegressionTree leaf;
  leaf.arity = 3;
  leaf.nodes[0].value = 2.0;
  m.coefficients[1].trees.push_back(leaf);
  CHECK(beta_of(m, z)(1) == doctest::Approx(-0.3 + 0.02).epsilon(1e-15));

  add_random_trees(m, design, 3, 9);
  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd;
  for (int r = 0; r < 100; ++r) {
    const Eigen::Vector3d zr(nd(gen), nd(gen), nd(gen));
    const Eigen::VectorXd diff = beta_of(m, zr) - m.beta_glm() - delta_of(m, zr);
    CHECK(diff.cwiseAbs().maxCoeff() <= 1e-15);
  }
  CHECK_THROWS_AS(beta_of(m, Eigen::Vector2d(0.0, 0.0)), ContractError);
  CHECK_THROWS_AS(predict_mu(m, Eigen::Vector2d(0.0, 0.0), z), ContractError);
}

TEST_CASE("batch and single-row evaluation agree") {
  const Dataset d = poisson_data(300, 6);
  const Design design = standardize(d);
  TvcmModel m = make_glm_model(design, fit_glm(design, kPoissonLoss, kLogLink), kPoissonLoss, kLogLink);
  add_random_trees(m, design, 2, 4);
  const Eigen::VectorXd mu = predict_mu(m, design);
  for (Eigen::Index i = 0; i < 300; i += 7) {
    const Eigen::VectorXd xr = d.x.row(i).transpose();
    CHECK(predict_mu(m, xr, xr) == doctest::Approx(mu(i)).epsilon(1e-13));
  }
}

TEST_CASE("log-link factorization") {
  const Dataset d = poisson_data(1000, 7);
  const Design design = standardize(d);
  TvcmModel m = make_glm_model(design, fit_glm(design, kPoissonLoss, kLogLink), kPoissonLoss, kLogLink, 0.05);
  add_random_trees(m, design, 4, 5);
  const Eigen::VectorXd mu = predict_mu(m, design);
  const Eigen::VectorXd mu_glm = predict_glm_mu(m, design);
  const Eigen::MatrixXd delta = delta_matrix(m, design.data.z);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    const double expected = mu_glm(i) * std::exp(delta.row(i).dot(design.data.x.row(i)));
    worst = std::max(worst, std::abs(mu(i) - expected) / expected);
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("prediction edge cases") {
  const Dataset d = poisson_data(100, 8);
  const Design design = unscaled(d);
  const GlmCoefficients glm{0.25, Eigen::Vector3d(0.1, 0.2, 0.3)};
  const TvcmModel m = make_glm_model(design, glm, kPoissonLoss, kLogLink);
  CHECK(predict_mu(m, Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero()) == std::exp(0.25));
  const Eigen::Vector3d x(1.0, -2.0, 0.5);
  CHECK(predict_mu(m, x, x) == doctest::Approx(std::exp(0.25 + 0.1 - 0.4 + 0.15)).epsilon(1e-15));

  Design huge = design;
  huge.data.x(4, 0) = 1e6;
  CHECK_THROWS_WITH_AS(predict_mu(m, huge), doctest::Contains("row 5"), FitError);

  Dataset other = d;
  other.x_names[0] = "renamed";
  CHECK_THROWS_AS(design_for(m, other), LoadError);
}

TEST_CASE("zero-tree model reproduces the glm") {
  const Dataset d = poisson_data(2000, 9);
  const Design design = standardize(d);
  const GlmCoefficients glm = fit_glm(design, kPoissonLoss, kLogLink);
  const TvcmModel m = recalibrate_intercept(make_glm_model(design, glm, kPoissonLoss, kLogLink), design);
  CHECK(std::abs(m.beta0 - glm.beta0) <= 1e-10);
  const Eigen::VectorXd direct = ((design.data.x * glm.beta).array() + glm.beta0).exp();
  const Eigen::VectorXd mu = predict_mu(m, design);
  CHECK(((mu - direct).array() / direct.array()).abs().maxCoeff() <= 1e-10);
}

TEST_CASE("intercept recalibration") {
  const Dataset d = poisson_data(3000, 10);
  const Design design = standardize(d);
  TvcmModel m = make_glm_model(design, fit_glm(design, kPoissonLoss, kLogLink), kPoissonLoss, kLogLink, 0.1);
  add_random_trees(m, design, 3, 11);

  SUBCASE("poisson balance") {
    const TvcmModel r = recalibrate_intercept(m, design);
    const double total = d.w.dot(d.y);
    CHECK(std::abs(d.w.dot(predict_mu(r, design)) - total) / total <= 1e-8);
    // A balanced model is a fixed point.
    CHECK(std::abs(recalibrate_intercept(r, design).beta0 - r.beta0) <= 1e-10);
  }
  SUBCASE("constant shifts are absorbed") {
    TvcmModel shifted = m;
    shifted.beta0 += 0.7;
    const Eigen::VectorXd a = predict_mu(recalibrate_intercept(m, design), design);
    const Eigen::VectorXd b = predict_mu(recalibrate_intercept(shifted, design), design);
    CHECK(((a - b).array() / a.array()).abs().maxCoeff() <= 1e-10);
  }
  SUBCASE("gaussian residuals sum to zero") {
    Dataset g = d;
    g.w.setOnes();
    const Design gd = standardize(g);
    TvcmModel gm = make_glm_model(gd, fit_glm(gd, kGaussianLoss, kIdentityLink), kGaussianLoss, kIdentityLink, 0.1);
    add_random_trees(gm, gd, 2, 12);
    gm = recalibrate_intercept(gm, gd);
    const Eigen::VectorXd eta = linear_predictor(gm, gd);
    CHECK(std::abs(gd.data.w.dot(gd.data.y - eta)) <= 1e-9 * gd.data.rows());
  }
}

TEST_CASE("standardization is invisible to raw-input predictions") {
  Dataset d = poisson_data(1500, 13);
  Dataset scaled = d;
  scaled.x.col(1) = scaled.x.col(1) * 37.5 + Eigen::VectorXd::Constant(d.rows(), -12.0);
  scaled.z.col(1) = scaled.x.col(1);

  BoostConfig cfg;
  cfg.loss = kPoissonLoss;
  cfg.link = kLogLink;
  cfg.kappa = {15, 15, 15};
  cfg.epsilon = {0.1, 0.1, 0.1};
  cfg.tree = {2, 20};
  const Design da = standardize(d);
  const Design db = standardize(scaled);
  const TvcmModel ma = train(da, fit_glm(da, kPoissonLoss, kLogLink), cfg);
  const TvcmModel mb = train(db, fit_glm(db, kPoissonLoss, kLogLink), cfg);
  for (Eigen::Index i = 0; i < d.rows(); i += 10) {
    const Eigen::VectorXd xa = d.x.row(i).transpose();
    const Eigen::VectorXd xb = scaled.x.row(i).transpose();
    const double a = predict_mu(ma, xa, xa);
    const double b = predict_mu(mb, xb, xb);
    CHECK(std::abs(a - b) / a <= 1e-6);
  }
}
