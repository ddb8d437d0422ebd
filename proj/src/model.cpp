#include "tvcm/model.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tvcm/errors.hpp"

namespace tvcm {

namespace {

// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

Eigen::VectorXd gather(const Eigen::VectorXd& z_std, const std::vector<int>& columns) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(columns.size()));
  for (std::size_t k = 0; k < columns.size(); ++k) out(static_cast<Eigen::Index>(k)) = z_std(columns[k]);
  return out;
}

void check_arity(const char* what, Eigen::Index got, Eigen::Index expected) {
  if (got != expected) {
    throw ContractError(std::string(what) + ": expected " + std::to_string(expected) + " values, got " +
                        std::to_string(got));
  }
}

}  // namespace

Design standardize(const Dataset& raw) {
  if (!raw.categorical.empty()) throw ContractError("standardize: encode categorical columns first");
  Design d;
  d.x_scaling = fit_scaling(raw.x, onehot_x_columns(raw));
  d.z_scaling = fit_scaling(raw.z, onehot_z_columns(raw));
  d.data = raw;
  d.data.x = d.x_scaling.apply(raw.x);
  d.data.z = d.z_scaling.apply(raw.z);
  return d;
}

Design standardize(const Dataset& raw, const Scaling& x_scaling, const Scaling& z_scaling) {
  if (!raw.categorical.empty()) throw ContractError("standardize: encode categorical columns first");
  Design d{raw, x_scaling, z_scaling};
  d.data.x = x_scaling.apply(raw.x);
  d.data.z = z_scaling.apply(raw.z);
  return d;
}

double total_loss(LossSpec loss, LinkSpec link, const Eigen::VectorXd& eta, const Dataset& data) {
  CompensatedSum s;
  for (Eigen::Index i = 0; i < eta.size(); ++i) s.add(loss_at_eta(loss, link, eta(i), data.y(i), data.w(i)));
  return s.value();
}

// ---------------------------------------------------------------------------
// GLM

GlmCoefficients fit_glm(const Design& design, LossSpec loss, LinkSpec link, const GlmFitOptions& options) {
  require_canonical_pair(loss, link);
  const Dataset& d = design.data;
  d.validate();
  const Eigen::Index n = d.rows();
  const Eigen::Index p = d.x.cols();
  if (n == 0) throw ContractError("fit_glm: empty dataset");

  Eigen::MatrixXd a(n, p + 1);
  a.col(0).setOnes();
  a.rightCols(p) = d.x;
  const double lambda = options.ridge * d.w.sum();
  Eigen::VectorXd penalty = Eigen::VectorXd::Constant(p + 1, lambda);
  penalty(0) = 0.0;

  auto objective = [&](const Eigen::VectorXd& beta) {
    const Eigen::VectorXd eta = a * beta;
    return total_loss(loss, link, eta, d) + lambda * beta.tail(p).squaredNorm();
  };

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p + 1);
  const double mean_y = d.w.dot(d.y) / d.w.sum();
  if (link.kind == LinkKind::Log) {
    if (!(mean_y > 0.0)) throw FitError("fit_glm: Poisson response has no positive mass");
    beta(0) = std::log(mean_y);
  } else {
    beta(0) = mean_y;
  }
  double f = objective(beta);

  // Newton step on half the objective; also returns the decrement step^T H step.
  auto newton_step = [&](const Eigen::VectorXd& b, double& decrement) -> Eigen::VectorXd {
    const Eigen::VectorXd eta = a * b;
    Eigen::VectorXd weight(n), score(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      // Canonical pairs: working weight w * dmu/deta, score w * (y - mu).
      weight(i) = d.w(i) * inverse_link_deriv(link, eta(i));
      score(i) = d.w(i) * (d.y(i) - inverse_link(link, eta(i)));
    }
    Eigen::MatrixXd gram = a.transpose() * weight.asDiagonal() * a;
    gram.diagonal() += penalty;
    Eigen::VectorXd grad = a.transpose() * score;
    grad.array() -= penalty.array() * b.array();
    const Eigen::LDLT<Eigen::MatrixXd> solver(gram);
    if (solver.info() != Eigen::Success) throw FitError("fit_glm: normal equations could not be factored");
    Eigen::VectorXd step = solver.solve(grad);
    decrement = grad.dot(step);
    return step;
  };

  bool converged = false;
  int polish = 0;
  for (int it = 0; it < options.max_iterations; ++it) {
    double decrement = 0.0;
    Eigen::VectorXd step = newton_step(beta, decrement);
    // Already stationary to working precision: nothing left to gain.
    if (decrement <= 1e-14 * std::max(1.0, std::abs(f))) break;
    double f_new = f;
    bool improved = false;
    for (int h = 0; h < 5; ++h) {
      try {
        f_new = objective(beta + step);
        if (std::isfinite(f_new) && f_new <= f) {
          improved = true;
          break;
        }
      } catch (const FitError&) {
        // overflow on a long step
      }
      step *= 0.5;
    }
    if (!improved) {
      if (converged) break;
      throw FitError("fit_glm: loss failed to decrease over five consecutive damped steps (iteration " +
                     std::to_string(it) + ", loss " + std::to_string(f) + ")");
    }
    beta += step;
    const double rel = std::abs(f - f_new) / std::max(std::abs(f_new), 1e-300);
    f = f_new;
    if (converged) {
      if (++polish >= 2) break;
    } else if (rel <= options.relative_tolerance) {
      converged = true;  // take two polishing steps
    }
  }
  if (!beta.allFinite()) throw FitError("fit_glm: non-finite coefficients");
  return GlmCoefficients{beta(0), beta.tail(p)};
}

// ---------------------------------------------------------------------------
// Model

Eigen::VectorXd TvcmModel::beta_glm() const {
  Eigen::VectorXd b(p());
  for (Eigen::Index j = 0; j < p(); ++j) b(j) = coefficients[static_cast<std::size_t>(j)].beta_glm;
  return b;
}

std::vector<int> TvcmModel::kappa() const {
  std::vector<int> k;
  for (const auto& c : coefficients) k.push_back(static_cast<int>(c.trees.size()));
  return k;
}

std::vector<bool> TvcmModel::categorical_dimensions() const {
  std::vector<bool> out(coefficients.size(), false);
  for (const auto& g : onehot_groups) {
    for (int c : g.x_columns) out[static_cast<std::size_t>(c)] = true;
  }
  return out;
}

TvcmModel make_glm_model(const Design& design, const GlmCoefficients& glm, LossSpec loss, LinkSpec link, double epsilon,
                         const std::vector<std::vector<int>>& modifier_subsets) {
  require_canonical_pair(loss, link);
  const Dataset& d = design.data;
  if (glm.beta.size() != d.x.cols()) throw ContractError("GLM coefficient count does not match the features");
  if (!modifier_subsets.empty() && static_cast<Eigen::Index>(modifier_subsets.size()) != d.x.cols()) {
    throw ContractError("need one modifier subset per coefficient dimension");
  }
  TvcmModel m;
  m.loss = loss;
  m.link = link;
  m.beta0 = glm.beta0;
  m.beta0_glm = glm.beta0;
  m.feature_names = d.x_names;
  m.modifier_names = d.z_names;
  m.onehot_groups = d.onehot_groups;
  m.x_scaling = design.x_scaling;
  m.z_scaling = design.z_scaling;
  std::vector<int> all(static_cast<std::size_t>(d.z.cols()));
  std::iota(all.begin(), all.end(), 0);
  for (Eigen::Index j = 0; j < d.x.cols(); ++j) {
    CoefficientFunction c;
    c.beta_glm = glm.beta(j);
    c.epsilon = epsilon;
    c.modifier_columns = modifier_subsets.empty() ? all : modifier_subsets[static_cast<std::size_t>(j)];
    for (int col : c.modifier_columns) {
      if (col < 0 || col >= d.z.cols()) throw ContractError("modifier column out of range");
    }
    m.coefficients.push_back(std::move(c));
  }
  return m;
}

Eigen::VectorXd delta_of(const TvcmModel& model, const Eigen::Ref<const Eigen::VectorXd>& z_raw) {
  check_arity("delta_of", z_raw.size(), static_cast<Eigen::Index>(model.modifier_names.size()));
  const Eigen::VectorXd z = model.z_scaling.apply_row(z_raw);
  Eigen::VectorXd out(model.p());
  for (Eigen::Index j = 0; j < model.p(); ++j) {
    const auto& c = model.coefficients[static_cast<std::size_t>(j)];
    const Eigen::VectorXd local = gather(z, c.modifier_columns);
    double s = 0.0;
    for (const RegressionTree& t : c.trees) s += route(t, local);
    out(j) = c.epsilon * s;
  }
  return out;
}

Eigen::VectorXd beta_of(const TvcmModel& model, const Eigen::Ref<const Eigen::VectorXd>& z_raw) {
  return model.beta_glm() + delta_of(model, z_raw);
}

double predict_mu(const TvcmModel& model, const Eigen::Ref<const Eigen::VectorXd>& x_raw,
                  const Eigen::Ref<const Eigen::VectorXd>& z_raw) {
  check_arity("predict_mu", x_raw.size(), model.p());
  const Eigen::VectorXd x = model.x_scaling.apply_row(x_raw);
  return inverse_link(model.link, model.beta0 + beta_of(model, z_raw).dot(x));
}

double predict_glm_mu(const TvcmModel& model, const Eigen::Ref<const Eigen::VectorXd>& x_raw) {
  check_arity("predict_glm_mu", x_raw.size(), model.p());
  const Eigen::VectorXd x = model.x_scaling.apply_row(x_raw);
  return inverse_link(model.link, model.beta0_glm + model.beta_glm().dot(x));
}

Eigen::MatrixXd delta_matrix(const TvcmModel& model, const Eigen::MatrixXd& z_std) {
  check_arity("delta_matrix", z_std.cols(), static_cast<Eigen::Index>(model.modifier_names.size()));
  const Eigen::Index n = z_std.rows();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, model.p());
  for (Eigen::Index j = 0; j < model.p(); ++j) {
    const auto& c = model.coefficients[static_cast<std::size_t>(j)];
    if (c.trees.empty()) continue;
    auto col = out.col(j);
    for (const RegressionTree& t : c.trees) {
      for (Eigen::Index i = 0; i < n; ++i) {
        col(i) += t.nodes[static_cast<std::size_t>(leaf_index_gather(t, z_std, i, c.modifier_columns))].value;
      }
    }
    col *= c.epsilon;
  }
  return out;
}

Eigen::MatrixXd beta_matrix(const TvcmModel& model, const Eigen::MatrixXd& z_std) {
  Eigen::MatrixXd b = delta_matrix(model, z_std);
  b.rowwise() += model.beta_glm().transpose();
  return b;
}

namespace {

// b0 + sum_j b(i, j) x(i, j), accumulated left to right.
Eigen::VectorXd row_dot(const Eigen::MatrixXd& b, const Eigen::MatrixXd& x, double b0) {
  Eigen::VectorXd eta(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) s += b(i, j) * x(i, j);
    eta(i) = s + b0;
  }
  return eta;
}

}  // namespace

Eigen::MatrixXd raw_beta_matrix(const TvcmModel& model, const Eigen::MatrixXd& z_std) {
  Eigen::MatrixXd b = beta_matrix(model, z_std);
  b.array().rowwise() /= model.x_scaling.sd.transpose().array();
  return b;
}

Eigen::VectorXd raw_beta_glm(const TvcmModel& model) {
  return (model.beta_glm().array() / model.x_scaling.sd.array()).matrix();
}

Eigen::VectorXd linear_predictor(const TvcmModel& model, const Design& design) {
  check_arity("linear_predictor", design.data.x.cols(), model.p());
  return row_dot(beta_matrix(model, design.data.z), design.data.x, model.beta0);
}

namespace {

Eigen::VectorXd means_from_eta(const TvcmModel& model, const Eigen::VectorXd& eta) {
  Eigen::VectorXd mu(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    try {
      mu(i) = inverse_link(model.link, eta(i));
    } catch (const FitError& e) {
      throw FitError("row " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return mu;
}

}  // namespace

Eigen::VectorXd predict_mu(const TvcmModel& model, const Design& design) {
  return means_from_eta(model, linear_predictor(model, design));
}

Eigen::VectorXd predict_glm_mu(const TvcmModel& model, const Design& design) {
  check_arity("predict_glm_mu", design.data.x.cols(), model.p());
  // Same arithmetic as linear_predictor, so a model without trees
  // reproduces these values bit for bit.
  const Eigen::MatrixXd b = model.beta_glm().transpose().replicate(design.data.x.rows(), 1);
  return means_from_eta(model, row_dot(b, design.data.x, model.beta0_glm));
}

Design design_for(const TvcmModel& model, const Dataset& raw) {
  const Dataset encoded = raw.categorical.empty() ? raw : onehot_encode(raw, &model.onehot_groups);
  if (encoded.x_names != model.feature_names) {
    throw LoadError("input features do not match the model's predictive features");
  }
  if (encoded.z_names != model.modifier_names) {
    Dataset selected = select_modifiers(encoded, model.modifier_names);
    if (selected.z_names != model.modifier_names) throw LoadError("input effect modifiers do not match the model");
    return standardize(selected, model.x_scaling, model.z_scaling);
  }
  return standardize(encoded, model.x_scaling, model.z_scaling);
}

// ---------------------------------------------------------------------------
// Intercept

double recalibrated_intercept(LossSpec loss, LinkSpec link, double start, const Eigen::VectorXd& eta_without_intercept,
                              const Dataset& data) {
  require_canonical_pair(loss, link);
  double b0 = start;
  for (int it = 0; it < 100; ++it) {
    CompensatedSum d1, d2;
    for (Eigen::Index i = 0; i < eta_without_intercept.size(); ++i) {
      const double eta = b0 + eta_without_intercept(i);
      d1.add(directional_gradient(loss, link, 1.0, eta, data.y(i), data.w(i)));
      d2.add(loss_curvature_eta(loss, link, eta, data.w(i)));
    }
    if (!(d2.value() > 0.0)) throw FitError("intercept recalibration: zero curvature");
    const double step = -d1.value() / d2.value();
    // A step below the tolerance is rounding noise; skipping it keeps a
    // calibrated intercept exactly where it is.
    if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(b0))) return b0;
    b0 += step;
    if (!std::isfinite(b0)) throw FitError("intercept recalibration diverged");
  }
  throw FitError("intercept recalibration did not converge in 100 Newton steps");
}

TvcmModel recalibrate_intercept(TvcmModel model, const Design& design) {
  const Eigen::VectorXd eta = linear_predictor(model, design).array() - model.beta0;
  model.beta0 = recalibrated_intercept(model.loss, model.link, model.beta0, eta, design.data);
  return model;
}

}  // namespace tvcm
