#pragma once

// The varying-coefficient model
//
//   mu(x, z) = u^{-1}(beta0 + sum_j beta_j(z) x_j),
//   beta_j(z) = beta_j^GLM + delta_j(z),  delta_j(z) = eps_j sum_k tree_jk(z),
//
// together with the GLM that initializes it. Public prediction functions
// take raw (unstandardized) rows and apply the stored scaling themselves.

#include <Eigen/Core>

#include <string>
#include <vector>

#include "tvcm/data.hpp"
#include "tvcm/losses.hpp"
#include "tvcm/tree.hpp"

namespace tvcm {

/// A dataset mapped onto the standardized scale used for fitting.
struct Design {
  Dataset data;  // standardized x and z
  Scaling x_scaling;
  Scaling z_scaling;
};

/// Fits the scaling on `raw` (one-hot columns pass through unchanged).
Design standardize(const Dataset& raw);
/// Applies an existing scaling.
Design standardize(const Dataset& raw, const Scaling& x_scaling, const Scaling& z_scaling);

struct GlmCoefficients {
  double beta0 = 0.0;
  Eigen::VectorXd beta;
};

struct GlmFitOptions {
  int max_iterations = 100;
  double relative_tolerance = 1e-10;
  double ridge = 1e-8;  // per unit of total weight, on the slope coefficients
};

/// IRLS with step halving. Throws FitError when the loss fails to decrease
/// over five consecutive damped steps.
GlmCoefficients fit_glm(const Design& design, LossSpec loss, LinkSpec link, const GlmFitOptions& options = {});

struct CoefficientFunction {
  double beta_glm = 0.0;
  double epsilon = 0.01;
  std::vector<int> modifier_columns;  // global z columns this dimension splits on
  std::vector<RegressionTree> trees;  // leaf values are unshrunk steps

  /// Tree sum eps * sum_k route(tree_k, z) for a standardized full z row.
  template <typename Derived>
  double delta(const Eigen::MatrixBase<Derived>& z_std) const {
    Eigen::VectorXd local(static_cast<Eigen::Index>(modifier_columns.size()));
    for (std::size_t k = 0; k < modifier_columns.size(); ++k) {
      local(static_cast<Eigen::Index>(k)) = z_std(modifier_columns[k]);
    }
    double s = 0.0;
    for (const RegressionTree& t : trees) s += route(t, local);
    return epsilon * s;
  }
};

struct TvcmModel {
  LossSpec loss = kGaussianLoss;
  LinkSpec link = kIdentityLink;
  double beta0 = 0.0;      // after intercept recalibration
  double beta0_glm = 0.0;  // intercept of the initializing GLM
  std::vector<CoefficientFunction> coefficients;
  std::vector<std::string> feature_names;   // predictive columns
  std::vector<std::string> modifier_names;  // global effect-modifier columns
  std::vector<OneHotGroup> onehot_groups;
  Scaling x_scaling;
  Scaling z_scaling;

  Eigen::Index p() const { return static_cast<Eigen::Index>(coefficients.size()); }
  Eigen::VectorXd beta_glm() const;
  std::vector<int> kappa() const;
  /// Dimensions that are one-hot indicator columns.
  std::vector<bool> categorical_dimensions() const;
};

/// A model with no trees: the GLM, with beta0 == beta0_glm. Every dimension
/// splits on all modifier columns unless `modifier_subsets` names them.
TvcmModel make_glm_model(const Design& design, const GlmCoefficients& glm, LossSpec loss, LinkSpec link,
                         double epsilon = 0.01, const std::vector<std::vector<int>>& modifier_subsets = {});

// Single-row evaluation on raw inputs. ContractError on arity mismatch.
// Coefficients are on the standardized x scale; see raw_beta_matrix.
Eigen::VectorXd beta_of(const TvcmModel& model, const Eigen::Ref<const Eigen::VectorXd>& z_raw);
Eigen::VectorXd delta_of(const TvcmModel& model, const Eigen::Ref<const Eigen::VectorXd>& z_raw);
double predict_mu(const TvcmModel& model, const Eigen::Ref<const Eigen::VectorXd>& x_raw,
                  const Eigen::Ref<const Eigen::VectorXd>& z_raw);
/// The initializing GLM's mean at x_raw (no trees, GLM intercept).
double predict_glm_mu(const TvcmModel& model, const Eigen::Ref<const Eigen::VectorXd>& x_raw);

// Batch evaluation on an already standardized design (rows x p).
Eigen::MatrixXd delta_matrix(const TvcmModel& model, const Eigen::MatrixXd& z_std);
Eigen::MatrixXd beta_matrix(const TvcmModel& model, const Eigen::MatrixXd& z_std);
/// Coefficients per unit of the raw predictive feature, beta_j(z) / sd_j.
Eigen::MatrixXd raw_beta_matrix(const TvcmModel& model, const Eigen::MatrixXd& z_std);
Eigen::VectorXd raw_beta_glm(const TvcmModel& model);
Eigen::VectorXd linear_predictor(const TvcmModel& model, const Design& design);
/// Means for every row; FitError names the first row whose mean overflows.
Eigen::VectorXd predict_mu(const TvcmModel& model, const Design& design);
Eigen::VectorXd predict_glm_mu(const TvcmModel& model, const Design& design);

/// Applies the model's scaling (and one-hot level set) to raw data.
Design design_for(const TvcmModel& model, const Dataset& raw);

/// Sum of losses over the design rows (compensated summation).
double total_loss(LossSpec loss, LinkSpec link, const Eigen::VectorXd& eta, const Dataset& data);

/// Refits beta0 by 1-D Newton with the coefficient functions frozen.
/// `eta_without_intercept`, when given, must equal beta(z_i)^T x_i.
TvcmModel recalibrate_intercept(TvcmModel model, const Design& design);
double recalibrated_intercept(LossSpec loss, LinkSpec link, double start, const Eigen::VectorXd& eta_without_intercept,
                              const Dataset& data);

}  // namespace tvcm
