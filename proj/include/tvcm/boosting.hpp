#pragma once

// Cyclic boosting of the coefficient functions, dimension-wise early
// stopping and the two feature-importance measures.

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "tvcm/losses.hpp"
#include "tvcm/model.hpp"
#include "tvcm/tree.hpp"

namespace tvcm {

struct BoostConfig {
  LossSpec loss = kGaussianLoss;
  LinkSpec link = kIdentityLink;
  std::vector<double> epsilon;  // per dimension; empty means 0.01 everywhere
  std::vector<int> kappa;       // per dimension tree counts (maxima when tuning)
  TreeConfig tree;
  std::vector<std::vector<int>> modifier_subsets;  // per dimension; empty means all columns
  int threads = 1;
  /// Fit the member dimensions of each one-hot group from the same
  /// pre-group linear predictor (concurrently when threads > 1).
  bool parallel_onehot = false;

  /// Throws ContractError unless the vectors fit `p` dimensions and the
  /// values are in range.
  void validate(Eigen::Index p, Eigen::Index modifier_cols) const;
  double epsilon_of(Eigen::Index j) const;
};

/// One boosting step of `train`.
struct StepRecord {
  int cycle = 0;  // 1-based
  int dimension = 0;
  double loss_before = 0.0;
  double loss_after = 0.0;
};

struct TrainReport {
  std::vector<StepRecord> steps;  // only filled when track_loss is set
  Eigen::VectorXd eta;            // cached linear predictor before intercept recalibration
  double beta0_before_recalibration = 0.0;
  int newton_failures = 0;
  bool track_loss = false;
};

/// Boosts the GLM on a standardized design for kappa_j trees per dimension
/// and recalibrates the intercept. Throws FitError on a non-finite linear
/// predictor, naming the cycle and dimension.
TvcmModel train(const Design& design, const GlmCoefficients& glm, const BoostConfig& config,
                TrainReport* report = nullptr);

struct StoppingRule {
  double validation_fraction = 0.5;
  int patience = 20;  // consecutive rejections that close a dimension
  std::uint64_t seed = 1;
};

struct TraceRow {
  int cycle = 0;
  int dimension = 0;
  double train_loss = 0.0;  // with the candidate tree applied
  double valid_loss = 0.0;  // with the candidate tree applied
  bool accepted = false;
};

struct TuneResult {
  std::vector<int> kappa;
  std::vector<TraceRow> trace;
  std::uint64_t split_seed = 0;
  /// Training-split loss before the first and after the last accepted tree.
  std::vector<StepRecord> accepted_steps;
};

/// Splits the design by `rule.seed`, fits a GLM on the training part and runs
/// the cyclic loop with config.kappa as per-dimension maxima. A candidate tree
/// is kept iff it strictly lowers the validation loss; a dimension closes
/// after `patience` consecutive rejections.
TuneResult tune_kappa(const Design& design, const BoostConfig& config, const StoppingRule& rule,
                      const GlmFitOptions& glm_options = {});

/// CSV text with columns cycle, dimension, train_loss, valid_loss, accepted.
std::string trace_csv(const TuneResult& result, const std::vector<std::string>& dimension_names);

// ---------------------------------------------------------------------------
// Feature importance

struct FeatureImportance {
  std::vector<std::string> row_labels;     // coefficient dimensions
  std::vector<std::string> column_labels;  // modifier features, one-hot groups merged
  Eigen::MatrixXd split_gain;              // rows sum to 1 or are all zero
  std::vector<std::string> fi_labels;      // dimensions included in FI*
  std::vector<int> fi_dimensions;
  Eigen::VectorXd fi_star;  // normalized; empty when nothing is included
  Eigen::VectorXd fi_star_raw;
};

/// Split-gain matrix; one-hot member columns are summed before the rows are
/// normalized.
FeatureImportance feature_importance(const TvcmModel& model);

/// Mean absolute coefficient over the rows of `design`, normalized over the
/// non-categorical dimensions. Also fills the split-gain part.
FeatureImportance feature_importance(const TvcmModel& model, const Design& design);

}  // namespace tvcm
