#pragma once

// Datasets: predictive features x, effect modifiers z, response y and
// weights w. The response is stored per unit weight, so for claim counts it
// holds the frequency N / exposure and sum(w .* y) is the total count.

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tvcm/config.hpp"

namespace tvcm {

/// Category codes waiting for one-hot expansion.
struct CategoricalColumn {
  std::string name;
  std::vector<std::string> levels;  // sorted
  std::vector<int> codes;           // index into levels, one per row
};

/// One expanded categorical: one 0/1 column per level, all levels kept.
struct OneHotGroup {
  std::string name;
  std::vector<std::string> levels;
  std::vector<int> x_columns;
  std::vector<int> z_columns;
  friend bool operator==(const OneHotGroup&, const OneHotGroup&) = default;
};

struct Dataset {
  Eigen::VectorXd y;
  Eigen::VectorXd w;
  Eigen::MatrixXd x;
  std::vector<std::string> x_names;
  Eigen::MatrixXd z;
  std::vector<std::string> z_names;
  std::vector<CategoricalColumn> categorical;
  std::vector<OneHotGroup> onehot_groups;

  Eigen::Index rows() const { return y.size(); }
  /// Throws ContractError on ragged columns, non-positive weights or
  /// non-finite entries.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Simulation

struct SimulationSpec {
  Eigen::Index n = 200000;
  std::uint64_t seed = 1;
  double correlation_2_8 = 0.5;
  double noise_sd = 1.0;
};

struct Simulation {
  Dataset data;          // z == x, w == 1
  Eigen::VectorXd mu;    // true mean per row
  Eigen::MatrixXd beta;  // true coefficient functions per row (n x 8)
};

/// The eight true coefficient functions evaluated at x (length 8).
Eigen::VectorXd true_beta(const Eigen::Ref<const Eigen::VectorXd>& x);

Simulation simulate(const SimulationSpec& spec);

/// Linear model y = sum_j gamma_j x_j + N(0, noise_sd^2) with independent
/// standard normal features and constant coefficients.
Simulation simulate_linear(const Eigen::VectorXd& gamma, Eigen::Index n, std::uint64_t seed, double noise_sd = 1.0);

// ---------------------------------------------------------------------------
// CSV ingestion

struct CsvSchema {
  std::string response;
  std::string weight;  // empty: w = 1
  bool response_is_count = false;
  std::vector<std::string> numeric;
  std::vector<std::string> categorical;
  std::map<std::string, std::vector<std::string>> ordinal;  // numeric column -> level order (coded 1..k)
  std::map<std::string, double> caps;                       // upper caps, applied before transforms
  std::vector<std::string> log_columns;                     // natural log after capping
  std::vector<std::string> modifiers;                       // empty: every predictive feature

  /// Reads the schema keys of a key-value configuration:
  /// response, weight, response_is_count, numeric, categorical,
  /// ordinal.<col>, cap.<col>, log, modifiers.
  static CsvSchema from_config(const KeyValueConfig& cfg);
};

/// Parses, cleans and validates a CSV file. Categorical columns are stored as
/// codes; call onehot_encode before fitting.
Dataset load_csv(const std::string& path, const CsvSchema& schema);

/// Writes y, w and the x columns of a fully numeric dataset.
void write_csv(const std::string& path, const Dataset& data);

/// Expands every pending categorical column into 0/1 columns appended to x
/// and z. With `reference`, the level sets come from it (training data) and an
/// unseen level raises LoadError naming the row and level.
Dataset onehot_encode(const Dataset& data, const std::vector<OneHotGroup>* reference = nullptr);

/// Restricts z to the named features (numeric names or categorical names).
Dataset select_modifiers(const Dataset& data, const std::vector<std::string>& names);

// ---------------------------------------------------------------------------
// Row selection

Dataset take_rows(const Dataset& data, std::span<const Eigen::Index> rows);

/// Seeded random partition; the first part holds round(first_fraction * n)
/// rows. Row order inside each part follows the original order.
std::pair<Dataset, Dataset> split(const Dataset& data, double first_fraction, std::uint64_t seed);

/// The sorted row indices behind split().
std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>> split_rows(Eigen::Index n, double first_fraction,
                                                                         std::uint64_t seed);

/// First part = the listed rows (0-based), second part = all other rows.
std::pair<Dataset, Dataset> split_by_index(const Dataset& data, std::span<const Eigen::Index> first_rows);

/// One 0-based row index per line.
std::vector<Eigen::Index> read_index_file(const std::string& path);

// ---------------------------------------------------------------------------
// Standardization

/// Per-column affine map (v - mean) / sd. One-hot columns keep mean 0, sd 1.
struct Scaling {
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;

  static Scaling identity(Eigen::Index cols);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& m) const;
  template <typename Derived>
  Eigen::VectorXd apply_row(const Eigen::MatrixBase<Derived>& row) const {
    return ((row.derived().reshaped().array() - mean.array()) / sd.array()).matrix();
  }
  friend bool operator==(const Scaling& a, const Scaling& b) {
    return a.mean.size() == b.mean.size() && a.sd.size() == b.sd.size() && a.mean == b.mean && a.sd == b.sd;
  }
};

Scaling fit_scaling(const Eigen::MatrixXd& m, const std::vector<int>& passthrough_columns);

/// Columns of x (or z) that belong to a one-hot group.
std::vector<int> onehot_x_columns(const Dataset& data);
std::vector<int> onehot_z_columns(const Dataset& data);

}  // namespace tvcm
