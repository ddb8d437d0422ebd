#pragma once

// Least-squares regression trees over effect-modifier space.
//
// A tree is an arena of nodes; node 0 is the root. Internal nodes send a row
// left iff z[feature] <= threshold. Feature indices are local to the column
// subset the tree was fitted on (see ModifierIndex / fit_partition).

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tvcm/errors.hpp"
#include "tvcm/losses.hpp"

namespace tvcm {

struct TreeConfig {
  int max_depth = 2;
  int min_samples_leaf = 10;

  void validate() const;
};

struct TreeNode {
  // Internal node fields; feature < 0 marks a leaf.
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double gain = 0.0;
  // Leaf fields.
  double value = 0.0;          // adjusted step, before shrinkage
  double gradient_mean = 0.0;  // mean of the fitted gradients
  std::int64_t count = 0;

  bool is_leaf() const { return feature < 0; }
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

struct RegressionTree {
  std::vector<TreeNode> nodes{TreeNode{}};
  int arity = 0;       // number of modifier columns the tree routes on
  int dimension = -1;  // coefficient dimension the tree was fitted for

  int depth() const;
  int leaf_count() const;
  friend bool operator==(const RegressionTree&, const RegressionTree&) = default;
};

/// Throws LoadError when the arena is not a well-formed binary tree.
void validate_structure(const RegressionTree& tree);

/// Presorted view of an effect-modifier matrix, built once per dataset and
/// shared by every tree fitted on it.
class ModifierIndex {
 public:
  explicit ModifierIndex(Eigen::MatrixXd modifiers);

  Eigen::Index rows() const { return values_.rows(); }
  Eigen::Index cols() const { return values_.cols(); }
  const Eigen::MatrixXd& values() const { return values_; }
  /// Row ids of column c in ascending value order (stable on ties).
  std::span<const int> order(Eigen::Index c) const { return order_[static_cast<std::size_t>(c)]; }
  /// Column c's values in the same order as order(c).
  std::span<const double> sorted(Eigen::Index c) const { return sorted_[static_cast<std::size_t>(c)]; }

 private:
  Eigen::MatrixXd values_;
  std::vector<std::vector<int>> order_;
  std::vector<std::vector<double>> sorted_;
};

/// A fitted partition plus the leaf node id of every training row.
struct TreeFit {
  RegressionTree tree;
  std::vector<int> leaf_of_row;
};

/// Greedy top-down CART on squared error. `columns` selects which columns of
/// the index the tree may split on (local feature k refers to columns[k]).
TreeFit fit_partition(std::span<const double> gradients, const ModifierIndex& index,
                      std::span<const int> columns, const TreeConfig& config, int threads = 1);

/// Convenience overload splitting on every column of `modifiers`.
TreeFit fit_partition(std::span<const double> gradients, const Eigen::MatrixXd& modifiers,
                      const TreeConfig& config);

struct LeafAdjustStats {
  int newton_failures = 0;
};

/// Sets every leaf value to argmin_gamma sum_{i in leaf} L(u^{-1}(eta_i + gamma x_i); y_i, w_i).
/// Closed form for Gaussian+Identity; safeguarded Newton otherwise.
LeafAdjustStats adjust_leaves(RegressionTree& tree, std::span<const int> leaf_of_row,
                              std::span<const double> eta, std::span<const double> x,
                              std::span<const double> y, std::span<const double> w, LossSpec loss,
                              LinkSpec link);

/// Node id of the leaf that z falls into.
template <typename Derived>
int leaf_index(const RegressionTree& tree, const Eigen::DenseBase<Derived>& z) {
  if (z.size() != tree.arity) {
    throw ContractError("route: modifier row has " + std::to_string(z.size()) + " entries, tree expects " +
                        std::to_string(tree.arity));
  }
  int id = 0;
  while (!tree.nodes[static_cast<std::size_t>(id)].is_leaf()) {
    const TreeNode& n = tree.nodes[static_cast<std::size_t>(id)];
    id = z(n.feature) <= n.threshold ? n.left : n.right;
  }
  return id;
}

/// Leaf value of the region containing z.
template <typename Derived>
double route(const RegressionTree& tree, const Eigen::DenseBase<Derived>& z) {
  return tree.nodes[static_cast<std::size_t>(leaf_index(tree, z))].value;
}

/// Routes row `row` of a full modifier matrix, reading local feature k from
/// column columns[k]. No arity check; used on hot paths.
inline int leaf_index_gather(const RegressionTree& tree, const Eigen::MatrixXd& z, Eigen::Index row,
                             std::span<const int> columns) {
  int id = 0;
  while (!tree.nodes[static_cast<std::size_t>(id)].is_leaf()) {
    const TreeNode& n = tree.nodes[static_cast<std::size_t>(id)];
    id = z(row, columns[static_cast<std::size_t>(n.feature)]) <= n.threshold ? n.left : n.right;
  }
  return id;
}

/// Total split gain per (local) feature index; empty for a single leaf.
std::map<int, double> split_gains(const RegressionTree& tree);

}  // namespace tvcm
