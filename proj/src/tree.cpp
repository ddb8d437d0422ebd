#include "tvcm/tree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

namespace tvcm {

namespace {

// Relative floor below which a split's gain is treated as rounding noise.
constexpr double kGainTolerance = 1e-12;

struct NodeStats {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::int64_t count = 0;
};

struct SplitCandidate {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
};

// Best split per active node for one column, found by a single sorted scan.
void scan_column(std::span<const int> order, std::span<const double> sorted, int local_feature,
                 std::span<const double> g, std::span<const int> node_of,
                 const std::vector<NodeStats>& totals, const std::vector<char>& active, int min_leaf,
                 std::vector<NodeStats>& left, std::vector<double>& last_value,
                 std::vector<SplitCandidate>& best) {
  std::fill(left.begin(), left.end(), NodeStats{});
  const std::size_t n = order.size();
  for (std::size_t k = 0; k < n; ++k) {
    const int row = order[k];
    const int t = node_of[static_cast<std::size_t>(row)];
    if (t < 0 || !active[static_cast<std::size_t>(t)]) continue;
    const double v = sorted[k];
    NodeStats& l = left[static_cast<std::size_t>(t)];
    const NodeStats& tot = totals[static_cast<std::size_t>(t)];
    if (l.count >= min_leaf && v > last_value[static_cast<std::size_t>(t)] &&
        tot.count - l.count >= min_leaf) {
      const double nl = static_cast<double>(l.count);
      const double nr = static_cast<double>(tot.count - l.count);
      const double sr = tot.sum - l.sum;
      const double gain = l.sum * l.sum / nl + sr * sr / nr - tot.sum * tot.sum / static_cast<double>(tot.count);
      SplitCandidate& b = best[static_cast<std::size_t>(t)];
      if (gain > b.gain) {
        const double lo = last_value[static_cast<std::size_t>(t)];
        double mid = lo + 0.5 * (v - lo);
        if (!(mid < v)) mid = lo;
        b = SplitCandidate{gain, local_feature, mid};
      }
    }
    l.count += 1;
    l.sum += g[static_cast<std::size_t>(row)];
    last_value[static_cast<std::size_t>(t)] = v;
  }
}

int subtree_depth(const RegressionTree& tree, int id) {
  const TreeNode& n = tree.nodes[static_cast<std::size_t>(id)];
  if (n.is_leaf()) return 0;
  return 1 + std::max(subtree_depth(tree, n.left), subtree_depth(tree, n.right));
}

}  // namespace

void TreeConfig::validate() const {
  if (max_depth < 1) throw ContractError("max_depth must be >= 1");
  if (min_samples_leaf < 1) throw ContractError("min_samples_leaf must be >= 1");
}

int RegressionTree::depth() const { return subtree_depth(*this, 0); }

int RegressionTree::leaf_count() const {
  return static_cast<int>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

void validate_structure(const RegressionTree& tree) {
  const int n = static_cast<int>(tree.nodes.size());
  if (n == 0) throw LoadError("tree has no nodes");
  std::vector<int> parents(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    const TreeNode& node = tree.nodes[static_cast<std::size_t>(i)];
    if (node.is_leaf()) continue;
    if (node.feature >= tree.arity) throw LoadError("tree node feature index out of range");
    for (int c : {node.left, node.right}) {
      if (c <= i || c >= n) throw LoadError("tree child ids must point forward inside the arena");
      ++parents[static_cast<std::size_t>(c)];
    }
  }
  if (parents[0] != 0) throw LoadError("tree root has a parent");
  for (int i = 1; i < n; ++i) {
    if (parents[static_cast<std::size_t>(i)] != 1) throw LoadError("tree node without exactly one parent");
  }
}

ModifierIndex::ModifierIndex(Eigen::MatrixXd modifiers) : values_(std::move(modifiers)) {
  const auto n = static_cast<std::size_t>(values_.rows());
  order_.resize(static_cast<std::size_t>(values_.cols()));
  sorted_.resize(order_.size());
  for (Eigen::Index c = 0; c < values_.cols(); ++c) {
    auto& ord = order_[static_cast<std::size_t>(c)];
    ord.resize(n);
    std::iota(ord.begin(), ord.end(), 0);
    const double* col = values_.col(c).data();
    std::stable_sort(ord.begin(), ord.end(), [col](int a, int b) { return col[a] < col[b]; });
    auto& s = sorted_[static_cast<std::size_t>(c)];
    s.resize(n);
    for (std::size_t k = 0; k < n; ++k) s[k] = col[ord[k]];
  }
}

TreeFit fit_partition(std::span<const double> gradients, const ModifierIndex& index,
                      std::span<const int> columns, const TreeConfig& config, int threads) {
  config.validate();
  const auto n = static_cast<std::size_t>(index.rows());
  if (gradients.size() != n) {
    throw ContractError("fit_partition: " + std::to_string(gradients.size()) + " gradients for " +
                        std::to_string(n) + " modifier rows");
  }
  for (int c : columns) {
    if (c < 0 || c >= index.cols()) throw ContractError("fit_partition: modifier column out of range");
  }

  TreeFit fit;
  fit.tree.arity = static_cast<int>(columns.size());
  fit.leaf_of_row.assign(n, 0);
  std::vector<int>& node_of = fit.leaf_of_row;
  std::vector<TreeNode>& nodes = fit.tree.nodes;

  const int min_leaf = config.min_samples_leaf;
  std::vector<int> frontier{0};
  std::vector<int> done_leaf;  // nodes finalized as leaves (rows keep their id)

  for (int depth = 0; depth < config.max_depth && !frontier.empty(); ++depth) {
    const std::size_t node_count = nodes.size();
    std::vector<NodeStats> totals(node_count);
    for (std::size_t i = 0; i < n; ++i) {
      const int t = node_of[i];
      if (t < 0) continue;
      NodeStats& s = totals[static_cast<std::size_t>(t)];
      s.sum += gradients[i];
      s.sum_sq += gradients[i] * gradients[i];
      s.count += 1;
    }
    std::vector<char> active(node_count, 0);
    for (int t : frontier) {
      if (totals[static_cast<std::size_t>(t)].count >= 2 * static_cast<std::int64_t>(min_leaf)) {
        active[static_cast<std::size_t>(t)] = 1;
      }
    }

    // Per-column best splits; reduced in column order so ties resolve to the
    // lowest feature index, then the lowest threshold.
    const std::size_t ncols = columns.size();
    std::vector<std::vector<SplitCandidate>> per_column(ncols, std::vector<SplitCandidate>(node_count));
    auto scan_range = [&](std::size_t begin, std::size_t end) {
      std::vector<NodeStats> left(node_count);
      std::vector<double> last(node_count, 0.0);
      for (std::size_t k = begin; k < end; ++k) {
        scan_column(index.order(columns[k]), index.sorted(columns[k]), static_cast<int>(k), gradients, node_of,
                    totals, active, min_leaf, left, last, per_column[k]);
      }
    };
    const int workers = std::max(1, std::min<int>(threads, static_cast<int>(ncols)));
    if (workers == 1) {
      scan_range(0, ncols);
    } else {
      std::vector<std::jthread> pool;
      const std::size_t chunk = (ncols + static_cast<std::size_t>(workers) - 1) / static_cast<std::size_t>(workers);
      for (std::size_t b = 0; b < ncols; b += chunk) pool.emplace_back(scan_range, b, std::min(ncols, b + chunk));
    }

    std::vector<int> next_frontier;
    std::vector<int> left_child(node_count, -1);
    for (int t : frontier) {
      SplitCandidate best;
      for (std::size_t k = 0; k < ncols; ++k) {
        const SplitCandidate& c = per_column[k][static_cast<std::size_t>(t)];
        if (c.feature >= 0 && c.gain > best.gain) best = c;
      }
      const NodeStats& tot = totals[static_cast<std::size_t>(t)];
      if (!active[static_cast<std::size_t>(t)] || best.feature < 0 || !(best.gain > kGainTolerance * tot.sum_sq)) {
        done_leaf.push_back(t);
        continue;
      }
      const int l = static_cast<int>(nodes.size());
      nodes.push_back(TreeNode{});
      nodes.push_back(TreeNode{});
      TreeNode& parent = nodes[static_cast<std::size_t>(t)];
      parent.feature = best.feature;
      parent.threshold = best.threshold;
      parent.gain = best.gain;
      parent.left = l;
      parent.right = l + 1;
      left_child[static_cast<std::size_t>(t)] = l;
      next_frontier.push_back(l);
      next_frontier.push_back(l + 1);
    }
    if (next_frontier.empty()) {
      frontier.clear();
      break;
    }
    const Eigen::MatrixXd& z = index.values();
    for (std::size_t i = 0; i < n; ++i) {
      const int t = node_of[i];
      const int l = left_child[static_cast<std::size_t>(t)];
      if (l < 0) continue;
      const TreeNode& p = nodes[static_cast<std::size_t>(t)];
      node_of[i] = z(static_cast<Eigen::Index>(i), columns[static_cast<std::size_t>(p.feature)]) <= p.threshold ? l : l + 1;
    }
    frontier = std::move(next_frontier);
  }

  for (std::size_t i = 0; i < n; ++i) {
    TreeNode& leaf = nodes[static_cast<std::size_t>(node_of[i])];
    leaf.count += 1;
    leaf.gradient_mean += gradients[i];
  }
  for (TreeNode& node : nodes) {
    if (node.is_leaf() && node.count > 0) node.gradient_mean /= static_cast<double>(node.count);
  }
  return fit;
}

TreeFit fit_partition(std::span<const double> gradients, const Eigen::MatrixXd& modifiers, const TreeConfig& config) {
  const ModifierIndex index(modifiers);
  std::vector<int> columns(static_cast<std::size_t>(modifiers.cols()));
  std::iota(columns.begin(), columns.end(), 0);
  return fit_partition(gradients, index, columns, config);
}

namespace {

struct LeafRows {
  std::vector<std::size_t> offsets;  // CSR layout over node ids
  std::vector<std::size_t> rows;
};

LeafRows group_by_leaf(std::span<const int> leaf_of_row, std::size_t node_count) {
  LeafRows out;
  out.offsets.assign(node_count + 1, 0);
  for (int id : leaf_of_row) ++out.offsets[static_cast<std::size_t>(id) + 1];
  std::partial_sum(out.offsets.begin(), out.offsets.end(), out.offsets.begin());
  out.rows.resize(leaf_of_row.size());
  std::vector<std::size_t> cursor(out.offsets.begin(), out.offsets.end() - 1);
  for (std::size_t i = 0; i < leaf_of_row.size(); ++i) {
    out.rows[cursor[static_cast<std::size_t>(leaf_of_row[i])]++] = i;
  }
  return out;
}

// Safeguarded Newton on the convex leaf objective. Returns false when it did
// not converge within the iteration budget.
bool newton_leaf(std::span<const std::size_t> rows, std::span<const double> eta, std::span<const double> x,
                 std::span<const double> y, std::span<const double> w, LossSpec loss, LinkSpec link,
                 double& gamma_out) {
  constexpr int kMaxIter = 50;
  constexpr int kMaxHalvings = 60;
  auto objective = [&](double gamma) {
    double s = 0.0;
    for (std::size_t i : rows) s += loss_at_eta(loss, link, eta[i] + gamma * x[i], y[i], w[i]);
    return s;
  };
  double gamma = 0.0;
  double f = objective(gamma);
  for (int it = 0; it < kMaxIter; ++it) {
    double d1 = 0.0;
    double d2 = 0.0;
    for (std::size_t i : rows) {
      const double e = eta[i] + gamma * x[i];
      d1 += directional_gradient(loss, link, x[i], e, y[i], w[i]);
      d2 += x[i] * x[i] * loss_curvature_eta(loss, link, e, w[i]);
    }
    if (!(d2 > 0.0) || !std::isfinite(d1)) return false;
    double step = -d1 / d2;
    if (std::abs(step) <= 1e-10 * (1.0 + std::abs(gamma))) {
      gamma_out = gamma + step;
      // Accept the final micro-step only if it does not raise the objective.
      if (objective(gamma_out) > f) gamma_out = gamma;
      return true;
    }
    double f_new = 0.0;
    int h = 0;
    for (; h < kMaxHalvings; ++h) {
      try {
        f_new = objective(gamma + step);
        if (f_new <= f) break;
      } catch (const FitError&) {
        // exp overflow on an over-long step; shorten it.
      }
      step *= 0.5;
    }
    if (h < kMaxHalvings) {
      gamma += step;
      f = f_new;
    }
    if (h == kMaxHalvings || std::abs(step) <= 1e-10 * (1.0 + std::abs(gamma))) {
      // The loss no longer changes representably along a descent direction
      // of a convex objective: gamma is optimal to working precision.
      gamma_out = gamma;
      return true;
    }
  }
  return false;
}

}  // namespace

LeafAdjustStats adjust_leaves(RegressionTree& tree, std::span<const int> leaf_of_row, std::span<const double> eta,
                              std::span<const double> x, std::span<const double> y, std::span<const double> w,
                              LossSpec loss, LinkSpec link) {
  require_canonical_pair(loss, link);
  const std::size_t n = leaf_of_row.size();
  if (eta.size() != n || x.size() != n || y.size() != n || w.size() != n) {
    throw ContractError("adjust_leaves: row count mismatch");
  }
  LeafAdjustStats stats;
  const std::size_t node_count = tree.nodes.size();

  if (loss.kind == LossKind::GaussianDeviance) {
    std::vector<double> num(node_count, 0.0);
    std::vector<double> den(node_count, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto t = static_cast<std::size_t>(leaf_of_row[i]);
      num[t] += w[i] * x[i] * (y[i] - eta[i]);
      den[t] += w[i] * x[i] * x[i];
    }
    for (std::size_t t = 0; t < node_count; ++t) {
      TreeNode& node = tree.nodes[t];
      if (node.is_leaf()) node.value = den[t] > 0.0 ? num[t] / den[t] : 0.0;
    }
    return stats;
  }

  const LeafRows groups = group_by_leaf(leaf_of_row, node_count);
  for (std::size_t t = 0; t < node_count; ++t) {
    TreeNode& node = tree.nodes[t];
    if (!node.is_leaf()) continue;
    node.value = 0.0;
    // Rows with x == 0 do not depend on gamma; leaving them out keeps the
    // search independent of their linear predictor.
    std::vector<std::size_t> rows;
    for (std::size_t k = groups.offsets[t]; k < groups.offsets[t + 1]; ++k) {
      if (x[groups.rows[k]] != 0.0) rows.push_back(groups.rows[k]);
    }
    if (rows.empty()) continue;
    double gamma = 0.0;
    if (newton_leaf(rows, eta, x, y, w, loss, link, gamma)) {
      node.value = gamma;
    } else {
      ++stats.newton_failures;
    }
  }
  return stats;
}

std::map<int, double> split_gains(const RegressionTree& tree) {
  std::map<int, double> out;
  for (const TreeNode& node : tree.nodes) {
    if (!node.is_leaf()) out[node.feature] += node.gain;
  }
  return out;
}

}  // namespace tvcm
