#include "tvcm/boosting.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include "tvcm/csv.hpp"
#include "tvcm/errors.hpp"

namespace tvcm {

void BoostConfig::validate(Eigen::Index p, Eigen::Index modifier_cols) const {
  require_canonical_pair(loss, link);
  tree.validate();
  const auto np = static_cast<std::size_t>(p);
  if (!epsilon.empty() && epsilon.size() != np) throw ContractError("epsilon needs one value per dimension");
  for (double e : epsilon) {
    if (!(e > 0.0 && e <= 1.0)) throw ContractError("epsilon must lie in (0, 1]");
  }
  if (kappa.size() != np) {
    throw ContractError("kappa needs one value per dimension (" + std::to_string(p) + "), got " +
                        std::to_string(kappa.size()));
  }
  for (int k : kappa) {
    if (k < 0) throw ContractError("kappa must be non-negative");
  }
  if (!modifier_subsets.empty()) {
    if (modifier_subsets.size() != np) throw ContractError("modifier subsets need one entry per dimension");
    for (const auto& s : modifier_subsets) {
      for (int c : s) {
        if (c < 0 || c >= modifier_cols) throw ContractError("modifier subset column out of range");
      }
    }
  }
  if (threads < 1) throw ContractError("threads must be at least 1");
}

double BoostConfig::epsilon_of(Eigen::Index j) const {
  return epsilon.empty() ? 0.01 : epsilon[static_cast<std::size_t>(j)];
}

namespace {

std::span<const double> as_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

std::span<const double> column_span(const Eigen::MatrixXd& m, Eigen::Index j) {
  return {m.col(j).data(), static_cast<std::size_t>(m.rows())};
}

// Everything one boosting step needs besides the linear predictor.
struct StepContext {
  const Dataset& data;
  const ModifierIndex& index;
  const BoostConfig& config;
  const std::vector<std::vector<int>>& columns;  // per dimension
};

struct Candidate {
  TreeFit fit;
  int newton_failures = 0;
};

Candidate fit_candidate(const StepContext& ctx, Eigen::Index j, const Eigen::VectorXd& eta, int threads) {
  const Dataset& d = ctx.data;
  const Eigen::Index n = d.rows();
  std::vector<double> g(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    g[static_cast<std::size_t>(i)] =
        directional_gradient(ctx.config.loss, ctx.config.link, d.x(i, j), eta(i), d.y(i), d.w(i));
  }
  Candidate c;
  c.fit = fit_partition(g, ctx.index, ctx.columns[static_cast<std::size_t>(j)], ctx.config.tree, threads);
  c.fit.tree.dimension = static_cast<int>(j);
  c.newton_failures = adjust_leaves(c.fit.tree, c.fit.leaf_of_row, as_span(eta), column_span(d.x, j), as_span(d.y),
                                    as_span(d.w), ctx.config.loss, ctx.config.link)
                          .newton_failures;
  return c;
}

void apply_candidate(Eigen::VectorXd& eta, const Candidate& c, const Eigen::MatrixXd& x, Eigen::Index j, double eps,
                     int cycle) {
  const auto& nodes = c.fit.tree.nodes;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    eta(i) += eps * nodes[static_cast<std::size_t>(c.fit.leaf_of_row[static_cast<std::size_t>(i)])].value * x(i, j);
  }
  if (!eta.allFinite()) {
    throw FitError("non-finite linear predictor at cycle " + std::to_string(cycle) + ", dimension " +
                   std::to_string(j + 1));
  }
}

std::vector<std::vector<int>> resolve_columns(const BoostConfig& config, Eigen::Index p, Eigen::Index q) {
  if (!config.modifier_subsets.empty()) return config.modifier_subsets;
  std::vector<int> all(static_cast<std::size_t>(q));
  std::iota(all.begin(), all.end(), 0);
  return std::vector<std::vector<int>>(static_cast<std::size_t>(p), all);
}

// Units of one cycle in ascending dimension order. With parallel one-hot
// updates, the members of a group form a single unit.
std::vector<std::vector<int>> cycle_units(const Dataset& d, Eigen::Index p, bool parallel_onehot) {
  std::vector<int> group_of(static_cast<std::size_t>(p), -1);
  if (parallel_onehot) {
    for (std::size_t g = 0; g < d.onehot_groups.size(); ++g) {
      for (int c : d.onehot_groups[g].x_columns) group_of[static_cast<std::size_t>(c)] = static_cast<int>(g);
    }
  }
  std::vector<std::vector<int>> units;
  std::vector<bool> placed(static_cast<std::size_t>(p), false);
  for (Eigen::Index j = 0; j < p; ++j) {
    if (placed[static_cast<std::size_t>(j)]) continue;
    const int g = group_of[static_cast<std::size_t>(j)];
    if (g < 0) {
      units.push_back({static_cast<int>(j)});
      placed[static_cast<std::size_t>(j)] = true;
      continue;
    }
    std::vector<int> members = d.onehot_groups[static_cast<std::size_t>(g)].x_columns;
    std::sort(members.begin(), members.end());
    for (int m : members) placed[static_cast<std::size_t>(m)] = true;
    units.push_back(std::move(members));
  }
  return units;
}

Eigen::VectorXd glm_eta(const Dataset& d, const GlmCoefficients& glm) {
  return (d.x * glm.beta).array() + glm.beta0;
}

}  // namespace

TvcmModel train(const Design& design, const GlmCoefficients& glm, const BoostConfig& config, TrainReport* report) {
  const Dataset& d = design.data;
  d.validate();
  const Eigen::Index p = d.x.cols();
  config.validate(p, d.z.cols());

  const auto columns = resolve_columns(config, p, d.z.cols());
  TvcmModel model = make_glm_model(design, glm, config.loss, config.link, 0.01, columns);
  for (Eigen::Index j = 0; j < p; ++j) model.coefficients[static_cast<std::size_t>(j)].epsilon = config.epsilon_of(j);

  Eigen::VectorXd eta = glm_eta(d, glm);
  const int max_kappa = config.kappa.empty() ? 0 : *std::max_element(config.kappa.begin(), config.kappa.end());
  const bool track = report != nullptr && report->track_loss;
  int newton_failures = 0;
  double current_loss = track ? total_loss(config.loss, config.link, eta, d) : 0.0;

  if (max_kappa > 0) {
    const ModifierIndex index(d.z);
    const StepContext ctx{d, index, config, columns};
    const auto units = cycle_units(d, p, config.parallel_onehot);

    for (int k = 1; k <= max_kappa; ++k) {
      for (const auto& unit : units) {
        std::vector<int> live;
        for (int j : unit) {
          if (k <= config.kappa[static_cast<std::size_t>(j)]) live.push_back(j);
        }
        if (live.empty()) continue;

        // All members of a unit see the same linear predictor.
        std::vector<Candidate> cands(live.size());
        if (live.size() > 1 && config.threads > 1) {
          for (std::size_t start = 0; start < live.size(); start += static_cast<std::size_t>(config.threads)) {
            const std::size_t stop = std::min(live.size(), start + static_cast<std::size_t>(config.threads));
            std::vector<std::jthread> workers;
            std::vector<std::exception_ptr> errors(stop - start);
            for (std::size_t m = start; m < stop; ++m) {
              workers.emplace_back([&, m] {
                try {
                  cands[m] = fit_candidate(ctx, live[m], eta, 1);
                } catch (...) {
                  errors[m - start] = std::current_exception();
                }
              });
            }
            workers.clear();
            for (auto& e : errors) {
              if (e) std::rethrow_exception(e);
            }
          }
        } else {
          // A single-member unit may use threads for the split search.
          const int inner = live.size() == 1 ? config.threads : 1;
          for (std::size_t m = 0; m < live.size(); ++m) cands[m] = fit_candidate(ctx, live[m], eta, inner);
        }

        for (std::size_t m = 0; m < live.size(); ++m) {
          const int j = live[m];
          newton_failures += cands[m].newton_failures;
          apply_candidate(eta, cands[m], d.x, j, config.epsilon_of(j), k);
          if (track) {
            const double after = total_loss(config.loss, config.link, eta, d);
            report->steps.push_back(StepRecord{k, j, current_loss, after});
            current_loss = after;
          }
          model.coefficients[static_cast<std::size_t>(j)].trees.push_back(std::move(cands[m].fit.tree));
        }
      }
    }
  }

  const double b0 = model.beta0;
  model.beta0 = recalibrated_intercept(config.loss, config.link, model.beta0, (eta.array() - b0).matrix(), d);
  if (report != nullptr) {
    report->eta = std::move(eta);
    report->beta0_before_recalibration = b0;
    report->newton_failures = newton_failures;
  }
  return model;
}

TuneResult tune_kappa(const Design& design, const BoostConfig& config, const StoppingRule& rule,
                      const GlmFitOptions& glm_options) {
  const Dataset& full = design.data;
  full.validate();
  const Eigen::Index p = full.x.cols();
  config.validate(p, full.z.cols());
  if (!(rule.validation_fraction > 0.0 && rule.validation_fraction < 1.0)) {
    throw ContractError("validation fraction must lie strictly between 0 and 1");
  }
  if (rule.patience < 1) throw ContractError("patience must be at least 1");

  auto [train_part, valid_part] = split(full, 1.0 - rule.validation_fraction, rule.seed);
  if (train_part.rows() == 0 || valid_part.rows() == 0) {
    throw ContractError("validation split leaves an empty part (" + std::to_string(full.rows()) + " rows)");
  }
  const Design tdesign{train_part, design.x_scaling, design.z_scaling};
  const GlmCoefficients glm = fit_glm(tdesign, config.loss, config.link, glm_options);

  const Dataset& t = train_part;
  const Dataset& v = valid_part;
  const auto columns = resolve_columns(config, p, full.z.cols());
  const ModifierIndex index(t.z);
  const StepContext ctx{t, index, config, columns};

  Eigen::VectorXd eta_t = glm_eta(t, glm);
  Eigen::VectorXd eta_v = glm_eta(v, glm);
  double loss_t = total_loss(config.loss, config.link, eta_t, t);
  double loss_v = total_loss(config.loss, config.link, eta_v, v);

  TuneResult result;
  result.split_seed = rule.seed;
  result.kappa.assign(static_cast<std::size_t>(p), 0);
  std::vector<int> rejections(static_cast<std::size_t>(p), 0);
  std::vector<bool> open(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j) open[static_cast<std::size_t>(j)] = config.kappa[static_cast<std::size_t>(j)] > 0;

  Eigen::VectorXd cand_t(eta_t.size());
  Eigen::VectorXd cand_v(eta_v.size());
  for (int k = 1; std::any_of(open.begin(), open.end(), [](bool b) { return b; }); ++k) {
    for (Eigen::Index j = 0; j < p; ++j) {
      const auto uj = static_cast<std::size_t>(j);
      if (!open[uj]) continue;
      const double eps = config.epsilon_of(j);
      Candidate c = fit_candidate(ctx, j, eta_t, config.threads);
      const auto& nodes = c.fit.tree.nodes;
      for (Eigen::Index i = 0; i < eta_t.size(); ++i) {
        cand_t(i) = eta_t(i) + eps * nodes[static_cast<std::size_t>(c.fit.leaf_of_row[static_cast<std::size_t>(i)])].value *
                                   t.x(i, j);
      }
      for (Eigen::Index i = 0; i < eta_v.size(); ++i) {
        cand_v(i) = eta_v(i) +
                    eps * nodes[static_cast<std::size_t>(leaf_index_gather(c.fit.tree, v.z, i, columns[uj]))].value * v.x(i, j);
      }
      if (!cand_t.allFinite() || !cand_v.allFinite()) {
        throw FitError("non-finite linear predictor at cycle " + std::to_string(k) + ", dimension " +
                       std::to_string(j + 1));
      }
      const double new_t = total_loss(config.loss, config.link, cand_t, t);
      const double new_v = total_loss(config.loss, config.link, cand_v, v);
      const bool accept = new_v < loss_v;
      result.trace.push_back(TraceRow{k, static_cast<int>(j), new_t, new_v, accept});
      if (accept) {
        result.accepted_steps.push_back(StepRecord{k, static_cast<int>(j), loss_t, new_t});
        eta_t.swap(cand_t);
        eta_v.swap(cand_v);
        loss_t = new_t;
        loss_v = new_v;
        rejections[uj] = 0;
        if (++result.kappa[uj] >= config.kappa[uj]) open[uj] = false;
      } else if (++rejections[uj] >= rule.patience) {
        open[uj] = false;
      }
    }
  }
  return result;
}

std::string trace_csv(const TuneResult& result, const std::vector<std::string>& dimension_names) {
  std::ostringstream out;
  csv::Writer wr(out);
  wr.header({"cycle", "dimension", "feature", "train_loss", "valid_loss", "accepted"});
  for (const TraceRow& r : result.trace) {
    wr.cell(r.cycle).cell(r.dimension + 1);
    const auto uj = static_cast<std::size_t>(r.dimension);
    wr.cell(uj < dimension_names.size() ? std::string_view(dimension_names[uj]) : std::string_view(""));
    wr.cell(r.train_loss).cell(r.valid_loss).cell(r.accepted ? 1 : 0);
    wr.end_row();
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Importance

FeatureImportance feature_importance(const TvcmModel& model) {
  FeatureImportance fi;
  fi.row_labels = model.feature_names;
  const auto q = static_cast<Eigen::Index>(model.modifier_names.size());

  // Global modifier column -> importance column.
  std::vector<int> target(static_cast<std::size_t>(q), -1);
  for (Eigen::Index c = 0; c < q; ++c) {
    if (target[static_cast<std::size_t>(c)] >= 0) continue;
    const OneHotGroup* group = nullptr;
    for (const auto& g : model.onehot_groups) {
      if (std::find(g.z_columns.begin(), g.z_columns.end(), static_cast<int>(c)) != g.z_columns.end()) group = &g;
    }
    const int col = static_cast<int>(fi.column_labels.size());
    if (group != nullptr) {
      fi.column_labels.push_back(group->name);
      for (int m : group->z_columns) target[static_cast<std::size_t>(m)] = col;
    } else {
      fi.column_labels.push_back(model.modifier_names[static_cast<std::size_t>(c)]);
      target[static_cast<std::size_t>(c)] = col;
    }
  }

  fi.split_gain = Eigen::MatrixXd::Zero(model.p(), static_cast<Eigen::Index>(fi.column_labels.size()));
  for (Eigen::Index j = 0; j < model.p(); ++j) {
    const auto& cf = model.coefficients[static_cast<std::size_t>(j)];
    for (const RegressionTree& tree : cf.trees) {
      for (const auto& [local, gain] : split_gains(tree)) {
        const int global = cf.modifier_columns[static_cast<std::size_t>(local)];
        fi.split_gain(j, target[static_cast<std::size_t>(global)]) += gain;
      }
    }
    const double s = fi.split_gain.row(j).sum();
    if (s > 0.0) fi.split_gain.row(j) /= s;
  }
  return fi;
}

FeatureImportance feature_importance(const TvcmModel& model, const Design& design) {
  FeatureImportance fi = feature_importance(model);
  const std::vector<bool> categorical = model.categorical_dimensions();
  for (Eigen::Index j = 0; j < model.p(); ++j) {
    if (!categorical[static_cast<std::size_t>(j)]) {
      fi.fi_dimensions.push_back(static_cast<int>(j));
      fi.fi_labels.push_back(model.feature_names[static_cast<std::size_t>(j)]);
    }
  }
  const Eigen::MatrixXd beta = beta_matrix(model, design.data.z);
  const auto m = static_cast<Eigen::Index>(fi.fi_dimensions.size());
  fi.fi_star_raw.resize(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    fi.fi_star_raw(k) = beta.col(fi.fi_dimensions[static_cast<std::size_t>(k)]).cwiseAbs().mean();
  }
  const double total = fi.fi_star_raw.sum();
  fi.fi_star = total > 0.0 ? Eigen::VectorXd(fi.fi_star_raw / total) : Eigen::VectorXd::Zero(m);
  return fi;
}

}  // namespace tvcm
