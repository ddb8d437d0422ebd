#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "tvcm/csv.hpp"
#include "tvcm/errors.hpp"
#include "tvcm/model.hpp"
#include "tvcm/serialize.hpp"

namespace tvcm::cli {
namespace {

namespace fs = std::filesystem;

const std::set<std::string> kKeys{
    "config", "profile", "seed", "threads", "out",
    // boosting
    "loss", "max_depth", "min_samples_leaf", "epsilon", "kappa_max", "patience", "validation_fraction",
    "parallel_onehot", "kappa",
    // data
    "n", "train_fraction", "split", "split.seed", "split.index_file", "data", "train", "test", "rolling_window",
    "response", "weight", "response_is_count", "numeric", "categorical", "log", "modifiers",
    // commands
    "model", "kappa_file", "attentions", "emit_beta", "emit_delta", "part", "input", "predictions", "baselines",
    "rolling"};
const std::vector<std::string> kKeyPrefixes{"ordinal.", "cap."};

void check_keys(const KeyValueConfig& c) {
  for (const auto& [k, v] : c.values()) {
    if (kKeys.count(k)) continue;
    const bool prefixed = std::any_of(kKeyPrefixes.begin(), kKeyPrefixes.end(),
                                      [&](const std::string& p) { return k.rfind(p, 0) == 0 && k.size() > p.size(); });
    if (!prefixed) throw ContractError("unknown config key '" + k + "'");
  }
}

long long at_least(const KeyValueConfig& c, const std::string& key, long long lo) {
  const long long v = c.integer(key, lo);
  if (v < lo) throw ContractError("config key '" + key + "' must be at least " + std::to_string(lo));
  return v;
}

double fraction(const KeyValueConfig& c, const std::string& key, bool closed_above) {
  const double v = c.number(key, 0.5);
  if (!(v > 0.0 && (closed_above ? v <= 1.0 : v < 1.0))) {
    throw ContractError("config key '" + key + "' must lie in (0, 1" + (closed_above ? "]" : ")"));
  }
  return v;
}

int parse_count(std::string_view text, const std::string& what) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || v < 0) {
    throw ContractError(what + ": '" + std::string(text) + "' is not a non-negative integer");
  }
  return v;
}

std::string out_path(const RunConfig& rc, const std::string& file) {
  fs::create_directories(rc.out_dir);
  return (fs::path(rc.out_dir) / file).string();
}

std::string require_key(const RunConfig& rc, const std::string& key, const std::string& flag) {
  const std::string v = rc.values.get_or(key, "");
  if (v.empty()) throw ContractError("missing " + flag);
  return v;
}

bool has_part(const RunConfig& rc, const std::string& part) {
  if (!rc.data.empty()) return part == "train" || rc.split_mode != "none";
  return !(part == "train" ? rc.train : rc.test).empty();
}

Design fit_design(const RunConfig& rc, const Dataset& raw) {
  Dataset enc = onehot_encode(raw);
  if (!rc.schema->modifiers.empty()) enc = select_modifiers(enc, rc.schema->modifiers);
  return standardize(enc);
}

BoostConfig boost_config(const RunConfig& rc, Eigen::Index p, std::vector<int> kappa) {
  BoostConfig bc;
  bc.loss = rc.loss;
  bc.link = rc.link;
  bc.epsilon.assign(static_cast<std::size_t>(p), rc.epsilon);
  bc.kappa = std::move(kappa);
  bc.tree = rc.tree;
  bc.threads = rc.threads;
  bc.parallel_onehot = rc.parallel_onehot;
  return bc;
}

double mean_loss(LossSpec loss, const Eigen::VectorXd& mu, const Dataset& d) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < d.rows(); ++i) s += loss_value(loss, mu(i), d.y(i), d.w(i));
  return s / static_cast<double>(d.rows());
}

// Poisson deviances are reported in units of 10^-2.
double reported(LossSpec loss, double v) { return loss == kPoissonLoss ? 100.0 * v : v; }
std::string metric(LossSpec loss) { return loss == kPoissonLoss ? "poisson_deviance_x100" : "mse"; }

std::vector<int> read_kappa(const std::string& path) {
  const csv::Table t = csv::read(path);
  const int c = t.column("kappa");
  if (c < 0) throw LoadError(path + ": missing column 'kappa'");
  std::vector<int> kappa;
  for (const auto& row : t.rows) kappa.push_back(parse_count(row[static_cast<std::size_t>(c)], path + ": kappa"));
  return kappa;
}

std::string joined(const Eigen::VectorXd& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? " " : "") + csv::format(v(i));
  return s;
}

std::string joined(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + std::to_string(v[i]);
  return s;
}

// ---------------------------------------------------------------------------
// Commands

void cmd_simulate(const RunConfig& rc, std::ostream& out) {
  SimulationSpec spec;
  spec.n = rc.n;
  spec.seed = rc.seed;
  const Simulation sim = simulate(spec);
  auto write_part = [&](const std::string& name, const std::vector<Eigen::Index>& rows) {
    write_csv(out_path(rc, name + ".csv"), take_rows(sim.data, rows));
    std::ostringstream s;
    csv::Writer w(s);
    std::vector<std::string> header{"row_id", "mu"};
    for (const auto& x : sim.data.x_names) header.push_back("beta_" + x);
    w.header(header);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const Eigen::Index r = rows[k];
      w.cell(static_cast<long long>(k)).cell(sim.mu(r));
      for (Eigen::Index j = 0; j < sim.beta.cols(); ++j) w.cell(sim.beta(r, j));
      w.end_row();
    }
    csv::write_file(out_path(rc, "truth_" + name + ".csv"), s.str());
  };
  std::vector<Eigen::Index> train_rows, test_rows;
  if (rc.train_fraction < 1.0) {
    std::tie(train_rows, test_rows) = split_rows(rc.n, rc.train_fraction, rc.seed);
  } else {
    train_rows.resize(static_cast<std::size_t>(rc.n));
    std::iota(train_rows.begin(), train_rows.end(), Eigen::Index{0});
  }
  write_part("train", train_rows);
  if (!test_rows.empty()) write_part("test", test_rows);
  out << "simulated " << rc.n << " rows with seed " << rc.seed << ": " << train_rows.size() << " train, "
      << test_rows.size() << " test\n";
}

void cmd_tune(const RunConfig& rc, std::ostream& out) {
  const Design d = fit_design(rc, load_part(rc, "train"));
  const Eigen::Index p = d.data.x.cols();
  const BoostConfig bc = boost_config(rc, p, std::vector<int>(static_cast<std::size_t>(p), rc.kappa_max));
  const TuneResult r = tune_kappa(d, bc, rc.rule);

  std::ostringstream s;
  csv::Writer w(s);
  w.header({"dimension", "feature", "kappa"});
  for (Eigen::Index j = 0; j < p; ++j) {
    w.cell(static_cast<long long>(j + 1)).cell(d.data.x_names[static_cast<std::size_t>(j)]);
    w.cell(r.kappa[static_cast<std::size_t>(j)]);
    w.end_row();
  }
  csv::write_file(out_path(rc, "kappa.csv"), s.str());
  csv::write_file(out_path(rc, "trace.csv"), trace_csv(r, d.data.x_names));

  out << "profile " << rc.profile << ": loss " << to_string(rc.loss) << ", max_depth " << rc.tree.max_depth
      << ", min_samples_leaf " << rc.tree.min_samples_leaf << ", epsilon " << csv::format(rc.epsilon)
      << ", patience " << rc.rule.patience << ", validation_fraction " << csv::format(rc.rule.validation_fraction)
      << ", kappa_max " << rc.kappa_max << "\n";
  out << "kappa: " << joined(r.kappa) << "\n";
  out << "trace rows: " << r.trace.size() << "\n";
}

void cmd_train(const RunConfig& rc, std::ostream& out) {
  const std::vector<int> kappa =
      rc.values.has("kappa_file") ? read_kappa(rc.values.get_or("kappa_file", "")) : rc.kappa;
  if (kappa.empty()) throw ContractError("train needs kappa: pass --kappa FILE or set the 'kappa' key");
  const Design d = fit_design(rc, load_part(rc, "train"));
  const Eigen::Index p = d.data.x.cols();
  const BoostConfig bc = boost_config(rc, p, kappa);
  bc.validate(p, d.data.z.cols());
  const TvcmModel model = train(d, fit_glm(d, rc.loss, rc.link), bc);
  save_model(out_path(rc, "model.json"), model);

  const Eigen::VectorXd glm_raw = raw_beta_glm(model);
  std::ostringstream s;
  csv::Writer w(s);
  w.header({"dimension", "feature", "beta_glm", "beta_glm_raw", "kappa", "epsilon"});
  for (Eigen::Index j = 0; j < p; ++j) {
    const auto& c = model.coefficients[static_cast<std::size_t>(j)];
    w.cell(static_cast<long long>(j + 1)).cell(model.feature_names[static_cast<std::size_t>(j)]);
    w.cell(c.beta_glm).cell(glm_raw(j)).cell(static_cast<long long>(c.trees.size())).cell(c.epsilon);
    w.end_row();
  }
  csv::write_file(out_path(rc, "summary.csv"), s.str());

  if (rc.values.flag("attentions", false)) {
    const Eigen::MatrixXd b = raw_beta_matrix(model, d.data.z);
    std::ostringstream a;
    csv::Writer aw(a);
    std::vector<std::string> header{"row_id"};
    for (const auto& f : model.feature_names) header.push_back("beta_" + f);
    aw.header(header);
    for (Eigen::Index i = 0; i < b.rows(); ++i) {
      aw.cell(static_cast<long long>(i));
      for (Eigen::Index j = 0; j < p; ++j) aw.cell(b(i, j));
      aw.end_row();
    }
    csv::write_file(out_path(rc, "attentions.csv"), a.str());
  }

  const double loss = mean_loss(rc.loss, predict_mu(model, d), d.data);
  const double glm_loss = mean_loss(rc.loss, predict_glm_mu(model, d), d.data);
  out << "train " << metric(rc.loss) << ": " << csv::format(reported(rc.loss, loss)) << " (glm "
      << csv::format(reported(rc.loss, glm_loss)) << ")\n";
  out << "beta0: " << csv::format(model.beta0) << " (glm " << csv::format(model.beta0_glm) << ")\n";
  out << "beta_glm: " << joined(model.beta_glm()) << "\n";
  out << "kappa: " << joined(model.kappa()) << "\n";
}

void cmd_predict(const RunConfig& rc, std::ostream& out) {
  const TvcmModel model = load_model(require_key(rc, "model", "--model"));
  const Dataset raw = rc.values.has("input") ? load_csv(rc.values.get_or("input", ""), *rc.schema)
                                             : load_part(rc, rc.values.get_or("part", "test"));
  const Design d = design_for(model, raw);
  const Eigen::VectorXd mu = predict_mu(model, d);
  const bool poisson = model.loss == kPoissonLoss;
  const bool emit_beta = rc.values.flag("emit_beta", false);
  const bool emit_delta = rc.values.flag("emit_delta", false);
  Eigen::MatrixXd beta, delta;
  if (emit_beta) beta = raw_beta_matrix(model, d.data.z);
  if (emit_delta) {
    delta = delta_matrix(model, d.data.z);
    delta.array().rowwise() /= model.x_scaling.sd.transpose().array();
  }

  std::ostringstream s;
  csv::Writer w(s);
  std::vector<std::string> header{"row_id", "mu_hat"};
  if (poisson) header.push_back("w_mu_hat");
  if (emit_beta) {
    for (const auto& f : model.feature_names) header.push_back("beta_hat_" + f);
  }
  if (emit_delta) {
    for (const auto& f : model.feature_names) header.push_back("delta_" + f);
  }
  w.header(header);
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    w.cell(static_cast<long long>(i)).cell(mu(i));
    if (poisson) w.cell(d.data.w(i) * mu(i));
    for (Eigen::Index j = 0; j < beta.cols(); ++j) w.cell(beta(i, j));
    for (Eigen::Index j = 0; j < delta.cols(); ++j) w.cell(delta(i, j));
    w.end_row();
  }
  const std::string path = out_path(rc, "predictions.csv");
  csv::write_file(path, s.str());
  out << "wrote " << mu.size() << " predictions to " << path << "\n";
}

struct Scored {
  std::string model;
  std::string part;
  Eigen::VectorXd mu;
};

void write_rolling(const RunConfig& rc, const Dataset& labels, const std::vector<const Scored*>& models) {
  const Eigen::Index n = labels.rows();
  const Eigen::Index window = rc.rolling_window;
  if (n < window) throw ContractError("rolling window " + std::to_string(window) + " exceeds " + std::to_string(n) + " rows");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const Eigen::VectorXd& key = models.front()->mu;
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return key(a) < key(b); });

  std::vector<Eigen::VectorXd> series{labels.y(order)};
  for (const Scored* m : models) series.push_back(m->mu(order));
  std::vector<std::vector<double>> prefix;
  for (const auto& v : series) {
    std::vector<double> c(static_cast<std::size_t>(n) + 1, 0.0);
    for (Eigen::Index i = 0; i < n; ++i) c[static_cast<std::size_t>(i) + 1] = c[static_cast<std::size_t>(i)] + v(i);
    prefix.push_back(std::move(c));
  }
  std::ostringstream s;
  csv::Writer w(s);
  std::vector<std::string> header{"rank", "observed"};
  for (const Scored* m : models) header.push_back(m->model);
  w.header(header);
  for (Eigen::Index i = window; i <= n; ++i) {
    w.cell(static_cast<long long>(i - 1));
    for (const auto& c : prefix) {
      w.cell((c[static_cast<std::size_t>(i)] - c[static_cast<std::size_t>(i - window)]) / static_cast<double>(window));
    }
    w.end_row();
  }
  csv::write_file(out_path(rc, "rolling.csv"), s.str());
}

void cmd_evaluate(const RunConfig& rc, std::ostream& out) {
  const std::string part = rc.values.get_or("part", "test");
  const auto prediction_files = rc.values.list("predictions");
  const bool with_model = rc.values.has("model");
  if (prediction_files.empty() && !with_model) throw ContractError("evaluate needs --predictions or --model");
  const bool baselines = rc.values.flag("baselines", false);
  if (baselines && !with_model) throw ContractError("--baselines needs --model");

  std::optional<TvcmModel> model;
  if (with_model) model = load_model(rc.values.get_or("model", ""));
  const LossSpec loss = model ? model->loss : rc.loss;

  std::vector<Scored> scored;
  std::map<std::string, Dataset> labels;
  std::optional<double> null_mean;
  if (baselines) {
    if (!has_part(rc, "train")) throw ContractError("--baselines needs training data to fit the intercept-only model");
    labels["train"] = load_part(rc, "train");
    const Dataset& t = labels["train"];
    null_mean = t.w.dot(t.y) / t.w.sum();
  }
  auto labels_of = [&](const std::string& name) -> const Dataset& {
    if (!labels.count(name)) labels[name] = load_part(rc, name);
    return labels[name];
  };

  for (const std::string& spec : prediction_files) {
    const auto eq = spec.find('=');
    const std::string name = eq == std::string::npos ? fs::path(spec).stem().string() : spec.substr(0, eq);
    const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
    const csv::Table t = csv::read(path);
    const int c = t.column("mu_hat");
    if (c < 0) throw LoadError(path + ": missing column 'mu_hat'");
    const Dataset& l = labels_of(part);
    if (static_cast<Eigen::Index>(t.rows.size()) != l.rows()) {
      throw ContractError(path + " has " + std::to_string(t.rows.size()) + " rows but the " + part + " part has " +
                          std::to_string(l.rows()));
    }
    Eigen::VectorXd mu(l.rows());
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      mu(static_cast<Eigen::Index>(i)) = csv::to_double(t.rows[i][static_cast<std::size_t>(c)], i + 1, "mu_hat");
    }
    scored.push_back({name, part, std::move(mu)});
  }
  if (model) {
    for (const std::string p : {"train", "test"}) {
      if (!has_part(rc, p)) continue;
      const Design d = design_for(*model, labels_of(p));
      scored.push_back({"tvcm", p, predict_mu(*model, d)});
      if (baselines) {
        scored.push_back({"glm", p, predict_glm_mu(*model, d)});
        scored.push_back({"intercept_only", p, Eigen::VectorXd::Constant(d.data.rows(), *null_mean)});
      }
    }
  }

  std::ostringstream s;
  csv::Writer w(s);
  w.header({"model", "part", "rows", "metric", "loss"});
  for (const Scored& m : scored) {
    const Dataset& l = labels_of(m.part);
    const double v = reported(loss, mean_loss(loss, m.mu, l));
    w.cell(m.model).cell(m.part).cell(static_cast<long long>(l.rows())).cell(metric(loss)).cell(v);
    w.end_row();
    out << m.part << " " << m.model << " " << metric(loss) << ": " << csv::format(v) << "\n";
  }
  csv::write_file(out_path(rc, "evaluation.csv"), s.str());

  if (rc.values.flag("rolling", false)) {
    std::vector<const Scored*> on_part;
    for (const Scored& m : scored) {
      if (m.part == part) on_part.push_back(&m);
    }
    if (on_part.empty()) throw ContractError("nothing to roll on the " + part + " part");
    write_rolling(rc, labels_of(part), on_part);
  }
}

void cmd_importance(const RunConfig& rc, std::ostream& out) {
  const TvcmModel model = load_model(require_key(rc, "model", "--model"));
  const Design d = design_for(model, load_part(rc, rc.values.get_or("part", "train")));
  const FeatureImportance fi = feature_importance(model, d);
  const std::vector<int> kappa = model.kappa();

  std::ostringstream s;
  csv::Writer w(s);
  std::vector<std::string> header{"dimension"};
  header.insert(header.end(), fi.column_labels.begin(), fi.column_labels.end());
  header.push_back("note");
  w.header(header);
  for (Eigen::Index j = 0; j < fi.split_gain.rows(); ++j) {
    w.cell(fi.row_labels[static_cast<std::size_t>(j)]);
    for (Eigen::Index c = 0; c < fi.split_gain.cols(); ++c) w.cell(fi.split_gain(j, c));
    w.cell(kappa[static_cast<std::size_t>(j)] == 0 ? "no trees" : "");
    w.end_row();
  }
  csv::write_file(out_path(rc, "split_gain.csv"), s.str());

  std::ostringstream f;
  csv::Writer fw(f);
  fw.header({"dimension", "fi_star", "fi_star_raw", "note"});
  for (Eigen::Index j = 0; j < model.p(); ++j) {
    fw.cell(model.feature_names[static_cast<std::size_t>(j)]);
    const auto it = std::find(fi.fi_dimensions.begin(), fi.fi_dimensions.end(), static_cast<int>(j));
    if (it == fi.fi_dimensions.end()) {
      fw.cell("").cell("").cell("categorical dimension excluded");
    } else {
      const auto k = static_cast<Eigen::Index>(it - fi.fi_dimensions.begin());
      fw.cell(fi.fi_star(k)).cell(fi.fi_star_raw(k)).cell("");
    }
    fw.end_row();
  }
  csv::write_file(out_path(rc, "fi_star.csv"), f.str());

  if (fi.fi_star.size() > 0) {
    Eigen::Index best = 0;
    fi.fi_star.maxCoeff(&best);
    out << "largest FI*: " << fi.fi_labels[static_cast<std::size_t>(best)] << "\n";
  }
}

struct Command {
  const char* name;
  const char* help;
  void (*fn)(const RunConfig&, std::ostream&);
};

const Command kCommands[] = {
    {"simulate", "write simulated train/test data and the true coefficients", cmd_simulate},
    {"tune", "choose per-dimension tree counts by dimension-wise early stopping", cmd_tune},
    {"train", "fit the GLM and boost the coefficient functions", cmd_train},
    {"predict", "predict means (and optionally coefficients) for a dataset", cmd_predict},
    {"evaluate", "average loss of predictions and baselines", cmd_evaluate},
    {"importance", "split-gain and FI* feature importance", cmd_importance},
};

}  // namespace

KeyValueConfig profile_defaults(const std::string& name) {
  KeyValueConfig c;
  c.set("profile", name);
  c.set("seed", "1");
  c.set("threads", "1");
  c.set("out", ".");
  c.set("max_depth", "2");
  c.set("epsilon", "0.01");
  c.set("kappa_max", "3000");
  c.set("patience", "20");
  c.set("validation_fraction", "0.5");
  c.set("split", "none");
  c.set("split.seed", "1");
  c.set("rolling_window", "1000");
  if (name == "sim") {
    c.set("loss", "gaussian");
    c.set("min_samples_leaf", "10");
    c.set("parallel_onehot", "false");
    c.set("n", "200000");
    c.set("train_fraction", "0.5");
    c.set("response", "y");
    c.set("weight", "w");
    c.set("numeric", "x1,x2,x3,x4,x5,x6,x7,x8");
  } else if (name == "real") {
    c.set("loss", "poisson");
    c.set("min_samples_leaf", "20");
    c.set("parallel_onehot", "true");
    c.set("n", "1");
    c.set("train_fraction", "0.9");
    c.set("split", "random");
  } else {
    throw ContractError("unknown profile '" + name + "' (expected sim or real)");
  }
  return c;
}

RunConfig resolve_config(const KeyValueConfig& flags) {
  KeyValueConfig file;
  if (const auto path = flags.get("config")) file = KeyValueConfig::load(*path);
  const std::string profile = flags.get("profile").value_or(file.get_or("profile", "sim"));
  KeyValueConfig v = profile_defaults(profile);
  v.merge(file);
  v.merge(flags);
  check_keys(v);

  RunConfig rc;
  rc.profile = profile;
  rc.seed = static_cast<std::uint64_t>(at_least(v, "seed", 0));
  rc.threads = static_cast<int>(at_least(v, "threads", 1));
  rc.out_dir = v.get_or("out", ".");
  rc.loss = parse_loss(v.get_or("loss", ""));
  rc.link = canonical_link(rc.loss);
  rc.tree.max_depth = static_cast<int>(at_least(v, "max_depth", 1));
  rc.tree.min_samples_leaf = static_cast<int>(at_least(v, "min_samples_leaf", 1));
  rc.tree.validate();
  rc.epsilon = fraction(v, "epsilon", true);
  rc.kappa_max = static_cast<int>(at_least(v, "kappa_max", 0));
  rc.rule.patience = static_cast<int>(at_least(v, "patience", 1));
  rc.rule.validation_fraction = fraction(v, "validation_fraction", false);
  rc.rule.seed = rc.seed;
  rc.parallel_onehot = v.flag("parallel_onehot", false);
  for (const auto& k : v.list("kappa")) rc.kappa.push_back(parse_count(k, "config key 'kappa'"));

  rc.n = static_cast<Eigen::Index>(at_least(v, "n", 1));
  rc.train_fraction = fraction(v, "train_fraction", true);
  rc.split_mode = v.get_or("split", "none");
  if (rc.split_mode != "none" && rc.split_mode != "random" && rc.split_mode != "index") {
    throw ContractError("config key 'split': '" + rc.split_mode + "' (expected none, random or index)");
  }
  rc.split_seed = static_cast<std::uint64_t>(at_least(v, "split.seed", 0));
  rc.index_file = v.get_or("split.index_file", "");
  if (rc.split_mode == "index" && rc.index_file.empty()) throw ContractError("split 'index' needs 'split.index_file'");
  rc.data = v.get_or("data", "");
  rc.train = v.get_or("train", "");
  rc.test = v.get_or("test", "");
  rc.rolling_window = static_cast<int>(at_least(v, "rolling_window", 1));
  if (v.has("response")) rc.schema = CsvSchema::from_config(v);

  for (const char* key : {"attentions", "emit_beta", "emit_delta", "baselines", "rolling"}) v.flag(key, false);
  const std::string part = v.get_or("part", "test");
  if (part != "train" && part != "test" && part != "all") {
    throw ContractError("config key 'part': '" + part + "' (expected train, test or all)");
  }
  rc.values = std::move(v);
  return rc;
}

Dataset load_part(const RunConfig& rc, const std::string& part) {
  if (!rc.schema) throw ContractError("no data schema: set the 'response' and 'numeric' keys");
  if (!rc.data.empty()) {
    Dataset all = load_csv(rc.data, *rc.schema);
    if (part == "all") return all;
    if (rc.split_mode == "none") {
      if (part == "train") return all;
      throw ContractError("split is 'none', so " + rc.data + " has no test part");
    }
    auto [train, test] = rc.split_mode == "random" ? split(all, rc.train_fraction, rc.split_seed)
                                                   : split_by_index(all, read_index_file(rc.index_file));
    return part == "train" ? std::move(train) : std::move(test);
  }
  if (part == "all") throw ContractError("part 'all' needs --data");
  const std::string& path = part == "test" ? rc.test : rc.train;
  if (path.empty()) throw ContractError("no " + part + " data: pass --" + part + " or --data");
  return load_csv(path, *rc.schema);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Tree-based varying-coefficient GLM with cyclic boosting", "tvcm"};
  app.require_subcommand(1);
  std::map<std::string, std::string> store;
  std::vector<std::pair<CLI::Option*, std::string>> bound;
  std::vector<std::pair<CLI::Option*, std::string>> switches;
  std::vector<std::string> sets;
  std::vector<std::string> predictions;

  auto opt = [&](CLI::App* sc, const std::string& flag, const std::string& key, const std::string& help) {
    bound.emplace_back(sc->add_option(flag, store[key], help), key);
  };
  auto on_off = [&](CLI::App* sc, const std::string& flag, const std::string& key, const std::string& help) {
    switches.emplace_back(sc->add_flag(flag, help), key);
  };
  auto data_flags = [&](CLI::App* sc) {
    opt(sc, "--data", "data", "single CSV split by the 'split' settings");
    opt(sc, "--train", "train", "training CSV");
    opt(sc, "--test", "test", "test CSV");
  };
  auto boost_flags = [&](CLI::App* sc) {
    opt(sc, "--loss", "loss", "gaussian or poisson");
    opt(sc, "--epsilon", "epsilon", "shrinkage per tree");
    opt(sc, "--max-depth", "max_depth", "tree depth");
    opt(sc, "--min-samples-leaf", "min_samples_leaf", "minimum rows per leaf");
  };

  std::map<const CLI::App*, const Command*> commands;
  for (const Command& c : kCommands) {
    CLI::App* sc = app.add_subcommand(c.name, c.help);
    commands[sc] = &c;
    opt(sc, "--config", "config", "key = value configuration file");
    opt(sc, "--profile", "profile", "sim or real defaults");
    opt(sc, "--seed", "seed", "random seed");
    opt(sc, "--threads", "threads", "worker threads");
    opt(sc, "--out", "out", "output directory");
    sc->add_option("--set", sets, "extra KEY=VALUE settings");
    const std::string name = c.name;
    if (name == "simulate") {
      opt(sc, "--n", "n", "number of rows");
      opt(sc, "--train-fraction", "train_fraction", "share of rows written to train.csv");
    } else if (name == "tune") {
      data_flags(sc);
      boost_flags(sc);
      opt(sc, "--kappa-max", "kappa_max", "tree budget per dimension");
      opt(sc, "--patience", "patience", "rejections that close a dimension");
      opt(sc, "--validation-fraction", "validation_fraction", "held-out share of the training data");
    } else if (name == "train") {
      data_flags(sc);
      boost_flags(sc);
      opt(sc, "--kappa", "kappa_file", "kappa.csv written by tune");
      on_off(sc, "--attentions", "attentions", "write per-row coefficients of the training data");
    } else if (name == "predict") {
      data_flags(sc);
      opt(sc, "--model", "model", "model.json written by train");
      opt(sc, "--input", "input", "CSV to predict");
      opt(sc, "--part", "part", "train, test or all");
      on_off(sc, "--emit-beta", "emit_beta", "add the coefficient functions");
      on_off(sc, "--emit-delta", "emit_delta", "add the tree corrections");
    } else if (name == "evaluate") {
      data_flags(sc);
      opt(sc, "--model", "model", "model.json written by train");
      opt(sc, "--part", "part", "labels for --predictions: train, test or all");
      sc->add_option("--predictions", predictions, "[NAME=]PATH of a CSV with a mu_hat column");
      on_off(sc, "--baselines", "baselines", "add the GLM and intercept-only models");
      on_off(sc, "--rolling", "rolling", "write rolling means of observed and predicted values");
    } else if (name == "importance") {
      data_flags(sc);
      opt(sc, "--model", "model", "model.json written by train");
      opt(sc, "--part", "part", "train, test or all");
    }
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << kErrorPrefix << e.what() << "\n";
    return 2;
  }

  try {
    KeyValueConfig flags;
    for (const auto& [o, key] : bound) {
      if (o->count() > 0) flags.set(key, store[key]);
    }
    for (const auto& [o, key] : switches) {
      if (o->count() > 0) flags.set(key, "true");
    }
    if (!predictions.empty()) {
      std::string list;
      for (const auto& p : predictions) list += (list.empty() ? "" : ",") + p;
      flags.set("predictions", list);
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw ContractError("--set expects KEY=VALUE, got '" + s + "'");
      flags.set(s.substr(0, eq), s.substr(eq + 1));
    }
    const RunConfig rc = resolve_config(flags);
    commands.at(app.get_subcommands().front())->fn(rc, out);
    return 0;
  } catch (const std::exception& e) {
    err << kErrorPrefix << e.what() << "\n";
    return 1;
  }
}

}  // namespace tvcm::cli
