#include "tvcm/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "tvcm/csv.hpp"
#include "tvcm/errors.hpp"
#include "tvcm/rng.hpp"

namespace tvcm {

void Dataset::validate() const {
  const Eigen::Index n = rows();
  if (w.size() != n || x.rows() != n || z.rows() != n) throw ContractError("dataset columns differ in length");
  if (static_cast<Eigen::Index>(x_names.size()) != x.cols() || static_cast<Eigen::Index>(z_names.size()) != z.cols()) {
    throw ContractError("dataset column names do not match the matrix widths");
  }
  for (const auto& c : categorical) {
    if (static_cast<Eigen::Index>(c.codes.size()) != n) throw ContractError("categorical column length mismatch");
  }
  if (!y.allFinite() || !w.allFinite() || !x.allFinite() || !z.allFinite()) {
    throw ContractError("dataset contains non-finite values");
  }
  if (n > 0 && !(w.minCoeff() > 0.0)) throw ContractError("dataset weights must be positive");
}

// ---------------------------------------------------------------------------
// Simulation

Eigen::VectorXd true_beta(const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != 8) throw ContractError("true_beta expects 8 features");
  const double x2 = x(1), x3 = x(2), x4 = x(3), x5 = x(4);
  const double sgn3 = static_cast<double>((x3 > 0.0) - (x3 < 0.0));
  Eigen::VectorXd b(8);
  b << 0.5, -0.25 * x2, 0.5 * sgn3 * std::sin(2.0 * x3), 0.25 * x5, 0.25 * x4, 0.125 * x5 * x5, 0.0, 0.0;
  return b;
}

namespace {

Dataset numeric_dataset(Eigen::MatrixXd x, Eigen::VectorXd y) {
  Dataset d;
  const Eigen::Index n = x.rows();
  d.y = std::move(y);
  d.w = Eigen::VectorXd::Ones(n);
  for (Eigen::Index j = 0; j < x.cols(); ++j) d.x_names.push_back("x" + std::to_string(j + 1));
  d.z = x;
  d.z_names = d.x_names;
  d.x = std::move(x);
  return d;
}

}  // namespace

Simulation simulate(const SimulationSpec& spec) {
  if (spec.n < 1) throw ContractError("simulate: n must be >= 1");
  Rng rng(spec.seed);
  const double rho = spec.correlation_2_8;
  const double rho_c = std::sqrt(1.0 - rho * rho);
  Eigen::MatrixXd x(spec.n, 8);
  Eigen::VectorXd mu(spec.n), y(spec.n);
  Eigen::MatrixXd beta(spec.n, 8);
  Eigen::VectorXd e(8);
  for (Eigen::Index i = 0; i < spec.n; ++i) {
    for (int j = 0; j < 8; ++j) e(j) = rng.normal();
    e(7) = rho * e(1) + rho_c * e(7);
    x.row(i) = e.transpose();
    const Eigen::VectorXd b = true_beta(e);
    beta.row(i) = b.transpose();
    mu(i) = b.dot(e);
    y(i) = mu(i) + spec.noise_sd * rng.normal();
  }
  return Simulation{numeric_dataset(std::move(x), std::move(y)), std::move(mu), std::move(beta)};
}

Simulation simulate_linear(const Eigen::VectorXd& gamma, Eigen::Index n, std::uint64_t seed, double noise_sd) {
  if (n < 1) throw ContractError("simulate_linear: n must be >= 1");
  Rng rng(seed);
  const Eigen::Index p = gamma.size();
  Eigen::MatrixXd x(n, p);
  Eigen::VectorXd mu(n), y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) x(i, j) = rng.normal();
    mu(i) = x.row(i).dot(gamma);
    y(i) = mu(i) + noise_sd * rng.normal();
  }
  Eigen::MatrixXd beta = gamma.transpose().replicate(n, 1);
  return Simulation{numeric_dataset(std::move(x), std::move(y)), std::move(mu), std::move(beta)};
}

// ---------------------------------------------------------------------------
// CSV ingestion

CsvSchema CsvSchema::from_config(const KeyValueConfig& cfg) {
  CsvSchema s;
  s.response = cfg.get_or("response", "");
  if (s.response.empty()) throw ContractError("schema: 'response' is required");
  s.weight = cfg.get_or("weight", "");
  s.response_is_count = cfg.flag("response_is_count", false);
  s.numeric = cfg.list("numeric");
  s.categorical = cfg.list("categorical");
  for (const auto& [col, levels] : cfg.with_prefix("ordinal.")) s.ordinal[col] = split_list(levels);
  for (const auto& [col, cap] : cfg.with_prefix("cap.")) s.caps[col] = cfg.number("cap." + col, 0.0);
  s.log_columns = cfg.list("log");
  s.modifiers = cfg.list("modifiers");
  return s;
}

namespace {

int require_column(const csv::Table& t, const std::string& name, const std::string& path) {
  const int c = t.column(name);
  if (c < 0) throw LoadError(path + ": missing column '" + name + "'");
  return c;
}

double cap_value(const CsvSchema& s, const std::string& col, double v) {
  const auto it = s.caps.find(col);
  return it == s.caps.end() ? v : std::min(v, it->second);
}

}  // namespace

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  const csv::Table t = csv::read(path);
  const std::size_t n = t.rows.size();
  const int yc = require_column(t, schema.response, path);
  const int wc = schema.weight.empty() ? -1 : require_column(t, schema.weight, path);
  std::vector<int> num_cols, cat_cols;
  for (const auto& name : schema.numeric) num_cols.push_back(require_column(t, name, path));
  for (const auto& name : schema.categorical) cat_cols.push_back(require_column(t, name, path));
  const std::set<std::string> logs(schema.log_columns.begin(), schema.log_columns.end());

  Dataset d;
  d.y.resize(static_cast<Eigen::Index>(n));
  d.w.resize(static_cast<Eigen::Index>(n));
  d.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(num_cols.size()));
  std::vector<std::vector<std::string>> cat_text(cat_cols.size(), std::vector<std::string>(n));

  for (std::size_t r = 0; r < n; ++r) {
    const auto& row = t.rows[r];
    const std::size_t row_no = r + 1;
    const auto i = static_cast<Eigen::Index>(r);
    double w = 1.0;
    if (wc >= 0) {
      w = cap_value(schema, schema.weight, csv::to_double(row[static_cast<std::size_t>(wc)], row_no, schema.weight));
      if (!(w > 0.0)) {
        throw LoadError(path + ": row " + std::to_string(row_no) + ", column '" + schema.weight +
                        "': weight must be positive, got " + row[static_cast<std::size_t>(wc)]);
      }
    }
    double y = cap_value(schema, schema.response, csv::to_double(row[static_cast<std::size_t>(yc)], row_no, schema.response));
    if (schema.response_is_count) {
      if (!(y >= 0.0)) {
        throw LoadError(path + ": row " + std::to_string(row_no) + ", column '" + schema.response +
                        "': counts must be non-negative");
      }
      y /= w;
    }
    d.y(i) = y;
    d.w(i) = w;
    for (std::size_t k = 0; k < num_cols.size(); ++k) {
      const std::string& name = schema.numeric[k];
      const std::string& cell = row[static_cast<std::size_t>(num_cols[k])];
      double v = 0.0;
      if (const auto ord = schema.ordinal.find(name); ord != schema.ordinal.end()) {
        const auto pos = std::find(ord->second.begin(), ord->second.end(), cell);
        if (pos == ord->second.end()) {
          throw LoadError(path + ": row " + std::to_string(row_no) + ", column '" + name + "': unknown ordinal level '" +
                          cell + "'");
        }
        v = static_cast<double>(pos - ord->second.begin() + 1);
      } else {
        v = csv::to_double(cell, row_no, name);
      }
      v = cap_value(schema, name, v);
      if (logs.count(name)) {
        if (!(v > 0.0)) {
          throw LoadError(path + ": row " + std::to_string(row_no) + ", column '" + name + "': log of non-positive value");
        }
        v = std::log(v);
      }
      d.x(i, static_cast<Eigen::Index>(k)) = v;
    }
    for (std::size_t k = 0; k < cat_cols.size(); ++k) cat_text[k][r] = row[static_cast<std::size_t>(cat_cols[k])];
  }

  d.x_names = schema.numeric;
  d.z = d.x;
  d.z_names = d.x_names;
  for (std::size_t k = 0; k < cat_cols.size(); ++k) {
    CategoricalColumn col;
    col.name = schema.categorical[k];
    std::set<std::string> levels(cat_text[k].begin(), cat_text[k].end());
    col.levels.assign(levels.begin(), levels.end());
    col.codes.reserve(n);
    for (const auto& v : cat_text[k]) {
      col.codes.push_back(static_cast<int>(std::lower_bound(col.levels.begin(), col.levels.end(), v) - col.levels.begin()));
    }
    d.categorical.push_back(std::move(col));
  }
  d.validate();
  return d;
}

void write_csv(const std::string& path, const Dataset& data) {
  if (!data.categorical.empty()) throw ContractError("write_csv: dataset has unencoded categorical columns");
  std::ostringstream out;
  csv::Writer w(out);
  std::vector<std::string> header{"y", "w"};
  header.insert(header.end(), data.x_names.begin(), data.x_names.end());
  w.header(header);
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    w.cell(data.y(i)).cell(data.w(i));
    for (Eigen::Index j = 0; j < data.x.cols(); ++j) w.cell(data.x(i, j));
    w.end_row();
  }
  csv::write_file(path, out.str());
}

Dataset onehot_encode(const Dataset& data, const std::vector<OneHotGroup>* reference) {
  Dataset out = data;
  out.categorical.clear();
  const Eigen::Index n = data.rows();
  for (const CategoricalColumn& col : data.categorical) {
    std::vector<std::string> levels = col.levels;
    std::vector<int> remap(col.levels.size());
    std::iota(remap.begin(), remap.end(), 0);
    if (reference) {
      const auto it = std::find_if(reference->begin(), reference->end(),
                                   [&](const OneHotGroup& g) { return g.name == col.name; });
      if (it == reference->end()) throw LoadError("categorical column '" + col.name + "' unknown to the model");
      levels = it->levels;
      for (std::size_t k = 0; k < col.levels.size(); ++k) {
        const auto pos = std::find(levels.begin(), levels.end(), col.levels[k]);
        remap[k] = pos == levels.end() ? -1 : static_cast<int>(pos - levels.begin());
      }
    }
    OneHotGroup group;
    group.name = col.name;
    group.levels = levels;
    const Eigen::Index x0 = out.x.cols();
    const Eigen::Index z0 = out.z.cols();
    const auto m = static_cast<Eigen::Index>(levels.size());
    out.x.conservativeResize(Eigen::NoChange, x0 + m);
    out.z.conservativeResize(Eigen::NoChange, z0 + m);
    out.x.rightCols(m).setZero();
    out.z.rightCols(m).setZero();
    for (Eigen::Index l = 0; l < m; ++l) {
      const std::string name = col.name + "_" + levels[static_cast<std::size_t>(l)];
      out.x_names.push_back(name);
      out.z_names.push_back(name);
      group.x_columns.push_back(static_cast<int>(x0 + l));
      group.z_columns.push_back(static_cast<int>(z0 + l));
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      const int code = remap[static_cast<std::size_t>(col.codes[static_cast<std::size_t>(i)])];
      if (code < 0) {
        throw LoadError("row " + std::to_string(i + 1) + ": unseen level '" +
                        col.levels[static_cast<std::size_t>(col.codes[static_cast<std::size_t>(i)])] +
                        "' in categorical column '" + col.name + "'");
      }
      out.x(i, x0 + code) = 1.0;
      out.z(i, z0 + code) = 1.0;
    }
    out.onehot_groups.push_back(std::move(group));
  }
  return out;
}

Dataset select_modifiers(const Dataset& data, const std::vector<std::string>& names) {
  if (!data.categorical.empty()) throw ContractError("select_modifiers: encode categorical columns first");
  std::vector<int> keep;
  for (const auto& name : names) {
    const auto g = std::find_if(data.onehot_groups.begin(), data.onehot_groups.end(),
                                [&](const OneHotGroup& grp) { return grp.name == name; });
    if (g != data.onehot_groups.end()) {
      keep.insert(keep.end(), g->z_columns.begin(), g->z_columns.end());
      continue;
    }
    const auto pos = std::find(data.z_names.begin(), data.z_names.end(), name);
    if (pos == data.z_names.end()) throw ContractError("unknown effect modifier '" + name + "'");
    keep.push_back(static_cast<int>(pos - data.z_names.begin()));
  }
  std::sort(keep.begin(), keep.end());
  keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
  Dataset out = data;
  out.z = data.z(Eigen::all, keep);
  out.z_names.clear();
  for (int c : keep) out.z_names.push_back(data.z_names[static_cast<std::size_t>(c)]);
  for (auto& g : out.onehot_groups) {
    std::vector<int> cols;
    for (int c : g.z_columns) {
      const auto pos = std::find(keep.begin(), keep.end(), c);
      if (pos != keep.end()) cols.push_back(static_cast<int>(pos - keep.begin()));
    }
    g.z_columns = std::move(cols);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Row selection

Dataset take_rows(const Dataset& data, std::span<const Eigen::Index> rows) {
  const std::vector<Eigen::Index> idx(rows.begin(), rows.end());
  for (Eigen::Index r : idx) {
    if (r < 0 || r >= data.rows()) throw ContractError("row index " + std::to_string(r) + " out of range");
  }
  Dataset out;
  out.y = data.y(idx);
  out.w = data.w(idx);
  out.x = data.x(idx, Eigen::all);
  out.z = data.z(idx, Eigen::all);
  out.x_names = data.x_names;
  out.z_names = data.z_names;
  out.onehot_groups = data.onehot_groups;
  for (const auto& c : data.categorical) {
    CategoricalColumn col{c.name, c.levels, {}};
    col.codes.reserve(idx.size());
    for (Eigen::Index r : idx) col.codes.push_back(c.codes[static_cast<std::size_t>(r)]);
    out.categorical.push_back(std::move(col));
  }
  return out;
}

std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>> split_rows(Eigen::Index n, double first_fraction,
                                                                         std::uint64_t seed) {
  if (!(first_fraction >= 0.0 && first_fraction <= 1.0)) throw ContractError("split fraction must lie in [0, 1]");
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  Rng rng(seed);
  for (std::size_t i = perm.size(); i > 1; --i) {
    std::swap(perm[i - 1], perm[rng.index(i)]);
  }
  const auto k = static_cast<std::size_t>(std::llround(first_fraction * static_cast<double>(n)));
  std::vector<Eigen::Index> a(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k));
  std::vector<Eigen::Index> b(perm.begin() + static_cast<std::ptrdiff_t>(k), perm.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {std::move(a), std::move(b)};
}

std::pair<Dataset, Dataset> split(const Dataset& data, double first_fraction, std::uint64_t seed) {
  const auto [a, b] = split_rows(data.rows(), first_fraction, seed);
  return {take_rows(data, a), take_rows(data, b)};
}

std::pair<Dataset, Dataset> split_by_index(const Dataset& data, std::span<const Eigen::Index> first_rows) {
  std::vector<char> chosen(static_cast<std::size_t>(data.rows()), 0);
  for (Eigen::Index r : first_rows) {
    if (r < 0 || r >= data.rows()) throw ContractError("split index " + std::to_string(r) + " out of range");
    if (chosen[static_cast<std::size_t>(r)]) throw ContractError("split index " + std::to_string(r) + " repeated");
    chosen[static_cast<std::size_t>(r)] = 1;
  }
  std::vector<Eigen::Index> rest;
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    if (!chosen[static_cast<std::size_t>(r)]) rest.push_back(r);
  }
  return {take_rows(data, first_rows), take_rows(data, rest)};
}

std::vector<Eigen::Index> read_index_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open index file '" + path + "'");
  std::vector<Eigen::Index> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(static_cast<Eigen::Index>(std::stoll(line)));
    } catch (const std::exception&) {
      throw LoadError(path + ": line " + std::to_string(line_no) + " is not a row index");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Standardization

Scaling Scaling::identity(Eigen::Index cols) {
  return Scaling{Eigen::VectorXd::Zero(cols), Eigen::VectorXd::Ones(cols)};
}

Eigen::MatrixXd Scaling::apply(const Eigen::MatrixXd& m) const {
  if (m.cols() != mean.size()) throw ContractError("scaling width does not match the matrix");
  return ((m.rowwise() - mean.transpose()).array().rowwise() / sd.transpose().array()).matrix();
}

Scaling fit_scaling(const Eigen::MatrixXd& m, const std::vector<int>& passthrough_columns) {
  Scaling s = Scaling::identity(m.cols());
  const double n = static_cast<double>(m.rows());
  if (m.rows() == 0) return s;
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    if (std::find(passthrough_columns.begin(), passthrough_columns.end(), c) != passthrough_columns.end()) continue;
    const double mean = m.col(c).mean();
    const double var = (m.col(c).array() - mean).square().sum() / n;
    s.mean(c) = mean;
    s.sd(c) = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

std::vector<int> onehot_x_columns(const Dataset& data) {
  std::vector<int> out;
  for (const auto& g : data.onehot_groups) out.insert(out.end(), g.x_columns.begin(), g.x_columns.end());
  return out;
}

std::vector<int> onehot_z_columns(const Dataset& data) {
  std::vector<int> out;
  for (const auto& g : data.onehot_groups) out.insert(out.end(), g.z_columns.begin(), g.z_columns.end());
  return out;
}

}  // namespace tvcm
