#include "tvcm/serialize.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

#include "tvcm/csv.hpp"
#include "tvcm/errors.hpp"

namespace tvcm {

using nlohmann::json;

namespace {

json vec(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json scaling_json(const Scaling& s) { return json{{"mean", vec(s.mean)}, {"sd", vec(s.sd)}}; }

json tree_json(const RegressionTree& t) {
  json nodes = json::array();
  for (const TreeNode& n : t.nodes) {
    if (n.is_leaf()) {
      nodes.push_back(json{{"leaf_value", n.value}, {"count", n.count}, {"gradient_mean", n.gradient_mean}});
    } else {
      nodes.push_back(
          json{{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right}, {"gain", n.gain}});
    }
  }
  json gains = json::object();
  for (const auto& [k, g] : split_gains(t)) gains[std::to_string(k)] = g;
  return json{{"arity", t.arity}, {"nodes", std::move(nodes)}, {"gains", std::move(gains)}};
}

// Field access with schema errors that name the path.
const json& field(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) throw LoadError("model file: " + where + " is not an object");
  const auto it = obj.find(key);
  if (it == obj.end()) throw LoadError("model file: missing field '" + where + "." + key + "'");
  return *it;
}

double number(const json& obj, const char* key, const std::string& where) {
  const json& v = field(obj, key, where);
  if (!v.is_number()) throw LoadError("model file: field '" + where + "." + key + "' must be a number");
  return v.get<double>();
}

long long integer(const json& obj, const char* key, const std::string& where) {
  const json& v = field(obj, key, where);
  if (!v.is_number_integer()) throw LoadError("model file: field '" + where + "." + key + "' must be an integer");
  return v.get<long long>();
}

template <typename T>
std::vector<T> list(const json& obj, const char* key, const std::string& where) {
  const json& v = field(obj, key, where);
  if (!v.is_array()) throw LoadError("model file: field '" + where + "." + key + "' must be an array");
  try {
    return v.get<std::vector<T>>();
  } catch (const json::exception&) {
    throw LoadError("model file: field '" + where + "." + key + "' has elements of the wrong type");
  }
}

Eigen::VectorXd vector_field(const json& obj, const char* key, const std::string& where) {
  const std::vector<double> v = list<double>(obj, key, where);
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Scaling scaling_from(const json& obj, const std::string& where) {
  Scaling s{vector_field(obj, "mean", where), vector_field(obj, "sd", where)};
  if (s.mean.size() != s.sd.size()) throw LoadError("model file: " + where + " mean and sd lengths differ");
  if ((s.sd.array() <= 0.0).any()) throw LoadError("model file: " + where + " has a non-positive sd");
  return s;
}

RegressionTree tree_from(const json& obj, const std::string& where) {
  RegressionTree t;
  t.arity = static_cast<int>(integer(obj, "arity", where));
  const json& nodes = field(obj, "nodes", where);
  if (!nodes.is_array() || nodes.empty()) throw LoadError("model file: " + where + ".nodes must be a non-empty array");
  t.nodes.clear();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const std::string at = where + ".nodes[" + std::to_string(i) + "]";
    const json& n = nodes[i];
    TreeNode node;
    if (n.is_object() && n.contains("leaf_value")) {
      node.value = number(n, "leaf_value", at);
      node.count = integer(n, "count", at);
      node.gradient_mean = n.contains("gradient_mean") ? number(n, "gradient_mean", at) : 0.0;
    } else {
      node.feature = static_cast<int>(integer(n, "feature", at));
      node.threshold = number(n, "threshold", at);
      node.left = static_cast<int>(integer(n, "left", at));
      node.right = static_cast<int>(integer(n, "right", at));
      node.gain = number(n, "gain", at);
      if (node.feature < 0 || node.feature >= t.arity) throw LoadError("model file: " + at + " feature out of range");
    }
    t.nodes.push_back(node);
  }
  validate_structure(t);
  return t;
}

}  // namespace

std::string serialize(const TvcmModel& model) {
  json groups = json::array();
  for (const OneHotGroup& g : model.onehot_groups) {
    groups.push_back(json{{"name", g.name}, {"levels", g.levels}, {"x_columns", g.x_columns}, {"z_columns", g.z_columns}});
  }
  json dims = json::array();
  json per_dim_names = json::array();
  for (std::size_t j = 0; j < model.coefficients.size(); ++j) {
    const CoefficientFunction& c = model.coefficients[j];
    json names = json::array();
    for (int col : c.modifier_columns) names.push_back(model.modifier_names[static_cast<std::size_t>(col)]);
    per_dim_names.push_back(names);
    json trees = json::array();
    for (const RegressionTree& t : c.trees) trees.push_back(tree_json(t));
    dims.push_back(json{{"feature", model.feature_names[j]},
                        {"beta_glm", c.beta_glm},
                        {"epsilon", c.epsilon},
                        {"modifier_columns", c.modifier_columns},
                        {"trees", std::move(trees)}});
  }
  const json doc{{"format_version", kModelFormatVersion},
                 {"loss", to_string(model.loss)},
                 {"link", to_string(model.link)},
                 {"feature_names", model.feature_names},
                 {"modifier_names", model.modifier_names},
                 {"modifier_names_per_dimension", std::move(per_dim_names)},
                 {"onehot_groups", std::move(groups)},
                 {"standardization", json{{"x", scaling_json(model.x_scaling)}, {"z", scaling_json(model.z_scaling)}}},
                 {"beta0", model.beta0},
                 {"beta0_glm", model.beta0_glm},
                 {"dimensions", std::move(dims)}};
  return doc.dump(1) + "\n";
}

TvcmModel deserialize(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw LoadError(std::string("model file is not valid JSON: ") + e.what());
  }
  const std::string root = "model";
  const json& version = field(doc, "format_version", root);
  if (!version.is_number_integer() || version.get<long long>() != kModelFormatVersion) {
    throw LoadError("model file has unsupported format_version " + version.dump() + " (this build reads version " +
                    std::to_string(kModelFormatVersion) + ")");
  }

  TvcmModel m;
  try {
    m.loss = parse_loss(field(doc, "loss", root).get<std::string>());
    m.link = parse_link(field(doc, "link", root).get<std::string>());
    require_canonical_pair(m.loss, m.link);
  } catch (const json::exception&) {
    throw LoadError("model file: loss and link must be strings");
  } catch (const ContractError& e) {
    throw LoadError(std::string("model file: ") + e.what());
  }
  m.feature_names = list<std::string>(doc, "feature_names", root);
  m.modifier_names = list<std::string>(doc, "modifier_names", root);
  m.beta0 = number(doc, "beta0", root);
  m.beta0_glm = number(doc, "beta0_glm", root);
  const json& st = field(doc, "standardization", root);
  m.x_scaling = scaling_from(field(st, "x", "standardization"), "standardization.x");
  m.z_scaling = scaling_from(field(st, "z", "standardization"), "standardization.z");

  const auto p = static_cast<Eigen::Index>(m.feature_names.size());
  const auto q = static_cast<Eigen::Index>(m.modifier_names.size());
  if (m.x_scaling.mean.size() != p || m.z_scaling.mean.size() != q) {
    throw LoadError("model file: standardization lengths do not match the feature lists");
  }

  const json& groups = field(doc, "onehot_groups", root);
  if (!groups.is_array()) throw LoadError("model file: onehot_groups must be an array");
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const std::string at = "onehot_groups[" + std::to_string(g) + "]";
    OneHotGroup grp;
    const json& name = field(groups[g], "name", at);
    if (!name.is_string()) throw LoadError("model file: " + at + ".name must be a string");
    grp.name = name.get<std::string>();
    grp.levels = list<std::string>(groups[g], "levels", at);
    grp.x_columns = list<int>(groups[g], "x_columns", at);
    grp.z_columns = list<int>(groups[g], "z_columns", at);
    for (int c : grp.x_columns) {
      if (c < 0 || c >= p) throw LoadError("model file: " + at + " x column out of range");
    }
    for (int c : grp.z_columns) {
      if (c < 0 || c >= q) throw LoadError("model file: " + at + " z column out of range");
    }
    m.onehot_groups.push_back(std::move(grp));
  }

  const json& dims = field(doc, "dimensions", root);
  if (!dims.is_array() || static_cast<Eigen::Index>(dims.size()) != p) {
    throw LoadError("model file: dimensions must list one entry per feature");
  }
  for (std::size_t j = 0; j < dims.size(); ++j) {
    const std::string at = "dimensions[" + std::to_string(j) + "]";
    CoefficientFunction c;
    c.beta_glm = number(dims[j], "beta_glm", at);
    c.epsilon = number(dims[j], "epsilon", at);
    if (!(c.epsilon > 0.0 && c.epsilon <= 1.0)) throw LoadError("model file: " + at + ".epsilon outside (0, 1]");
    c.modifier_columns = list<int>(dims[j], "modifier_columns", at);
    for (int col : c.modifier_columns) {
      if (col < 0 || col >= q) throw LoadError("model file: " + at + " modifier column out of range");
    }
    const json& trees = field(dims[j], "trees", at);
    if (!trees.is_array()) throw LoadError("model file: " + at + ".trees must be an array");
    for (std::size_t k = 0; k < trees.size(); ++k) {
      RegressionTree t = tree_from(trees[k], at + ".trees[" + std::to_string(k) + "]");
      if (t.arity != static_cast<int>(c.modifier_columns.size())) {
        throw LoadError("model file: " + at + " tree arity does not match its modifier columns");
      }
      t.dimension = static_cast<int>(j);
      c.trees.push_back(std::move(t));
    }
    m.coefficients.push_back(std::move(c));
  }
  return m;
}

void save_model(const std::string& path, const TvcmModel& model) { csv::write_file(path, serialize(model)); }

TvcmModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open model file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

}  // namespace tvcm
