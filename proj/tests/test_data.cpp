#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "tvcm/config.hpp"
#include "tvcm/csv.hpp"
#include "tvcm/data.hpp"
#include "tvcm/errors.hpp"
#include "tvcm/rng.hpp"

using namespace tvcm;

namespace {

std::string temp_file(const std::string& name, const std::string& contents) {
  const auto path = std::filesystem::temp_directory_path() / ("tvcm_test_data_" + name);
  std::ofstream(path) << contents;
  return path.string();
}

// Simpson's rule for the integral of f over [a, b] with m (even) panels.
template <typename F>
double simpson(F f, double a, double b, int m) {
  const double h = (b - a) / m;
  double s = f(a) + f(b);
  for (int k = 1; k < m; ++k) s += (k % 2 ? 4.0 : 2.0) * f(a + k * h);
  return s * h / 3.0;
}

double phi(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace

TEST_CASE("true_beta examples") {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(8);
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(8);
  expected(0) = 0.5;
  CHECK(true_beta(x) == expected);
  CHECK(true_beta(x).dot(x) == 0.0);

  x(2) = std::numbers::pi / 4.0;
  CHECK(true_beta(x)(2) == doctest::Approx(0.5).epsilon(1e-15));
  x(2) = -std::numbers::pi / 4.0;
  CHECK(true_beta(x)(2) == doctest::Approx(0.5).epsilon(1e-15));

  x << 0.3, -1.2, 0.7, 2.0, -0.4, 1.1, 5.0, -3.0;
  const Eigen::VectorXd b = true_beta(x);
  CHECK(b(0) == 0.5);
  CHECK(b(1) == doctest::Approx(1.2 / 4.0));
  CHECK(b(2) == doctest::Approx(0.5 * std::sin(1.4)));
  CHECK(b(3) == doctest::Approx(-0.4 / 4.0));
  CHECK(b(4) == doctest::Approx(2.0 / 4.0));
  CHECK(b(5) == doctest::Approx(0.16 / 8.0));
  CHECK(b(6) == 0.0);
  CHECK(b(7) == 0.0);
}

TEST_CASE("coefficient means under the simulation law") {
  // E[beta_3] = int_0^inf sin(2x) phi(x) dx by symmetry.
  const double e3 = simpson([](double x) { return std::sin(2.0 * x) * phi(x); }, 0.0, 12.0, 20000);
  CHECK(e3 == doctest::Approx(0.255).epsilon(0.002));
  const double e6 = simpson([](double x) { return x * x / 8.0 * phi(x); }, -12.0, 12.0, 20000);
  CHECK(e6 == doctest::Approx(0.125).epsilon(1e-9));

  const Simulation sim = simulate({.n = 200000, .seed = 11});
  CHECK(sim.beta.col(0).mean() == 0.5);
  CHECK(sim.beta.col(2).mean() == doctest::Approx(e3).epsilon(0.02));
  CHECK(sim.beta.col(5).mean() == doctest::Approx(0.125).epsilon(0.02));
}

TEST_CASE("simulation moments") {
  const Simulation sim = simulate({.n = 1000000, .seed = 3});
  const Eigen::MatrixXd& x = sim.data.x;
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd c = x.rowwise() - mean;
  const Eigen::MatrixXd cov = c.transpose() * c / static_cast<double>(x.rows());
  for (int j = 0; j < 8; ++j) CHECK(std::abs(cov(j, j) - 1.0) <= 0.01);
  CHECK(std::abs(cov(1, 7) / std::sqrt(cov(1, 1) * cov(7, 7)) - 0.5) <= 0.01);
  CHECK(std::abs(cov(0, 1)) <= 0.01);
  CHECK((sim.data.w.array() == 1.0).all());
  CHECK(sim.data.z == sim.data.x);
}

TEST_CASE("simulated noise has unit variance") {
  const Simulation sim = simulate({.n = 100000, .seed = 5});
  const Eigen::VectorXd r = sim.data.y - sim.mu;
  const double var = (r.array() - r.mean()).square().mean();
  CHECK(std::abs(var - 1.0) <= 0.02);
  for (Eigen::Index i = 0; i < 50; ++i) {
    const Eigen::VectorXd xi = sim.data.x.row(i).transpose();
    CHECK(sim.mu(i) == doctest::Approx(true_beta(xi).dot(xi)).epsilon(1e-14));
  }
}

TEST_CASE("simulate is reproducible") {
  const Simulation a = simulate({.n = 5000, .seed = 42});
  const Simulation b = simulate({.n = 5000, .seed = 42});
  const Simulation c = simulate({.n = 5000, .seed = 43});
  CHECK(a.data.x == b.data.x);
  CHECK(a.data.y == b.data.y);
  CHECK(a.data.x != c.data.x);
  CHECK(simulate({}).data.rows() == 200000);
}

TEST_CASE("rng streams are fixed") {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
  Rng r(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    CHECK(r.index(7) < 7u);
  }
}

TEST_CASE("csv parsing") {
  std::istringstream in("\xEF\xBB\xBF" "a, \"b\" ,c\n1,2,3\n\n 'x' ,y,z\n");
  const csv::Table t = csv::parse(in, "mem");
  CHECK(t.header == std::vector<std::string>{"a", "b", "c"});
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[1][0] == "x");
  CHECK(t.column("c") == 2);
  CHECK(t.column("nope") == -1);

  std::istringstream ragged("a,b\n1,2\n3\n");
  CHECK_THROWS_AS(csv::parse(ragged, "mem"), LoadError);
  CHECK_THROWS_WITH_AS(csv::to_double("1.5x", 4, "col"), doctest::Contains("row 4"), LoadError);
  CHECK(csv::to_double("-2.5e-3", 1, "c") == -2.5e-3);

  for (double v : {0.1, 1.0 / 3.0, -1e-300, 6.02214076e23, 0.0}) {
    CHECK(csv::to_double(csv::format(v), 1, "c") == v);
  }
}

TEST_CASE("key-value configuration") {
  KeyValueConfig cfg = KeyValueConfig::parse("# comment\nresponse = N\nnumeric = a, b ,c\ndepth=3\nflag = yes\n");
  CHECK(cfg.get_or("response", "") == "N");
  CHECK(cfg.list("numeric") == std::vector<std::string>{"a", "b", "c"});
  CHECK(cfg.integer("depth", 0) == 3);
  CHECK(cfg.flag("flag", false));
  CHECK(cfg.number("missing", 2.5) == 2.5);
  KeyValueConfig over;
  over.set("depth", "4");
  cfg.merge(over);
  CHECK(cfg.integer("depth", 0) == 4);
  CHECK_THROWS_AS(KeyValueConfig::parse("no equals sign here\n"), Error);
  CHECK_THROWS_AS(cfg.integer("response", 0), Error);
}

TEST_CASE("load_csv toy file with one categorical") {
  const auto path = temp_file("toy.csv", "N,E,age,reg\n1,0.5,30,b\n0,1,40,a\n2,0.25,50,c\n");
  CsvSchema s;
  s.response = "N";
  s.weight = "E";
  s.response_is_count = true;
  s.numeric = {"age"};
  s.categorical = {"reg"};
  const Dataset d = load_csv(path, s);
  CHECK(d.rows() == 3);
  REQUIRE(d.categorical.size() == 1);
  CHECK(d.categorical[0].levels == std::vector<std::string>{"a", "b", "c"});
  CHECK(d.categorical[0].codes == std::vector<int>{1, 0, 2});
  // Counts are stored per unit exposure.
  CHECK(d.y(0) == 2.0);
  CHECK(d.y(2) == 8.0);
  CHECK(d.w.dot(d.y) == 3.0);
  CHECK(d.x(1, 0) == 40.0);
}

TEST_CASE("load_csv errors name row and column") {
  std::string text = "N,E,age\n";
  for (int r = 1; r <= 9; ++r) text += "1," + std::string(r == 7 ? "0" : "1") + ",30\n";
  CsvSchema s;
  s.response = "N";
  s.weight = "E";
  s.numeric = {"age"};
  const auto bad_weight = temp_file("w0.csv", text);
  CHECK_THROWS_WITH_AS(load_csv(bad_weight, s), doctest::Contains("row 7"), LoadError);

  const auto bad_cell = temp_file("cell.csv", "N,E,age\n1,1,30\n1,1,abc\n");
  CHECK_THROWS_WITH_AS(load_csv(bad_cell, s), doctest::Contains("age"), LoadError);

  s.numeric = {"height"};
  CHECK_THROWS_WITH_AS(load_csv(bad_cell, s), doctest::Contains("height"), LoadError);
  CHECK_THROWS_AS(load_csv("/nonexistent/file.csv", s), LoadError);
}

TEST_CASE("load_csv cleaning: caps, ordinal levels and log transforms") {
  const auto path = temp_file("clean.csv", "N,E,area,dens\n7,2,C,100\n0,0.5,A,1\n");
  const KeyValueConfig cfg = KeyValueConfig::parse(
      "response = N\nweight = E\nresponse_is_count = true\nnumeric = area, dens\n"
      "ordinal.area = A,B,C\ncap.N = 4\ncap.E = 1\nlog = dens\n");
  const Dataset d = load_csv(path, CsvSchema::from_config(cfg));
  CHECK(d.w(0) == 1.0);
  CHECK(d.y(0) == 4.0);
  CHECK(d.x(0, 0) == 3.0);
  CHECK(d.x(1, 0) == 1.0);
  CHECK(d.x(0, 1) == doctest::Approx(std::log(100.0)));
}

TEST_CASE("onehot encoding") {
  Dataset d;
  d.y = Eigen::VectorXd::Zero(4);
  d.w = Eigen::VectorXd::Ones(4);
  d.x = Eigen::MatrixXd::Constant(4, 1, 2.0);
  d.x_names = {"num"};
  d.z = d.x;
  d.z_names = d.x_names;
  d.categorical.push_back({"reg", {"a", "b", "c"}, {1, 0, 2, 1}});
  const Dataset e = onehot_encode(d);
  CHECK(e.x.cols() == 4);
  CHECK(e.z.cols() == 4);
  CHECK(e.x_names == std::vector<std::string>{"num", "reg_a", "reg_b", "reg_c"});
  CHECK(e.x.row(0) == Eigen::RowVector4d(2.0, 0.0, 1.0, 0.0));
  REQUIRE(e.onehot_groups.size() == 1);
  const OneHotGroup& g = e.onehot_groups[0];
  for (Eigen::Index i = 0; i < 4; ++i) {
    CHECK(e.x(i, g.x_columns).sum() == 1.0);
    // Decoding the indicator recovers the level.
    int hot = -1;
    for (std::size_t l = 0; l < g.x_columns.size(); ++l) {
      if (e.x(i, g.x_columns[l]) == 1.0) hot = static_cast<int>(l);
    }
    CHECK(g.levels[static_cast<std::size_t>(hot)] == d.categorical[0].levels[static_cast<std::size_t>(d.categorical[0].codes[static_cast<std::size_t>(i)])]);
  }

  // Prediction-time encoding uses the training level set.
  Dataset later = d;
  later.categorical[0] = {"reg", {"c"}, {0, 0, 0, 0}};
  const Dataset f = onehot_encode(later, &e.onehot_groups);
  CHECK(f.x_names == e.x_names);
  CHECK(f.x(0, 3) == 1.0);
  later.categorical[0] = {"reg", {"a", "zz"}, {0, 0, 1, 0}};
  CHECK_THROWS_WITH_AS(onehot_encode(later, &e.onehot_groups), doctest::Contains("row 3: unseen level 'zz'"), LoadError);

  const Dataset s = select_modifiers(e, {"reg"});
  CHECK(s.z_names == std::vector<std::string>{"reg_a", "reg_b", "reg_c"});
  CHECK(s.onehot_groups[0].z_columns == std::vector<int>{0, 1, 2});
  CHECK(s.x.cols() == 4);
}

TEST_CASE("split sizes, determinism and coverage") {
  Dataset d;
  const Eigen::Index n = 10;
  d.y = Eigen::VectorXd::LinSpaced(n, 0.0, 9.0);
  d.w = Eigen::VectorXd::Ones(n);
  d.x = d.y;
  d.x_names = {"id"};
  d.z = d.x;
  d.z_names = d.x_names;
  const auto [a, b] = split(d, 0.5, 9);
  CHECK(a.rows() == 5);
  CHECK(b.rows() == 5);
  const auto [a2, b2] = split(d, 0.5, 9);
  CHECK(a.y == a2.y);
  std::set<double> seen;
  for (Eigen::Index i = 0; i < a.rows(); ++i) seen.insert(a.y(i));
  for (Eigen::Index i = 0; i < b.rows(); ++i) seen.insert(b.y(i));
  CHECK(seen.size() == 10u);
  for (Eigen::Index i = 1; i < a.rows(); ++i) CHECK(a.y(i - 1) < a.y(i));

  const Eigen::Index pick[] = {2, 7};
  const auto [c, e] = split_by_index(d, pick);
  CHECK(c.y == Eigen::Vector2d(2.0, 7.0));
  CHECK(e.rows() == 8);

  const auto path = temp_file("idx.txt", "2\n7\n\n");
  CHECK(read_index_file(path) == std::vector<Eigen::Index>{2, 7});
}

TEST_CASE("scaling") {
  Eigen::MatrixXd m(4, 3);
  m << 1, 0, 5,  //
      2, 1, 5,   //
      3, 0, 5,   //
      4, 1, 5;
  const Scaling s = fit_scaling(m, {1});
  CHECK(s.mean(0) == 2.5);
  CHECK(s.sd(0) == doctest::Approx(std::sqrt(1.25)));
  CHECK(s.mean(1) == 0.0);
  CHECK(s.sd(1) == 1.0);
  CHECK(s.sd(2) == 1.0);
  const Eigen::MatrixXd t = s.apply(m);
  CHECK(std::abs(t.col(0).mean()) < 1e-15);
  CHECK(t.col(1) == m.col(1));
  const Eigen::VectorXd r = s.apply_row(m.row(2));
  CHECK(r.isApprox(t.row(2).transpose()));
  CHECK(s == s);
  CHECK(!(s == Scaling::identity(3)));
}

TEST_CASE("dataset validation") {
  Dataset d;
  d.y = Eigen::VectorXd::Zero(2);
  d.w = Eigen::VectorXd::Ones(2);
  d.x = Eigen::MatrixXd::Zero(2, 1);
  d.x_names = {"a"};
  d.z = d.x;
  d.z_names = d.x_names;
  CHECK_NOTHROW(d.validate());
  d.w(1) = 0.0;
  CHECK_THROWS_AS(d.validate(), ContractError);
  d.w(1) = 1.0;
  d.x(0, 0) = std::nan("");
  CHECK_THROWS_AS(d.validate(), ContractError);
}
