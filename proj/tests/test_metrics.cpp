#include <catch2/catch_amalgamated.hpp>

#include "psnrlab/metrics.hpp"
#include "psnrlab/rng.hpp"

using namespace psnrlab;

TEST_CASE("pair_distance canonical values") {
  Eigen::VectorXd e1 = Eigen::VectorXd::Zero(3), e2 = Eigen::VectorXd::Zero(3);
  e1(0) = 1.0;
  e2(1) = 1.0;
  REQUIRE(pair_distance(e1, e1) == 0.0);
  REQUIRE(pair_distance(e1, e2) == Catch::Approx(std::sqrt(2.0) / 2.0));
  REQUIRE(pair_distance(e1, Eigen::VectorXd(-e1)) == Catch::Approx(1.0));
  REQUIRE_THROWS_AS(pair_distance(e1, Eigen::VectorXd::Zero(3)), NumericError);
}

TEST_CASE("pair_distance is scale invariant and bounded") {
  RngStream rng(1, "pd");
  for (int t = 0; t < 100; ++t) {
    Eigen::VectorXd x = rng.normal_matrix(5, 1).col(0);
    Eigen::VectorXd y = rng.normal_matrix(5, 1).col(0);
    double d = pair_distance(x, y);
    REQUIRE(d >= 0.0);
    REQUIRE(d <= 1.0 + 1e-12);
    REQUIRE(pair_distance(3.7 * x, 0.01 * y) == Catch::Approx(d).margin(1e-12));
    REQUIRE(pair_distance(y, x) == Catch::Approx(d).margin(1e-15));
  }
}

TEST_CASE("smv zero for identical rows, sqrt(2)/2 for orthogonal pair") {
  Mat same = Mat::Ones(4, 3);
  std::vector<int> all{0, 1, 2, 3};
  REQUIRE(smv(same, all) == 0.0);

  Mat ortho = Mat::Zero(2, 2);
  ortho(0, 0) = 2.0;
  ortho(1, 1) = 5.0;
  REQUIRE(smv(ortho, {0, 1}) == Catch::Approx(std::sqrt(2.0) / 2.0));
}

TEST_CASE("smv matches ordered-pair brute force on random matrices") {
  RngStream rng(2, "smv");
  for (int t = 0; t < 20; ++t) {
    int n = 3 + static_cast<int>(rng.uniform() * 8);
    Mat X = rng.normal_matrix(n, 4);
    std::vector<int> subset;
    for (int v = 0; v < n; ++v) subset.push_back(v);
    double brute = 0.0;
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b)
        if (a != b) brute += pair_distance(X.row(a), X.row(b));
    brute /= static_cast<double>(n) * (n - 1);
    REQUIRE(smv(X, subset) == Catch::Approx(brute).margin(1e-12));
  }
}

TEST_CASE("smv skips zero rows and reports the count") {
  Mat X = Mat::Zero(4, 2);
  X.row(0) << 1.0, 0.0;
  X.row(2) << 0.0, 1.0;
  int skipped = -1;
  double v = smv(X, {0, 1, 2, 3}, &skipped);
  REQUIRE(skipped == 2);
  REQUIRE(v == Catch::Approx(std::sqrt(2.0) / 2.0));
  REQUIRE_THROWS_AS(smv(Mat::Zero(3, 2), {0, 1, 2}), ContractError);
}

TEST_CASE("smv is invariant to per-row positive rescaling") {
  RngStream rng(3, "smv-scale");
  Mat X = rng.normal_matrix(6, 3);
  Mat Y = X;
  for (int i = 0; i < 6; ++i) Y.row(i) *= rng.uniform(0.1, 10.0);
  std::vector<int> all{0, 1, 2, 3, 4, 5};
  REQUIRE(smv(Y, all) == Catch::Approx(smv(X, all)).margin(1e-12));
}

TEST_CASE("group_smv skips isolated nodes and singleton groups") {
  RngStream rng(4, "gsmv");
  Mat X = rng.normal_matrix(6, 3);
  //         group:  0  0  1  -1  2  1
  std::vector<int> groups{0, 0, 1, -1, 2, 1};
  auto out = group_smv(X, groups);
  REQUIRE(out.size() == 2);  // group 2 has one member, group -1 skipped
  REQUIRE(out[0].group == 0);
  REQUIRE(out[0].size == 2);
  REQUIRE(out[1].group == 1);
  REQUIRE(out[0].value == Catch::Approx(pair_distance(X.row(0), X.row(1))));
}

TEST_CASE("oscillation basics") {
  Mat X(3, 2);
  X << 1, 5, 1, 7, 1, 6;
  REQUIRE(oscillation(X) == 2.0);
  REQUIRE(oscillation(Mat::Ones(4, 3)) == 0.0);
  REQUIRE(oscillation(Mat(0, 0)) == 0.0);
}

TEST_CASE("classification_accuracy with tie toward lower class") {
  Mat logits(3, 2);
  logits << 1.0, 1.0, 0.0, 2.0, 5.0, -1.0;
  std::vector<int> labels{0, 1, 1};
  REQUIRE(classification_accuracy(logits, labels, {0, 1, 2}) ==
          Catch::Approx(2.0 / 3.0));
  REQUIRE_THROWS_AS(classification_accuracy(logits, labels, {}), ContractError);
}

TEST_CASE("prop1 traces are non-increasing and product beats raw logging") {
  Graph g = build_graph({{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 0}, {0, 2}}, 5);
  Prop1Result res = prop1_experiment(g, 25, 0.5, 7);
  auto non_increasing = [](const std::vector<double>& v) {
    for (std::size_t i = 1; i < v.size(); ++i)
      if (v[i] > v[i - 1] + 1e-12) return false;
    return true;
  };
  REQUIRE(res.product.oscillation_values.size() == 25);
  REQUIRE(non_increasing(res.product.oscillation_values));
  REQUIRE(non_increasing(res.power.oscillation_values));
  REQUIRE(res.product.oscillation_values.back() <
          0.5 * res.product.oscillation_values.front());
  REQUIRE(res.product.geometric_mean_contraction() < 1.0);
  REQUIRE(res.raw.oscillation_values.size() == 25);
}

TEST_CASE("prop1 rejects disconnected graphs and bad epsilon") {
  Graph g = build_graph({{0, 1}}, 3);
  REQUIRE_THROWS_AS(prop1_experiment(g, 5, 0.5, 1), ContractError);
  Graph ring = build_graph({{0, 1}, {1, 2}, {2, 0}}, 3);
  REQUIRE_THROWS_AS(prop1_experiment(ring, 5, 0.0, 1), ConfigError);
  REQUIRE_THROWS_AS(prop1_experiment(ring, 5, 1.0, 1), ConfigError);
}

TEST_CASE("prop1 is deterministic per seed") {
  Graph ring = build_graph({{0, 1}, {1, 2}, {2, 3}, {3, 0}}, 4);
  Prop1Result a = prop1_experiment(ring, 10, 0.5, 42);
  Prop1Result b = prop1_experiment(ring, 10, 0.5, 42);
  REQUIRE(a.product.oscillation_values == b.product.oscillation_values);
  REQUIRE(a.power.oscillation_values == b.power.oscillation_values);
}

TEST_CASE("spearman perfect, inverted and tied series") {
  std::vector<double> x{1, 2, 3, 4};
  REQUIRE(spearman(x, {10, 20, 30, 40}) == Catch::Approx(1.0));
  REQUIRE(spearman(x, {4, 3, 2, 1}) == Catch::Approx(-1.0));
  REQUIRE(spearman(x, {5, 5, 5, 5}) == 0.0);
  // monotone transform invariance
  std::vector<double> y{0.1, 7.0, 7.5, 100.0};
  REQUIRE(spearman(x, y) == Catch::Approx(1.0));
  REQUIRE_THROWS_AS(spearman({1.0}, {2.0}), ContractError);
}

TEST_CASE("spearman handles ties with average ranks") {
  // x has a tie; compare against hand-computed rho
  std::vector<double> x{1, 2, 2, 4};
  std::vector<double> y{1, 2, 3, 4};
  // ranks x: 1, 2.5, 2.5, 4; ranks y: 1,2,3,4
  double rho = spearman(x, y);
  REQUIRE(rho == Catch::Approx(0.9486832980505138).margin(1e-12));
}
