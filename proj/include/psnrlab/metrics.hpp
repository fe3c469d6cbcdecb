#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "psnrlab/errors.hpp"
#include "psnrlab/graph.hpp"

namespace psnrlab {

/// Normalized Euclidean distance 0.5 * || x/|x| - y/|y| ||_2, in [0,1].
inline double pair_distance(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  double nx = x.norm(), ny = y.norm();
  if (nx == 0.0 || ny == 0.0)
    throw NumericError("pair_distance: undefined for a zero vector");
  return 0.5 * (x / nx - y / ny).norm();
}

/// Mean pairwise normalized distance over the subset; zero rows are skipped
/// with a count reported through *skipped.
inline double smv(const Mat& X, const std::vector<int>& subset, int* skipped = nullptr) {
  std::vector<int> keep;
  int zero_rows = 0;
  for (int v : subset) {
    if (X.row(v).norm() == 0.0)
      ++zero_rows;
    else
      keep.push_back(v);
  }
  if (skipped) *skipped = zero_rows;
  if (keep.size() < 2) throw ContractError("smv: need at least 2 nonzero rows");

  double acc = 0.0;
  for (std::size_t a = 0; a < keep.size(); ++a)
    for (std::size_t b = a + 1; b < keep.size(); ++b)
      acc += pair_distance(X.row(keep[a]), X.row(keep[b]));
  // ordered-pair average; each unordered pair counts twice
  double n = static_cast<double>(keep.size());
  return 2.0 * acc / (n * (n - 1.0));
}

struct GroupSmv {
  int group = 0;
  double value = 0.0;
  int size = 0;
};

/// SMV per degree group; groups of size < 2 (and group -1) are skipped.
inline std::vector<GroupSmv> group_smv(const Mat& X, const std::vector<int>& groups) {
  std::map<int, std::vector<int>> members;
  for (std::size_t v = 0; v < groups.size(); ++v)
    if (groups[v] >= 0) members[groups[v]].push_back(static_cast<int>(v));
  std::vector<GroupSmv> out;
  for (auto& [g, nodes] : members) {
    if (nodes.size() < 2) continue;
    GroupSmv row;
    row.group = g;
    row.size = static_cast<int>(nodes.size());
    row.value = smv(X, nodes);
    out.push_back(row);
  }
  return out;
}

/// Max over columns of (column max - column min); zero iff all rows identical.
inline double oscillation(const Mat& X) {
  if (X.rows() == 0 || X.cols() == 0) return 0.0;
  return (X.colwise().maxCoeff() - X.colwise().minCoeff()).maxCoeff();
}

/// Fraction of masked nodes whose argmax logit matches the label; ties break
/// toward the lower class index.
inline double classification_accuracy(const Mat& logits, const std::vector<int>& labels,
                                      const std::vector<int>& mask_nodes) {
  if (mask_nodes.empty()) throw ContractError("classification_accuracy: empty mask");
  int hits = 0;
  for (int v : mask_nodes) {
    int best = 0;
    for (int c = 1; c < logits.cols(); ++c)
      if (logits(v, c) > logits(v, best)) best = c;
    if (best == labels[v]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(mask_nodes.size());
}

/// Oscillation trace of one matrix-product family.
struct ConvergenceTrace {
  std::string family;
  std::uint64_t seed = 0;
  std::vector<double> oscillation_values;    // index k-1 holds osc after k steps
  std::vector<double> contraction;           // per-step ratio osc_k / osc_{k-1}

  double geometric_mean_contraction() const {
    double acc = 0.0;
    int cnt = 0;
    for (double c : contraction)
      if (c > 0.0) {
        acc += std::log(c);
        ++cnt;
      }
    return cnt == 0 ? 0.0 : std::exp(acc / cnt);
  }
};

struct Prop1Result {
  ConvergenceTrace product;    // row-normalized Lambda_j A~ products
  ConvergenceTrace power;      // plain random-walk powers
  ConvergenceTrace raw;        // sub-stochastic Lambda_j N_rw, logged only
};

/// Convergence-rate experiment: compares products of random per-layer
/// row-stochastic matrices (support exactly A~, entries bounded away from 0)
/// against plain random-walk powers, sharing one random feature matrix.
inline Prop1Result prop1_experiment(const Graph& g, int k_max, double eps_low,
                                    std::uint64_t seed, int feat_dim = 4) {
  if (!(eps_low > 0.0 && eps_low < 1.0))
    throw ConfigError("prop1_experiment: eps_low must be in (0,1)");
  if (!g.connected())
    throw ContractError("prop1_experiment: graph must be connected");

  PropagationOperator rw = normalize(g, NormKind::random_walk);
  Mat Nrw = rw.dense();
  Mat Atilde = Mat::Zero(g.n, g.n);
  for (int i = 0; i < g.n; ++i) {
    Atilde(i, i) = 1.0;
    for (int j : g.adj[i]) Atilde(i, j) = 1.0;
  }

  RngStream lam_rng(seed, "prop1-lambda");
  RngStream x_rng(seed, "prop1-x");
  Mat X = x_rng.normal_matrix(g.n, feat_dim);

  Prop1Result res;
  res.product.family = "product";
  res.power.family = "power";
  res.raw.family = "raw-substochastic";
  res.product.seed = res.power.seed = res.raw.seed = seed;

  Mat Xprod = X, Xpow = X, Xraw = X;
  double prev_prod = oscillation(X), prev_pow = prev_prod, prev_raw = prev_prod;
  for (int k = 1; k <= k_max; ++k) {
    Eigen::VectorXd lam(g.n);
    for (int i = 0; i < g.n; ++i) lam(i) = lam_rng.uniform(eps_low, 1.0);

    // Row-normalized Lambda_j A~: row-stochastic with support exactly A~.
    Mat S = lam.asDiagonal() * Atilde;
    for (int i = 0; i < g.n; ++i) S.row(i) /= S.row(i).sum();
    Xprod = S * Xprod;
    Xpow = Nrw * Xpow;
    Xraw = (lam.asDiagonal() * Nrw) * Xraw;

    auto log_step = [](ConvergenceTrace& tr, const Mat& Xk, double& prev) {
      double o = oscillation(Xk);
      tr.oscillation_values.push_back(o);
      tr.contraction.push_back(prev > 0.0 ? o / prev : 0.0);
      prev = o;
    };
    log_step(res.product, Xprod, prev_prod);
    log_step(res.power, Xpow, prev_pow);
    log_step(res.raw, Xraw, prev_raw);
  }
  return res;
}

/// Spearman rank correlation; average ranks for ties.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw ContractError("spearman: need two equal-length series");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
      for (std::size_t t = i; t <= j; ++t) r[order[t]] = avg;
      i = j + 1;
    }
    return r;
  };
  std::vector<double> rx = ranks(x), ry = ranks(y);
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= rx.size();
  my /= ry.size();
  double num = 0, dx = 0, dy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - my) * (ry[i] - my);
  }
  if (dx == 0 || dy == 0) return 0.0;
  return num / std::sqrt(dx * dy);
}

}  // namespace psnrlab
