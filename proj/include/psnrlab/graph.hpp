#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "psnrlab/errors.hpp"
#include "psnrlab/rng.hpp"

namespace psnrlab {

using Mat = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Undirected simple graph. Self-loops are never stored; normalization adds
/// them on the fly.
struct Graph {
  int n = 0;
  std::vector<std::pair<int, int>> edges;  // i < j, deduplicated
  std::vector<int> degree;                 // no self-loop counted
  std::vector<std::vector<int>> adj;       // sorted neighbor lists
  int dropped_self_loops = 0;

  bool has_edge(int i, int j) const {
    const auto& a = adj[i];
    return std::binary_search(a.begin(), a.end(), j);
  }

  bool connected() const {
    if (n == 0) return true;
    std::vector<char> seen(n, 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    int count = 1;
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      for (int w : adj[v])
        if (!seen[w]) {
          seen[w] = 1;
          ++count;
          stack.push_back(w);
        }
    }
    return count == n;
  }
};

inline Graph build_graph(const std::vector<std::pair<int, int>>& edge_list, int n) {
  if (n < 0) throw MalformedInputError("build_graph: negative node count");
  Graph g;
  g.n = n;
  std::set<std::pair<int, int>> dedup;
  for (auto [i, j] : edge_list) {
    if (i < 0 || j < 0 || i >= n || j >= n) {
      throw MalformedInputError("build_graph: edge (" + std::to_string(i) + "," +
                                std::to_string(j) + ") has endpoint outside [0," +
                                std::to_string(n) + ")");
    }
    if (i == j) {
      ++g.dropped_self_loops;
      continue;
    }
    dedup.emplace(std::min(i, j), std::max(i, j));
  }
  g.edges.assign(dedup.begin(), dedup.end());
  g.degree.assign(n, 0);
  g.adj.assign(n, {});
  for (auto [i, j] : g.edges) {
    g.adj[i].push_back(j);
    g.adj[j].push_back(i);
    ++g.degree[i];
    ++g.degree[j];
  }
  for (auto& a : g.adj) std::sort(a.begin(), a.end());
  return g;
}

enum class NormKind { symmetric, random_walk };

/// Self-loop-augmented propagation operator: D~^{-1/2} A~ D~^{-1/2} or D~^{-1} A~.
struct PropagationOperator {
  NormKind kind = NormKind::symmetric;
  SpMat matrix;

  Mat dense() const { return Mat(matrix); }
};

inline PropagationOperator normalize(const Graph& g, NormKind kind) {
  std::vector<double> dtilde(g.n);
  for (int i = 0; i < g.n; ++i) dtilde[i] = g.degree[i] + 1.0;

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(2 * g.edges.size() + g.n);
  auto weight = [&](int i, int j) {
    if (kind == NormKind::symmetric) return 1.0 / std::sqrt(dtilde[i] * dtilde[j]);
    return 1.0 / dtilde[i];
  };
  for (int i = 0; i < g.n; ++i) trips.emplace_back(i, i, weight(i, i));
  for (auto [i, j] : g.edges) {
    trips.emplace_back(i, j, weight(i, j));
    trips.emplace_back(j, i, weight(j, i));
  }
  PropagationOperator op;
  op.kind = kind;
  op.matrix.resize(g.n, g.n);
  op.matrix.setFromTriplets(trips.begin(), trips.end());
  op.matrix.makeCompressed();
  return op;
}

/// Degree grouping: degree in [2^i, 2^{i+1}) -> group i; isolated nodes get -1.
inline std::vector<int> degree_groups(const Graph& g) {
  std::vector<int> groups(g.n);
  for (int v = 0; v < g.n; ++v) {
    int d = g.degree[v];
    if (d == 0) {
      groups[v] = -1;
      continue;
    }
    int i = 0;
    while ((1 << (i + 1)) <= d) ++i;
    groups[v] = i;
  }
  return groups;
}

struct FeatureMatrix {
  Mat values;  // n x d, row i belongs to node i
  int dim() const { return static_cast<int>(values.cols()); }
};

struct LabeledDataset {
  Graph graph;
  FeatureMatrix features;
  std::vector<int> labels;
  int num_classes = 0;
};

/// Stochastic block model with class-mean-shifted Gaussian features.
/// Feature axis 0 carries the shift (mean = label * feat_shift), remaining
/// axes are standard normal.
inline LabeledDataset gen_sbm(int blocks, int per_block, double p_in, double p_out,
                              int feat_dim, double feat_shift, std::uint64_t seed) {
  if (!(p_out >= 0.0 && p_out <= p_in && p_in <= 1.0))
    throw ConfigError("gen_sbm: need 0 <= p_out <= p_in <= 1");
  if (blocks < 1 || per_block < 1 || feat_dim < 1)
    throw ConfigError("gen_sbm: counts must be positive");

  const int n = blocks * per_block;
  LabeledDataset ds;
  ds.num_classes = blocks;
  ds.labels.resize(n);
  for (int v = 0; v < n; ++v) ds.labels[v] = v / per_block;

  RngStream edge_rng(seed, "sbm-edges");
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double p = (ds.labels[i] == ds.labels[j]) ? p_in : p_out;
      if (edge_rng.uniform() < p) edges.emplace_back(i, j);
    }
  ds.graph = build_graph(edges, n);

  RngStream feat_rng(seed, "sbm-features");
  ds.features.values = feat_rng.normal_matrix(n, feat_dim);
  for (int v = 0; v < n; ++v) ds.features.values(v, 0) += feat_shift * ds.labels[v];
  return ds;
}

namespace detail {

inline std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline double parse_double(const std::string& s, const std::string& file, int line) {
  const char* p = s.c_str();
  char* end = nullptr;
  double v = std::strtod(p, &end);
  while (end && *end == ' ') ++end;
  if (end == p || (end && *end != '\0'))
    throw MalformedInputError(file + ":" + std::to_string(line) +
                              ": non-numeric cell '" + s + "'");
  return v;
}

}  // namespace detail

/// Reads the three-file dataset format: edge list "i<TAB>j", CSV features
/// (one row per node), one label per line.
inline LabeledDataset load_dataset(const std::string& edge_path,
                                   const std::string& feature_path,
                                   const std::string& label_path) {
  std::ifstream fs(feature_path);
  if (!fs) throw MalformedInputError("cannot open " + feature_path);
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(fs, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
      row.push_back(detail::parse_double(cell, feature_path, lineno));
    if (!rows.empty() && row.size() != rows.front().size())
      throw MalformedInputError(feature_path + ":" + std::to_string(lineno) +
                                ": inconsistent column count");
    rows.push_back(std::move(row));
  }
  const int n = static_cast<int>(rows.size());
  if (n == 0) throw MalformedInputError(feature_path + ": empty feature file");

  std::ifstream ls(label_path);
  if (!ls) throw MalformedInputError("cannot open " + label_path);
  std::vector<int> labels;
  lineno = 0;
  while (std::getline(ls, line)) {
    ++lineno;
    if (line.empty()) continue;
    labels.push_back(static_cast<int>(detail::parse_double(line, label_path, lineno)));
  }
  if (static_cast<int>(labels.size()) != n)
    throw MalformedInputError(label_path + ": " + std::to_string(labels.size()) +
                              " labels for " + std::to_string(n) + " feature rows");

  std::ifstream es(edge_path);
  if (!es) throw MalformedInputError("cannot open " + edge_path);
  std::vector<std::pair<int, int>> edges;
  lineno = 0;
  while (std::getline(es, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    long i = -1, j = -1;
    if (!(ss >> i >> j))
      throw MalformedInputError(edge_path + ":" + std::to_string(lineno) +
                                ": expected 'i<TAB>j'");
    if (i < 0 || j < 0 || i >= n || j >= n)
      throw MalformedInputError(edge_path + ":" + std::to_string(lineno) +
                                ": unknown node id");
    edges.emplace_back(static_cast<int>(i), static_cast<int>(j));
  }

  LabeledDataset ds;
  ds.graph = build_graph(edges, n);
  ds.features.values.resize(n, static_cast<int>(rows.front().size()));
  for (int i = 0; i < n; ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      ds.features.values(i, static_cast<int>(j)) = rows[i][j];
  ds.labels = labels;
  ds.num_classes = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  return ds;
}

inline void save_dataset(const LabeledDataset& ds, const std::string& edge_path,
                         const std::string& feature_path, const std::string& label_path) {
  std::ofstream es(edge_path);
  for (auto [i, j] : ds.graph.edges) es << i << '\t' << j << '\n';
  std::ofstream fs(feature_path);
  for (int i = 0; i < ds.graph.n; ++i) {
    for (int j = 0; j < ds.features.dim(); ++j) {
      if (j) fs << ',';
      fs << detail::fmt_double(ds.features.values(i, j));
    }
    fs << '\n';
  }
  std::ofstream ls(label_path);
  for (int y : ds.labels) ls << y << '\n';
}

}  // namespace psnrlab
