#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "psnrlab/metrics.hpp"
#include "psnrlab/model.hpp"

namespace psnrlab {

struct SplitPolicy {
  enum class Kind { per_class, fractional } kind = Kind::per_class;
  int n_train = 20, n_val = 30, n_test = 50;          // per-class counts
  double f_train = 0.6, f_val = 0.2, f_test = 0.2;    // fractional
  bool missing_features = false;
};

struct Split {
  std::vector<char> train, val, test;  // disjoint boolean masks
  bool missing_features = false;

  std::vector<int> nodes(const std::vector<char>& mask) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) out.push_back(static_cast<int>(i));
    return out;
  }
  std::vector<int> train_nodes() const { return nodes(train); }
  std::vector<int> val_nodes() const { return nodes(val); }
  std::vector<int> test_nodes() const { return nodes(test); }
};

inline Split make_split(const std::vector<int>& labels, const SplitPolicy& policy,
                        std::uint64_t seed) {
  const int n = static_cast<int>(labels.size());
  Split s;
  s.train.assign(n, 0);
  s.val.assign(n, 0);
  s.test.assign(n, 0);
  s.missing_features = policy.missing_features;
  RngStream rng(seed, "split");

  std::map<int, std::vector<int>> by_class;
  for (int v = 0; v < n; ++v) by_class[labels[v]].push_back(v);

  if (policy.kind == SplitPolicy::Kind::per_class) {
    for (auto& [cls, nodes] : by_class) {
      if (static_cast<int>(nodes.size()) < policy.n_train + policy.n_val + policy.n_test)
        throw ConfigError("make_split: class " + std::to_string(cls) + " has only " +
                          std::to_string(nodes.size()) + " nodes");
      rng.shuffle(nodes);
      int i = 0;
      for (int c = 0; c < policy.n_train; ++c) s.train[nodes[i++]] = 1;
      for (int c = 0; c < policy.n_val; ++c) s.val[nodes[i++]] = 1;
      for (int c = 0; c < policy.n_test; ++c) s.test[nodes[i++]] = 1;
    }
  } else {
    for (auto& [cls, nodes] : by_class) {
      rng.shuffle(nodes);
      int nt = static_cast<int>(policy.f_train * nodes.size());
      int nv = static_cast<int>(policy.f_val * nodes.size());
      if (nt < 1) throw ConfigError("make_split: class " + std::to_string(cls) +
                                    " too small for fractional split");
      int i = 0;
      for (int c = 0; c < nt; ++c) s.train[nodes[i++]] = 1;
      for (int c = 0; c < nv; ++c) s.val[nodes[i++]] = 1;
      while (i < static_cast<int>(nodes.size())) s.test[nodes[i++]] = 1;
    }
  }
  return s;
}

/// Zeroes the feature rows of validation and test nodes; idempotent.
inline Mat apply_missing_features(const Mat& features, const Split& split) {
  Mat out = features;
  for (Eigen::Index v = 0; v < out.rows(); ++v)
    if (split.val[static_cast<std::size_t>(v)] || split.test[static_cast<std::size_t>(v)])
      out.row(v).setZero();
  return out;
}

struct Hyper {
  double lr = 0.01;
  double dropout = 0.5;
  double weight_decay = 5e-4;
  int hidden = 128;
  int max_epochs = 500;
  int patience = 100;
  int eval_draws = 5;

  void validate() const {
    if (lr <= 0 || dropout < 0 || dropout >= 1 || weight_decay < 0 || hidden < 1 ||
        max_epochs < 1 || patience < 1 || eval_draws < 1)
      throw ConfigError("Hyper: invalid value");
    if (patience > max_epochs) throw ConfigError("Hyper: patience > max_epochs");
  }
};

struct LayerCoeffStat {
  int layer = 0;
  int group = 0;
  double mean_mu = 0.0, mean_sigma = 0.0;
};

struct TrainReport {
  std::vector<double> train_loss;      // per epoch
  std::vector<double> val_accuracy;    // per epoch
  int best_epoch = -1;
  double best_val_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<double> layer_smv;       // per layer, at the best model
  std::vector<LayerCoeffStat> coeff_stats;  // psnr only
  std::optional<std::string> error;
};

namespace detail {

inline double evaluate(Model& model, const Mat& features, const Graph& graph,
                       const PropagationOperator& N, const SpMat& mean_op,
                       const std::vector<int>& labels, const std::vector<int>& mask_nodes,
                       std::uint64_t seed, int eval_draws,
                       std::vector<Mat>* layer_values = nullptr,
                       std::vector<PsnrLayerTrace>* traces = nullptr) {
  const bool stochastic = model.config.residual.variant == ResidualVariant::psnr;
  const int draws = stochastic ? eval_draws : 1;
  double acc = 0.0;
  for (int d = 0; d < draws; ++d) {
    Tape tape;
    RngStream noise(seed + static_cast<std::uint64_t>(d), "eval-noise");
    ForwardOptions opt;
    opt.train = false;
    opt.noise = NoiseMode::sample;
    opt.noise_rng = &noise;
    ForwardResult fr = model_forward(tape, model, features, graph, N, mean_op, opt);
    acc += classification_accuracy(fr.logits.value(), labels, mask_nodes);
    if (d == 0 && layer_values) *layer_values = fr.layer_values;
    if (d == 0 && traces) *traces = fr.traces;
  }
  return acc / draws;
}

inline std::vector<int> degree_quartile_groups(const Graph& g) {
  std::vector<int> order(g.n);
  for (int i = 0; i < g.n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return g.degree[a] < g.degree[b]; });
  std::vector<int> groups(g.n);
  for (int i = 0; i < g.n; ++i)
    groups[order[i]] = std::min(3, 4 * i / std::max(1, g.n));
  return groups;
}

}  // namespace detail

/// Per-layer, per-degree-quartile means of the learned posterior parameters.
inline std::vector<LayerCoeffStat> log_coefficients(
    const std::vector<PsnrLayerTrace>& traces, const Graph& graph) {
  if (traces.empty()) throw ContractError("log_coefficients: not a psnr model");
  std::vector<int> groups = detail::degree_quartile_groups(graph);
  std::vector<LayerCoeffStat> out;
  for (const auto& tr : traces) {
    std::array<double, 4> mu_sum{}, sig_sum{};
    std::array<int, 4> count{};
    for (int v = 0; v < graph.n; ++v) {
      int g = groups[v];
      mu_sum[g] += tr.mu(v);
      sig_sum[g] += tr.sigma(v);
      ++count[g];
    }
    for (int g = 0; g < 4; ++g) {
      if (count[g] == 0) continue;
      LayerCoeffStat st;
      st.layer = tr.layer;
      st.group = g;
      st.mean_mu = mu_sum[g] / count[g];
      st.mean_sigma = sig_sum[g] / count[g];
      out.push_back(st);
    }
  }
  return out;
}

/// Full-batch training with early stopping on validation accuracy; restores
/// the best-validation parameters before evaluating on test.
inline TrainReport train(const ModelConfig& config, const LabeledDataset& ds,
                         const Split& split, const Hyper& hyper, std::uint64_t seed) {
  hyper.validate();
  ModelConfig cfg = config;
  cfg.dropout = hyper.dropout;
  cfg.hidden = hyper.hidden;
  cfg.classes = ds.num_classes;
  cfg.seed = seed;
  cfg.validate();

  Mat features = split.missing_features ? apply_missing_features(ds.features.values, split)
                                        : ds.features.values;
  PropagationOperator N = normalize(ds.graph, NormKind::symmetric);
  SpMat mean_op = neighbor_mean_operator(ds.graph);

  Model model = build_model(cfg, ds.features.dim());
  std::vector<AdamState> adam(model.params().size());
  for (auto& st : adam) {
    st.lr = hyper.lr;
    st.weight_decay = hyper.weight_decay;
  }

  std::vector<int> train_nodes = split.train_nodes();
  std::vector<int> val_nodes = split.val_nodes();
  std::vector<int> test_nodes = split.test_nodes();
  if (train_nodes.empty()) throw ConfigError("train: empty training mask");

  TrainReport report;
  RngStream drop_rng(seed, "dropout");
  RngStream noise_rng(seed, "train-noise");

  std::vector<Mat> best_params;
  int epochs_since_best = 0;
  for (int epoch = 0; epoch < hyper.max_epochs; ++epoch) {
    Tape tape;
    ForwardOptions opt;
    opt.train = true;
    opt.noise = NoiseMode::sample;
    opt.dropout_rng = &drop_rng;
    opt.noise_rng = &noise_rng;
    ForwardResult fr;
    try {
      fr = model_forward(tape, model, features, ds.graph, N, mean_op, opt);
      Tensor loss = tape.masked_nll(tape.log_softmax_rows(fr.logits), ds.labels, train_nodes);
      report.train_loss.push_back(loss.value()(0, 0));
      tape.backward(loss);
    } catch (const NumericError& e) {
      throw NumericError("train: divergence at epoch " + std::to_string(epoch) + ": " +
                         e.what());
    }
    auto params = model.params();
    for (std::size_t p = 0; p < params.size(); ++p)
      adam_step(*params[p], fr.param_tensors[p].grad(), adam[p]);

    double val_acc =
        val_nodes.empty()
            ? 1.0
            : detail::evaluate(model, features, ds.graph, N, mean_op, ds.labels, val_nodes,
                               seed, hyper.eval_draws);
    report.val_accuracy.push_back(val_acc);
    if (report.best_epoch < 0 || val_acc > report.best_val_accuracy) {
      report.best_epoch = epoch;
      report.best_val_accuracy = val_acc;
      best_params.clear();
      for (Mat* p : params) best_params.push_back(*p);
      epochs_since_best = 0;
    } else if (++epochs_since_best >= hyper.patience) {
      break;
    }
  }

  {
    auto params = model.params();
    for (std::size_t p = 0; p < params.size(); ++p) *params[p] = best_params[p];
  }

  std::vector<Mat> layer_values;
  std::vector<PsnrLayerTrace> traces;
  report.test_accuracy =
      test_nodes.empty()
          ? 0.0
          : detail::evaluate(model, features, ds.graph, N, mean_op, ds.labels, test_nodes,
                             seed, hyper.eval_draws, &layer_values, &traces);
  for (const Mat& H : layer_values) {
    std::vector<int> all(ds.graph.n);
    for (int i = 0; i < ds.graph.n; ++i) all[i] = i;
    int skipped = 0;
    double v = 0.0;
    try {
      v = smv(H, all, &skipped);
    } catch (const ContractError&) {
      v = 0.0;  // fully collapsed layer
    }
    report.layer_smv.push_back(v);
  }
  if (!traces.empty()) report.coeff_stats = log_coefficients(traces, ds.graph);
  return report;
}

/// Runs the learning-rate grid and keeps the best validation accuracy; ties
/// break toward the lower rate.
inline std::pair<TrainReport, double> train_best_lr(
    const ModelConfig& config, const LabeledDataset& ds, const Split& split,
    const Hyper& hyper, std::uint64_t seed,
    const std::vector<double>& lr_grid = {0.001, 0.01}) {
  std::vector<double> grid = lr_grid;
  std::sort(grid.begin(), grid.end());
  TrainReport best;
  double best_lr = grid.front();
  bool first = true;
  for (double lr : grid) {
    Hyper h = hyper;
    h.lr = lr;
    TrainReport rep = train(config, ds, split, h, seed);
    if (first || rep.best_val_accuracy > best.best_val_accuracy) {
      best = std::move(rep);
      best_lr = lr;
      first = false;
    }
  }
  return {best, best_lr};
}

struct SweepRow {
  std::string residual;
  int depth = 0;
  std::uint64_t seed = 0;
  double test_accuracy = 0.0;
  double final_smv = 0.0;
  std::string error;  // empty on success
};

inline std::string residual_name(const ResidualKind& k) {
  switch (k.variant) {
    case ResidualVariant::none: return "none";
    case ResidualVariant::res: return "res";
    case ResidualVariant::initial_res: return "init-res";
    case ResidualVariant::dense: return "dense";
    case ResidualVariant::jk: return "jk";
    case ResidualVariant::psnr: return "psnr";
  }
  return "?";
}

/// One row per (residual kind, depth, seed). Failures are recorded per-row
/// rather than aborting the sweep. worker_count > 1 runs cells on threads;
/// results are assembled in cell order either way.
inline std::vector<SweepRow> depth_sweep(const ModelConfig& base,
                                         const std::vector<ResidualKind>& kinds,
                                         const std::vector<int>& depths,
                                         const std::vector<std::uint64_t>& seeds,
                                         const LabeledDataset& ds,
                                         const SplitPolicy& split_policy,
                                         const Hyper& hyper, int worker_count = 1) {
  struct Cell {
    ResidualKind kind;
    int depth;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (const auto& k : kinds)
    for (int d : depths)
      for (std::uint64_t s : seeds) cells.push_back({k, d, s});

  std::vector<SweepRow> rows(cells.size());
  auto run_cell = [&](std::size_t i) {
    const Cell& c = cells[i];
    SweepRow& row = rows[i];
    row.residual = residual_name(c.kind);
    row.depth = c.depth;
    row.seed = c.seed;
    try {
      ModelConfig cfg = base;
      cfg.depth = c.depth;
      cfg.residual = c.kind;
      Split split = make_split(ds.labels, split_policy, c.seed);
      TrainReport rep = train(cfg, ds, split, hyper, c.seed);
      row.test_accuracy = rep.test_accuracy;
      row.final_smv = rep.layer_smv.empty() ? 0.0 : rep.layer_smv.back();
    } catch (const std::exception& e) {
      row.error = e.what();
    }
  };

  if (worker_count <= 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (int w = 0; w < worker_count; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < cells.size(); i = next.fetch_add(1))
          run_cell(i);
      });
    for (auto& th : pool) th.join();
  }
  return rows;
}

}  // namespace psnrlab
