#pragma once

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "psnrlab/config.hpp"
#include "psnrlab/csv.hpp"
#include "psnrlab/harness.hpp"
#include "psnrlab/oracles.hpp"

namespace psnrlab::cli {

namespace fs = std::filesystem;

struct CommonOpts {
  std::string dataset_dir;
  std::string sbm_spec;  // "AxB"
  double p_in = 0.2, p_out = 0.02;
  int feat_dim = 8;
  double feat_shift = 1.0;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
};

inline ResidualKind parse_residual(const std::string& name, double alpha,
                                   const std::string& encoder, const std::string& jk_agg) {
  ResidualKind k;
  if (name == "none")
    k.variant = ResidualVariant::none;
  else if (name == "res")
    k.variant = ResidualVariant::res;
  else if (name == "init-res")
    k.variant = ResidualVariant::initial_res;
  else if (name == "dense")
    k.variant = ResidualVariant::dense;
  else if (name == "jk")
    k.variant = ResidualVariant::jk;
  else if (name == "psnr")
    k.variant = ResidualVariant::psnr;
  else
    throw ConfigError("unknown residual kind: " + name);
  k.alpha = alpha;
  if (encoder == "gcn")
    k.encoder = EncoderKind::gcn;
  else if (encoder == "gat")
    k.encoder = EncoderKind::gat;
  else if (encoder == "sage")
    k.encoder = EncoderKind::sage;
  else
    throw ConfigError("unknown encoder: " + encoder);
  if (jk_agg == "concat")
    k.agg = JkAgg::concat;
  else if (jk_agg == "maxpool")
    k.agg = JkAgg::maxpool;
  else
    throw ConfigError("unknown jk aggregation: " + jk_agg);
  k.validate();
  return k;
}

inline LabeledDataset resolve_dataset(const CommonOpts& o) {
  if (!o.dataset_dir.empty()) {
    fs::path d(o.dataset_dir);
    return load_dataset((d / "edges.tsv").string(), (d / "features.csv").string(),
                        (d / "labels.txt").string());
  }
  if (!o.sbm_spec.empty()) {
    auto x = o.sbm_spec.find('x');
    if (x == std::string::npos) throw ConfigError("--sbm expects AxB, e.g. 2x50");
    int blocks = std::stoi(o.sbm_spec.substr(0, x));
    int per_block = std::stoi(o.sbm_spec.substr(x + 1));
    return gen_sbm(blocks, per_block, o.p_in, o.p_out, o.feat_dim, o.feat_shift, o.seed);
  }
  throw ConfigError("need --dataset DIR or --sbm AxB");
}

inline void ensure_out_dir(const std::string& dir) {
  if (!dir.empty()) fs::create_directories(dir);
}

// Built-in 10-node connected graph for the convergence experiment: a ring
// with two chords (non-bipartite once self-loops are added by normalization).
inline Graph default_converge_graph() {
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < 10; ++i) edges.emplace_back(i, (i + 1) % 10);
  edges.emplace_back(0, 5);
  edges.emplace_back(2, 7);
  return build_graph(edges, 10);
}

// ---- subcommand bodies; each returns 0 on success, 1 on validation failure.

inline int cmd_verify(int n_max, int k_max, int instances, std::uint64_t seed,
                      const std::string& out_dir) {
  ensure_out_dir(out_dir);
  CsvWriter csv((fs::path(out_dir) / "verify.csv").string(),
                {"check", "instance", "n", "d", "k", "value", "threshold", "pass"});
  RngStream rng(seed, "verify");
  bool all_pass = true;

  auto random_graph = [&](int n) {
    std::vector<std::pair<int, int>> edges;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (rng.uniform() < 0.4) edges.emplace_back(i, j);
    return build_graph(edges, n);
  };

  const char* kinds[] = {"resgcn", "appnp", "psnr"};
  for (const char* kind : kinds) {
    for (int inst = 0; inst < instances; ++inst) {
      int n = 2 + static_cast<int>(rng.uniform() * (n_max - 1));
      int d = 1 + static_cast<int>(rng.uniform() * 4);
      int k = 1 + static_cast<int>(rng.uniform() * k_max);
      Graph g = random_graph(n);
      Mat N = normalize(g, NormKind::symmetric).dense();
      Mat H = rng.normal_matrix(n, d);

      LinearDynamic dyn;
      dyn.N = N;
      dyn.H = H;
      dyn.k = k;
      Mat closed;
      if (std::string(kind) == "resgcn") {
        dyn.kind = DynamicKind::resgcn;
        closed = closed_resgcn(N, H, k);
      } else if (std::string(kind) == "appnp") {
        dyn.kind = DynamicKind::appnp;
        dyn.alpha = rng.uniform(0.05, 0.95);
        closed = closed_appnp(N, H, dyn.alpha, k);
      } else {
        dyn.kind = DynamicKind::psnr;
        for (int j = 0; j < k - 1; ++j) {
          Eigen::VectorXd lam(n);
          for (int i = 0; i < n; ++i) lam(i) = rng.uniform(0.01, 0.99);
          dyn.lambdas.push_back(lam);
        }
        closed = closed_psnr(N, H, dyn.lambdas);
      }
      double gap = relative_frobenius_gap(closed, iterate_linear(dyn));
      bool pass = gap < 1e-8;
      all_pass = all_pass && pass;
      csv.field(kind).field(inst).field(n).field(d).field(k).field(gap).field(1e-8).field(
          pass ? "1" : "0");
      csv.endrow();
    }
  }

  const int lemma_draws = 200;
  for (int inst = 0; inst < lemma_draws; ++inst) {
    int n = 2 + static_cast<int>(rng.uniform() * (n_max - 1));
    Graph g = random_graph(n);
    Mat N = normalize(g, NormKind::symmetric).dense();

    double alpha = rng.uniform(0.01, 0.99);
    ConditionReport r1 = check_lemma1(N, alpha);
    all_pass = all_pass && r1.invertible;
    csv.field("lemma1").field(inst).field(n).field(0).field(0).field(r1.solve_residual)
        .field(1e-9).field(r1.invertible ? "1" : "0");
    csv.endrow();

    Eigen::VectorXd lam(n);
    for (int i = 0; i < n; ++i) lam(i) = rng.uniform(0.01, 0.99);
    ConditionReport r2 = check_lemma2(N, lam);
    all_pass = all_pass && r2.invertible;
    csv.field("lemma2").field(inst).field(n).field(0).field(0).field(r2.solve_residual)
        .field(1e-9).field(r2.invertible ? "1" : "0");
    csv.endrow();
  }
  return all_pass ? 0 : 1;
}

struct TrainOpts {
  std::string residual = "none";
  // lr == 0 means "use the two-point grid"; a --lr flag pins it.
  std::string backbone = "gcn";
  std::string encoder = "sage";
  std::string jk_agg = "concat";
  double alpha = 0.1;
  int depth = 2;
  bool missing = false;
  std::string split = "fractional";
  Hyper hyper = [] {
    Hyper h;
    h.lr = 0.0;
    return h;
  }();
};

inline SplitPolicy make_policy(const TrainOpts& t) {
  SplitPolicy p;
  p.kind = t.split == "per-class" ? SplitPolicy::Kind::per_class
                                  : SplitPolicy::Kind::fractional;
  p.missing_features = t.missing;
  return p;
}

inline ModelConfig make_config(const TrainOpts& t) {
  ModelConfig cfg;
  cfg.backbone = t.backbone == "gat" ? Backbone::gat : Backbone::gcn;
  cfg.depth = t.depth;
  cfg.residual = parse_residual(t.residual, t.alpha, t.encoder, t.jk_agg);
  return cfg;
}

inline int cmd_train(const CommonOpts& o, const TrainOpts& t) {
  ensure_out_dir(o.out_dir);
  LabeledDataset ds = resolve_dataset(o);
  Split split = make_split(ds.labels, make_policy(t), o.seed);
  Hyper hyper = t.hyper;
  std::vector<double> grid = hyper.lr > 0 ? std::vector<double>{hyper.lr}
                                          : std::vector<double>{0.001, 0.01};
  hyper.lr = grid.front();
  auto [report, lr] = train_best_lr(make_config(t), ds, split, hyper, o.seed, grid);

  CsvWriter epochs((fs::path(o.out_dir) / "train.csv").string(),
                   {"epoch", "train_loss", "val_accuracy"});
  for (std::size_t e = 0; e < report.train_loss.size(); ++e) {
    epochs.field(static_cast<int>(e)).field(report.train_loss[e]).field(report.val_accuracy[e]);
    epochs.endrow();
  }
  CsvWriter summary((fs::path(o.out_dir) / "train_summary.csv").string(),
                    {"best_epoch", "best_val_accuracy", "test_accuracy", "lr"});
  summary.field(report.best_epoch).field(report.best_val_accuracy)
      .field(report.test_accuracy).field(lr);
  summary.endrow();
  CsvWriter smv_csv((fs::path(o.out_dir) / "smv.csv").string(), {"layer", "smv"});
  for (std::size_t l = 0; l < report.layer_smv.size(); ++l) {
    smv_csv.field(static_cast<int>(l + 1)).field(report.layer_smv[l]);
    smv_csv.endrow();
  }
  if (!report.coeff_stats.empty()) {
    CsvWriter coeffs((fs::path(o.out_dir) / "coeffs.csv").string(),
                     {"layer", "group", "mean_mu", "mean_sigma"});
    for (const auto& st : report.coeff_stats) {
      coeffs.field(st.layer).field(st.group).field(st.mean_mu).field(st.mean_sigma);
      coeffs.endrow();
    }
  }
  return 0;
}

inline int cmd_sweep(const CommonOpts& o, const TrainOpts& t,
                     const std::vector<int>& depths,
                     const std::vector<std::uint64_t>& seeds,
                     const std::vector<std::string>& residuals, int workers) {
  ensure_out_dir(o.out_dir);
  LabeledDataset ds = resolve_dataset(o);
  std::vector<ResidualKind> kinds;
  for (const auto& r : residuals) kinds.push_back(parse_residual(r, t.alpha, t.encoder, t.jk_agg));

  ModelConfig base = make_config(t);
  Hyper hyper = t.hyper;
  if (hyper.lr <= 0) hyper.lr = 0.01;
  auto rows = depth_sweep(base, kinds, depths, seeds, ds, make_policy(t), hyper, workers);

  CsvWriter csv((fs::path(o.out_dir) / "sweep.csv").string(),
                {"residual", "depth", "seed", "test_accuracy", "final_smv", "error"});
  for (const auto& row : rows) {
    csv.field(row.residual).field(row.depth).field(row.seed).field(row.test_accuracy)
        .field(row.final_smv).field(row.error);
    csv.endrow();
  }

  // aggregation: mean and std per (residual, depth), preserving cell order
  CsvWriter agg((fs::path(o.out_dir) / "sweep_agg.csv").string(),
                {"residual", "depth", "mean_accuracy", "std_accuracy", "runs"});
  std::vector<std::pair<std::string, int>> keys;
  for (const auto& row : rows) {
    std::pair<std::string, int> key{row.residual, row.depth};
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
  }
  for (const auto& key : keys) {
    std::vector<double> accs;
    for (const auto& row : rows)
      if (row.residual == key.first && row.depth == key.second && row.error.empty())
        accs.push_back(row.test_accuracy);
    double mean = 0, sd = 0;
    if (!accs.empty()) {
      mean = std::accumulate(accs.begin(), accs.end(), 0.0) / accs.size();
      for (double a : accs) sd += (a - mean) * (a - mean);
      sd = accs.size() > 1 ? std::sqrt(sd / (accs.size() - 1)) : 0.0;
    }
    agg.field(key.first).field(key.second).field(mean).field(sd)
        .field(static_cast<int>(accs.size()));
    agg.endrow();
  }
  return 0;
}

inline int cmd_smooth(const CommonOpts& o, const std::vector<int>& layers_grid) {
  ensure_out_dir(o.out_dir);
  LabeledDataset ds = resolve_dataset(o);
  PropagationOperator op = normalize(ds.graph, NormKind::symmetric);
  std::vector<int> groups = degree_groups(ds.graph);

  CsvWriter csv((fs::path(o.out_dir) / "smooth.csv").string(),
                {"layer", "group", "size", "smv"});
  Mat H = ds.features.values;
  int applied = 0;
  for (int layer : layers_grid) {
    while (applied < layer) {
      H = op.matrix * H;
      ++applied;
    }
    for (const auto& row : group_smv(H, groups)) {
      csv.field(layer).field(row.group).field(row.size).field(row.value);
      csv.endrow();
    }
  }
  return 0;
}

inline int cmd_converge(const CommonOpts& o, int k_max, double eps_low,
                        const std::vector<std::uint64_t>& seeds) {
  ensure_out_dir(o.out_dir);
  Graph g = o.dataset_dir.empty() && o.sbm_spec.empty() ? default_converge_graph()
                                                        : resolve_dataset(o).graph;
  CsvWriter csv((fs::path(o.out_dir) / "converge.csv").string(),
                {"experiment", "seed", "k", "family", "oscillation", "contraction"});
  for (std::uint64_t seed : seeds) {
    Prop1Result res = prop1_experiment(g, k_max, eps_low, seed);
    for (const ConvergenceTrace* tr : {&res.product, &res.power, &res.raw}) {
      for (std::size_t i = 0; i < tr->oscillation_values.size(); ++i) {
        csv.field("prop1").field(seed).field(static_cast<int>(i + 1)).field(tr->family)
            .field(tr->oscillation_values[i]).field(tr->contraction[i]);
        csv.endrow();
      }
    }
  }
  return 0;
}

inline int cmd_coeffs(const CommonOpts& o, const TrainOpts& t) {
  ensure_out_dir(o.out_dir);
  TrainOpts tp = t;
  tp.residual = "psnr";
  LabeledDataset ds = resolve_dataset(o);
  Split split = make_split(ds.labels, make_policy(tp), o.seed);
  Hyper hyper = tp.hyper;
  std::vector<double> grid = hyper.lr > 0 ? std::vector<double>{hyper.lr}
                                          : std::vector<double>{0.001, 0.01};
  hyper.lr = grid.front();
  auto [report, lr] = train_best_lr(make_config(tp), ds, split, hyper, o.seed, grid);
  if (report.coeff_stats.empty()) throw ContractError("coeffs: model produced no trace");

  CsvWriter csv((fs::path(o.out_dir) / "coeffs.csv").string(),
                {"layer", "group", "mean_mu", "mean_sigma"});
  std::vector<double> layer_idx, layer_mu;
  std::map<int, std::pair<double, int>> per_layer;
  for (const auto& st : report.coeff_stats) {
    csv.field(st.layer).field(st.group).field(st.mean_mu).field(st.mean_sigma);
    csv.endrow();
    per_layer[st.layer].first += st.mean_mu;
    per_layer[st.layer].second += 1;
  }
  for (const auto& [layer, acc] : per_layer) {
    layer_idx.push_back(layer);
    layer_mu.push_back(acc.first / acc.second);
  }
  CsvWriter summary((fs::path(o.out_dir) / "coeffs_summary.csv").string(),
                    {"spearman_layer_vs_mean_mu", "lr"});
  summary.field(layer_idx.size() >= 2 ? spearman(layer_idx, layer_mu) : 0.0).field(lr);
  summary.endrow();
  return 0;
}

inline int cmd_gen(const CommonOpts& o) {
  if (o.sbm_spec.empty()) throw ConfigError("gen: needs --sbm AxB");
  ensure_out_dir(o.out_dir);
  LabeledDataset ds = resolve_dataset(o);
  fs::path d(o.out_dir);
  save_dataset(ds, (d / "edges.tsv").string(), (d / "features.csv").string(),
               (d / "labels.txt").string());
  return 0;
}

/// Single entry point; returns the process exit code (0 success, 1 validation
/// failure, 2 usage error).
inline int run(std::vector<std::string> args) {
  CLI::App app{"over-smoothing laboratory for posterior-sampling node-adaptive residuals"};
  app.require_subcommand(1);

  CommonOpts o;
  TrainOpts t;
  std::vector<int> depths{2};
  std::vector<int> layers_grid{1, 2, 4, 8};
  std::vector<std::uint64_t> seeds{0};
  std::vector<std::string> residual_list{"none"};
  int k_max = 30;
  double eps_low = 0.5;
  int workers = 1;
  int verify_n = 8, verify_k = 6, verify_instances = 50;
  std::string config_path;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--dataset", o.dataset_dir, "dataset directory");
    sub->add_option("--sbm", o.sbm_spec, "synthetic SBM spec AxB (blocks x per-block)");
    sub->add_option("--p-in", o.p_in, "SBM intra-block edge probability");
    sub->add_option("--p-out", o.p_out, "SBM inter-block edge probability");
    sub->add_option("--feat-dim", o.feat_dim, "SBM feature width");
    sub->add_option("--shift", o.feat_shift, "SBM class mean shift");
    sub->add_option("--out", o.out_dir, "output directory");
    sub->add_option("--seed", o.seed, "master seed");
  };
  auto add_train = [&](CLI::App* sub) {
    sub->add_option("--residual", t.residual, "none|res|init-res|dense|jk|psnr");
    sub->add_option("--backbone", t.backbone, "gcn|gat");
    sub->add_option("--encoder", t.encoder, "gcn|gat|sage");
    sub->add_option("--jk-agg", t.jk_agg, "concat|maxpool");
    sub->add_option("--alpha", t.alpha, "initial-res mixing coefficient");
    sub->add_option("--depth", t.depth, "number of layers");
    sub->add_flag("--missing", t.missing, "zero val/test features");
    sub->add_option("--split", t.split, "per-class|fractional");
    sub->add_option("--hidden", t.hyper.hidden, "hidden width");
    sub->add_option("--lr", t.hyper.lr, "learning rate (fixes the grid to one point)");
    sub->add_option("--max-epochs", t.hyper.max_epochs, "epoch cap");
    sub->add_option("--patience", t.hyper.patience, "early-stopping patience");
    sub->add_option("--eval-draws", t.hyper.eval_draws, "posterior draws per evaluation");
    sub->add_option("--config", config_path, "key=value experiment config file");
  };

  CLI::App* verify = app.add_subcommand("verify", "closed-form and lemma suites");
  verify->add_option("--n", verify_n, "max node count per instance");
  verify->add_option("--k", verify_k, "max recursion order");
  verify->add_option("--instances", verify_instances, "instances per kind");
  verify->add_option("--out", o.out_dir, "output directory");
  verify->add_option("--seed", o.seed, "master seed");

  CLI::App* train_cmd = app.add_subcommand("train", "one training job");
  add_common(train_cmd);
  add_train(train_cmd);

  CLI::App* sweep = app.add_subcommand("sweep", "depth sweep over residual kinds");
  add_common(sweep);
  add_train(sweep);
  sweep->add_option("--depths", depths, "depth grid")->delimiter(',');
  sweep->add_option("--seeds", seeds, "seed list")->delimiter(',');
  sweep->add_option("--residuals", residual_list, "residual kinds")->delimiter(',');
  sweep->add_option("--workers", workers, "parallel cells");

  CLI::App* smooth = app.add_subcommand("smooth", "degree-group smoothness study");
  add_common(smooth);
  smooth->add_option("--layers-grid", layers_grid, "aggregation depths")->delimiter(',');

  CLI::App* converge = app.add_subcommand("converge", "matrix-product convergence experiment");
  add_common(converge);
  converge->add_option("--k-max", k_max, "product length");
  converge->add_option("--eps-low", eps_low, "diagonal lower bound");
  converge->add_option("--seeds", seeds, "seed list")->delimiter(',');

  CLI::App* coeffs = app.add_subcommand("coeffs", "residual-coefficient analysis");
  add_common(coeffs);
  add_train(coeffs);

  CLI::App* gen = app.add_subcommand("gen", "write a synthetic dataset");
  add_common(gen);

  // CLI11 wants argv in reverse order without the program name.
  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    std::ostringstream help;
    if (e.get_exit_code() == 0) {
      std::cout << app.help();
      return 0;
    }
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (!config_path.empty()) {
      ExperimentConfig cfg = ExperimentConfig::load(config_path);
      t.backbone = cfg.get("backbone", t.backbone);
      t.residual = cfg.get("residual", t.residual);
      o.dataset_dir = cfg.get("dataset", o.dataset_dir);
      t.split = cfg.get("split.policy", t.split);
      t.missing = cfg.get_bool("split.missing", t.missing);
      t.hyper.lr = cfg.get_double("hyper.lr", t.hyper.lr);
      t.hyper.dropout = cfg.get_double("hyper.dropout", t.hyper.dropout);
      t.hyper.weight_decay = cfg.get_double("hyper.weight_decay", t.hyper.weight_decay);
      t.hyper.hidden = cfg.get_int("hyper.hidden", t.hyper.hidden);
      t.hyper.max_epochs = cfg.get_int("hyper.max_epochs", t.hyper.max_epochs);
      t.hyper.patience = cfg.get_int("hyper.patience", t.hyper.patience);
      t.hyper.eval_draws = cfg.get_int("hyper.eval_draws", t.hyper.eval_draws);
      depths = cfg.get_list<int>("depths", depths);
      seeds = cfg.get_list<std::uint64_t>("seeds", seeds);
    }
    t.hyper.dropout = std::min(t.hyper.dropout, 0.999);

    if (*verify) return cmd_verify(verify_n, verify_k, verify_instances, o.seed, o.out_dir);
    if (*train_cmd) return cmd_train(o, t);
    if (*sweep) return cmd_sweep(o, t, depths, seeds, residual_list, workers);
    if (*smooth) return cmd_smooth(o, layers_grid);
    if (*converge) return cmd_converge(o, k_max, eps_low, seeds);
    if (*coeffs) return cmd_coeffs(o, t);
    if (*gen) return cmd_gen(o);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

inline int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(std::move(args));
}

}  // namespace psnrlab::cli
