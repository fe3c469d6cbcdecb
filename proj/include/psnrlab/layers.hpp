#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "psnrlab/graph.hpp"
#include "psnrlab/tensor.hpp"

namespace psnrlab {

/// Sinusoidal positional embedding of the layer index.
inline Eigen::RowVectorXd layer_emb(int k, int d) {
  if (d % 2 != 0) throw ConfigError("layer_emb: width must be even");
  Eigen::RowVectorXd e(d);
  for (int i = 0; i < d / 2; ++i) {
    double freq = std::pow(10000.0, -2.0 * i / d);
    e(2 * i) = std::sin(k * freq);
    e(2 * i + 1) = std::cos(k * freq);
  }
  return e;
}

/// act(N * H * W); with activate off and W = I this is exactly N * H.
inline Tensor gcn_layer(Tape& t, Tensor H, const PropagationOperator& N, Tensor W,
                        bool activate) {
  Tensor out = t.matmul(t.spmm(N.matrix, H), W);
  return activate ? t.relu(out) : out;
}

/// Single-head GAT layer (LeakyReLU slope 0.2). The attention logits are
/// masked to the self-loop-augmented adjacency with a large negative constant,
/// which underflows to exact zeros after the row softmax.
/// Returns (output, attention matrix).
inline std::pair<Tensor, Tensor> gat_layer(Tape& t, Tensor H, const Graph& g,
                                           Tensor W, Tensor a_src, Tensor a_dst,
                                           bool activate) {
  const int n = g.n;
  if (H.rows() != n) throw ShapeError("gat_layer: feature rows != node count");
  Tensor Z = t.matmul(H, W);  // n x h
  Tensor s = t.matmul(Z, a_src);
  Tensor d = t.matmul(Z, a_dst);
  Tensor ones_row = t.constant(Mat::Ones(1, n));
  Tensor ones_col = t.constant(Mat::Ones(n, 1));
  Tensor E = t.add(t.matmul(s, ones_row), t.matmul(ones_col, t.transpose(d)));
  E = t.leaky_relu(E, 0.2);
  Mat mask = Mat::Constant(n, n, -1e9);
  for (int i = 0; i < n; ++i) {
    mask(i, i) = 0.0;
    for (int j : g.adj[i]) mask(i, j) = 0.0;
  }
  Tensor att = t.softmax_rows(t.add(E, t.constant(std::move(mask))));
  Tensor out = t.matmul(att, Z);
  return {activate ? t.relu(out) : out, att};
}

/// Precomputes the mean-neighbor operator D^{-1} A (no self-loop); isolated
/// nodes get a zero row.
inline SpMat neighbor_mean_operator(const Graph& g) {
  std::vector<Eigen::Triplet<double>> trips;
  for (int i = 0; i < g.n; ++i)
    for (int j : g.adj[i]) trips.emplace_back(i, j, 1.0 / g.degree[i]);
  SpMat m(g.n, g.n);
  m.setFromTriplets(trips.begin(), trips.end());
  m.makeCompressed();
  return m;
}

/// Mean-aggregator SAGE: W_self h_i + W_neigh mean_{j in N(i)} h_j.
inline Tensor sage_layer(Tape& t, Tensor H, const SpMat& mean_op, Tensor W_self,
                         Tensor W_neigh, bool activate) {
  Tensor out = t.add(t.matmul(H, W_self), t.matmul(t.spmm(mean_op, H), W_neigh));
  return activate ? t.relu(out) : out;
}

enum class EncoderKind { gcn, gat, sage };

/// Per-tape handles of the shared posterior encoder. Only the members for the
/// configured kind are populated.
struct EncoderTensors {
  EncoderKind kind = EncoderKind::sage;
  Tensor W;                  // gcn / gat
  Tensor a_src, a_dst;       // gat
  Tensor W_self, W_neigh;    // sage
};

enum class NoiseMode { sample, disabled };

/// Per-layer posterior record: parameters, the drawn coefficients and the
/// embedding factor.
struct PsnrLayerTrace {
  int layer = 0;
  Eigen::VectorXd mu, sigma, eta;
  double gamma = 0.0;
  Eigen::RowVectorXd emb;
};

namespace detail {

inline Tensor encoder_heads(Tape& t, Tensor X, const EncoderTensors& enc,
                            const Graph& g, const PropagationOperator& N,
                            const SpMat& mean_op) {
  switch (enc.kind) {
    case EncoderKind::gcn:
      return gcn_layer(t, X, N, enc.W, /*activate=*/false);
    case EncoderKind::gat:
      return gat_layer(t, X, g, enc.W, enc.a_src, enc.a_dst, /*activate=*/false).first;
    case EncoderKind::sage:
      return sage_layer(t, X, mean_op, enc.W_self, enc.W_neigh, /*activate=*/false);
  }
  throw ConfigError("unknown encoder kind");
}

}  // namespace detail

/// One posterior-sampling residual step. Given the anchor H_1 and the current
/// conv output H', it evaluates the shared encoder on H_1 - H' + gamma *
/// LayerEmb(k), samples eta ~ N(mu, sigma^2) via reparameterization, and
/// returns H_1 + sigmoid(diag(eta)) (H_1 - H'). Sampling is active in both
/// train and test mode; NoiseMode::disabled freezes the draw at zero.
inline Tensor psnr_step(Tape& t, Tensor H1, Tensor Hconv, int k,
                        const EncoderTensors& enc, Tensor gamma, const Graph& g,
                        const PropagationOperator& N, const SpMat& mean_op,
                        NoiseMode noise, RngStream& rng,
                        PsnrLayerTrace* trace = nullptr) {
  const int n = static_cast<int>(H1.rows());
  const int h = static_cast<int>(H1.cols());
  if (Hconv.rows() != n || Hconv.cols() != h)
    throw ShapeError("psnr_step: H1 and conv output shapes differ");

  Eigen::RowVectorXd emb = layer_emb(k, h);
  Tensor diff = t.subtract(H1, Hconv);
  // ones(n,1) * gamma * emb broadcasts the scaled embedding to every node.
  Tensor gamma_emb = t.matmul(t.matmul(t.constant(Mat::Ones(n, 1)), gamma),
                              t.constant(emb));
  Tensor enc_in = t.add(diff, gamma_emb);

  Tensor heads;
  try {
    heads = detail::encoder_heads(t, enc_in, enc, g, N, mean_op);
  } catch (const NumericError& e) {
    throw NumericError("psnr_step layer " + std::to_string(k) + ": " + e.what());
  }
  if (heads.cols() != 2) throw ShapeError("psnr_step: encoder must emit 2 heads");
  Tensor mu = t.matmul(heads, t.constant((Mat(2, 1) << 1, 0).finished()));
  Tensor raw = t.matmul(heads, t.constant((Mat(2, 1) << 0, 1).finished()));
  Tensor sigma = t.add(t.softplus(raw), t.constant(Mat::Constant(n, 1, 1e-6)));

  Mat zeta = Mat::Zero(n, 1);
  if (noise == NoiseMode::sample)
    for (int i = 0; i < n; ++i) zeta(i, 0) = rng.normal();
  Tensor eta = t.gaussian_noise_inject(mu, sigma, zeta);
  Tensor coeff = t.sigmoid(eta);
  Tensor out = t.add(H1, t.row_scale(diff, coeff));

  if (trace) {
    trace->layer = k;
    trace->mu = mu.value().col(0);
    trace->sigma = sigma.value().col(0);
    trace->eta = eta.value().col(0);
    trace->gamma = gamma.value()(0, 0);
    trace->emb = emb;
  }
  return out;
}

enum class ResidualVariant { none, res, initial_res, dense, jk, psnr };
enum class JkAgg { concat, maxpool };

struct ResidualKind {
  ResidualVariant variant = ResidualVariant::none;
  double alpha = 0.1;                       // initial-res
  JkAgg agg = JkAgg::concat;                // jk
  EncoderKind encoder = EncoderKind::sage;  // psnr

  void validate() const {
    if (variant == ResidualVariant::initial_res && !(alpha > 0.0 && alpha < 1.0))
      throw ConfigError("initial-res: alpha must be in (0,1)");
  }
};

/// Running state for residual_step: the anchor representation and, for
/// dense/jk, the full layer history.
struct ResidualState {
  Tensor h_initial;
  Tensor h_prev;
  std::vector<Tensor> history;
  bool has_prev = false;
};

/// Combines the current conv output with the residual state per the configured
/// family. For dense the concat happens on the conv *input* (see
/// dense_input()); here the output is recorded into the history.
inline Tensor residual_step(Tape& t, const ResidualKind& kind, ResidualState& state,
                            Tensor h_conv) {
  Tensor out;
  switch (kind.variant) {
    case ResidualVariant::none:
    case ResidualVariant::dense:
    case ResidualVariant::jk:
      out = h_conv;
      break;
    case ResidualVariant::res:
      if (!state.has_prev) throw ContractError("residual_step: res needs previous layer");
      out = t.add(h_conv, state.h_prev);
      break;
    case ResidualVariant::initial_res:
      if (!state.has_prev) throw ContractError("residual_step: initial-res needs history");
      out = t.add(t.scale(h_conv, 1.0 - kind.alpha), t.scale(state.h_initial, kind.alpha));
      break;
    case ResidualVariant::psnr:
      throw ContractError("residual_step: psnr uses psnr_step");
  }
  state.h_prev = out;
  state.has_prev = true;
  if (kind.variant == ResidualVariant::dense || kind.variant == ResidualVariant::jk)
    state.history.push_back(out);
  return out;
}

/// Concat of the whole history, the dense conv input for the next layer.
inline Tensor dense_input(Tape& t, const ResidualState& state) {
  if (state.history.empty()) throw ContractError("dense_input: empty history");
  Tensor acc = state.history.front();
  for (std::size_t i = 1; i < state.history.size(); ++i)
    acc = t.concat_cols(acc, state.history[i]);
  return acc;
}

/// Final JK aggregation over all stored layer outputs.
inline Tensor jk_aggregate(Tape& t, const std::vector<Tensor>& history, JkAgg agg) {
  if (history.empty()) throw ContractError("jk_aggregate: empty history");
  Tensor acc = history.front();
  for (std::size_t i = 1; i < history.size(); ++i)
    acc = agg == JkAgg::concat ? t.concat_cols(acc, history[i])
                               : t.maximum(acc, history[i]);
  return acc;
}

}  // namespace psnrlab
