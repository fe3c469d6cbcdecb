#pragma once

#include <string>
#include <vector>

#include "psnrlab/layers.hpp"

namespace psnrlab {

enum class Backbone { gcn, gat };

struct ModelConfig {
  Backbone backbone = Backbone::gcn;
  int depth = 2;
  int hidden = 128;
  int classes = 2;
  ResidualKind residual;
  double dropout = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (depth < 1) throw ConfigError("ModelConfig: depth must be >= 1");
    if (hidden < 1) throw ConfigError("ModelConfig: hidden must be >= 1");
    if (classes < 1) throw ConfigError("ModelConfig: classes must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("ModelConfig: dropout in [0,1)");
    residual.validate();
  }
};

/// Trained parameters. Conv layers are Xavier-initialized, linear layers
/// standard normal. The PSNR encoder is shared across layers, so its
/// parameter count does not depend on depth.
struct Model {
  ModelConfig config;
  int feat_dim = 0;

  std::vector<Mat> conv_W;
  std::vector<Mat> gat_a_src, gat_a_dst;
  Mat cls_W, cls_b;
  Mat enc_W, enc_a_src, enc_a_dst, enc_W_self, enc_W_neigh;
  Mat gamma;

  std::vector<Mat*> params() {
    std::vector<Mat*> out;
    for (auto& w : conv_W) out.push_back(&w);
    for (auto& a : gat_a_src) out.push_back(&a);
    for (auto& a : gat_a_dst) out.push_back(&a);
    auto maybe = [&](Mat& m) {
      if (m.size() > 0) out.push_back(&m);
    };
    maybe(enc_W);
    maybe(enc_a_src);
    maybe(enc_a_dst);
    maybe(enc_W_self);
    maybe(enc_W_neigh);
    maybe(gamma);
    out.push_back(&cls_W);
    out.push_back(&cls_b);
    return out;
  }

  long parameter_count() {
    long c = 0;
    for (Mat* m : params()) c += m->size();
    return c;
  }

  long encoder_parameter_count() const {
    return enc_W.size() + enc_a_src.size() + enc_a_dst.size() + enc_W_self.size() +
           enc_W_neigh.size() + gamma.size();
  }
};

namespace detail {

inline Mat xavier(Eigen::Index fan_in, Eigen::Index fan_out, RngStream& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Mat m(fan_in, fan_out);
  for (Eigen::Index i = 0; i < fan_in; ++i)
    for (Eigen::Index j = 0; j < fan_out; ++j) m(i, j) = rng.uniform(-limit, limit);
  return m;
}

// Conv input width at layer k (1-based). Dense layers see the concatenated
// history of all previous outputs.
inline int conv_in_width(const ModelConfig& c, int feat_dim, int k) {
  if (k == 1) return feat_dim;
  if (c.residual.variant == ResidualVariant::dense) return (k - 1) * c.hidden;
  return c.hidden;
}

}  // namespace detail

inline Model build_model(const ModelConfig& config, int feat_dim) {
  config.validate();
  Model m;
  m.config = config;
  m.feat_dim = feat_dim;
  RngStream rng(config.seed, "init");
  const int K = config.depth;
  const int h = config.hidden;

  // initial-res propagates without weights after the first layer
  const int n_conv = config.residual.variant == ResidualVariant::initial_res ? 1 : K;
  for (int k = 1; k <= n_conv; ++k) {
    int in = detail::conv_in_width(config, feat_dim, k);
    m.conv_W.push_back(detail::xavier(in, h, rng));
    if (config.backbone == Backbone::gat) {
      m.gat_a_src.push_back(detail::xavier(h, 1, rng));
      m.gat_a_dst.push_back(detail::xavier(h, 1, rng));
    }
  }

  if (config.residual.variant == ResidualVariant::psnr) {
    switch (config.residual.encoder) {
      case EncoderKind::gcn:
        m.enc_W = detail::xavier(h, 2, rng);
        break;
      case EncoderKind::gat:
        m.enc_W = detail::xavier(h, 2, rng);
        m.enc_a_src = detail::xavier(2, 1, rng);
        m.enc_a_dst = detail::xavier(2, 1, rng);
        break;
      case EncoderKind::sage:
        m.enc_W_self = detail::xavier(h, 2, rng);
        m.enc_W_neigh = detail::xavier(h, 2, rng);
        break;
    }
    m.gamma = Mat::Constant(1, 1, 1.0);
  }

  int cls_in = h;
  if (config.residual.variant == ResidualVariant::jk &&
      config.residual.agg == JkAgg::concat && K > 1)
    cls_in = K * h;
  m.cls_W = rng.normal_matrix(cls_in, config.classes);
  m.cls_b = rng.normal_matrix(1, config.classes);
  return m;
}

struct ForwardOptions {
  bool train = false;
  NoiseMode noise = NoiseMode::sample;
  RngStream* dropout_rng = nullptr;
  RngStream* noise_rng = nullptr;
};

struct ForwardResult {
  Tensor logits;
  std::vector<Tensor> param_tensors;     // order matches Model::params()
  std::vector<Mat> layer_values;         // H_1 .. H_K
  std::vector<PsnrLayerTrace> traces;    // psnr only, layers 2..K
};

/// Builds the full forward graph for one model on one dataset. Deterministic
/// for fixed rng streams.
inline ForwardResult model_forward(Tape& t, Model& model, const Mat& features,
                                   const Graph& graph, const PropagationOperator& N,
                                   const SpMat& mean_op, const ForwardOptions& opt) {
  const ModelConfig& c = model.config;
  RngStream null_rng(0, "null");
  RngStream& drop_rng = opt.dropout_rng ? *opt.dropout_rng : null_rng;
  RngStream& noise_rng = opt.noise_rng ? *opt.noise_rng : null_rng;

  ForwardResult res;
  std::vector<Tensor> leafs;
  for (Mat* p : model.params()) leafs.push_back(t.leaf(*p, /*is_param=*/true));
  res.param_tensors = leafs;

  // Map leaves back to roles, mirroring Model::params() order.
  std::size_t idx = 0;
  std::vector<Tensor> conv_W(model.conv_W.size());
  for (auto& w : conv_W) w = leafs[idx++];
  std::vector<Tensor> a_src(model.gat_a_src.size()), a_dst(model.gat_a_dst.size());
  for (auto& a : a_src) a = leafs[idx++];
  for (auto& a : a_dst) a = leafs[idx++];
  EncoderTensors enc;
  enc.kind = c.residual.encoder;
  Tensor gamma;
  if (c.residual.variant == ResidualVariant::psnr) {
    switch (enc.kind) {
      case EncoderKind::gcn:
        enc.W = leafs[idx++];
        break;
      case EncoderKind::gat:
        enc.W = leafs[idx++];
        enc.a_src = leafs[idx++];
        enc.a_dst = leafs[idx++];
        break;
      case EncoderKind::sage:
        enc.W_self = leafs[idx++];
        enc.W_neigh = leafs[idx++];
        break;
    }
    gamma = leafs[idx++];
  }
  Tensor cls_W = leafs[idx++];
  Tensor cls_b = leafs[idx++];

  auto conv = [&](Tensor in, int k, bool activate) {
    if (c.backbone == Backbone::gcn)
      return gcn_layer(t, in, N, conv_W[static_cast<std::size_t>(k - 1)], activate);
    return gat_layer(t, in, graph, conv_W[static_cast<std::size_t>(k - 1)],
                     a_src[static_cast<std::size_t>(k - 1)],
                     a_dst[static_cast<std::size_t>(k - 1)], activate)
        .first;
  };
  auto drop = [&](Tensor x) { return t.dropout(x, c.dropout, opt.train, drop_rng); };

  const int K = c.depth;
  Tensor H1 = conv(drop(t.constant(features)), 1, /*activate=*/true);
  res.layer_values.push_back(H1.value());

  ResidualState state;
  state.h_initial = H1;
  state.h_prev = H1;
  state.has_prev = true;
  if (c.residual.variant == ResidualVariant::dense ||
      c.residual.variant == ResidualVariant::jk)
    state.history.push_back(H1);

  Tensor H = H1;
  for (int k = 2; k <= K; ++k) {
    Tensor next;
    switch (c.residual.variant) {
      case ResidualVariant::none:
      case ResidualVariant::res:
        next = residual_step(t, c.residual, state, conv(drop(H), k, true));
        break;
      case ResidualVariant::initial_res:
        next = residual_step(t, c.residual, state, t.spmm(N.matrix, drop(H)));
        break;
      case ResidualVariant::dense:
        next = residual_step(t, c.residual, state, conv(dense_input(t, state), k, true));
        break;
      case ResidualVariant::jk:
        next = residual_step(t, c.residual, state, conv(drop(H), k, true));
        break;
      case ResidualVariant::psnr: {
        Tensor Hconv = conv(drop(H), k, true);
        PsnrLayerTrace trace;
        next = psnr_step(t, H1, Hconv, k, enc, gamma, graph, N, mean_op, opt.noise,
                         noise_rng, &trace);
        res.traces.push_back(std::move(trace));
        break;
      }
    }
    H = next;
    res.layer_values.push_back(H.value());
  }

  Tensor readout = H;
  if (c.residual.variant == ResidualVariant::jk && K > 1)
    readout = jk_aggregate(t, state.history, c.residual.agg);
  res.logits = t.row_broadcast_add(t.matmul(readout, cls_W), cls_b);
  return res;
}

}  // namespace psnrlab
