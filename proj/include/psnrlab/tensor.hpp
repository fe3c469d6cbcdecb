#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "psnrlab/errors.hpp"
#include "psnrlab/graph.hpp"
#include "psnrlab/rng.hpp"

namespace psnrlab {

class Tape;

/// Handle into a single-use computation tape.
struct Tensor {
  Tape* tape = nullptr;
  int id = -1;

  const Mat& value() const;
  const Mat& grad() const;
  Eigen::Index rows() const;
  Eigen::Index cols() const;
};

namespace detail {

enum class Op {
  leaf,
  matmul,
  spmm,          // constant sparse left factor
  add,
  sub,
  scale,
  hadamard,
  row_broadcast_add,
  row_scale,     // diag(c) * A, c is n x 1
  transpose,
  sigmoid,
  relu,
  leaky_relu,
  elu,
  softplus,
  log_softmax_rows,
  softmax_rows,
  concat_cols,
  row_select,
  dropout,
  gauss_inject,  // mu + zeta .* sigma, zeta a frozen draw
  maximum,       // entrywise max of two inputs
  sum_all,
  masked_nll,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::spmm: return "spmm";
    case Op::add: return "add";
    case Op::sub: return "subtract";
    case Op::scale: return "scale";
    case Op::hadamard: return "hadamard";
    case Op::row_broadcast_add: return "row-broadcast-add";
    case Op::row_scale: return "row-scale";
    case Op::transpose: return "transpose";
    case Op::sigmoid: return "sigmoid";
    case Op::relu: return "relu";
    case Op::leaky_relu: return "leaky-relu";
    case Op::elu: return "elu";
    case Op::softplus: return "softplus";
    case Op::log_softmax_rows: return "log-softmax-rows";
    case Op::softmax_rows: return "softmax-rows";
    case Op::concat_cols: return "concat-cols";
    case Op::row_select: return "row-select";
    case Op::dropout: return "dropout";
    case Op::gauss_inject: return "gaussian-noise-inject";
    case Op::maximum: return "maximum";
    case Op::sum_all: return "sum";
    case Op::masked_nll: return "masked-nll";
  }
  return "?";
}

struct Node {
  Op op = Op::leaf;
  std::array<int, 2> in{-1, -1};
  Mat value;
  Mat grad;
  bool requires_grad = false;
  bool is_param = false;
  double scalar = 0.0;            // scale factor / leaky slope
  Mat aux;                        // dropout mask / frozen noise draw
  std::vector<int> rows;          // row_select indices / masked_nll node ids
  std::vector<int> labels;        // masked_nll class indices
  SpMat sp;                       // spmm operator (copied; desk-scale graphs)
};

inline double sigmoid_scalar(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline double softplus_scalar(double x) {
  // log(1+e^x), overflow-safe
  return x > 30 ? x : std::log1p(std::exp(x));
}

}  // namespace detail

/// Single-use reverse-mode tape over dense double matrices. Forward ops check
/// shapes and reject non-finite results; backward() consumes the tape.
class Tape {
 public:
  Tensor leaf(Mat v, bool is_param = false) {
    detail::Node n;
    n.op = detail::Op::leaf;
    n.value = std::move(v);
    n.is_param = is_param;
    n.requires_grad = is_param;
    return push(std::move(n));
  }
  Tensor constant(Mat v) { return leaf(std::move(v), false); }
  Tensor scalar_param(double v) { return leaf(Mat::Constant(1, 1, v), true); }

  Tensor matmul(Tensor a, Tensor b) {
    check2("matmul", a, b);
    if (val(a).cols() != val(b).rows()) shape_fail("matmul", a, b);
    return binary(detail::Op::matmul, a, b, val(a) * val(b));
  }

  /// S * A with S a constant sparse operator (propagation matrices).
  Tensor spmm(const SpMat& s, Tensor a) {
    if (s.cols() != val(a).rows()) throw ShapeError("spmm: operator cols != input rows");
    detail::Node n;
    n.op = detail::Op::spmm;
    n.in = {a.id, -1};
    n.value = s * val(a);
    n.sp = s;
    n.requires_grad = node(a.id).requires_grad;
    return push(std::move(n));
  }

  Tensor add(Tensor a, Tensor b) {
    same_shape("add", a, b);
    return binary(detail::Op::add, a, b, val(a) + val(b));
  }
  Tensor subtract(Tensor a, Tensor b) {
    same_shape("subtract", a, b);
    return binary(detail::Op::sub, a, b, val(a) - val(b));
  }
  Tensor scale(Tensor a, double c) {
    Tensor t = unary(detail::Op::scale, a, c * val(a));
    node(t.id).scalar = c;
    return t;
  }
  Tensor hadamard(Tensor a, Tensor b) {
    same_shape("hadamard", a, b);
    return binary(detail::Op::hadamard, a, b, val(a).cwiseProduct(val(b)));
  }

  /// A (n x d) + broadcast of row vector b (1 x d).
  Tensor row_broadcast_add(Tensor a, Tensor b) {
    if (val(b).rows() != 1 || val(a).cols() != val(b).cols())
      shape_fail("row-broadcast-add", a, b);
    Mat v = val(a);
    v.rowwise() += val(b).row(0);
    return binary(detail::Op::row_broadcast_add, a, b, std::move(v));
  }

  /// diag(c) * A with c an n x 1 column of per-row scales.
  Tensor row_scale(Tensor a, Tensor c) {
    if (val(c).cols() != 1 || val(c).rows() != val(a).rows())
      shape_fail("row-scale", a, c);
    Mat v = val(c).col(0).asDiagonal() * val(a);
    return binary(detail::Op::row_scale, a, c, std::move(v));
  }

  Tensor transpose(Tensor a) { return unary(detail::Op::transpose, a, val(a).transpose()); }

  Tensor sigmoid(Tensor a) {
    return unary(detail::Op::sigmoid, a,
                 val(a).unaryExpr([](double x) { return detail::sigmoid_scalar(x); }));
  }
  Tensor relu(Tensor a) { return unary(detail::Op::relu, a, val(a).cwiseMax(0.0)); }
  Tensor leaky_relu(Tensor a, double slope = 0.2) {
    Tensor t = unary(detail::Op::leaky_relu, a,
                     val(a).unaryExpr([slope](double x) { return x > 0 ? x : slope * x; }));
    node(t.id).scalar = slope;
    return t;
  }
  Tensor elu(Tensor a) {
    return unary(detail::Op::elu, a,
                 val(a).unaryExpr([](double x) { return x > 0 ? x : std::expm1(x); }));
  }
  Tensor softplus(Tensor a) {
    return unary(detail::Op::softplus, a,
                 val(a).unaryExpr([](double x) { return detail::softplus_scalar(x); }));
  }

  Tensor log_softmax_rows(Tensor a) {
    Mat v = val(a);
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      double mx = v.row(i).maxCoeff();
      double lse = std::log((v.row(i).array() - mx).exp().sum()) + mx;
      v.row(i).array() -= lse;
    }
    return unary(detail::Op::log_softmax_rows, a, std::move(v));
  }

  Tensor softmax_rows(Tensor a) {
    Mat v = val(a);
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      double mx = v.row(i).maxCoeff();
      v.row(i) = (v.row(i).array() - mx).exp();
      v.row(i) /= v.row(i).sum();
    }
    return unary(detail::Op::softmax_rows, a, std::move(v));
  }

  Tensor concat_cols(Tensor a, Tensor b) {
    if (val(a).rows() != val(b).rows()) shape_fail("concat-cols", a, b);
    Mat v(val(a).rows(), val(a).cols() + val(b).cols());
    v << val(a), val(b);
    return binary(detail::Op::concat_cols, a, b, std::move(v));
  }

  Tensor row_select(Tensor a, std::vector<int> idx) {
    Mat v(static_cast<Eigen::Index>(idx.size()), val(a).cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0 || idx[i] >= val(a).rows())
        throw ShapeError("row-select: index out of range");
      v.row(static_cast<Eigen::Index>(i)) = val(a).row(idx[i]);
    }
    Tensor t = unary(detail::Op::row_select, a, std::move(v));
    node(t.id).rows = std::move(idx);
    return t;
  }

  /// Inverted dropout. With train=false this is the identity map, bitwise.
  Tensor dropout(Tensor a, double p, bool train, RngStream& rng) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must be in [0,1)");
    if (!train || p == 0.0) return unary(detail::Op::dropout, a, val(a));
    Mat mask(val(a).rows(), val(a).cols());
    const double keep = 1.0 - p;
    for (Eigen::Index i = 0; i < mask.rows(); ++i)
      for (Eigen::Index j = 0; j < mask.cols(); ++j)
        mask(i, j) = rng.uniform() < keep ? 1.0 / keep : 0.0;
    Tensor t = unary(detail::Op::dropout, a, val(a).cwiseProduct(mask));
    node(t.id).aux = std::move(mask);
    return t;
  }

  /// Reparameterized Gaussian sample mu + zeta .* sigma. The draw zeta is a
  /// constant: gradients flow through mu and sigma only.
  Tensor gaussian_noise_inject(Tensor mu, Tensor sigma, const Mat& zeta) {
    same_shape("gaussian-noise-inject", mu, sigma);
    if (zeta.rows() != val(mu).rows() || zeta.cols() != val(mu).cols())
      throw ShapeError("gaussian-noise-inject: draw shape mismatch");
    Tensor t = binary(detail::Op::gauss_inject, mu, sigma,
                      val(mu) + zeta.cwiseProduct(val(sigma)));
    node(t.id).aux = zeta;
    return t;
  }

  Tensor maximum(Tensor a, Tensor b) {
    same_shape("maximum", a, b);
    return binary(detail::Op::maximum, a, b, val(a).cwiseMax(val(b)));
  }

  Tensor sum_all(Tensor a) {
    return unary(detail::Op::sum_all, a, Mat::Constant(1, 1, val(a).sum()));
  }

  /// Mean negative log-likelihood of log-probabilities over the masked nodes.
  Tensor masked_nll(Tensor logp, const std::vector<int>& labels,
                    const std::vector<int>& mask_nodes) {
    if (mask_nodes.empty()) throw ContractError("masked-nll: empty mask");
    double acc = 0.0;
    for (int v : mask_nodes) {
      if (v < 0 || v >= val(logp).rows() || labels[v] < 0 || labels[v] >= val(logp).cols())
        throw ShapeError("masked-nll: node or label out of range");
      acc -= val(logp)(v, labels[v]);
    }
    Tensor t = unary(detail::Op::masked_nll, logp,
                     Mat::Constant(1, 1, acc / static_cast<double>(mask_nodes.size())));
    node(t.id).rows = mask_nodes;
    node(t.id).labels = labels;
    return t;
  }

  /// Reverse pass from a scalar loss. Populates grads of parameter leaves and
  /// consumes the tape.
  void backward(Tensor loss) {
    if (consumed_) throw ContractError("backward: tape already consumed");
    if (val(loss).rows() != 1 || val(loss).cols() != 1)
      throw ContractError("backward: loss must be 1x1");
    consumed_ = true;
    for (auto& n : nodes_)
      if (n.requires_grad) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    node(loss.id).grad = Mat::Constant(1, 1, 1.0);
    node(loss.id).requires_grad = true;
    for (int id = loss.id; id >= 0; --id) {
      detail::Node& n = node(id);
      if (!n.requires_grad || n.grad.size() == 0) continue;
      backprop(n);
    }
  }

  const detail::Node& node_at(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  bool consumed() const { return consumed_; }

 private:
  friend struct Tensor;

  detail::Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Mat& val(Tensor t) const { return nodes_[static_cast<std::size_t>(t.id)].value; }

  Tensor push(detail::Node n) {
    if (consumed_) throw ContractError("tape already consumed by backward()");
    if (!n.value.allFinite())
      throw NumericError(std::string("non-finite result in ") + detail::op_name(n.op));
    nodes_.push_back(std::move(n));
    return Tensor{this, static_cast<int>(nodes_.size()) - 1};
  }

  Tensor unary(detail::Op op, Tensor a, Mat v) {
    check1(detail::op_name(op), a);
    detail::Node n;
    n.op = op;
    n.in = {a.id, -1};
    n.value = std::move(v);
    n.requires_grad = node(a.id).requires_grad;
    return push(std::move(n));
  }

  Tensor binary(detail::Op op, Tensor a, Tensor b, Mat v) {
    check2(detail::op_name(op), a, b);
    detail::Node n;
    n.op = op;
    n.in = {a.id, b.id};
    n.value = std::move(v);
    n.requires_grad = node(a.id).requires_grad || node(b.id).requires_grad;
    return push(std::move(n));
  }

  void check1(const char* op, Tensor a) const {
    if (a.tape != this || a.id < 0) throw ContractError(std::string(op) + ": foreign tensor");
  }
  void check2(const char* op, Tensor a, Tensor b) const {
    check1(op, a);
    check1(op, b);
  }
  void same_shape(const char* op, Tensor a, Tensor b) const {
    check2(op, a, b);
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
      shape_fail(op, a, b);
  }

  [[noreturn]] void shape_fail(const char* op, Tensor a, Tensor b) const {
    auto dim = [this](Tensor t) {
      return std::to_string(val(t).rows()) + "x" + std::to_string(val(t).cols());
    };
    throw ShapeError(std::string(op) + ": incompatible shapes " + dim(a) + " and " + dim(b));
  }

  void accum(int id, const Mat& g) {
    detail::Node& n = node(id);
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.grad += g;
  }

  void backprop(detail::Node& n) {
    using detail::Op;
    const Mat& g = n.grad;
    const int a = n.in[0], b = n.in[1];
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::matmul:
        accum(a, g * node(b).value.transpose());
        accum(b, node(a).value.transpose() * g);
        break;
      case Op::spmm:
        accum(a, n.sp.transpose() * g);
        break;
      case Op::add:
        accum(a, g);
        accum(b, g);
        break;
      case Op::sub:
        accum(a, g);
        accum(b, -g);
        break;
      case Op::scale:
        accum(a, n.scalar * g);
        break;
      case Op::hadamard:
        accum(a, g.cwiseProduct(node(b).value));
        accum(b, g.cwiseProduct(node(a).value));
        break;
      case Op::row_broadcast_add:
        accum(a, g);
        accum(b, g.colwise().sum());
        break;
      case Op::row_scale: {
        accum(a, node(b).value.col(0).asDiagonal() * g);
        Mat gc = g.cwiseProduct(node(a).value).rowwise().sum();
        accum(b, gc);
        break;
      }
      case Op::transpose:
        accum(a, g.transpose());
        break;
      case Op::sigmoid:
        accum(a, g.cwiseProduct(n.value.cwiseProduct((1.0 - n.value.array()).matrix())));
        break;
      case Op::relu:
        accum(a, g.cwiseProduct(
                     (node(a).value.array() > 0.0).cast<double>().matrix()));
        break;
      case Op::leaky_relu: {
        double slope = n.scalar;
        accum(a, g.cwiseProduct(node(a).value.unaryExpr(
                     [slope](double x) { return x > 0 ? 1.0 : slope; })));
        break;
      }
      case Op::elu:
        accum(a, g.cwiseProduct(node(a).value.unaryExpr(
                     [](double x) { return x > 0 ? 1.0 : std::exp(x); })));
        break;
      case Op::softplus:
        accum(a, g.cwiseProduct(node(a).value.unaryExpr(
                     [](double x) { return detail::sigmoid_scalar(x); })));
        break;
      case Op::log_softmax_rows: {
        Mat p = n.value.array().exp();
        Mat rs = g.rowwise().sum();
        accum(a, g - p.cwiseProduct(rs.replicate(1, g.cols())));
        break;
      }
      case Op::softmax_rows: {
        const Mat& p = n.value;
        Mat rs = g.cwiseProduct(p).rowwise().sum();
        accum(a, p.cwiseProduct(g - rs.replicate(1, g.cols())));
        break;
      }
      case Op::concat_cols: {
        Eigen::Index ca = node(a).value.cols();
        accum(a, g.leftCols(ca));
        accum(b, g.rightCols(g.cols() - ca));
        break;
      }
      case Op::row_select: {
        Mat ga = Mat::Zero(node(a).value.rows(), node(a).value.cols());
        for (std::size_t i = 0; i < n.rows.size(); ++i)
          ga.row(n.rows[i]) += g.row(static_cast<Eigen::Index>(i));
        accum(a, ga);
        break;
      }
      case Op::dropout:
        accum(a, n.aux.size() == 0 ? g : g.cwiseProduct(n.aux));
        break;
      case Op::gauss_inject:
        accum(a, g);
        accum(b, g.cwiseProduct(n.aux));
        break;
      case Op::maximum: {
        Mat pick = (node(a).value.array() >= node(b).value.array()).cast<double>().matrix();
        accum(a, g.cwiseProduct(pick));
        accum(b, (g.array() * (1.0 - pick.array())).matrix());
        break;
      }
      case Op::sum_all:
        accum(a, Mat::Constant(node(a).value.rows(), node(a).value.cols(), g(0, 0)));
        break;
      case Op::masked_nll: {
        Mat ga = Mat::Zero(node(a).value.rows(), node(a).value.cols());
        const double w = g(0, 0) / static_cast<double>(n.rows.size());
        for (int v : n.rows) ga(v, n.labels[v]) -= w;
        accum(a, ga);
        break;
      }
    }
  }

  std::deque<detail::Node> nodes_;
  bool consumed_ = false;
};

inline const Mat& Tensor::value() const { return tape->node_at(id).value; }
inline const Mat& Tensor::grad() const {
  const auto& n = tape->node_at(id);
  if (n.grad.size() == 0) throw ContractError("grad not populated; run backward first");
  return n.grad;
}
inline Eigen::Index Tensor::rows() const { return value().rows(); }
inline Eigen::Index Tensor::cols() const { return value().cols(); }

/// Central finite-difference check of a scalar-valued tensor program against
/// its reverse-mode gradient. The program is rebuilt from scratch for every
/// evaluation, so any internal randomness must be frozen by the caller.
/// Returns max over coordinates of |analytic - fd| / max(1, |analytic|).
inline double finite_difference_check(
    const std::function<Tensor(Tape&, const std::vector<Mat>&)>& f,
    std::vector<Mat> params, double step) {
  if (step <= 0) throw ConfigError("finite_difference_check: step must be positive");

  auto eval = [&](const std::vector<Mat>& p) {
    Tape tape;
    Tensor loss = f(tape, p);
    double v = loss.value()(0, 0);
    if (!std::isfinite(v)) throw NumericError("finite_difference_check: non-finite loss");
    return v;
  };

  // Analytic pass. Param leaves are matched to the inputs by value, since
  // argument evaluation order inside f is unspecified; ties fall back to tape
  // order.
  Tape tape;
  Tensor loss = f(tape, params);
  tape.backward(loss);
  std::vector<int> leaf_ids;
  for (int id = 0; id <= loss.id; ++id)
    if (tape.node_at(id).is_param) leaf_ids.push_back(id);
  if (leaf_ids.size() != params.size())
    throw ContractError("finite_difference_check: program must declare one param leaf per input");
  std::vector<char> used(leaf_ids.size(), 0);
  std::vector<int> assign(params.size(), -1);
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t l = 0; l < leaf_ids.size(); ++l)
      if (!used[l] && tape.node_at(leaf_ids[l]).value == params[p]) {
        assign[p] = leaf_ids[l];
        used[l] = 1;
        break;
      }
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (assign[p] >= 0) continue;
    for (std::size_t l = 0; l < leaf_ids.size(); ++l)
      if (!used[l]) {
        assign[p] = leaf_ids[l];
        used[l] = 1;
        break;
      }
  }
  std::vector<Mat> analytic;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const auto& n = tape.node_at(assign[p]);
    analytic.push_back(n.grad.size() ? n.grad : Mat::Zero(n.value.rows(), n.value.cols()));
  }

  double max_err = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (Eigen::Index i = 0; i < params[p].rows(); ++i)
      for (Eigen::Index j = 0; j < params[p].cols(); ++j) {
        std::vector<Mat> plus = params, minus = params;
        plus[p](i, j) += step;
        minus[p](i, j) -= step;
        double fd = (eval(plus) - eval(minus)) / (2.0 * step);
        double an = analytic[p](i, j);
        double err = std::abs(an - fd) / std::max(1.0, std::abs(an));
        max_err = std::max(max_err, err);
      }
  }
  return max_err;
}

/// Adam with bias correction and decoupled weight decay.
struct AdamState {
  Mat m, v;
  long t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double lr = 0.01, weight_decay = 0.0;

  explicit AdamState(Eigen::Index rows = 0, Eigen::Index cols = 0)
      : m(Mat::Zero(rows, cols)), v(Mat::Zero(rows, cols)) {}
};

inline void adam_step(Mat& param, const Mat& grad, AdamState& st) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols())
    throw ShapeError("adam_step: grad shape mismatch");
  if (st.m.size() == 0) {
    st.m = Mat::Zero(param.rows(), param.cols());
    st.v = Mat::Zero(param.rows(), param.cols());
  }
  ++st.t;
  st.m = st.beta1 * st.m + (1.0 - st.beta1) * grad;
  st.v = st.beta2 * st.v + (1.0 - st.beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  Mat mhat = st.m / bc1;
  Mat vhat = st.v / bc2;
  Mat denom = vhat.cwiseSqrt().array() + st.eps;
  param -= st.lr * mhat.cwiseQuotient(denom);
  if (st.weight_decay != 0.0) param -= st.lr * st.weight_decay * param;
}

}  // namespace psnrlab
