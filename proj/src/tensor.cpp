#include "rlq/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "tensor_impl.hpp"

namespace rlq {

namespace {

using MatMap = Eigen::Map<
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic,
                                                   Eigen::Dynamic,
                                                   Eigen::RowMajor>>;

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) {
    if (e == 0) throw std::invalid_argument("tensor: zero extent");
    n *= e;
  }
  return n;
}

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw std::runtime_error(std::string("tensor: non-finite value produced by ") + op);
    }
  }
}

// Thread-local stack of recording scopes.
thread_local std::vector<std::shared_ptr<Graph>> tl_scopes;
thread_local int tl_no_grad_depth = 0;

std::shared_ptr<Graph> current_scope() {
  return tl_scopes.empty() ? nullptr : tl_scopes.back();
}

// Resolve the graph an op should record on: the operands' graph if any is
// attached (two distinct graphs is an error), else the active scope when at
// least one operand wants gradients, else none (constant folding). Inside a
// NoGradScope nothing records.
std::shared_ptr<Graph> resolve_graph(
    const std::vector<std::shared_ptr<TensorImpl>>& inputs, const char* op) {
  std::shared_ptr<Graph> g;
  bool wants_grad = false;
  for (const auto& in : inputs) {
    if (!in) throw std::invalid_argument(std::string(op) + ": undefined operand");
    wants_grad = wants_grad || in->requires_grad;
    if (tl_no_grad_depth > 0) continue;
    if (in->graph) {
      if (g && g != in->graph) {
        throw std::invalid_argument(std::string(op) +
                                    ": operands belong to different graphs");
      }
      g = in->graph;
    }
  }
  if (tl_no_grad_depth > 0) return nullptr;
  if (!g && wants_grad) {
    g = current_scope();
    if (!g) {
      throw std::runtime_error(
          std::string(op) +
          ": gradient-tracking op outside a GraphScope; open one per step");
    }
  }
  return g;
}

bool input_needs_grad(const std::shared_ptr<TensorImpl>& in) {
  return in->graph != nullptr || in->requires_grad;
}

using VjpFn = std::function<std::vector<std::vector<double>>(std::span<const double>)>;

// Record the op on the resolved graph (when any) and wrap the result buffer.

Tensor make_result(const char* op, Shape out_shape, std::vector<double> out,
                   std::vector<std::shared_ptr<TensorImpl>> inputs, VjpFn vjp) {
  check_finite(out, op);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(out_shape);
  impl->values = std::move(out);
  if (impl->values.size() != shape_numel(impl->shape)) {
    throw std::logic_error(std::string(op) + ": internal shape/data mismatch");
  }
  auto g = resolve_graph(inputs, op);
  if (g) {
    Graph::Node node;
    node.op = op;
    node.inputs = inputs;
    node.input_nodes.reserve(inputs.size());
    node.needs_grad.reserve(inputs.size());
    for (const auto& in : inputs) {
      node.input_nodes.push_back(in->node);
      node.needs_grad.push_back(input_needs_grad(in));
    }
    node.vjp = std::move(vjp);
    impl->graph = g;
    impl->node = g->add_node(std::move(node));
    impl->requires_grad = true;
  }
  return Tensor(std::move(impl));
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.shape().size() != 2) {
    throw std::invalid_argument(std::string(op) + ": rank-2 tensor required");
  }
}

}  // namespace

// ---- Tensor ----------------------------------------------------------

Tensor::Tensor() = default;

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  const std::size_t n = shape_numel(shape);
  impl->shape = std::move(shape);
  impl->values.assign(n, value);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("Tensor::from_data: shape/data size mismatch");
  }
  check_finite(data, "from_data");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::size() const { return impl_->values.size(); }

std::size_t Tensor::rows() const { return impl_->shape.at(0); }
std::size_t Tensor::cols() const {
  return impl_->shape.size() >= 2 ? impl_->shape[1] : 1;
}

std::span<const double> Tensor::data() const {
  return {impl_->values.data(), impl_->values.size()};
}

std::span<double> Tensor::mutable_data() {
  if (impl_->graph) {
    throw std::logic_error("Tensor: op outputs are immutable; mutate leaves only");
  }
  return {impl_->values.data(), impl_->values.size()};
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("Tensor::item: not a scalar");
  return impl_->values[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return impl_->values.at(r * cols() + c);
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (impl_->graph) {
    throw std::logic_error("set_requires_grad: only leaves can be toggled");
  }
  impl_->requires_grad = value;
}

bool Tensor::attached() const { return impl_->graph != nullptr; }

std::span<const double> Tensor::grad() const {
  if (impl_->grad.empty()) {
    impl_->grad.assign(impl_->values.size(), 0.0);
  }
  return {impl_->grad.data(), impl_->grad.size()};
}

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

void Tensor::zero_grad() { impl_->grad.assign(impl_->values.size(), 0.0); }

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->values = impl_->values;
  return Tensor(std::move(impl));
}

std::shared_ptr<Graph> Tensor::graph() const { return impl_->graph; }

// ---- Graph -----------------------------------------------------------

int Graph::add_node(Node node) {
  nodes_.push_back(std::move(node));
  return static_cast<int>(nodes_.size()) - 1;
}

void Graph::run_backward(const TensorImpl& root) {
  if (root.size() != 1) {
    throw std::invalid_argument("backward: root must be a scalar");
  }
  if (root.node < 0 || nodes_.empty()) {
    throw std::invalid_argument("backward: root is not recorded on this graph");
  }
  std::vector<std::vector<double>> scratch(nodes_.size());
  scratch[static_cast<std::size_t>(root.node)] = {1.0};
  std::size_t visits = 0;
  for (int i = root.node; i >= 0; --i) {
    ++visits;
    auto& incoming = scratch[static_cast<std::size_t>(i)];
    if (incoming.empty()) continue;
    const Node& nd = nodes_[static_cast<std::size_t>(i)];
    auto input_grads = nd.vjp(std::span<const double>(incoming));
    for (std::size_t k = 0; k < nd.inputs.size(); ++k) {
      if (!nd.needs_grad[k] || input_grads[k].empty()) continue;
      const auto& impl = nd.inputs[k];
      if (impl->node >= 0) {
        auto& dst = scratch[static_cast<std::size_t>(impl->node)];
        if (dst.empty()) {
          dst = std::move(input_grads[k]);
        } else {
          for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += input_grads[k][j];
        }
      } else if (impl->requires_grad) {
        if (impl->grad.empty()) impl->grad.assign(impl->size(), 0.0);
        for (std::size_t j = 0; j < impl->grad.size(); ++j) {
          impl->grad[j] += input_grads[k][j];
        }
      }
    }
    incoming.clear();
  }
  last_visits_ = visits;
}

void backward(const Tensor& loss) {
  if (!loss.attached()) {
    throw std::invalid_argument("backward: loss has no graph (constant expression)");
  }
  loss.graph()->run_backward(*loss.impl());
}

GraphScope::GraphScope() : graph_(std::make_shared<Graph>()) {
  tl_scopes.push_back(graph_);
}

GraphScope::~GraphScope() {
  tl_scopes.pop_back();
  graph_->clear();
}

void Graph::clear() {
  nodes_.clear();
  nodes_.shrink_to_fit();
}

NoGradScope::NoGradScope() { ++tl_no_grad_depth; }
NoGradScope::~NoGradScope() { --tl_no_grad_depth; }

// ---- matmul / transpose ------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
  if (k != k2) throw std::invalid_argument("matmul: inner dimensions disagree");

  std::vector<double> out(m * n);
  {
    ConstMatMap A(a.data().data(), static_cast<Eigen::Index>(m),
                  static_cast<Eigen::Index>(k));
    ConstMatMap B(b.data().data(), static_cast<Eigen::Index>(k),
                  static_cast<Eigen::Index>(n));
    MatMap C(out.data(), static_cast<Eigen::Index>(m),
             static_cast<Eigen::Index>(n));
    C.noalias() = A * B;
  }

  auto ai = a.impl(), bi = b.impl();
  return make_result(
      "matmul", {m, n}, std::move(out), {ai, bi},
      [ai, bi, m, k, n](std::span<const double> og) {
        std::vector<std::vector<double>> grads(2);
        ConstMatMap dC(og.data(), static_cast<Eigen::Index>(m),
                       static_cast<Eigen::Index>(n));
        ConstMatMap A(ai->values.data(), static_cast<Eigen::Index>(m),
                      static_cast<Eigen::Index>(k));
        ConstMatMap B(bi->values.data(), static_cast<Eigen::Index>(k),
                      static_cast<Eigen::Index>(n));
        if (input_needs_grad(ai)) {
          grads[0].resize(m * k);
          MatMap dA(grads[0].data(), static_cast<Eigen::Index>(m),
                    static_cast<Eigen::Index>(k));
          dA.noalias() = dC * B.transpose();
        }
        if (input_needs_grad(bi)) {
          grads[1].resize(k * n);
          MatMap dB(grads[1].data(), static_cast<Eigen::Index>(k),
                    static_cast<Eigen::Index>(n));
          dB.noalias() = A.transpose() * dC;
        }
        return grads;
      });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  const auto src = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = src[i * n + j];
  auto ai = a.impl();
  return make_result("transpose", {n, m}, std::move(out), {ai},
                     [m, n](std::span<const double> og) {
                       std::vector<std::vector<double>> grads(1);
                       grads[0].resize(m * n);
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < m; ++j)
                           grads[0][j * n + i] = og[i * m + j];
                       return grads;
                     });
}

// ---- elementwise binary ------------------------------------------------

namespace {

enum class BinKind { kAdd, kSub, kMul };

Tensor binary_op(const char* name, BinKind kind, const Tensor& a,
                 const Tensor& b) {
  const bool a_scalar = a.size() == 1, b_scalar = b.size() == 1;
  if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(name) +
                                ": shape mismatch (scalar broadcast only)");
  }
  const Shape out_shape = a_scalar && !b_scalar ? b.shape() : a.shape();
  const std::size_t n = a_scalar && !b_scalar ? b.size() : a.size();
  const auto av = a.data(), bv = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[a_scalar ? 0 : i];
    const double y = bv[b_scalar ? 0 : i];
    switch (kind) {
      case BinKind::kAdd: out[i] = x + y; break;
      case BinKind::kSub: out[i] = x - y; break;
      case BinKind::kMul: out[i] = x * y; break;
    }
  }
  auto ai = a.impl(), bi = b.impl();
  return make_result(
      name, out_shape, std::move(out), {ai, bi},
      [kind, ai, bi, a_scalar, b_scalar, n](std::span<const double> og) {
        std::vector<std::vector<double>> grads(2);
        if (input_needs_grad(ai)) {
          grads[0].assign(ai->size(), 0.0);
          for (std::size_t i = 0; i < n; ++i) {
            double g = og[i];
            if (kind == BinKind::kMul) g *= bi->values[b_scalar ? 0 : i];
            grads[0][a_scalar ? 0 : i] += g;
          }
        }
        if (input_needs_grad(bi)) {
          grads[1].assign(bi->size(), 0.0);
          for (std::size_t i = 0; i < n; ++i) {
            double g = og[i];
            if (kind == BinKind::kSub) g = -g;
            if (kind == BinKind::kMul) g = og[i] * ai->values[a_scalar ? 0 : i];
            grads[1][b_scalar ? 0 : i] += g;
          }
        }
        return grads;
      });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op("add", BinKind::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op("sub", BinKind::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op("mul", BinKind::kMul, a, b); }

// ---- elementwise unary -------------------------------------------------

namespace {

Tensor unary_op(const char* name, const Tensor& a,
                const std::function<double(double)>& fwd,
                const std::function<double(double, double)>& dydx_from_x_y) {
  const std::size_t n = a.size();
  const auto av = a.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i]);
  auto ai = a.impl();
  auto saved_out = std::make_shared<std::vector<double>>(out);
  return make_result(name, a.shape(), std::move(out), {ai},
                     [ai, saved_out, dydx_from_x_y, n](std::span<const double> og) {
                       std::vector<std::vector<double>> grads(1);
                       grads[0].resize(n);
                       for (std::size_t i = 0; i < n; ++i) {
                         grads[0][i] =
                             og[i] * dydx_from_x_y(ai->values[i], (*saved_out)[i]);
                       }
                       return grads;
                     });
}

}  // namespace

Tensor relu(const Tensor& a) {
  return unary_op("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                  [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary_op("exp", a, [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double x : a.data()) {
    if (x <= 0.0) throw std::domain_error("log: non-positive input");
  }
  return unary_op("log", a, [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Tensor abs(const Tensor& a) {
  return unary_op("abs", a, [](double x) { return std::fabs(x); },
                  [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor sqrt(const Tensor& a) {
  for (double x : a.data()) {
    if (x < 0.0) throw std::domain_error("sqrt: negative input");
  }
  return unary_op("sqrt", a, [](double x) { return std::sqrt(x); },
                  [](double x, double y) { return x > 0.0 ? 0.5 / y : 0.0; });
}

Tensor scale(const Tensor& a, double s) {
  if (!std::isfinite(s)) throw std::invalid_argument("scale: non-finite factor");
  const std::size_t n = a.size();
  const auto av = a.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = av[i] * s;
  auto ai = a.impl();
  return make_result("scale", a.shape(), std::move(out), {ai},
                     [s, n](std::span<const double> og) {
                       std::vector<std::vector<double>> grads(1);
                       grads[0].resize(n);
                       for (std::size_t i = 0; i < n; ++i) grads[0][i] = og[i] * s;
                       return grads;
                     });
}

// ---- reductions ----------------------------------------------------------

Tensor sum(const Tensor& a) {
  const auto av = a.data();
  const double total = std::accumulate(av.begin(), av.end(), 0.0);
  auto ai = a.impl();
  const std::size_t n = a.size();
  return make_result("sum", {1}, {total}, {ai},
                     [n](std::span<const double> og) {
                       std::vector<std::vector<double>> grads(1);
                       grads[0].assign(n, og[0]);
                       return grads;
                     });
}

Tensor mean(const Tensor& a) {
  const std::size_t n = a.size();
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

namespace {

void require_axis(const Tensor& a, int axis, const char* op) {
  require_rank2(a, op);
  if (axis != 0 && axis != 1) {
    throw std::invalid_argument(std::string(op) + ": axis out of range");
  }
}

}  // namespace

Tensor sum(const Tensor& a, int axis) {
  require_axis(a, axis, "sum");
  const std::size_t m = a.rows(), n = a.cols();
  const auto av = a.data();
  const std::size_t out_n = axis == 0 ? n : m;
  std::vector<double> out(out_n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out[axis == 0 ? j : i] += av[i * n + j];
  auto ai = a.impl();
  return make_result("sum_axis", {out_n}, std::move(out), {ai},
                     [m, n, axis](std::span<const double> og) {
                       std::vector<std::vector<double>> grads(1);
                       grads[0].resize(m * n);
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j)
                           grads[0][i * n + j] = og[axis == 0 ? j : i];
                       return grads;
                     });
}

Tensor mean(const Tensor& a, int axis) {
  require_axis(a, axis, "mean");
  const double denom = axis == 0 ? static_cast<double>(a.rows())
                                 : static_cast<double>(a.cols());
  return scale(sum(a, axis), 1.0 / denom);
}

Tensor max_over_axis(const Tensor& a, int axis) {
  require_axis(a, axis, "max_over_axis");
  const std::size_t m = a.rows(), n = a.cols();
  const auto av = a.data();
  const std::size_t out_n = axis == 0 ? n : m;
  std::vector<double> out(out_n, -std::numeric_limits<double>::infinity());
  // argmax with lowest-flat-index tie break
  auto argmax = std::make_shared<std::vector<std::size_t>>(out_n, 0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t o = axis == 0 ? j : i;
      const double v = av[i * n + j];
      if (v > out[o]) {
        out[o] = v;
        (*argmax)[o] = i * n + j;
      }
    }
  }
  auto ai = a.impl();
  return make_result("max_over_axis", {out_n}, std::move(out), {ai},
                     [m, n, argmax, out_n](std::span<const double> og) {
                       std::vector<std::vector<double>> grads(1);
                       grads[0].assign(m * n, 0.0);
                       for (std::size_t o = 0; o < out_n; ++o)
                         grads[0][(*argmax)[o]] += og[o];
                       return grads;
                     });
}

// ---- softmax family ------------------------------------------------------

namespace {

// Rows of a rank-2 tensor, or a rank-1 tensor as one row.
void row_view(const Tensor& a, std::size_t& rows, std::size_t& cols) {
  if (a.shape().size() == 1) {
    rows = 1;
    cols = a.shape()[0];
  } else if (a.shape().size() == 2) {
    rows = a.shape()[0];
    cols = a.shape()[1];
  } else {
    throw std::invalid_argument("softmax family: rank-1 or rank-2 required");
  }
}

}  // namespace

Tensor softmax(const Tensor& a) {
  std::size_t m, n;
  row_view(a, m, n);
  const auto av = a.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = av[i * n];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, av[i * n + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(av[i * n + j] - mx);
      z += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  auto ai = a.impl();
  auto saved = std::make_shared<std::vector<double>>(out);
  return make_result("softmax", a.shape(), std::move(out), {ai},
                     [saved, m, n](std::span<const double> og) {
                       // dx_j = y_j * (g_j - sum_k g_k y_k)
                       std::vector<std::vector<double>> grads(1);
                       grads[0].resize(m * n);
                       for (std::size_t i = 0; i < m; ++i) {
                         double dot = 0.0;
                         for (std::size_t j = 0; j < n; ++j)
                           dot += og[i * n + j] * (*saved)[i * n + j];
                         for (std::size_t j = 0; j < n; ++j)
                           grads[0][i * n + j] =
                               (*saved)[i * n + j] * (og[i * n + j] - dot);
                       }
                       return grads;
                     });
}

Tensor log_softmax(const Tensor& a) {
  std::size_t m, n;
  row_view(a, m, n);
  const auto av = a.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = av[i * n];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, av[i * n + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(av[i * n + j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] - lse;
  }
  auto ai = a.impl();
  auto saved = std::make_shared<std::vector<double>>(out);
  return make_result("log_softmax", a.shape(), std::move(out), {ai},
                     [saved, m, n](std::span<const double> og) {
                       // dx_j = g_j - softmax_j * sum_k g_k
                       std::vector<std::vector<double>> grads(1);
                       grads[0].resize(m * n);
                       for (std::size_t i = 0; i < m; ++i) {
                         double gsum = 0.0;
                         for (std::size_t j = 0; j < n; ++j) gsum += og[i * n + j];
                         for (std::size_t j = 0; j < n; ++j)
                           grads[0][i * n + j] =
                               og[i * n + j] - std::exp((*saved)[i * n + j]) * gsum;
                       }
                       return grads;
                     });
}

Tensor l2_normalize(const Tensor& a) {
  std::size_t m, n;
  row_view(a, m, n);
  const auto av = a.data();
  std::vector<double> out(m * n);
  auto norms = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += av[i * n + j] * av[i * n + j];
    const double nrm = std::sqrt(s);
    if (nrm == 0.0) throw std::domain_error("l2_normalize: zero-norm row");
    (*norms)[i] = nrm;
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] / nrm;
  }
  auto ai = a.impl();
  auto saved = std::make_shared<std::vector<double>>(out);
  return make_result(
      "l2_normalize", a.shape(), std::move(out), {ai},
      [saved, norms, m, n](std::span<const double> og) {
        // dx = (g - y * <g, y>) / ||x||
        std::vector<std::vector<double>> grads(1);
        grads[0].resize(m * n);
        for (std::size_t i = 0; i < m; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j)
            dot += og[i * n + j] * (*saved)[i * n + j];
          for (std::size_t j = 0; j < n; ++j)
            grads[0][i * n + j] =
                (og[i * n + j] - (*saved)[i * n + j] * dot) / (*norms)[i];
        }
        return grads;
      });
}

// ---- shape ops -------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw std::invalid_argument("reshape: element count mismatch");
  }
  auto ai = a.impl();
  std::vector<double> out(a.data().begin(), a.data().end());
  const std::size_t n = a.size();
  return make_result("reshape", std::move(shape), std::move(out), {ai},
                     [n](std::span<const double> og) {
                       std::vector<std::vector<double>> grads(1);
                       grads[0].assign(og.begin(), og.end());
                       (void)n;
                       return grads;
                     });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_rank2(a, "concat_cols");
  require_rank2(b, "concat_cols");
  if (a.rows() != b.rows()) {
    throw std::invalid_argument("concat_cols: row counts differ");
  }
  const std::size_t m = a.rows(), na = a.cols(), nb = b.cols();
  std::vector<double> out(m * (na + nb));
  const auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(av.begin() + i * na, na, out.begin() + i * (na + nb));
    std::copy_n(bv.begin() + i * nb, nb, out.begin() + i * (na + nb) + na);
  }
  auto ai = a.impl(), bi = b.impl();
  return make_result("concat_cols", {m, na + nb}, std::move(out), {ai, bi},
                     [m, na, nb](std::span<const double> og) {
                       std::vector<std::vector<double>> grads(2);
                       grads[0].resize(m * na);
                       grads[1].resize(m * nb);
                       for (std::size_t i = 0; i < m; ++i) {
                         std::copy_n(og.begin() + i * (na + nb), na,
                                     grads[0].begin() + i * na);
                         std::copy_n(og.begin() + i * (na + nb) + na, nb,
                                     grads[1].begin() + i * nb);
                       }
                       return grads;
                     });
}

Tensor gather(const Tensor& a, const std::vector<std::size_t>& flat_indices) {
  const std::size_t n = a.size();
  std::vector<double> out(flat_indices.size());
  const auto av = a.data();
  for (std::size_t i = 0; i < flat_indices.size(); ++i) {
    if (flat_indices[i] >= n) throw std::invalid_argument("gather: index out of range");
    out[i] = av[flat_indices[i]];
  }
  auto ai = a.impl();
  auto idx = std::make_shared<std::vector<std::size_t>>(flat_indices);
  return make_result("gather", {flat_indices.size()}, std::move(out), {ai},
                     [idx, n](std::span<const double> og) {
                       std::vector<std::vector<double>> grads(1);
                       grads[0].assign(n, 0.0);
                       for (std::size_t i = 0; i < idx->size(); ++i)
                         grads[0][(*idx)[i]] += og[i];
                       return grads;
                     });
}

}  // namespace rlq
