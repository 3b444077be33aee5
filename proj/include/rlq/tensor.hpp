#ifndef RLQ_TENSOR_HPP_
#define RLQ_TENSOR_HPP_

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rlq {

using Shape = std::vector<std::size_t>;

class Graph;
struct TensorImpl;

/// Dense float64 tensor with optional reverse-mode gradient tracking.
///
/// A Tensor is a shared handle. Leaves are created through the factory
/// functions; op outputs are attached to the Graph that recorded them.
/// Tensors that do not track gradients are immutable after creation and may
/// be shared read-only across threads. Graph construction and backward are
/// single-threaded per graph.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;  // element count
  std::size_t rows() const;  // first extent (rank 1 or 2)
  std::size_t cols() const;  // second extent (1 for rank-1)

  std::span<const double> data() const;
  /// Mutable access to a leaf's buffer (parameters). Throws on op outputs.
  std::span<double> mutable_data();

  double item() const;  // scalar value; throws if size != 1
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  /// Toggle gradient tracking on a leaf (parameter freezing).
  void set_requires_grad(bool value);
  bool attached() const;  // op output recorded on a graph
  /// Accumulated dLoss/dThis for leaves. Zeros if backward never reached it.
  std::span<const double> grad() const;
  bool has_grad() const;
  void zero_grad();

  /// Value snapshot with no graph linkage and no gradient tracking.
  Tensor detach() const;

  std::shared_ptr<Graph> graph() const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Append-only tape of op records. Ops executed while a GraphScope is active
/// (or on operands already attached) record a node here; backward replays the
/// tape once in reverse insertion order.
class Graph {
 public:
  struct Node {
    std::string op;
    std::vector<int> input_nodes;  // -1 for leaves
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::vector<bool> needs_grad;  // per input: propagate into it
    // Given dLoss/dOutput, return dLoss/dInput_k for every input with
    // needs_grad[k] (others may be returned empty).
    std::function<std::vector<std::vector<double>>(
        std::span<const double> out_grad)>
        vjp;
  };

  int add_node(Node node);
  std::size_t node_count() const { return nodes_.size(); }
  /// Number of nodes visited by the most recent backward call.
  std::size_t last_backward_visits() const { return last_visits_; }

  /// Drops all recorded nodes. Node inputs hold owning references to their
  /// operand tensors, whose impls point back at this graph; releasing the
  /// tape breaks those cycles. Called by ~GraphScope, after which backward
  /// on tensors from the scope is no longer possible.
  void clear();

  /// Reverse pass from `root` (a scalar recorded on this graph). Accumulates
  /// into the persistent grad buffer of every requires_grad leaf reached.
  /// Repeated calls without zero_grad accumulate.
  void run_backward(const TensorImpl& root);

 private:
  std::vector<Node> nodes_;
  std::size_t last_visits_ = 0;
};

/// RAII scope installing a fresh Graph as the recording target for ops whose
/// operands are not yet attached. One scope per training step.
class GraphScope {
 public:
  GraphScope();
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

  std::shared_ptr<Graph> graph() const { return graph_; }

 private:
  std::shared_ptr<Graph> graph_;
};

/// RAII scope suppressing all graph recording on this thread (inference).
/// Ops executed inside produce plain unattached value tensors.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;
};

// ---- ops -------------------------------------------------------------
// All ops validate shapes, check outputs for NaN/Inf, and register exact
// vector-Jacobian products. Binary elementwise ops accept equal shapes or a
// one-element operand broadcast against the other (scalar broadcast only).

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);   // throws std::domain_error on x <= 0
Tensor abs(const Tensor& a);   // subgradient at 0 is 0
Tensor sqrt(const Tensor& a);  // subgradient at 0 is 0
Tensor scale(const Tensor& a, double s);

Tensor sum(const Tensor& a);             // full reduction -> scalar
Tensor sum(const Tensor& a, int axis);   // rank-2 only
Tensor mean(const Tensor& a);            // full reduction -> scalar
Tensor mean(const Tensor& a, int axis);  // rank-2 only
Tensor max_over_axis(const Tensor& a, int axis);

Tensor softmax(const Tensor& a);      // rows; output rows sum to 1
Tensor log_softmax(const Tensor& a);  // rows
Tensor l2_normalize(const Tensor& a);  // rows; throws on zero-norm row

Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_cols(const Tensor& a, const Tensor& b);
/// Select elements by flat row-major index; gradient scatters back.
Tensor gather(const Tensor& a, const std::vector<std::size_t>& flat_indices);

/// Reverse pass entry point: `loss` must be a scalar recorded on a graph.
void backward(const Tensor& loss);

}  // namespace rlq

#endif  // RLQ_TENSOR_HPP_
