#ifndef RLQ_SRC_TENSOR_IMPL_HPP_
#define RLQ_SRC_TENSOR_IMPL_HPP_

#include <memory>
#include <vector>

#include "rlq/tensor.hpp"

namespace rlq {

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;  // leaf accumulation buffer, lazily sized
  std::shared_ptr<Graph> graph;  // non-null iff op output
  int node = -1;

  std::size_t size() const { return values.size(); }
};

}  // namespace rlq

#endif  // RLQ_SRC_TENSOR_IMPL_HPP_
