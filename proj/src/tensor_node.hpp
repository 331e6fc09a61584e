#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "genspec/tensor.hpp"

namespace genspec::detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }

  double* grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad.data();
  }
};

}  // namespace genspec::detail
