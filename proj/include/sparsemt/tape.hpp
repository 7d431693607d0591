#pragma once

#include <cassert>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sparsemt/rng.hpp"
#include "sparsemt/tensor.hpp"

namespace sparsemt {

// Handle into the active tape. Cheap to copy; only valid for the tape that
// produced it.
template <typename S>
struct Var {
  int id = -1;
};

// Reverse-mode tape. Nodes are appended in execution order, so inputs of
// node i always have ids < i and a single reverse sweep visits every node
// exactly once.
template <typename S>
class Tape {
 public:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;  // allocated on first accumulation during backward
    std::function<void(Tape&, Node&)> backward;
  };

  Var<S> leaf(Tensor<S> value) {
    return push(std::move(value), nullptr);
  }

  Var<S> push(Tensor<S> value, std::function<void(Tape&, Node&)> backward) {
#ifndef NDEBUG
    assert(value.all_finite() && "non-finite values in op output");
#endif
    nodes_.push_back(Node{std::move(value), Tensor<S>(), std::move(backward)});
    return Var<S>{static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor<S>& value(Var<S> v) const { return node(v).value; }

  std::size_t size() const { return nodes_.size(); }

  // Gradient of the last backward() loss w.r.t. v; zeros when v was not
  // reachable from the loss.
  Tensor<S> grad(Var<S> v) const {
    const Node& n = node(v);
    if (n.grad.defined()) return n.grad;
    return Tensor<S>::zeros(n.value.shape());
  }

  // Accumulation buffer used by op backward implementations.
  Tensor<S>& grad_buffer(int id) {
    Node& n = nodes_.at(static_cast<std::size_t>(id));
    if (!n.grad.defined()) n.grad = Tensor<S>::zeros(n.value.shape());
    return n.grad;
  }

  void backward(Var<S> loss) {
    if (backward_done_)
      throw std::logic_error("backward called twice on the same tape without reset");
    const Node& ln = node(loss);
    if (ln.value.numel() != 1)
      throw std::invalid_argument("backward requires a scalar loss, got " +
                                  shape_str(ln.value.shape()));
    backward_done_ = true;
    grad_buffer(loss.id)[0] = S(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad.defined() && n.backward) n.backward(*this, n);
    }
  }

  void reset() {
    nodes_.clear();
    backward_done_ = false;
  }

  // Dropout source; set per training step for reproducible runs.
  RngStream* rng = nullptr;
  bool train_mode = false;

 private:
  const Node& node(Var<S> v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace sparsemt
