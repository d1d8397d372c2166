#pragma once
// Reverse-mode tape. Ops append nodes in execution order (so node ids are a
// topological order already); backward() walks them once in reverse, calling
// per-node closures that push gradients into their inputs. Saved activations
// live inside the closures and are dropped as soon as backward consumes them.

#include <functional>
#include <utility>
#include <vector>

#include "gca/tensor.hpp"

namespace gca {

template <typename T>
class Tape {
 public:
  using BackFn = std::function<void(Tape&, const Tensor4<T>&)>;

  // Registers a value the caller wants gradients for (parameters, inputs).
  int track(Tensor4<T>& t) {
    t.node = add_node("leaf", t.shape, {});
    return t.node;
  }

  int add_node(const char* kind, Shape4 shape, std::vector<int> inputs, BackFn back = nullptr) {
    if (consumed_) fail("Tape: nodes cannot be added after backward has run");
    nodes_.push_back(Node{kind, shape, std::move(inputs), std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  // Adds a gradient contribution for a node; shapes must match exactly.
  void accumulate(int node, const Tensor4<T>& g) {
    check_node(node, "accumulate");
    if (!(g.shape == nodes_[node].shape))
      fail("Tape::accumulate: node ", node, " (", nodes_[node].kind, ") has shape ",
           nodes_[node].shape.str(), " but gradient has shape ", g.shape.str());
    Tensor4<T>& slot = grads_[node];
    if (slot.data.empty()) {
      slot = g.detached();
    } else {
      for (Index i = 0; i < g.numel(); ++i) slot.data[i] += g.data[i];
    }
  }

  void backward(const Tensor4<T>& loss) {
    if (consumed_) fail("Tape::backward: tape already consumed; one backward per tape");
    if (loss.node < 0) fail("Tape::backward: loss is not tracked on this tape");
    check_node(loss.node, "backward");
    if (!(loss.shape == Shape4{1, 1, 1, 1}))
      fail("Tape::backward: loss must be scalar-shaped (1,1,1,1), got ", loss.shape.str());
    grads_.assign(nodes_.size(), Tensor4<T>{});
    accumulate(loss.node, Tensor4<T>::scalar(T(1)));
    for (int id = loss.node; id >= 0; --id) {
      if (!grads_[id].data.empty() && nodes_[id].back) nodes_[id].back(*this, grads_[id]);
      nodes_[id].back = nullptr;  // release saved activations eagerly
    }
    for (auto& n : nodes_) n.back = nullptr;
    consumed_ = true;
  }

  // Gradient of a tracked tensor. Leaves the loss never reached get zeros of
  // their own shape rather than an error.
  Tensor4<T> grad(const Tensor4<T>& t) const {
    if (t.node < 0) fail("Tape::grad: tensor is not tracked on this tape");
    return grad(t.node);
  }

  Tensor4<T> grad(int node) const {
    check_node(node, "grad");
    if (!consumed_) fail("Tape::grad: backward has not run");
    if (grads_[node].data.empty()) return Tensor4<T>::zeros(nodes_[node].shape);
    return grads_[node].detached();
  }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  const Shape4& node_shape(int node) const {
    check_node(node, "node_shape");
    return nodes_[node].shape;
  }

 private:
  struct Node {
    const char* kind;
    Shape4 shape;
    std::vector<int> inputs;
    BackFn back;
  };

  void check_node(int node, const char* who) const {
    if (node < 0 || node >= static_cast<int>(nodes_.size()))
      fail("Tape::", who, ": node id ", node, " out of range (tape has ", nodes_.size(), ")");
  }

  std::vector<Node> nodes_;
  std::vector<Tensor4<T>> grads_;
  bool consumed_ = false;
};

using Tapef = Tape<float>;
using Taped = Tape<double>;

}  // namespace gca
