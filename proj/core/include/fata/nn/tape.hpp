#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <stdexcept>
#include <vector>

#include "fata/nn/tensor.hpp"

namespace fata::nn {

/// Handle to a node on a Tape.
struct Var {
  static constexpr std::uint32_t kInvalid = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t id = kInvalid;
  [[nodiscard]] bool valid() const { return id != kInvalid; }
};

/// Reverse-mode recording of one forward pass. Nodes are appended in creation
/// order, so reverse creation order is a valid reverse topological order; the
/// backward sweep visits each node once.
template <typename T>
class Tape {
 public:
  /// Receives the node's accumulated gradient; adds into input gradients via
  /// Tape::grad_of.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  /// With `record == false` no backward closures are kept (inference).
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf with no gradient.
  Var constant(Tensor<T> value) { return push(std::move(value), nullptr, false, nullptr, {}); }

  /// Leaf whose gradient can be read back with grad() after backward().
  Var input(Tensor<T> value, bool requires_grad = true) {
    return push(std::move(value), nullptr, requires_grad && record_, nullptr, {});
  }

  /// Leaf referring to externally owned storage (a parameter). The gradient
  /// is added into `sink` during backward(); a null sink means no gradient.
  Var bind(const Tensor<T>& value, Tensor<T>* sink) {
    return push(Tensor<T>{}, &value, sink != nullptr && record_, sink, {});
  }

  /// Appends an op result. It needs a gradient iff any input does.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool needs = false;
    if (record_) {
      for (Var v : inputs) needs = needs || nodes_.at(v.id).requires_grad;
    }
    return push(std::move(value), nullptr, needs, nullptr, needs ? std::move(fn) : BackwardFn{});
  }

  template <typename Range>
  Var record_many(Tensor<T> value, const Range& inputs, BackwardFn fn) {
    bool needs = false;
    if (record_) {
      for (Var v : inputs) needs = needs || nodes_.at(v.id).requires_grad;
    }
    return push(std::move(value), nullptr, needs, nullptr, needs ? std::move(fn) : BackwardFn{});
  }

  [[nodiscard]] const Tensor<T>& value(Var v) const {
    const auto& n = nodes_.at(v.id);
    return n.external ? *n.external : n.owned;
  }

  [[nodiscard]] bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  [[nodiscard]] bool recording() const { return record_; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  /// Gradient accumulator for `v`, allocated as zeros on first use.
  Tensor<T>& grad_of(Var v) {
    auto& n = nodes_.at(v.id);
    if (n.grad.empty()) {
      const auto& val = n.external ? *n.external : n.owned;
      n.grad = Tensor<T>(val.rows(), val.cols());
    }
    return n.grad;
  }

  /// Gradient of `v` after backward(); empty if it never received one.
  [[nodiscard]] const Tensor<T>& grad(Var v) const { return nodes_.at(v.id).grad; }

  /// Runs the reverse sweep from a 1 x 1 node. May be called once per tape.
  void backward(Var loss, T seed = T(1)) {
    if (!loss.valid() || loss.id >= nodes_.size()) throw std::logic_error("backward on a node not recorded on this tape");
    if (backward_done_) throw std::logic_error("backward already ran on this tape");
    if (!record_) throw std::logic_error("backward on a non-recording tape");
    const auto& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) throw std::logic_error("backward needs a scalar loss");
    backward_done_ = true;
    if (!nodes_[loss.id].requires_grad) return;
    grad_of(loss)[0] += seed;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.fn) n.fn(*this, n.grad);
      if (n.sink) {
        auto* dst = n.sink->data();
        const auto* src = n.grad.data();
        for (std::size_t k = 0; k < n.grad.size(); ++k) dst[k] += src[k];
      }
    }
  }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    BackwardFn fn;
    Tensor<T>* sink = nullptr;
    bool requires_grad = false;
  };

  Var push(Tensor<T> value, const Tensor<T>* external, bool requires_grad, Tensor<T>* sink, BackwardFn fn) {
    Node n;
    n.owned = std::move(value);
    n.external = external;
    n.requires_grad = requires_grad;
    n.sink = sink;
    n.fn = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
  bool record_ = true;
  bool backward_done_ = false;
};

}  // namespace fata::nn
