#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "adk/error.hpp"
#include "adk/tensor.hpp"

namespace adk::ad {

template <class T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <class T>
class Var {
 public:
  Var() = default;

  const Tensor<T>& value() const { return tape_->value(*this); }
  const Shape& shape() const { return value().shape(); }
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradients of a scalar loss with respect to every gradient-tracked leaf.
template <class T>
class GradientMap {
 public:
  const Tensor<T>& operator[](const Var<T>& leaf) const {
    auto it = grads_.find(leaf.id());
    if (it == grads_.end()) throw UsageError("no gradient recorded for this variable (not a tracked leaf)");
    return it->second;
  }

  Tensor<T> take(const Var<T>& leaf) {
    auto it = grads_.find(leaf.id());
    if (it == grads_.end()) throw UsageError("no gradient recorded for this variable (not a tracked leaf)");
    return std::move(it->second);
  }

  std::size_t size() const noexcept { return grads_.size(); }

 private:
  friend class Tape<T>;
  std::unordered_map<std::size_t, Tensor<T>> grads_;
};

/// Records one forward pass. Nodes are appended in creation order, so the
/// record is topologically sorted by construction; backward() walks it in reverse
/// once and consumes the tape.
///
/// Every recorded value is checked for NaN/Inf. A tape is confined to one thread.
template <class T>
class Tape {
 public:
  /// Receives the gradient flowing into the node's output and accumulates into its inputs.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value with no gradient (images, targets).
  Var<T> constant(Tensor<T> value) { return push_leaf(std::move(value), nullptr, false); }

  /// Owned leaf whose gradient is reported by backward().
  Var<T> variable(Tensor<T> value) { return push_leaf(std::move(value), nullptr, true); }

  /// Gradient-tracked leaf referencing an external tensor (a model parameter).
  /// The tensor must outlive the tape and stay unmodified until backward() returns.
  Var<T> watch(const Tensor<T>& param) { return push_leaf(Tensor<T>{}, &param, true); }

  /// Untracked leaf referencing an external tensor (parameters during inference).
  Var<T> reference(const Tensor<T>& value) { return push_leaf(Tensor<T>{}, &value, false); }

  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward,
                const char* op) {
    return record(std::move(value), std::vector<Var<T>>(inputs), std::move(backward), op);
  }

  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn backward, const char* op) {
    check_open();
    bool needs = false;
    for (const auto& in : inputs) {
      if (in.tape_ != this) throw UsageError(std::string(op) + ": input belongs to a different tape");
      needs = needs || nodes_[in.id_].requires_grad;
    }
    if (!value.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
    Node n;
    n.owned = std::move(value);
    n.requires_grad = needs;
    n.op = op;
    if (needs) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  const Tensor<T>& value(const Var<T>& v) const {
    const Node& n = nodes_.at(v.id_);
    return n.ref ? *n.ref : n.owned;
  }

  bool requires_grad(const Var<T>& v) const { return nodes_.at(v.id_).requires_grad; }

  /// Zero-initialized on first access. Only meaningful during backward().
  Tensor<T>& grad_buffer(const Var<T>& v) {
    Node& n = nodes_.at(v.id_);
    if (!n.has_grad) {
      n.grad = Tensor<T>(value(v).shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  void accumulate(const Var<T>& v, const Tensor<T>& g) {
    if (!requires_grad(v)) return;
    Tensor<T>& buf = grad_buffer(v);
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
  }

  GradientMap<T> backward(const Var<T>& loss) {
    check_open();
    if (loss.tape_ != this) throw UsageError("backward: loss belongs to a different tape");
    if (value(loss).size() != 1) {
      throw UsageError("backward requires a scalar loss, got shape " + to_string(value(loss).shape()));
    }
    if (!requires_grad(loss)) throw UsageError("backward: loss is not connected to any tracked leaf");

    grad_buffer(loss)[0] = T{1};
    for (std::size_t id = loss.id_ + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.leaf || !n.requires_grad || !n.has_grad) continue;
      Tensor<T> g = std::move(n.grad);
      n.has_grad = false;
      n.backward(*this, g);
      n.backward = nullptr;
    }

    GradientMap<T> out;
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      Node& n = nodes_[id];
      if (!n.leaf || !n.requires_grad) continue;
      out.grads_.emplace(id, n.has_grad ? std::move(n.grad) : Tensor<T>(value(Var<T>(this, id)).shape()));
    }
    consumed_ = true;
    return out;
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

 private:
  friend class Var<T>;

  struct Node {
    Tensor<T> owned;
    const Tensor<T>* ref = nullptr;
    Tensor<T> grad;
    BackwardFn backward;
    const char* op = "";
    bool requires_grad = false;
    bool leaf = false;
    bool has_grad = false;
  };

  Var<T> push_leaf(Tensor<T> value, const Tensor<T>* ref, bool requires_grad) {
    check_open();
    Node n;
    n.owned = std::move(value);
    n.ref = ref;
    n.requires_grad = requires_grad;
    n.leaf = true;
    n.op = "leaf";
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  void check_open() const {
    if (consumed_) throw UsageError("tape already consumed by backward()");
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace adk::ad
