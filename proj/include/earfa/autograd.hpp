#pragma once

// Reverse-mode differentiation over Tensor. A Tape records one node per
// differentiable operation in execution order; backward() walks that list in
// reverse, which is a reverse topological order because every node's inputs
// were created before it.

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "earfa/kernels.hpp"
#include "earfa/tensor.hpp"

namespace earfa {

template <class T>
class Tape;

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  bool has_grad = false;
  const char* op = "leaf";
  std::function<void(const Tensor<T>&)> backward;

  void accumulate(const Tensor<T>& g);
  void clear_grad() {
    grad = Tensor<T>();
    has_grad = false;
  }
};

template <class T>
class Var {
 public:
  Var() = default;

  // A value outside any tape; never receives gradients.
  static Var constant(Tensor<T> value) {
    Var v;
    v.node_ = std::make_shared<Node<T>>();
    v.node_->value = std::move(value);
    return v;
  }

  bool valid() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tape<T>* tape() const { return tape_; }

  // Accumulated gradient; zeros when nothing flowed into this value.
  Tensor<T> grad() const {
    if (node_->has_grad) return node_->grad;
    return Tensor<T>(node_->value.shape());
  }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  friend class Tape<T>;
  std::shared_ptr<Node<T>> node_;
  Tape<T>* tape_ = nullptr;
};

template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(const Tensor<T>&)>;

  // With record = false nothing is retained: outputs carry no history and
  // intermediates are freed as soon as callers drop them.
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = true);
  Var<T> constant(Tensor<T> value);

  // Creates the output of an operation. `backward` receives dL/d(out) and
  // must push gradients into the input nodes it captured.
  Var<T> record(const char* op, Tensor<T> out, std::initializer_list<const Var<T>*> inputs,
                BackwardFn backward);

  // Seeds dL/dL = 1 and propagates. Gradients from any previous call are
  // discarded first.
  void backward(const Var<T>& loss);

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }
  // Operator names in recording order.
  std::vector<std::string> ops() const;

 private:
  bool record_;
  std::vector<std::shared_ptr<Node<T>>> leaves_;
  std::vector<std::shared_ptr<Node<T>>> nodes_;
};

// Differentiable operators.
namespace ag {

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>* bias, const kernels::ConvParams& p);
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps);
template <class T>
Var<T> channel_shift(const Var<T>& x, int shift_px = 1);
template <class T>
Var<T> pixel_shuffle(const Var<T>& x, int r);
template <class T>
Var<T> sigmoid(const Var<T>& x);
template <class T>
Var<T> relu(const Var<T>& x);
template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T>
std::pair<Var<T>, Var<T>> split_channels(const Var<T>& x, int first);
template <class T>
Var<T> channel_var(const Var<T>& x);
template <class T>
Var<T> channel_mean(const Var<T>& x);
// Elementwise 0.5 * ln(2*pi*(v + eps)).
template <class T>
Var<T> gaussian_entropy(const Var<T>& var, T eps);
template <class T>
Var<T> sum(const Var<T>& x);
template <class T>
Var<T> mean(const Var<T>& x);
// Mean absolute error; sub-gradient 0 where pred == target.
template <class T>
Var<T> l1_loss(const Var<T>& pred, const Var<T>& target);

}  // namespace ag
}  // namespace earfa
