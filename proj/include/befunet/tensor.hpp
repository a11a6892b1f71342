#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "befunet/common.hpp"

namespace befunet {

namespace detail {
inline std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor dims must be positive");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}
inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}
}  // namespace detail

// Dense row-major tensor. A Tensor is a cheap handle onto a shared node
// holding value and (when tracked) gradient storage. Parameters are
// created with requires_grad; intermediates become tracked when an op
// records them on an active tape. Gradients accumulate; callers zero them.
template <typename T>
class Tensor {
  struct Node {
    std::vector<int> shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    bool tracked = false;
  };

 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape) {
    return make(std::move(shape), T(0), false);
  }
  static Tensor full(std::vector<int> shape, T v) {
    return make(std::move(shape), v, false);
  }
  static Tensor scalar(T v) { return full({1}, v); }
  static Tensor from_data(std::vector<int> shape, std::vector<T> data) {
    const std::size_t n = detail::shape_numel(shape);
    if (n != data.size())
      throw ShapeError("from_data: shape " + detail::shape_str(shape) +
                       " does not match " + std::to_string(data.size()) +
                       " elements");
    Tensor t;
    t.n_ = std::make_shared<Node>();
    t.n_->shape = std::move(shape);
    t.n_->value = std::move(data);
    return t;
  }
  static Tensor param(std::vector<int> shape, std::vector<T> data) {
    Tensor t = from_data(std::move(shape), std::move(data));
    t.n_->requires_grad = true;
    t.n_->tracked = true;
    t.n_->grad.assign(t.numel(), T(0));
    return t;
  }

  bool defined() const { return n_ != nullptr; }
  const std::vector<int>& shape() const { return n_->shape; }
  int dim(int i) const { return n_->shape.at(static_cast<std::size_t>(i)); }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  std::size_t numel() const { return n_->value.size(); }

  std::vector<T>& value() { return n_->value; }
  const std::vector<T>& value() const { return n_->value; }

  bool requires_grad() const { return n_->requires_grad; }
  bool tracked() const { return n_->tracked; }

  void mark_tracked() {
    if (!n_->tracked) {
      n_->tracked = true;
      n_->grad.assign(numel(), T(0));
    }
  }
  std::vector<T>& grad() {
    if (!n_->tracked) throw ContractError("grad() on untracked tensor");
    return n_->grad;
  }
  const std::vector<T>& grad() const {
    if (!n_->tracked) throw ContractError("grad() on untracked tensor");
    return n_->grad;
  }
  void zero_grad() {
    if (n_->tracked) n_->grad.assign(numel(), T(0));
  }

  T item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor");
    return n_->value[0];
  }

  bool same_node(const Tensor& o) const { return n_ == o.n_; }

 private:
  static Tensor make(std::vector<int> shape, T fill, bool rg) {
    const std::size_t n = detail::shape_numel(shape);
    Tensor t;
    t.n_ = std::make_shared<Node>();
    t.n_->shape = std::move(shape);
    t.n_->value.assign(n, fill);
    if (rg) {
      t.n_->requires_grad = true;
      t.n_->tracked = true;
      t.n_->grad.assign(n, T(0));
    }
    return t;
  }

  std::shared_ptr<Node> n_;
};

// Reverse-mode tape. Ops append backward closures in execution order;
// backward() replays them in reverse, which is a valid topological order
// because every op is recorded after its inputs exist. One tape per
// forward pass; backward clears it.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> fn) { entries_.push_back(std::move(fn)); }
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  void backward(Tensor<T> loss) {
    if (!loss.defined() || loss.numel() != 1)
      throw ContractError("backward: loss must be a defined scalar tensor");
    if (!loss.tracked()) {
      // Detached graph: nothing reachable, grads stay as they are (zero
      // if freshly cleared). Not an error.
      clear();
      return;
    }
    loss.grad()[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    clear();
  }

 private:
  std::vector<std::function<void()>> entries_;
};

}  // namespace befunet
