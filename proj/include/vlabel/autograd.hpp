#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vlabel/tensor.hpp"

namespace vlabel {

template <typename T>
class Tape;

/// Handle to a tensor recorded on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  /// Gradient after `Tape::backward`, or nullptr when the node never received one.
  const Tensor<T>* grad() const;
};

/// Raised when a backward pass is requested on a non-scalar or foreign value.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Linear record of primitive operations. Nodes are appended in evaluation
/// order, so node ids are already a topological order. Single-owner.
template <typename T>
class Tape {
 public:
  /// Adds `grad_out`-weighted contributions into each non-null input gradient.
  using BackwardFn =
      std::function<void(const Tape& tape, const Tensor<T>& grad_out, std::vector<Tensor<T>*>& input_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> parameter(Tensor<T> value);

  /// Records a derived value. It requires grad when any input does.
  Var<T> record(Tensor<T> value, std::vector<Var<T>> inputs, BackwardFn backward);

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor<T>& value(Var<T> v) const { return value(v.id); }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const Tensor<T>* grad(std::size_t id) const {
    const auto& g = nodes_.at(id).grad;
    return g ? &*g : nullptr;
  }

  /// Reverse sweep from a scalar. Gradients accumulate into existing slots;
  /// call `zero_grad` between independent sweeps.
  void backward(Var<T> loss);
  void zero_grad();

  std::size_t size() const noexcept { return nodes_.size(); }
  /// Number of nodes whose backward rule ran in the last sweep.
  std::size_t last_backward_visits() const noexcept { return visits_; }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    std::optional<Tensor<T>> grad;
  };

  void check_owner(Var<T> v) const;

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(id);
}
template <typename T>
bool Var<T>::requires_grad() const {
  return tape->requires_grad(id);
}
template <typename T>
const Tensor<T>* Var<T>::grad() const {
  return tape->grad(id);
}

// Differentiable primitives. All inputs must live on the same tape.
template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T factor);
template <typename T>
Var<T> sum(Var<T> a);
template <typename T>
Var<T> reshape(Var<T> a, Shape shape);
template <typename T>
Var<T> contract(Var<T> a, Var<T> b, const AxisPairs& axes);

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / 2 eps for every element.
/// Throws std::domain_error if f returns a non-finite value.
template <typename T>
Tensor<T> finite_difference(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x, T eps);

/// |a - b| / max(|a|, |b|, floor), element-wise maximum.
template <typename T>
double max_relative_error(const Tensor<T>& a, const Tensor<T>& b, double floor);

}  // namespace vlabel
