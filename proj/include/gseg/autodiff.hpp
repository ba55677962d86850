#pragma once

// Reverse-mode automatic differentiation over Tensor<T>.
//
// A Tape records every operation as it runs. Nodes are appended in creation
// order, so replaying them backwards visits each node after all of its
// consumers. A Tape is single-threaded; separate tapes are independent.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gseg/tensor.hpp"

namespace gseg {

using Rng = std::mt19937_64;

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

// Named parameters in creation order. References stay valid as long as no
// parameter is added, so finish building before recording tapes against it.
template <typename T>
class ParameterStore {
 public:
  Parameter<T>& add(std::string name, Tensor<T> value);
  Parameter<T>& get(std::string_view name);
  const Parameter<T>& get(std::string_view name) const;
  bool contains(std::string_view name) const;
  void zero_grad();

  std::span<Parameter<T>> items() noexcept { return params_; }
  std::span<const Parameter<T>> items() const noexcept { return params_; }
  std::size_t size() const noexcept { return params_.size(); }
  std::int64_t scalar_count() const;

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Var {
  std::uint64_t tape = 0;
  std::size_t index = 0;
};

template <typename T>
class Tape {
 public:
  // Propagates the node's output gradient into its inputs via grad_slot().
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor<T> value);
  Var variable(Tensor<T> value);
  Var parameter(Parameter<T>& p);

  Var record(std::string_view op, Tensor<T> value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor<T>& value(Var v) const;
  const Tensor<T>& grad(Var v) const;
  bool requires_grad(Var v) const;
  const std::string& op(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  // Gradient accumulator of an input, allocated on first use; nullptr when
  // the input does not require a gradient.
  Tensor<T>* grad_slot(Var v);

  // Seeds d(loss)/d(loss) = 1, replays the tape, and writes the resulting
  // gradient into every registered Parameter (zero if unreached).
  void backward(Var loss);

 private:
  struct Node {
    std::string op;
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
  };

  std::size_t check(Var v) const;

  std::uint64_t id_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
};

// He-uniform: i.i.d. U[-L, L], L = sqrt(6 / fan_in), fan_in = product of all
// but the last extent.
template <typename T>
Tensor<T> he_uniform_init(const Shape& kernel_shape, Rng& rng);
double he_uniform_limit(const Shape& kernel_shape);

// Adam in the epsilon-hat form:
//   lr_t = lr * sqrt(1 - b2^t) / (1 - b1^t);  w -= lr_t * m / (sqrt(v) + eps)
template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  std::int64_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
};

template <typename T>
void adam_step(std::span<Parameter<T>> params, AdamState<T>& state, double learning_rate = 1e-4);

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace gseg
