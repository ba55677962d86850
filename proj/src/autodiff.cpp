#include "gseg/autodiff.hpp"

#include <atomic>
#include <cmath>

namespace gseg {

namespace {
std::atomic<std::uint64_t> next_tape_id{1};
}

template <typename T>
Parameter<T>& ParameterStore<T>::add(std::string name, Tensor<T> value) {
  require(!index_.contains(name), ErrorCode::invalid_argument, "duplicate parameter name: " + name);
  index_.emplace(name, params_.size());
  Tensor<T> grad(value.shape());
  params_.push_back(Parameter<T>{std::move(name), std::move(value), std::move(grad)});
  return params_.back();
}

template <typename T>
Parameter<T>& ParameterStore<T>::get(std::string_view name) {
  auto it = index_.find(std::string(name));
  require(it != index_.end(), ErrorCode::invalid_argument, "unknown parameter: " + std::string(name));
  return params_[it->second];
}

template <typename T>
const Parameter<T>& ParameterStore<T>::get(std::string_view name) const {
  auto it = index_.find(std::string(name));
  require(it != index_.end(), ErrorCode::invalid_argument, "unknown parameter: " + std::string(name));
  return params_[it->second];
}

template <typename T>
bool ParameterStore<T>::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p.grad.fill(T{0});
}

template <typename T>
std::int64_t ParameterStore<T>::scalar_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += static_cast<std::int64_t>(p.value.size());
  return n;
}

template <typename T>
Tape<T>::Tape() : id_(next_tape_id.fetch_add(1)) {}

template <typename T>
std::size_t Tape<T>::check(Var v) const {
  require(v.tape == id_ && v.index < nodes_.size(), ErrorCode::invalid_argument, "variable is not on this tape");
  return v.index;
}

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{id_, nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::variable(Tensor<T> value) {
  Var v = constant(std::move(value));
  nodes_.back().op = "variable";
  nodes_.back().requires_grad = true;
  return v;
}

template <typename T>
Var Tape<T>::parameter(Parameter<T>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{id_, it->second};
  Node n;
  n.op = "parameter";
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return Var{id_, nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::record(std::string_view op, Tensor<T> value, std::vector<Var> inputs, BackwardFn backward) {
  Node n;
  n.op = std::string(op);
  n.value = std::move(value);
  for (const auto& in : inputs) {
    const auto idx = check(in);
    n.inputs.push_back(idx);
    n.requires_grad = n.requires_grad || nodes_[idx].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{id_, nodes_.size() - 1};
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var v) const {
  return nodes_[check(v)].value;
}

template <typename T>
const Tensor<T>& Tape<T>::grad(Var v) const {
  const auto& n = nodes_[check(v)];
  require(n.has_grad, ErrorCode::invalid_argument, "no gradient recorded for node '" + n.op + "'");
  return n.grad;
}

template <typename T>
bool Tape<T>::requires_grad(Var v) const {
  return nodes_[check(v)].requires_grad;
}

template <typename T>
const std::string& Tape<T>::op(Var v) const {
  return nodes_[check(v)].op;
}

template <typename T>
Tensor<T>* Tape<T>::grad_slot(Var v) {
  auto& n = nodes_[check(v)];
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor<T>(n.value.shape());
    n.has_grad = true;
  }
  return &n.grad;
}

template <typename T>
void Tape<T>::backward(Var loss) {
  const auto root = check(loss);
  require(nodes_[root].value.size() == 1, ErrorCode::shape,
          "loss must be a scalar, got shape " + to_string(nodes_[root].value.shape()));
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor<T>();
  }
  if (auto* g = grad_slot(loss)) g->fill(T{1});

  for (std::size_t i = root + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    n.backward(*this, n.grad);
  }

  for (auto& n : nodes_) {
    if (n.param == nullptr) continue;
    n.param->grad = n.has_grad ? n.grad : Tensor<T>(n.param->value.shape());
  }
}

double he_uniform_limit(const Shape& kernel_shape) {
  require(kernel_shape.size() >= 2, ErrorCode::shape, "kernel shape needs at least [c_in, c_out]");
  validate_shape(kernel_shape);
  std::int64_t fan_in = 1;
  for (std::size_t a = 0; a + 1 < kernel_shape.size(); ++a) fan_in *= kernel_shape[a];
  require(fan_in > 0, ErrorCode::shape, "zero fan_in");
  return std::sqrt(6.0 / static_cast<double>(fan_in));
}

template <typename T>
Tensor<T> he_uniform_init(const Shape& kernel_shape, Rng& rng) {
  const double limit = he_uniform_limit(kernel_shape);
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor<T> out(kernel_shape);
  for (auto& v : out.data()) v = static_cast<T>(dist(rng));
  return out;
}

template <typename T>
void adam_step(std::span<Parameter<T>> params, AdamState<T>& state, double learning_rate) {
  if (state.m.empty() && state.step == 0) {
    for (const auto& p : params) {
      state.m.emplace_back(p.value.shape());
      state.v.emplace_back(p.value.shape());
    }
  }
  require(state.m.size() == params.size() && state.v.size() == params.size(), ErrorCode::shape,
          "optimizer state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& shape = params[i].value.shape();
    require(params[i].grad.shape() == shape && state.m[i].shape() == shape && state.v[i].shape() == shape,
            ErrorCode::shape, "shape mismatch for parameter " + params[i].name);
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double lr_t = learning_rate * std::sqrt(1.0 - std::pow(state.beta2, t)) / (1.0 - std::pow(state.beta1, t));
  const T b1 = static_cast<T>(state.beta1);
  const T b2 = static_cast<T>(state.beta2);
  const T eps = static_cast<T>(state.epsilon);
  const T step = static_cast<T>(lr_t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].value.data();
    auto g = params[i].grad.data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (T{1} - b1) * g[j];
      v[j] = b2 * v[j] + (T{1} - b2) * g[j] * g[j];
      w[j] -= step * m[j] / (std::sqrt(v[j]) + eps);
    }
  }
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template class Tape<float>;
template class Tape<double>;
template Tensor<float> he_uniform_init(const Shape&, Rng&);
template Tensor<double> he_uniform_init(const Shape&, Rng&);
template void adam_step(std::span<Parameter<float>>, AdamState<float>&, double);
template void adam_step(std::span<Parameter<double>>, AdamState<double>&, double);

}  // namespace gseg
