#include "gseg/losses.hpp"

#include <cmath>
#include <memory>
#include <vector>

#include "gseg/ops.hpp"

namespace gseg {

namespace {

template <typename T>
void check_pair(const Tensor<T>& probs, const Tensor<T>& onehot) {
  require(probs.shape() == onehot.shape(), ErrorCode::shape,
          "probabilities " + to_string(probs.shape()) + " and target " + to_string(onehot.shape()) + " differ");
  require(probs.rank() >= 1, ErrorCode::shape, "loss inputs need a class axis");
}

}  // namespace

template <typename T>
Var soft_dice_loss(Tape<T>& tape, Var probs, const Tensor<T>& onehot, std::span<const double> class_weights) {
  const auto& p = tape.value(probs);
  check_pair(p, onehot);
  const auto c = static_cast<std::size_t>(p.channels());
  require(class_weights.size() == c, ErrorCode::invalid_argument,
          "class weight vector has length " + std::to_string(class_weights.size()) + ", expected " + std::to_string(c));

  std::vector<double> inter(c, 0.0), psum(c, 0.0), gsum(c, 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto k = i % c;
    inter[k] += static_cast<double>(p[i]) * static_cast<double>(onehot[i]);
    psum[k] += static_cast<double>(p[i]);
    gsum[k] += static_cast<double>(onehot[i]);
  }
  // dL/dp[v,k] = -w_k (2 g[v,k] S_k - N_k) / S_k^2 with N_k = 2I_k + eps, S_k = P_k + G_k + eps
  auto coef_a = std::make_shared<std::vector<double>>(c);
  auto coef_b = std::make_shared<std::vector<double>>(c);
  double loss = 1.0;
  for (std::size_t k = 0; k < c; ++k) {
    const double num = 2.0 * inter[k] + kDiceSmoothing;
    const double den = psum[k] + gsum[k] + kDiceSmoothing;
    loss -= class_weights[k] * num / den;
    (*coef_a)[k] = -class_weights[k] * 2.0 / den;
    (*coef_b)[k] = class_weights[k] * num / (den * den);
  }
  auto target = std::make_shared<Tensor<T>>(onehot);
  return tape.record("soft_dice_loss", Tensor<T>::scalar(static_cast<T>(loss)), {probs},
                     [probs, target, coef_a, coef_b, c](Tape<T>& t, const Tensor<T>& dy) {
                       auto* dp = t.grad_slot(probs);
                       if (!dp) return;
                       const double up = static_cast<double>(dy[0]);
                       for (std::size_t i = 0; i < dp->size(); ++i) {
                         const auto k = i % c;
                         const double g = static_cast<double>((*target)[i]);
                         (*dp)[i] += static_cast<T>(up * ((*coef_a)[k] * g + (*coef_b)[k]));
                       }
                     });
}

template <typename T>
Var categorical_focal_loss(Tape<T>& tape, Var probs, const Tensor<T>& onehot, FocalParams params) {
  require(std::isfinite(params.gamma) && params.gamma >= 0.0, ErrorCode::invalid_argument,
          "focal gamma must be finite and >= 0");
  const auto& p = tape.value(probs);
  check_pair(p, onehot);
  const auto c = static_cast<std::size_t>(p.channels());
  const std::size_t voxels = p.size() / c;
  const double gamma = params.gamma;
  const double lo = kProbabilityClamp;
  const double hi = 1.0 - kProbabilityClamp;

  // Per-voxel derivative of the loss with respect to p_t, already divided by the voxel count.
  auto dpt = std::make_shared<std::vector<double>>(voxels);
  double total = 0.0;
  for (std::size_t v = 0; v < voxels; ++v) {
    double pt = 0.0;
    for (std::size_t k = 0; k < c; ++k)
      pt += static_cast<double>(p[v * c + k]) * static_cast<double>(onehot[v * c + k]);
    const bool clamped = pt < lo || pt > hi;
    const double q = std::min(std::max(pt, lo), hi);
    const double lq = std::log(q);
    const double focus = std::pow(1.0 - q, gamma);
    total += -focus * lq;
    if (!clamped) {
      const double d_focus = gamma == 0.0 ? 0.0 : gamma * std::pow(1.0 - q, gamma - 1.0) * lq;
      (*dpt)[v] = (d_focus - focus / q) / static_cast<double>(voxels);
    }
  }
  auto target = std::make_shared<Tensor<T>>(onehot);
  return tape.record("categorical_focal_loss", Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(voxels))),
                     {probs}, [probs, target, dpt, c](Tape<T>& t, const Tensor<T>& dy) {
                       auto* dp = t.grad_slot(probs);
                       if (!dp) return;
                       const double up = static_cast<double>(dy[0]);
                       for (std::size_t i = 0; i < dp->size(); ++i)
                         (*dp)[i] += static_cast<T>(up * (*dpt)[i / c] * static_cast<double>((*target)[i]));
                     });
}

template <typename T>
LossTerms total_loss(Tape<T>& tape, Var probs, const Tensor<T>& onehot, std::span<const double> class_weights,
                     FocalParams params) {
  const Var dice = soft_dice_loss(tape, probs, onehot, class_weights);
  const Var focal = categorical_focal_loss(tape, probs, onehot, params);
  return {ops::add(tape, dice, focal), dice, focal};
}

template Var soft_dice_loss(Tape<float>&, Var, const Tensor<float>&, std::span<const double>);
template Var soft_dice_loss(Tape<double>&, Var, const Tensor<double>&, std::span<const double>);
template Var categorical_focal_loss(Tape<float>&, Var, const Tensor<float>&, FocalParams);
template Var categorical_focal_loss(Tape<double>&, Var, const Tensor<double>&, FocalParams);
template LossTerms total_loss(Tape<float>&, Var, const Tensor<float>&, std::span<const double>, FocalParams);
template LossTerms total_loss(Tape<double>&, Var, const Tensor<double>&, std::span<const double>, FocalParams);

}  // namespace gseg
