#pragma once

// Training objective: weighted soft Dice loss plus categorical focal loss
// with unit weight. Both take softmax probabilities [..., C] and a one-hot
// target of the same shape.

#include <span>

#include "gseg/autodiff.hpp"

namespace gseg {

inline constexpr double kDiceSmoothing = 1e-6;
inline constexpr double kProbabilityClamp = 1e-7;

struct FocalParams {
  double gamma = 2.0;
};

// Per class c (sums pooled over batch and space):
//   D_c = (2 sum p g + eps) / (sum p + sum g + eps),  loss = 1 - sum_c w_c D_c
template <typename T>
Var soft_dice_loss(Tape<T>& tape, Var probs, const Tensor<T>& onehot, std::span<const double> class_weights);

// mean over voxels of -(1 - p_t)^gamma ln(p_t), p_t clamped to [1e-7, 1 - 1e-7].
template <typename T>
Var categorical_focal_loss(Tape<T>& tape, Var probs, const Tensor<T>& onehot, FocalParams params = {});

struct LossTerms {
  Var total;
  Var dice;
  Var focal;
};

// total = dice + 1 * focal
template <typename T>
LossTerms total_loss(Tape<T>& tape, Var probs, const Tensor<T>& onehot, std::span<const double> class_weights,
                     FocalParams params = {});

}  // namespace gseg
