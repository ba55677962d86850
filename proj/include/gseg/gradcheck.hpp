#pragma once

// Central finite-difference checks of the analytic gradients, in binary64.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gseg/autodiff.hpp"

namespace gseg {

using GradFn = std::function<Var(Tape<double>&, std::span<const Var>)>;

// Projects f's output onto a fixed random direction R, so the checked scalar
// is sum(f(inputs) * R). Returns the norm-wise relative error
// ||g_analytic - g_numeric|| / max(||g_analytic||, ||g_numeric||) over all inputs.
double gradcheck(const GradFn& f, const std::vector<Tensor<double>>& inputs, Rng& rng, double h = 1e-5);

struct GradcheckCase {
  std::string name;
  double rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckCase> cases;
  double max_rel_error = 0.0;
};

inline constexpr double kGradcheckTolerance = 1e-4;

// Every differentiable operator and both loss terms on random inputs of
// spatial extent <= 6.
GradcheckReport run_gradcheck_suite(std::uint64_t seed = 0);

}  // namespace gseg
