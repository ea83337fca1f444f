#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "aerialvg/rng.hpp"
#include "aerialvg/tensor.hpp"

namespace aerialvg {

inline constexpr double kGradCheckStep = 1e-5;

// Max over coordinates of |autodiff - central difference| / max(1, |autodiff|).
// `f` must build its graph from `x`; x is treated as a leaf. When `coords` is
// empty every coordinate is checked.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = kGradCheckStep,
                  std::span<const std::size_t> coords = {});

struct ParamCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
};

// Same measure over a set of named leaves. `loss` is re-evaluated for every
// perturbation. At most `coords_per_param` coordinates are sampled per leaf.
std::vector<ParamCheck> grad_check_params(const std::function<Tensor()>& loss,
                                          const std::vector<std::pair<std::string, Tensor>>& params,
                                          std::size_t coords_per_param, RngState& rng,
                                          double h = kGradCheckStep);

}  // namespace aerialvg
