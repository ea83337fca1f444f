#pragma once

// Finite-difference checks for every differentiable op, plus the full model.
// Shared by the command-line tool and the test suites.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "aerialvg/rng.hpp"

namespace aerialvg {

struct OpCheck {
  std::string name;
  std::function<double(RngState&)> run;  // returns max relative error
};

const std::vector<OpCheck>& op_checks();

struct OpCheckResult {
  std::string name;
  double max_rel_error = 0.0;
};

// Runs all checks, or only the one called `only`. Throws std::invalid_argument
// for an unknown name.
std::vector<OpCheckResult> run_op_checks(std::uint64_t seed, const std::string& only = "");

struct ModelCheckResult {
  double stage1 = 0.0;  // worst relative error over sampled backbone coordinates
  double stage2 = 0.0;  // same for relation coordinates
  std::size_t coords = 0;
};

// d = 32, 64 x 64 image, m = 8, one generated scene, parameters jittered by
// 1e-3 so no activation sits exactly on a kink.
ModelCheckResult full_model_grad_check(std::uint64_t seed, std::size_t coords_per_param = 2);

}  // namespace aerialvg
