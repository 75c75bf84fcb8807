#pragma once

// Finite-difference sweep over every differentiable operation, the full head
// and a micro-scale model, in double precision.

#include <cstdint>
#include <string>
#include <vector>

namespace gaitasms {

struct GradCheckResult {
  std::string name;
  double error = 0;  // max relative difference, see grad_check()
};

constexpr double kGradTolerance = 1e-4;

std::vector<GradCheckResult> gradient_suite(std::uint64_t seed);

}  // namespace gaitasms
