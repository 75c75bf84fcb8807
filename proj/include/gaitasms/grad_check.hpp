#pragma once

#include "gaitasms/tape.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace gaitasms {

/// Scalar-valued function of one tensor, built on a fresh tape.
using ScalarFn = std::function<Var<double>(Tape<double>&, const Var<double>&)>;

/// Largest |analytic - central difference| / max(1, |analytic|) over the
/// elements of x. Any NaN/Inf in either route is reported as +infinity.
inline double grad_check(const ScalarFn& f, const Tensor<double>& x, double eps = 1e-4) {
  Tensor<double> analytic;
  {
    Tape<double> tape;
    auto xv = tape.leaf(x, true);
    auto loss = f(tape, xv);
    tape.backward(loss);
    analytic = tape.grad(xv);
  }
  auto eval = [&](const Tensor<double>& probe) {
    Tape<double> tape;
    auto xv = tape.leaf(probe, false);
    return f(tape, xv).value()[0];
  };
  double worst = 0;
  Tensor<double> probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = eval(probe);
    probe[i] = orig - eps;
    const double down = eval(probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2 * eps);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    if (!std::isfinite(err)) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace gaitasms
