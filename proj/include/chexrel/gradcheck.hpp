#pragma once

#include <functional>

#include "chexrel/params.hpp"
#include "chexrel/tensor.hpp"

namespace chexrel::nd {

// Compares the analytic gradient of a traced scalar function against central
// finite differences (f(x+h) - f(x-h)) / 2h for every parameter coordinate.
// Returns the worst relative error, |a - n| / max(|a|, |n|, 1).
// The function must be deterministic; an active dropout op is rejected.
double grad_check(const std::function<Tensor()>& f, ParamStore& params, double h = 1e-5);

}  // namespace chexrel::nd
