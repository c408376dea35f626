#pragma once

#include <functional>
#include <span>

#include "mtlta/tensor.hpp"

namespace mtlta {

/// Maximum over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|),
/// where numeric is the central difference with step `eps`.
/// `f` must map x to a scalar and be deterministic.
double gradcheck(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps = 1e-5);

/// Same check over every coordinate of several parameter tensors, which are
/// perturbed in place and restored. `f` rebuilds the loss from scratch.
double gradcheck_params(const std::function<Tensor()>& f, std::span<Tensor> params, double eps = 1e-5);

}  // namespace mtlta
