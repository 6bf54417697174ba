#pragma once

#include <functional>
#include <vector>

#include "gnnflavors/tensor.hpp"

namespace gnnflavors::tg {

// Compares reverse-mode gradients of a scalar loss against central finite
// differences. `loss_fn` must rebuild the forward pass from the current data
// of `leaves` on every call. Returns the maximum over all leaf coordinates of
//   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
//
// The analytic pass runs under a KinkGuard: if any kinked activation saw an
// input within 1e-3 of its kink, a PreconditionError is thrown so the caller
// can resample instead of trusting a difference quotient across the kink.
double gradcheck_leaves(const std::function<TensorPtr()>& loss_fn,
                        const std::vector<TensorPtr>& leaves, double eps);

// Single-input convenience form; x is marked as requiring gradients.
double gradcheck(const std::function<TensorPtr(const TensorPtr&)>& f, const TensorPtr& x,
                 double eps);

}  // namespace gnnflavors::tg
