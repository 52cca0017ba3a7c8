#pragma once

#include "pcc/rng.hpp"
#include "pcc/tensor.hpp"

namespace pcc {

// Diagonal Gaussian in mean/log-variance form. Tensors are [d] or [B x d];
// producers clamp logvar to [kLogvarMin, kLogvarMax] before building one.
struct GaussianParams {
  Tensor mean;
  Tensor logvar;
};

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

// All reductions sum over every entry (batch and dimension alike), so a
// [1 x d] input gives the per-sample value and batched callers divide by B.

// KL(q || p), closed form.
Tensor gaussian_kl_diag(const GaussianParams& q, const GaussianParams& p);

// H(q) = 0.5 * sum(logvar) + (d/2) * log(2*pi*e), with d = total entry count.
Tensor gaussian_entropy_diag(const GaussianParams& q);

// log N(x; mean, diag(exp(logvar))).
Tensor gaussian_log_prob(const GaussianParams& p, const Tensor& x);

// mean + exp(logvar/2) * eps with eps ~ N(0, I) drawn from `rng` as a
// constant, so gradients flow only through mean and logvar.
Tensor reparam_sample(const GaussianParams& p, RngStream& rng);

}  // namespace pcc
