#include "pcc/distributions.hpp"

#include <cmath>
#include <numbers>

namespace pcc {
namespace {

void check_pair(const char* op, const GaussianParams& g) {
  if (g.mean.shape != g.logvar.shape)
    throw ShapeError(std::string(op) + ": mean/logvar shape mismatch");
}

}  // namespace

Tensor gaussian_kl_diag(const GaussianParams& q, const GaussianParams& p) {
  check_pair("gaussian_kl_diag", q);
  check_pair("gaussian_kl_diag", p);
  if (q.mean.shape != p.mean.shape)
    throw ShapeError("gaussian_kl_diag: q and p shapes differ");
  // 0.5 * sum(lv_p - lv_q + exp(lv_q - lv_p) + (mu_q - mu_p)^2 exp(-lv_p) - 1)
  Tensor dlv = sub(q.logvar, p.logvar);
  Tensor dm = sub(q.mean, p.mean);
  Tensor term = add(exp_elem(dlv), mul(mul(dm, dm), exp_elem(scale(p.logvar, -1.0))));
  term = sub(add_scalar(term, -1.0), dlv);
  return scale(sum_all(term), 0.5);
}

Tensor gaussian_entropy_diag(const GaussianParams& q) {
  check_pair("gaussian_entropy_diag", q);
  double d = static_cast<double>(q.mean.size());
  double c = 0.5 * d * std::log(2.0 * std::numbers::pi * std::numbers::e);
  return add_scalar(scale(sum_all(q.logvar), 0.5), c);
}

Tensor gaussian_log_prob(const GaussianParams& p, const Tensor& x) {
  check_pair("gaussian_log_prob", p);
  if (x.shape != p.mean.shape)
    throw ShapeError("gaussian_log_prob: x shape does not match distribution");
  double d = static_cast<double>(x.size());
  Tensor r = sub(x, p.mean);
  Tensor quad = mul(mul(r, r), exp_elem(scale(p.logvar, -1.0)));
  Tensor s = add(quad, p.logvar);
  double c = 0.5 * d * std::log(2.0 * std::numbers::pi);
  return add_scalar(scale(sum_all(s), -0.5), -c);
}

Tensor reparam_sample(const GaussianParams& p, RngStream& rng) {
  check_pair("reparam_sample", p);
  std::vector<double> eps(p.mean.size());
  for (double& e : eps) e = rng.normal();
  Tensor eps_t = p.mean.tape->constant(std::move(eps), p.mean.shape);
  return add(p.mean, mul(exp_elem(scale(p.logvar, 0.5)), eps_t));
}

}  // namespace pcc
