#include "pcc/losses.hpp"

#include <cstdio>

#include "pcc/distributions.hpp"
#include "pcc/errors.hpp"

namespace pcc {

namespace {

size_t batch_rows(const Triple& in, const char* who) {
  if (in.x.shape.size() != 2 || in.u.shape.size() != 2 || in.xn.shape.size() != 2)
    throw ShapeError(std::string(who) + ": triple tensors must be [B x dim]");
  size_t b = in.x.rows();
  if (in.u.rows() != b || in.xn.rows() != b)
    throw ShapeError(std::string(who) + ": triple batch sizes disagree");
  return b;
}

Tensor noise_const(Tape& t, size_t rows, size_t cols, RngStream& rng, double stddev) {
  std::vector<double> v(rows * cols);
  for (double& e : v) e = rng.normal(0.0, stddev);
  return t.constant(std::move(v), {rows, cols});
}

GaussianParams std_normal(Tape& t, size_t rows, size_t cols) {
  std::vector<double> zeros(rows * cols, 0.0);
  return {t.constant(zeros, {rows, cols}), t.constant(zeros, {rows, cols})};
}

// Bound pieces with the encoder posteriors supplied by the caller, so
// total_loss can share one encoder pass across terms.
BoundTerms bound_terms_pre(const PccModel& m, ModelWiring& w, const Triple& in, RngStream& rng,
                           const GaussianParams& enc_x, const GaussianParams& enc_xn) {
  BoundTerms bt;
  bt.enc_x = enc_x;
  bt.enc_xn = enc_xn;
  bt.zhat = reparam_sample(enc_xn, rng);
  bt.back = m.backward_recognition(w, bt.zhat, in.u, in.x);
  bt.z = reparam_sample(bt.back, rng);
  bt.recon = bernoulli_logit_nll(m.decode(w, bt.zhat), in.xn);
  bt.kl = gaussian_kl_diag(bt.back, enc_x);
  bt.neg_entropy = scale(gaussian_entropy_diag(enc_xn), -1.0);
  PccModel::DynOut d = m.dynamics(w, bt.z, in.u);
  bt.dyn = d.dist;
  bt.neg_logp = scale(gaussian_log_prob(d.dist, bt.zhat), -1.0);
  return bt;
}

Tensor vae_aux_pre(const PccModel& m, ModelWiring& w, const Tensor& x, RngStream& rng,
                   const GaussianParams& enc) {
  size_t b = x.rows();
  Tensor zv = reparam_sample(enc, rng);
  Tensor nll = bernoulli_logit_nll(m.decode(w, zv), x);
  Tensor kl = gaussian_kl_diag(enc, std_normal(*w.tape, b, m.spec.n_z));
  return scale(add(nll, kl), 1.0 / double(b));
}

Tensor deterministic_aux_pre(const PccModel& m, ModelWiring& w, const Triple& in,
                             const GaussianParams& enc_x) {
  size_t b = in.x.rows();
  PccModel::DynOut d = m.dynamics(w, enc_x.mean, in.u);
  Tensor logits = m.decode(w, d.dist.mean);
  return scale(bernoulli_logit_nll(logits, in.xn), 1.0 / double(b));
}

Tensor curvature_impl(const PccModel& m, ModelWiring& w, const Tensor& z, const Tensor& u,
                      RngStream& rng, double sigma_eps, TangentKind kind) {
  if (!(sigma_eps > 0.0)) throw ContractError("curvature: sigma_eps must be > 0");
  size_t b = z.rows();
  Tape& t = *w.tape;
  Tensor ez = noise_const(t, b, m.spec.n_z, rng, sigma_eps);
  Tensor eu = noise_const(t, b, m.spec.n_u, rng, sigma_eps);
  auto [dyn_bar, tangent] = m.dynamics_with_tangent(w, add(z, ez), add(u, eu), ez, eu, kind);
  Tensor f0 = m.dynamics(w, z, u).dist.mean;
  return curvature_residual(dyn_bar.dist.mean, tangent, f0);
}

}  // namespace

void LossWeights::validate() const {
  const double vals[] = {lambda_p, lambda_c, lambda_cur, w_vae, w_det, w_l2, sigma_eps};
  for (double v : vals)
    if (!(v >= 0.0)) throw ConfigError("LossWeights: weights must be nonnegative");
}

const char* LossReport::csv_header() { return "step,total,pred,cons,curv,vae,det,l2"; }

std::string LossReport::csv_row(uint64_t step) const {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                static_cast<unsigned long long>(step), total, pred, cons, curv, vae, det, l2);
  return buf;
}

BoundTerms bound_terms(const PccModel& m, ModelWiring& w, const Triple& in, RngStream& rng) {
  batch_rows(in, "bound_terms");
  GaussianParams enc_x = m.encode(w, in.x);
  GaussianParams enc_xn = m.encode(w, in.xn);
  return bound_terms_pre(m, w, in, rng, enc_x, enc_xn);
}

Tensor prediction_bound(const PccModel& m, ModelWiring& w, const Triple& in, RngStream& rng) {
  size_t b = batch_rows(in, "prediction_bound");
  BoundTerms bt = bound_terms(m, w, in, rng);
  return scale(add(add(bt.recon, bt.kl), add(bt.neg_entropy, bt.neg_logp)), 1.0 / double(b));
}

Tensor prediction_bound_sampled(const PccModel& m, ModelWiring& w, const Triple& in,
                                RngStream& rng) {
  size_t b = batch_rows(in, "prediction_bound_sampled");
  BoundTerms bt = bound_terms(m, w, in, rng);
  // Per-sample stand-ins for the closed-form KL and entropy.
  Tensor log_ratio = sub(gaussian_log_prob(bt.back, bt.z), gaussian_log_prob(bt.enc_x, bt.z));
  Tensor log_q_zhat = gaussian_log_prob(bt.enc_xn, bt.zhat);
  return scale(add(add(bt.recon, log_ratio), add(log_q_zhat, bt.neg_logp)), 1.0 / double(b));
}

Tensor consistency_bound(const PccModel& m, ModelWiring& w, const Triple& in, RngStream& rng) {
  size_t b = batch_rows(in, "consistency_bound");
  BoundTerms bt = bound_terms(m, w, in, rng);
  return scale(add(bt.kl, add(bt.neg_entropy, bt.neg_logp)), 1.0 / double(b));
}

Tensor curvature_residual(const Tensor& f_bar, const Tensor& tangent, const Tensor& f0) {
  Tensor r = sub(sub(f_bar, tangent), f0);
  return scale(sum_all(mul(r, r)), 1.0 / double(f_bar.rows()));
}

Tensor curvature_exact(const PccModel& m, ModelWiring& w, const Tensor& z, const Tensor& u,
                       RngStream& rng, double sigma_eps) {
  return curvature_impl(m, w, z, u, rng, sigma_eps, TangentKind::masked_chain);
}

Tensor curvature_amortized(const PccModel& m, ModelWiring& w, const Tensor& z, const Tensor& u,
                           RngStream& rng, double sigma_eps) {
  if (!m.spec.amortized)
    throw ConfigError("curvature_amortized: model has no A, B heads");
  return curvature_impl(m, w, z, u, rng, sigma_eps, TangentKind::amortized_heads);
}

Tensor vae_aux(const PccModel& m, ModelWiring& w, const Tensor& x, RngStream& rng) {
  if (x.shape.size() != 2) throw ShapeError("vae_aux: x must be [B x dim]");
  GaussianParams enc = m.encode(w, x);
  return vae_aux_pre(m, w, x, rng, enc);
}

Tensor deterministic_aux(const PccModel& m, ModelWiring& w, const Triple& in) {
  batch_rows(in, "deterministic_aux");
  GaussianParams enc_x = m.encode(w, in.x);
  return deterministic_aux_pre(m, w, in, enc_x);
}

Tensor l2_penalty(const PccModel& m, ModelWiring& w) {
  Tensor acc = w.tape->scalar_const(0.0);
  for (size_t i = 0; i < m.params.size(); ++i) {
    if (m.params[i].is_bias) continue;
    acc = add(acc, sum_all(mul(w.leaves[i], w.leaves[i])));
  }
  return acc;
}

LossReport total_loss(const PccModel& m, ModelWiring& w, const Triple& in,
                      const LossWeights& weights, uint64_t step_seed) {
  weights.validate();
  size_t b = batch_rows(in, "total_loss");
  if (b == 0) throw ContractError("total_loss: empty batch");
  Tape& t = *w.tape;

  // Private stream per stochastic term: zeroing one weight leaves the other
  // terms' draws untouched.
  RngStream r_bound = RngStream::derive(step_seed, "loss-bound");
  RngStream r_vae = RngStream::derive(step_seed, "loss-vae");
  RngStream r_cz = RngStream::derive(step_seed, "loss-curv-z");
  RngStream r_eps = RngStream::derive(step_seed, "loss-curv-eps");

  bool need_bounds = weights.lambda_p > 0.0 || weights.lambda_c > 0.0;
  bool need_enc_x = need_bounds || weights.lambda_cur > 0.0 || weights.w_vae > 0.0 ||
                    weights.w_det > 0.0;

  GaussianParams enc_x, enc_xn;
  if (need_enc_x) enc_x = m.encode(w, in.x);
  if (need_bounds) enc_xn = m.encode(w, in.xn);

  LossReport rep;
  Tensor total = t.scalar_const(0.0);
  auto take = [&](const Tensor& term, double weight, double& slot) {
    slot = (*term.data)[0];
    if (weight > 0.0) total = add(total, scale(term, weight));
  };

  double inv_b = 1.0 / double(b);
  if (need_bounds) {
    BoundTerms bt = bound_terms_pre(m, w, in, r_bound, enc_x, enc_xn);
    Tensor cons = scale(add(bt.kl, add(bt.neg_entropy, bt.neg_logp)), inv_b);
    Tensor pred = add(scale(bt.recon, inv_b), cons);
    take(pred, weights.lambda_p, rep.pred);
    take(cons, weights.lambda_c, rep.cons);
  }
  if (weights.lambda_cur > 0.0) {
    Tensor z_cur = reparam_sample(enc_x, r_cz);
    Tensor curv = weights.amortized
                      ? curvature_amortized(m, w, z_cur, in.u, r_eps, weights.sigma_eps)
                      : curvature_exact(m, w, z_cur, in.u, r_eps, weights.sigma_eps);
    take(curv, weights.lambda_cur, rep.curv);
  }
  if (weights.w_vae > 0.0) take(vae_aux_pre(m, w, in.x, r_vae, enc_x), weights.w_vae, rep.vae);
  if (weights.w_det > 0.0)
    take(deterministic_aux_pre(m, w, in, enc_x), weights.w_det, rep.det);
  take(l2_penalty(m, w), weights.w_l2, rep.l2);

  rep.total = (*total.data)[0];
  rep.total_node = total;
  return rep;
}

}  // namespace pcc
