#pragma once

#include <cstdint>
#include <string>

#include "pcc/model.hpp"

namespace pcc {

// One training example batch: current observation, action, next observation,
// each [B x dim] rows on the same tape.
struct Triple {
  Tensor x;
  Tensor u;
  Tensor xn;
};

// Term weights for the combined objective. All must be nonnegative.
struct LossWeights {
  double lambda_p = 1.0;
  double lambda_c = 7.0;
  double lambda_cur = 1.0;
  double w_vae = 0.01;
  double w_det = 0.3;
  double w_l2 = 1e-3;
  double sigma_eps = 0.1;
  bool amortized = false;  // use the learned A, B heads for the curvature term

  void validate() const;
};

// Per-term values from one total_loss evaluation. Terms are stored
// unweighted; total is the weighted sum (reproducible to 1e-10).
struct LossReport {
  double total = 0.0;
  double pred = 0.0;
  double cons = 0.0;
  double curv = 0.0;
  double vae = 0.0;
  double det = 0.0;
  double l2 = 0.0;
  Tensor total_node;  // graph scalar to backprop through

  static const char* csv_header();  // "step,total,pred,cons,curv,vae,det,l2"
  std::string csv_row(uint64_t step) const;
};

// Shared pieces of the prediction and consistency bounds, built from one set
// of samples so the two bounds differ by exactly the reconstruction term.
// All four term tensors are sums over the whole batch (callers divide by B).
// Draw order from `rng`: zhat entries row-major, then z entries row-major.
struct BoundTerms {
  Tensor recon;        // -log p(x' | zhat)
  Tensor kl;           // KL(back(zhat,u,x) || enc(x))
  Tensor neg_entropy;  // -H(enc(x'))
  Tensor neg_logp;     // -log dyn(z,u) at zhat
  Tensor zhat;         // one reparameterized sample of enc(x')
  Tensor z;            // one reparameterized sample of back(zhat,u,x)
  GaussianParams enc_x, enc_xn, back, dyn;
};
BoundTerms bound_terms(const PccModel& m, ModelWiring& w, const Triple& in, RngStream& rng);

// Variational bound on -E[log P(x'|x,u)], per-example mean over the batch:
// reconstruction NLL + KL(back || enc) - H(enc at x') - log dyn(z,u) at zhat,
// with the KL and entropy in closed form.
Tensor prediction_bound(const PccModel& m, ModelWiring& w, const Triple& in, RngStream& rng);

// Same bound with every term evaluated at the drawn samples (the one-sample
// joint estimator); equals prediction_bound in expectation, not pathwise.
Tensor prediction_bound_sampled(const PccModel& m, ModelWiring& w, const Triple& in,
                                RngStream& rng);

// The prediction bound without its reconstruction term.
Tensor consistency_bound(const PccModel& m, ModelWiring& w, const Triple& in, RngStream& rng);

// ||f_bar - tangent - f0||^2 summed over all entries, divided by the batch
// size. The shared residual core of both curvature penalties.
Tensor curvature_residual(const Tensor& f_bar, const Tensor& tangent, const Tensor& f0);

// Taylor-linearization penalty at noisy points zb = z + eps_z, ub = u + eps_u
// with eps ~ N(0, sigma_eps^2): ||f(zb,ub) - A(zb,ub) eps_z - B(zb,ub) eps_u
// - f(z,u)||^2, per-example mean. Exact mode forms A, B from the dynamics
// mean network (activation patterns held fixed); amortized mode uses the
// learned heads and requires a model that has them. Draw order from `rng`:
// eps_z entries row-major, then eps_u entries row-major.
Tensor curvature_exact(const PccModel& m, ModelWiring& w, const Tensor& z, const Tensor& u,
                       RngStream& rng, double sigma_eps);
Tensor curvature_amortized(const PccModel& m, ModelWiring& w, const Tensor& z, const Tensor& u,
                           RngStream& rng, double sigma_eps);

// Plain ELBO against a standard-normal prior, per-example mean:
// -log p(x|z) + KL(enc(x) || N(0,I)) with z one reparameterized sample.
Tensor vae_aux(const PccModel& m, ModelWiring& w, const Tensor& x, RngStream& rng);

// Cross entropy of decode(dynamics_mean(encode_mean(x), u)) against x',
// per-example mean. No sampling.
Tensor deterministic_aux(const PccModel& m, ModelWiring& w, const Triple& in);

// Sum of squared entries of every non-bias parameter, as a graph node.
Tensor l2_penalty(const PccModel& m, ModelWiring& w);

// The combined objective. Derives one private stream per stochastic term
// from `step_seed`, so zeroing a term's weight never shifts the draws of the
// others. Throws ContractError on an empty batch.
LossReport total_loss(const PccModel& m, ModelWiring& w, const Triple& in,
                      const LossWeights& weights, uint64_t step_seed);

}  // namespace pcc
