#include "pcc/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>

#include "pcc/distributions.hpp"
#include "pcc/errors.hpp"
#include "pcc/losses.hpp"
#include "pcc/model.hpp"
#include "pcc/rng.hpp"
#include "pcc/tensor.hpp"

namespace pcc {

namespace {

std::vector<double> uniform_vec(RngStream& r, size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = r.uniform(lo, hi);
  return v;
}

enum class PointKind { plain, off_zero, off_clamp_edges };

// Random points that keep a safe distance from the non-differentiable spots
// of the op under test (zero for relu, the +-0.6 edges for clamp).
std::vector<double> sample_point(RngStream& r, size_t n, PointKind kind) {
  std::vector<double> v(n);
  for (double& x : v) {
    switch (kind) {
      case PointKind::plain:
        x = r.uniform(-1.0, 1.0);
        break;
      case PointKind::off_zero: {
        double mag = r.uniform(0.25, 1.0);
        x = r.uniform01() < 0.5 ? -mag : mag;
        break;
      }
      case PointKind::off_clamp_edges: {
        double mag = r.uniform01() < 0.5 ? r.uniform(0.25, 0.5) : r.uniform(0.7, 1.0);
        x = r.uniform01() < 0.5 ? -mag : mag;
        break;
      }
    }
  }
  return v;
}

// Splits the flat theta into the operand tensors of one op, applies the op,
// and contracts with fixed random weights so every input has a distinct
// gradient. `make` receives the operand tensors in declaration order.
struct OperandSpec {
  std::vector<size_t> shape;
};

Tensor pick(Tape& t, const Tensor& theta, const std::vector<OperandSpec>& ops, size_t i) {
  size_t start = 0;
  for (size_t k = 0; k < i; ++k) {
    size_t n = 1;
    for (size_t d : ops[k].shape) n *= d;
    start += n;
  }
  size_t n = 1;
  for (size_t d : ops[i].shape) n *= d;
  Tensor row = reshape(theta, {1, theta.size()});
  return reshape(slice_cols(row, start, start + n), ops[i].shape);
}

using OpBuilder = std::function<Tensor(Tape&, const std::vector<Tensor>&, RngStream&)>;

// One FD evaluation of a primitive op at a fresh random point.
double primitive_point(const std::vector<OperandSpec>& operands, const OpBuilder& make,
                       RngStream& point_rng, PointKind kind) {
  size_t total = 0;
  for (const auto& o : operands) {
    size_t n = 1;
    for (size_t d : o.shape) n *= d;
    total += n;
  }
  std::vector<double> point = sample_point(point_rng, total, kind);
  uint64_t weight_seed = point_rng.next_u64();
  auto fn = [&](Tape& t, const Tensor& theta) {
    std::vector<Tensor> in;
    for (size_t i = 0; i < operands.size(); ++i) in.push_back(pick(t, theta, operands, i));
    RngStream wr(weight_seed);
    Tensor out = make(t, in, wr);
    Tensor w = t.constant(uniform_vec(wr, out.size(), -1.0, 1.0), out.shape);
    return sum_all(mul(out, w));
  };
  return grad_check(fn, point, 1e-5).max_rel_err;
}

// ---------------- loss-term scaffolding ----------------

ModelSpec tiny_spec(bool amortized) {
  ModelSpec s;
  s.domain = Domain::planar;
  s.n_z = 3;
  s.n_u = 2;
  s.img_h = 4;
  s.img_w = 3;
  s.frames = 1;
  s.amortized = amortized;
  s.enc_hidden = {7};
  s.dec_hidden = {6};
  s.dyn_hidden = {8};
  s.back_nz = 4;
  s.back_nu = 4;
  s.back_nx = 6;
  s.back_joint = 5;
  return s;
}

std::vector<double> bin_vec(RngStream& r, size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = r.uniform01() < 0.5 ? 0.0 : 1.0;
  return v;
}

Triple random_triple(Tape& t, const ModelSpec& spec, size_t b, uint64_t seed) {
  RngStream r = RngStream::derive(seed, "grad-suite-data");
  size_t obs = spec.obs_dim();
  Triple in;
  in.x = t.constant(bin_vec(r, b * obs), {b, obs});
  in.u = t.constant(uniform_vec(r, b * spec.n_u, -1.0, 1.0), {b, spec.n_u});
  in.xn = t.constant(bin_vec(r, b * obs), {b, obs});
  return in;
}

// Leaves equal the stored parameters plus theta_k times a fixed random
// direction on each probed parameter, so FD in theta sweeps the model.
ModelWiring probe_wiring(const PccModel& m, Tape& t, const Tensor& theta,
                         const std::vector<size_t>& probe, uint64_t dir_seed) {
  ModelWiring w;
  w.tape = &t;
  for (const Param& p : m.params) w.leaves.push_back(t.constant(p.value, p.shape));
  Tensor th = reshape(theta, {1, probe.size()});
  for (size_t k = 0; k < probe.size(); ++k) {
    const Param& p = m.params[probe[k]];
    size_t n = p.size();
    RngStream dr = RngStream::derive(dir_seed, "grad-suite-dir", k);
    Tensor tk = slice_cols(th, k, k + 1);
    Tensor col = matmul(t.constant(std::vector<double>(n, 1.0), {n, 1}), tk);
    Tensor dir = mul(reshape(col, p.shape), t.constant(uniform_vec(dr, n, -1.0, 1.0), p.shape));
    w.leaves[probe[k]] = add(w.leaves[probe[k]], dir);
  }
  return w;
}

using TermBuilder = std::function<Tensor(const PccModel&, ModelWiring&, Triple&, uint64_t)>;

// FD check of one loss term at one point, retrying the data seed until every
// ReLU input clears the margin the central difference needs.
double composite_point(const PccModel& m, const TermBuilder& build, uint64_t point_seed) {
  std::vector<size_t> probe{m.layout.enc[0], m.layout.dec.back() + 1, m.layout.dyn[0],
                            m.layout.back_joint};
  for (uint64_t attempt = 0; attempt < 20; ++attempt) {
    uint64_t data_seed = point_seed * 101 + attempt;
    auto fn = [&](Tape& t, const Tensor& theta) {
      ModelWiring w = probe_wiring(m, t, theta, probe, point_seed);
      Triple in = random_triple(t, m.spec, 2, data_seed);
      return build(m, w, in, point_seed);
    };
    {
      Tape t;
      Tensor theta = t.constant(std::vector<double>(probe.size(), 0.0), {probe.size()});
      fn(t, theta);
      if (t.min_abs_relu_input() < 2e-4) continue;
    }
    return grad_check(fn, std::vector<double>(probe.size(), 0.0), 1e-6).max_rel_err;
  }
  throw NumericError("grad_suite: no kink-free point found");
}

}  // namespace

GradSuiteResult grad_suite(size_t points_per_entry, uint64_t seed) {
  if (points_per_entry == 0) throw ConfigError("grad_suite: points_per_entry must be positive");
  GradSuiteResult res;

  auto add_primitive = [&](const std::string& name, const std::vector<OperandSpec>& operands,
                           PointKind kind, const OpBuilder& make) {
    GradCheckEntry e;
    e.name = name;
    e.points = points_per_entry;
    for (size_t p = 0; p < points_per_entry; ++p) {
      RngStream r = RngStream::derive(seed, "grad-" + name, p);
      e.max_rel_err = std::max(e.max_rel_err, primitive_point(operands, make, r, kind));
    }
    res.worst_primitive = std::max(res.worst_primitive, e.max_rel_err);
    res.total_points += e.points;
    res.entries.push_back(std::move(e));
  };

  auto rs = [](std::initializer_list<size_t> l) { return OperandSpec{std::vector<size_t>(l)}; };

  add_primitive("add", {rs({2, 3}), rs({2, 3})}, PointKind::plain,
                [](Tape&, const std::vector<Tensor>& in, RngStream&) { return add(in[0], in[1]); });
  add_primitive("sub", {rs({2, 3}), rs({2, 3})}, PointKind::plain,
                [](Tape&, const std::vector<Tensor>& in, RngStream&) { return sub(in[0], in[1]); });
  add_primitive("mul", {rs({2, 3}), rs({2, 3})}, PointKind::plain,
                [](Tape&, const std::vector<Tensor>& in, RngStream&) { return mul(in[0], in[1]); });
  add_primitive("scale", {rs({2, 3})}, PointKind::plain,
                [](Tape&, const std::vector<Tensor>& in, RngStream& r) {
                  return scale(in[0], r.uniform(0.5, 2.0));
                });
  add_primitive("add_scalar", {rs({2, 3})}, PointKind::plain,
                [](Tape&, const std::vector<Tensor>& in, RngStream& r) {
                  return add_scalar(in[0], r.uniform(-1.0, 1.0));
                });
  add_primitive("exp_elem", {rs({2, 3})}, PointKind::plain,
                [](Tape&, const std::vector<Tensor>& in, RngStream&) { return exp_elem(in[0]); });
  add_primitive("relu", {rs({2, 3})}, PointKind::off_zero,
                [](Tape&, const std::vector<Tensor>& in, RngStream&) { return relu(in[0]); });
  add_primitive("clamp", {rs({2, 3})}, PointKind::off_clamp_edges,
                [](Tape&, const std::vector<Tensor>& in, RngStream&) {
                  return clamp(in[0], -0.6, 0.6);
                });
  add_primitive("add_rowvec", {rs({3, 4}), rs({4})}, PointKind::plain,
                [](Tape&, const std::vector<Tensor>& in, RngStream&) {
                  return add_rowvec(in[0], in[1]);
                });
  add_primitive("matmul", {rs({2, 3}), rs({3, 4})}, PointKind::plain,
                [](Tape&, const std::vector<Tensor>& in, RngStream&) {
                  return matmul(in[0], in[1]);
                });
  add_primitive("matmul_nt", {rs({2, 3}), rs({4, 3})}, PointKind::plain,
                [](Tape&, const std::vector<Tensor>& in, RngStream&) {
                  return matmul_nt(in[0], in[1]);
                });
  add_primitive("sum_all", {rs({2, 3})}, PointKind::plain,
                [](Tape&, const std::vector<Tensor>& in, RngStream&) { return sum_all(in[0]); });
  add_primitive("reshape", {rs({2, 6})}, PointKind::plain,
                [](Tape&, const std::vector<Tensor>& in, RngStream&) {
                  return reshape(in[0], {3, 4});
                });
  add_primitive("slice_cols", {rs({2, 5})}, PointKind::plain,
                [](Tape&, const std::vector<Tensor>& in, RngStream&) {
                  return slice_cols(in[0], 1, 4);
                });
  add_primitive("concat_cols", {rs({2, 2}), rs({2, 3})}, PointKind::plain,
                [](Tape&, const std::vector<Tensor>& in, RngStream&) {
                  return concat_cols(in[0], in[1]);
                });
  add_primitive("gather_cols", {rs({2, 5})}, PointKind::plain,
                [](Tape&, const std::vector<Tensor>& in, RngStream&) {
                  auto idx = std::make_shared<const std::vector<size_t>>(
                      std::vector<size_t>{3, 0, 4});
                  return gather_cols(in[0], idx);
                });
  add_primitive("rowwise_matvec", {rs({2, 6}), rs({2, 3})}, PointKind::plain,
                [](Tape&, const std::vector<Tensor>& in, RngStream&) {
                  return rowwise_matvec(in[0], in[1], 2, 3);
                });
  add_primitive("bernoulli_logit_nll", {rs({2, 4})}, PointKind::plain,
                [](Tape& t, const std::vector<Tensor>& in, RngStream& r) {
                  std::vector<double> targets(8);
                  for (double& v : targets) v = r.uniform01() < 0.5 ? 0.0 : 1.0;
                  return bernoulli_logit_nll(in[0], t.constant(targets, {2, 4}));
                });
  add_primitive("conv2d", {rs({1, 36}), rs({9, 2}), rs({2})}, PointKind::plain,
                [](Tape&, const std::vector<Tensor>& in, RngStream&) {
                  ConvGeom g;
                  g.h = 6;
                  g.w = 6;
                  g.cin = 1;
                  g.cout = 2;
                  g.k = 3;
                  g.stride = 2;
                  return conv2d(in[0], in[1], in[2], g);
                });
  add_primitive("upsample_nn2", {rs({1, 18})}, PointKind::plain,
                [](Tape&, const std::vector<Tensor>& in, RngStream&) {
                  return upsample_nn2(in[0], 3, 3, 2);
                });

  PccModel model = init_model(tiny_spec(false), seed ^ 0x5eedULL);
  PccModel amodel = init_model(tiny_spec(true), seed ^ 0xa5eedULL);
  auto add_composite = [&](const std::string& name, const PccModel& m, const TermBuilder& build) {
    GradCheckEntry e;
    e.name = name;
    e.composite = true;
    e.points = points_per_entry;
    for (size_t p = 0; p < points_per_entry; ++p) {
      uint64_t point_seed = RngStream::derive(seed, "grad-" + name, p).next_u64();
      e.max_rel_err = std::max(e.max_rel_err, composite_point(m, build, point_seed));
    }
    res.worst_composite = std::max(res.worst_composite, e.max_rel_err);
    res.total_points += e.points;
    res.entries.push_back(std::move(e));
  };

  add_composite("prediction_bound", model,
                [](const PccModel& m, ModelWiring& w, Triple& in, uint64_t ps) {
                  RngStream r = RngStream::derive(ps, "grad-term", 1);
                  return prediction_bound(m, w, in, r);
                });
  add_composite("prediction_bound_sampled", model,
                [](const PccModel& m, ModelWiring& w, Triple& in, uint64_t ps) {
                  RngStream r = RngStream::derive(ps, "grad-term", 2);
                  return prediction_bound_sampled(m, w, in, r);
                });
  add_composite("consistency_bound", model,
                [](const PccModel& m, ModelWiring& w, Triple& in, uint64_t ps) {
                  RngStream r = RngStream::derive(ps, "grad-term", 3);
                  return consistency_bound(m, w, in, r);
                });
  add_composite("curvature_exact", model,
                [](const PccModel& m, ModelWiring& w, Triple& in, uint64_t ps) {
                  RngStream rz = RngStream::derive(ps, "grad-term", 4);
                  RngStream re = RngStream::derive(ps, "grad-term", 5);
                  Tensor z = reparam_sample(m.encode(w, in.x), rz);
                  return curvature_exact(m, w, z, in.u, re, 0.1);
                });
  add_composite("curvature_amortized", amodel,
                [](const PccModel& m, ModelWiring& w, Triple& in, uint64_t ps) {
                  RngStream rz = RngStream::derive(ps, "grad-term", 6);
                  RngStream re = RngStream::derive(ps, "grad-term", 7);
                  Tensor z = reparam_sample(m.encode(w, in.x), rz);
                  return curvature_amortized(m, w, z, in.u, re, 0.1);
                });
  add_composite("vae_aux", model,
                [](const PccModel& m, ModelWiring& w, Triple& in, uint64_t ps) {
                  RngStream r = RngStream::derive(ps, "grad-term", 8);
                  return vae_aux(m, w, in.x, r);
                });
  add_composite("deterministic_aux", model,
                [](const PccModel& m, ModelWiring& w, Triple& in, uint64_t) {
                  return deterministic_aux(m, w, in);
                });
  add_composite("l2_penalty", model,
                [](const PccModel& m, ModelWiring& w, Triple&, uint64_t) {
                  return l2_penalty(m, w);
                });
  add_composite("total_loss", model,
                [](const PccModel& m, ModelWiring& w, Triple& in, uint64_t ps) {
                  LossWeights weights;
                  return total_loss(m, w, in, weights, ps).total_node;
                });

  return res;
}

}  // namespace pcc
