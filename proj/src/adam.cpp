#include "pcc/adam.hpp"

#include <cmath>

#include "pcc/errors.hpp"

namespace pcc {

AdamState adam_init(const AdamConfig& cfg, const std::vector<Param>& params) {
  AdamState st;
  st.cfg = cfg;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const Param& p : params) {
    st.m.emplace_back(p.size(), 0.0);
    st.v.emplace_back(p.size(), 0.0);
  }
  return st;
}

void adam_step(AdamState& st, std::vector<Param>& params,
               const std::vector<const std::vector<double>*>& grads) {
  if (params.size() != st.m.size() || grads.size() != st.m.size())
    throw ShapeError("adam_step: param/grad/state count mismatch");
  st.t += 1;
  double bc1 = 1.0 - std::pow(st.cfg.beta1, static_cast<double>(st.t));
  double bc2 = 1.0 - std::pow(st.cfg.beta2, static_cast<double>(st.t));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i].value;
    const auto& g = *grads[i];
    if (g.size() != p.size())
      throw ShapeError("adam_step: gradient size mismatch for " + params[i].name);
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (size_t j = 0; j < p.size(); ++j) {
      double gj = g[j];
      if (!std::isfinite(gj))
        throw NumericError("adam_step: non-finite gradient in " + params[i].name);
      m[j] = st.cfg.beta1 * m[j] + (1.0 - st.cfg.beta1) * gj;
      v[j] = st.cfg.beta2 * v[j] + (1.0 - st.cfg.beta2) * gj * gj;
      double mhat = m[j] / bc1;
      double vhat = v[j] / bc2;
      p[j] -= st.cfg.lr * mhat / (std::sqrt(vhat) + st.cfg.eps);
    }
  }
}

}  // namespace pcc
