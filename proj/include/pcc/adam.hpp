#pragma once

#include <cstdint>
#include <vector>

#include "pcc/params.hpp"

namespace pcc {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First and second moment buffers, one pair per parameter, plus the shared
// step counter used for bias correction.
struct AdamState {
  AdamConfig cfg;
  uint64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

AdamState adam_init(const AdamConfig& cfg, const std::vector<Param>& params);

// One bias-corrected update, in place on the parameter buffers. `grads[i]`
// must match params[i] in length; NaN/Inf in a gradient is an error.
void adam_step(AdamState& st, std::vector<Param>& params,
               const std::vector<const std::vector<double>*>& grads);

}  // namespace pcc
