#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pcc {

struct GradCheckEntry {
  std::string name;
  bool composite = false;  // loss terms; false means a single tensor op
  size_t points = 0;
  double max_rel_err = 0.0;
};

struct GradSuiteResult {
  std::vector<GradCheckEntry> entries;
  size_t total_points = 0;
  double worst_primitive = 0.0;
  double worst_composite = 0.0;

  bool pass(double primitive_tol = 1e-6, double composite_tol = 1e-4) const {
    return worst_primitive < primitive_tol && worst_composite < composite_tol;
  }
};

// Central finite-difference sweep over every differentiable tensor op and
// every loss term, each evaluated at `points_per_entry` random non-kink
// points. Deterministic in `seed`.
GradSuiteResult grad_suite(size_t points_per_entry, uint64_t seed);

}  // namespace pcc
