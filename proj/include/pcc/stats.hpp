#pragma once

#include <cmath>
#include <vector>

#include "pcc/errors.hpp"

namespace pcc {

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) throw ShapeError("mean_of: empty sample");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Standard error of the mean: sample std (n-1 denominator) / sqrt(n).
inline double sem_of(const std::vector<double>& v) {
  size_t n = v.size();
  if (n < 2) return 0.0;
  double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
}

// Regularized upper incomplete gamma Q(a, x): series for small x, Lentz
// continued fraction otherwise.
inline double gamma_q(double a, double x) {
  if (a <= 0.0 || x < 0.0) throw ShapeError("gamma_q: domain error");
  if (x == 0.0) return 1.0;
  double lg = std::lgamma(a);
  if (x < a + 1.0) {
    double sum = 1.0 / a, term = sum, ap = a;
    for (int i = 0; i < 500; ++i) {
      ap += 1.0;
      term *= x / ap;
      sum += term;
      if (std::abs(term) < std::abs(sum) * 1e-15) break;
    }
    double p = sum * std::exp(-x + a * std::log(x) - lg);
    return 1.0 - p;
  }
  double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i < 500; ++i) {
    double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-15) break;
  }
  return std::exp(-x + a * std::log(x) - lg) * h;
}

// Upper-tail p-value of a chi-square statistic.
inline double chi2_pvalue(double chi2, double df) { return gamma_q(df / 2.0, chi2 / 2.0); }

}  // namespace pcc
