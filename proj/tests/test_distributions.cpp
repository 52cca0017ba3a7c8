#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "pcc/adam.hpp"
#include "pcc/distributions.hpp"
#include "pcc/rng.hpp"

using namespace pcc;

namespace {

GaussianParams gp(Tape& t, std::vector<double> mean, std::vector<double> logvar) {
  size_t n = mean.size();
  return {t.constant(std::move(mean), {n}), t.constant(std::move(logvar), {n})};
}

}  // namespace

TEST_CASE("closed-form frozen values") {
  Tape t;
  // KL(N(1,1) || N(0,1)) = 0.5
  CHECK(gaussian_kl_diag(gp(t, {1.0}, {0.0}), gp(t, {0.0}, {0.0})).scalar() ==
        doctest::Approx(0.5).epsilon(1e-12));
  // H(N(0, I_2)) = log(2*pi*e) = 2.837877...
  CHECK(gaussian_entropy_diag(gp(t, {0.0, 0.0}, {0.0, 0.0})).scalar() ==
        doctest::Approx(2.837877066409345).epsilon(1e-9));
  // log N(0;0,1) and log N(1;0,1)
  Tensor x0 = t.constant({0.0}, {1});
  Tensor x1 = t.constant({1.0}, {1});
  CHECK(gaussian_log_prob(gp(t, {0.0}, {0.0}), x0).scalar() ==
        doctest::Approx(-0.9189385332046727).epsilon(1e-12));
  CHECK(gaussian_log_prob(gp(t, {0.0}, {0.0}), x1).scalar() ==
        doctest::Approx(-1.4189385332046727).epsilon(1e-12));
}

TEST_CASE("KL properties: zero at equality, positive otherwise, asymmetric") {
  RngStream rng = RngStream::derive(5, "kl-prop");
  for (int i = 0; i < 50; ++i) {
    Tape t;
    std::vector<double> m1(3), lv1(3), m2(3), lv2(3);
    for (int j = 0; j < 3; ++j) {
      m1[j] = rng.uniform(-2, 2);
      lv1[j] = rng.uniform(-2, 2);
      m2[j] = rng.uniform(-2, 2);
      lv2[j] = rng.uniform(-2, 2);
    }
    GaussianParams q = gp(t, m1, lv1), p = gp(t, m2, lv2);
    CHECK(gaussian_kl_diag(q, q).scalar() == doctest::Approx(0.0).epsilon(1e-12));
    double kqp = gaussian_kl_diag(q, p).scalar();
    CHECK(kqp > 0.0);
  }
}

TEST_CASE("KL and entropy agree with Monte Carlo within 3 standard errors") {
  const size_t N = 1000000;
  Tape t;
  GaussianParams q = gp(t, {0.7, -0.3}, {0.4, -0.9});
  GaussianParams p = gp(t, {-0.2, 0.1}, {-0.5, 0.8});
  double kl_closed = gaussian_kl_diag(q, p).scalar();
  double h_closed = gaussian_entropy_diag(q).scalar();

  RngStream rng = RngStream::derive(42, "mc-kl");
  double sum_kl = 0, sq_kl = 0, sum_h = 0, sq_h = 0;
  for (size_t i = 0; i < N; ++i) {
    // Sample from q, score log q - log p per draw.
    double lq = 0, lp = 0;
    for (int j = 0; j < 2; ++j) {
      double mu = (*q.mean.data)[j], lv = (*q.logvar.data)[j];
      double x = mu + std::exp(0.5 * lv) * rng.normal();
      lq += -0.5 * ((x - mu) * (x - mu) * std::exp(-lv) + lv + std::log(2 * std::numbers::pi));
      double mp = (*p.mean.data)[j], lvp = (*p.logvar.data)[j];
      lp += -0.5 * ((x - mp) * (x - mp) * std::exp(-lvp) + lvp + std::log(2 * std::numbers::pi));
    }
    double r = lq - lp;
    sum_kl += r;
    sq_kl += r * r;
    sum_h += -lq;
    sq_h += lq * lq;
  }
  double mean_kl = sum_kl / N;
  double se_kl = std::sqrt((sq_kl / N - mean_kl * mean_kl) / N);
  double mean_h = sum_h / N;
  double se_h = std::sqrt((sq_h / N - mean_h * mean_h) / N);
  CHECK(std::abs(mean_kl - kl_closed) < 3.0 * se_kl);
  CHECK(std::abs(mean_h - h_closed) < 3.0 * se_h);
}

TEST_CASE("gaussian gradients match central differences") {
  auto r1 = grad_check(
      [](Tape& t, const Tensor& x) {
        Tensor row = reshape(x, {1, 6});
        GaussianParams q{reshape(slice_cols(row, 0, 2), {2}), reshape(slice_cols(row, 2, 4), {2})};
        GaussianParams p{reshape(slice_cols(row, 4, 6), {2}),
                         t.constant({0.3, -0.4}, {2})};
        return gaussian_kl_diag(q, p);
      },
      {0.3, -0.5, 0.2, 0.7, -0.1, 0.4});
  CHECK(r1.max_rel_err < 1e-6);

  auto r2 = grad_check(
      [](Tape& t, const Tensor& x) {
        Tensor row = reshape(x, {1, 4});
        GaussianParams p{reshape(slice_cols(row, 0, 2), {2}), reshape(slice_cols(row, 2, 4), {2})};
        Tensor obs = t.constant({0.4, -1.2}, {2});
        return gaussian_log_prob(p, obs);
      },
      {0.3, -0.5, 0.2, 0.7});
  CHECK(r2.max_rel_err < 1e-6);

  auto r3 = grad_check(
      [](Tape& t, const Tensor& x) {
        GaussianParams q{t.constant({0.1, 0.2, 0.3}, {3}), reshape(x, {3})};
        return gaussian_entropy_diag(q);
      },
      {0.4, -0.2, 0.9});
  CHECK(r3.max_rel_err < 1e-6);

  auto r4 = grad_check(
      [](Tape& t, const Tensor& x) {
        Tensor row = reshape(x, {1, 4});
        GaussianParams p{reshape(slice_cols(row, 0, 2), {2}), reshape(slice_cols(row, 2, 4), {2})};
        RngStream rng = RngStream::derive(9, "reparam-gc");
        Tensor z = reparam_sample(p, rng);
        return sum_all(mul(z, z));
      },
      {0.3, -0.5, 0.2, 0.7});
  CHECK(r4.max_rel_err < 1e-6);
}

TEST_CASE("reparam sample statistics and clamp floor") {
  // Mean/variance of draws track the distribution.
  RngStream rng = RngStream::derive(11, "reparam-stats");
  double mu = 0.8, lv = -0.6;
  double sum = 0, sq = 0;
  const int N = 200000;
  for (int i = 0; i < N; ++i) {
    Tape t;
    GaussianParams p = gp(t, {mu}, {lv});
    double z = reparam_sample(p, rng).scalar();
    sum += z;
    sq += z * z;
  }
  double m = sum / N, var = sq / N - m * m;
  CHECK(std::abs(m - mu) < 0.01);
  CHECK(std::abs(var - std::exp(lv)) < 0.01);

  // logvar at the clamp floor: deviation bounded by exp(-5)|eps| ~ 0.007|eps|.
  RngStream rng2 = RngStream::derive(12, "reparam-floor");
  for (int i = 0; i < 100; ++i) {
    Tape t;
    GaussianParams p = gp(t, {0.0}, {kLogvarMin});
    RngStream probe = rng2;  // replay the same draw
    double eps = probe.normal();
    double z = reparam_sample(p, rng2).scalar();
    CHECK(std::abs(z) <= 0.007 * std::abs(eps) + 1e-15);
  }
}

TEST_CASE("same rng stream gives bit-identical reparam draws") {
  auto run = [] {
    RngStream rng = RngStream::derive(77, "reparam");
    Tape t;
    GaussianParams p{t.constant({0.1, 0.2}, {2}), t.constant({-0.3, 0.4}, {2})};
    Tensor z = reparam_sample(p, rng);
    return *z.data;
  };
  CHECK(run() == run());
}

TEST_CASE("adam first step moves by ~lr and bias correction decays") {
  AdamConfig cfg;  // lr 5e-4
  auto buf = std::make_shared<std::vector<double>>(std::vector<double>{1.0});
  std::vector<Param> params{{"w", {1}, buf, false}};
  AdamState st = adam_init(cfg, params);
  std::vector<double> g{1.0};
  std::vector<const std::vector<double>*> grads{&g};
  adam_step(st, params, grads);
  CHECK(std::abs((1.0 - (*buf)[0]) - cfg.lr) < 1e-9);

  // Constant gradient keeps steps near lr (bias-corrected), monotone descent.
  double prev = (*buf)[0];
  for (int i = 0; i < 50; ++i) {
    adam_step(st, params, grads);
    CHECK((*buf)[0] < prev);
    prev = (*buf)[0];
  }

  std::vector<double> bad{std::nan("")};
  std::vector<const std::vector<double>*> bad_grads{&bad};
  CHECK_THROWS_AS(adam_step(st, params, bad_grads), NumericError);
}
