#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "pcc/control.hpp"
#include "pcc/errors.hpp"

using namespace pcc;

namespace {

// z' = A z + B u with exact Jacobians: the Riccati reference case.
class LinearModel : public LatentModel {
 public:
  LinearModel(Eigen::MatrixXd a, Eigen::MatrixXd b) : a_(std::move(a)), b_(std::move(b)) {}
  size_t n_z() const override { return size_t(a_.rows()); }
  size_t n_u() const override { return size_t(b_.cols()); }
  std::vector<double> encode_mean(const std::vector<double>& x) const override { return x; }
  std::vector<double> dynamics_mean(const std::vector<double>& z,
                                    const std::vector<double>& u) const override {
    Eigen::VectorXd zn = a_ * Eigen::Map<const Eigen::VectorXd>(z.data(), a_.rows()) +
                         b_ * Eigen::Map<const Eigen::VectorXd>(u.data(), b_.cols());
    return {zn.data(), zn.data() + zn.size()};
  }
  void dynamics_jacobian(const std::vector<double>&, const std::vector<double>&,
                         std::vector<double>& a_out, std::vector<double>& b_out) const override {
    a_out.resize(size_t(a_.size()));
    b_out.resize(size_t(b_.size()));
    for (long r = 0; r < a_.rows(); ++r)
      for (long c = 0; c < a_.cols(); ++c) a_out[size_t(r * a_.cols() + c)] = a_(r, c);
    for (long r = 0; r < b_.rows(); ++r)
      for (long c = 0; c < b_.cols(); ++c) b_out[size_t(r * b_.cols() + c)] = b_(r, c);
  }

 private:
  Eigen::MatrixXd a_, b_;
};

LinearModel scalar_integrator() {
  return LinearModel(Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Ones(1, 1));
}

// z' = z + u + curve * z^2 elementwise: mildly nonlinear solver exercise.
class QuadModel : public LatentModel {
 public:
  explicit QuadModel(double curve) : curve_(curve) {}
  size_t n_z() const override { return 1; }
  size_t n_u() const override { return 1; }
  std::vector<double> encode_mean(const std::vector<double>& x) const override { return x; }
  std::vector<double> dynamics_mean(const std::vector<double>& z,
                                    const std::vector<double>& u) const override {
    return {z[0] + u[0] + curve_ * z[0] * z[0]};
  }
  void dynamics_jacobian(const std::vector<double>& z, const std::vector<double>&,
                         std::vector<double>& a_out, std::vector<double>& b_out) const override {
    a_out = {1.0 + 2.0 * curve_ * z[0]};
    b_out = {1.0};
  }

 private:
  double curve_;
};

class NanJacobianModel : public LatentModel {
 public:
  size_t n_z() const override { return 2; }
  size_t n_u() const override { return 2; }
  std::vector<double> encode_mean(const std::vector<double>&) const override {
    return {0.0, 0.0};
  }
  std::vector<double> dynamics_mean(const std::vector<double>& z,
                                    const std::vector<double>&) const override {
    return z;
  }
  void dynamics_jacobian(const std::vector<double>&, const std::vector<double>&,
                         std::vector<double>& a_out, std::vector<double>& b_out) const override {
    a_out.assign(4, std::nan(""));
    b_out.assign(4, std::nan(""));
  }
};

// Reads the agent position straight off the rendered frame; with the true
// planar kinematics z' = z + u this is a ground-truth latent model.
class PlanarTruthModel : public LatentModel {
 public:
  explicit PlanarTruthModel(const EnvConfig& cfg) : cfg_(cfg) {}
  size_t n_z() const override { return 2; }
  size_t n_u() const override { return 2; }
  std::vector<double> encode_mean(const std::vector<double>& x) const override {
    double count = 0, sx = 0, sy = 0;
    for (size_t i = 0; i < cfg_.img_h; ++i)
      for (size_t j = 0; j < cfg_.img_w; ++j) {
        double v = x[i * cfg_.img_w + j];
        count += v;
        sx += v * (double(j) + 0.5);
        sy += v * (double(i) + 0.5);
      }
    REQUIRE(count > 0);
    return {sx / count, sy / count};
  }
  std::vector<double> dynamics_mean(const std::vector<double>& z,
                                    const std::vector<double>& u) const override {
    return {z[0] + u[0], z[1] + u[1]};
  }
  void dynamics_jacobian(const std::vector<double>&, const std::vector<double>&,
                         std::vector<double>& a_out, std::vector<double>& b_out) const override {
    a_out = {1.0, 0.0, 0.0, 1.0};
    b_out = {1.0, 0.0, 0.0, 1.0};
  }

 private:
  EnvConfig cfg_;
};

// Riccati recursion for cost sum z'Qz + u'Ru with Q = kappa I, R = I and
// terminal kappa I: P_t = Q + A'P'A - A'P'B (R + B'P'B)^-1 B'P'A.
struct RiccatiRef {
  std::vector<Eigen::MatrixXd> p;
  std::vector<Eigen::MatrixXd> gain;  // u_t = -gain_t z_t
};
RiccatiRef riccati(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double kappa, size_t t) {
  long nz = a.rows(), nu = b.cols();
  Eigen::MatrixXd q = kappa * Eigen::MatrixXd::Identity(nz, nz);
  Eigen::MatrixXd r = Eigen::MatrixXd::Identity(nu, nu);
  RiccatiRef ref;
  ref.p.assign(t + 1, q);
  ref.gain.assign(t, Eigen::MatrixXd::Zero(nu, nz));
  for (size_t i = t; i-- > 0;) {
    const Eigen::MatrixXd& pn = ref.p[i + 1];
    Eigen::MatrixXd gain = (r + b.transpose() * pn * b).ldlt().solve(b.transpose() * pn * a);
    ref.gain[i] = gain;
    ref.p[i] = q + a.transpose() * pn * a - a.transpose() * pn * b * gain;
  }
  return ref;
}

}  // namespace

TEST_CASE("cost derivatives are the analytic quadratic forms") {
  LatentCost c{{1.0, -2.0}, 3.0, 10};
  Eigen::VectorXd z(2), u(2);
  z << 1.0, -2.0;
  u << 0.0, 0.0;
  CostDerivs d0 = cost_derivatives(c, z, u);
  CHECK(d0.value == 0.0);
  CHECK(d0.c_z.norm() == 0.0);
  CHECK(d0.c_u.norm() == 0.0);

  LatentCost unit{{0.0, 0.0}, 1.0, 10};
  z << 1.0, 0.0;
  CostDerivs d1 = cost_derivatives(unit, z, u);
  CHECK(d1.value == doctest::Approx(1.0));
  CHECK(d1.c_z(0) == doctest::Approx(2.0));
  CHECK(d1.c_z(1) == doctest::Approx(0.0));
  CHECK(d1.c_zz(0, 0) == doctest::Approx(2.0));
  CHECK(d1.c_uu(1, 1) == doctest::Approx(2.0));
  CHECK(d1.c_uz.norm() == 0.0);

  // Finite differences of the value against the analytic first derivatives.
  LatentCost rc{{0.3, -0.7, 1.1}, 5.0, 10};
  Eigen::VectorXd zr(3), ur(2);
  zr << 0.9, 0.1, -0.4;
  ur << 0.25, -1.5;
  CostDerivs d = cost_derivatives(rc, zr, ur);
  const double h = 1e-6;
  for (int i = 0; i < 3; ++i) {
    Eigen::VectorXd zp = zr, zm = zr;
    zp(i) += h;
    zm(i) -= h;
    double fd = (cost_derivatives(rc, zp, ur).value - cost_derivatives(rc, zm, ur).value) /
                (2.0 * h);
    CHECK(std::abs(fd - d.c_z(i)) < 1e-8);
  }
  for (int i = 0; i < 2; ++i) {
    Eigen::VectorXd up = ur, um = ur;
    up(i) += h;
    um(i) -= h;
    double fd = (cost_derivatives(rc, zr, up).value - cost_derivatives(rc, zr, um).value) /
                (2.0 * h);
    CHECK(std::abs(fd - d.c_u(i)) < 1e-8);
  }
  LatentCost bad{{0.0}, 0.0, 10};
  CHECK_THROWS_AS(cost_derivatives(bad, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)),
                  ConfigError);
}

TEST_CASE("backward pass matches the hand Riccati recursion on the scalar toy") {
  // z' = z + u, cost z^2 + u^2, T = 2: P recursion P = 1 + P'/(1+P') gives
  // P_1 = 1.5 and gains K_0 = 0.6, K_1 = 0.5 (as u = -K dz).
  LinearModel m = scalar_integrator();
  LatentCost c{{0.0}, 1.0, 2};
  NominalTrajectory nominal;
  nominal.z.assign(3, {0.0});
  nominal.u.assign(2, {0.0});
  auto [gains, ei] = backward_pass(m, nominal, c, 0.0);
  REQUIRE(gains.K.size() == 2);
  CHECK(gains.K[0][0] == doctest::Approx(-0.6).epsilon(1e-12));
  CHECK(gains.K[1][0] == doctest::Approx(-0.5).epsilon(1e-12));
  // The zero nominal is the optimum, so the feedforward vanishes exactly.
  CHECK(std::abs(gains.k[0][0]) < 1e-12);
  CHECK(std::abs(gains.k[1][0]) < 1e-12);
  CHECK(ei >= 0.0);
  CHECK(ei < 1e-12);
}

TEST_CASE("expected improvement is nonnegative across random linear problems") {
  RngStream r = RngStream::derive(1, "ctrl-ei");
  for (int rep = 0; rep < 25; ++rep) {
    Eigen::MatrixXd a(2, 2), b(2, 1);
    a << r.uniform(-1, 1), r.uniform(-1, 1), r.uniform(-1, 1), r.uniform(-1, 1);
    b << r.uniform(-1, 1), r.uniform(-1, 1);
    LinearModel m(a, b);
    LatentCost c{{r.uniform(-1, 1), r.uniform(-1, 1)}, 2.0, 6};
    NominalTrajectory traj;
    traj.z.resize(7);
    traj.u.resize(6);
    traj.z[0] = {r.uniform(-2, 2), r.uniform(-2, 2)};
    for (size_t t = 0; t < 6; ++t) {
      traj.u[t] = {r.uniform(-2, 2)};
      traj.z[t + 1] = m.dynamics_mean(traj.z[t], traj.u[t]);
    }
    auto [gains, ei] = backward_pass(m, traj, c, 1e-6);
    CHECK(ei >= -1e-12);
  }
}

TEST_CASE("large regularization drives the gains to zero") {
  LinearModel m = scalar_integrator();
  LatentCost c{{0.0}, 1.0, 4};
  NominalTrajectory traj;
  traj.z.resize(5);
  traj.u.assign(4, {1.5});
  traj.z[0] = {2.0};
  for (size_t t = 0; t < 4; ++t) traj.z[t + 1] = m.dynamics_mean(traj.z[t], traj.u[t]);
  auto [gains, ei] = backward_pass(m, traj, c, 1e8);
  for (size_t t = 0; t < 4; ++t) {
    CHECK(std::abs(gains.k[t][0]) < 1e-5);
    CHECK(std::abs(gains.K[t][0]) < 1e-5);
  }
  CHECK(ei >= 0.0);
}

TEST_CASE("forward pass at alpha 0 with zero deviation returns the nominal") {
  LinearModel m = scalar_integrator();
  NominalTrajectory traj;
  traj.z.resize(4);
  traj.u.assign(3, {0.7});
  traj.z[0] = {1.0};
  for (size_t t = 0; t < 3; ++t) traj.z[t + 1] = m.dynamics_mean(traj.z[t], traj.u[t]);
  Gains g;
  g.k.assign(3, {0.4});
  g.K.assign(3, {0.9});
  NominalTrajectory out = forward_pass(m, traj, g, 0.0);
  CHECK(out.u == traj.u);
  CHECK(out.z == traj.z);
}

TEST_CASE("one Newton step reaches the Riccati optimum on a linear system") {
  Eigen::MatrixXd a(2, 2), b(2, 2);
  a << 1.0, 0.1, -0.05, 0.95;
  b << 1.0, 0.0, 0.2, 0.8;
  LinearModel m(a, b);
  LatentCost c{{0.0, 0.0}, 1.0, 6};
  RiccatiRef ref = riccati(a, b, 1.0, 6);

  RngStream r = RngStream::derive(2, "ctrl-newton");
  NominalTrajectory traj;
  traj.z.resize(7);
  traj.u.resize(6);
  traj.z[0] = {1.3, -0.8};
  for (size_t t = 0; t < 6; ++t) {
    traj.u[t] = {r.uniform(-1, 1), r.uniform(-1, 1)};
    traj.z[t + 1] = m.dynamics_mean(traj.z[t], traj.u[t]);
  }
  auto [gains, ei] = backward_pass(m, traj, c, 0.0);
  NominalTrajectory opt = forward_pass(m, traj, gains, 1.0);
  Eigen::Vector2d z0(1.3, -0.8);
  double want = z0.dot(ref.p[0] * z0);
  CHECK(trajectory_cost(opt, c) == doctest::Approx(want).epsilon(1e-10));

  NominalTrajectory again = forward_pass(m, traj, gains, 1.0);
  CHECK(again.u == opt.u);
  CHECK(again.z == opt.z);
}

TEST_CASE("ilqr matches Riccati actions on the scalar integrator") {
  LinearModel m = scalar_integrator();
  LatentCost c{{0.0}, 1.0, 5};
  RngStream rng = RngStream::derive(3, "ctrl-ilqr");
  IlqrResult res = ilqr_solve(m, {2.0}, c, 5, 10, 1e-9, 10.0, rng);
  CHECK(res.converged);
  CHECK(res.iterations <= 2);

  Eigen::MatrixXd a1 = Eigen::MatrixXd::Ones(1, 1);
  RiccatiRef ref = riccati(a1, a1, 1.0, 5);
  double z = 2.0, worst = 0.0;
  for (size_t t = 0; t < 5; ++t) {
    double u_opt = -(ref.gain[t] * Eigen::MatrixXd::Constant(1, 1, z))(0, 0);
    worst = std::max(worst, std::abs(res.traj.u[t][0] - u_opt));
    z = z + u_opt;
  }
  CHECK(worst < 1e-8);
  CHECK(res.cost == doctest::Approx(4.0 * ref.p[0](0, 0)).epsilon(1e-10));
}

TEST_CASE("ilqr matches Riccati actions on a coupled two-dimensional system") {
  Eigen::MatrixXd a(2, 2), b(2, 2);
  a << 1.0, 0.08, -0.02, 0.97;
  b << 0.9, 0.1, 0.0, 1.1;
  LinearModel m(a, b);
  LatentCost c{{0.0, 0.0}, 4.0, 8};
  RngStream rng = RngStream::derive(4, "ctrl-ilqr2");
  IlqrResult res = ilqr_solve(m, {1.0, -2.0}, c, 8, 10, 1e-9, 10.0, rng);
  CHECK(res.converged);
  CHECK(res.iterations <= 2);

  RiccatiRef ref = riccati(a, b, 4.0, 8);
  Eigen::Vector2d z(1.0, -2.0);
  double worst = 0.0;
  for (size_t t = 0; t < 8; ++t) {
    Eigen::Vector2d u_opt = -(ref.gain[t] * z);
    worst = std::max(worst, std::abs(res.traj.u[t][0] - u_opt(0)));
    worst = std::max(worst, std::abs(res.traj.u[t][1] - u_opt(1)));
    z = a * z + b * u_opt;
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("ilqr from the goal returns near-zero cost and a monotone history") {
  LinearModel m = scalar_integrator();
  LatentCost c{{0.0}, 1.0, 6};
  RngStream rng = RngStream::derive(5, "ctrl-goal");
  IlqrResult res = ilqr_solve(m, {0.0}, c, 6, 20, 1e-9, 10.0, rng);
  CHECK(res.cost < 1e-6);
  REQUIRE(res.cost_history.size() >= 2);
  for (size_t i = 1; i < res.cost_history.size(); ++i)
    CHECK(res.cost_history[i] < res.cost_history[i - 1]);
}

TEST_CASE("ilqr is bitwise deterministic under the same stream") {
  Eigen::MatrixXd a(2, 2), b(2, 1);
  a << 1.0, 0.1, 0.0, 1.0;
  b << 0.0, 1.0;
  LinearModel m(a, b);
  LatentCost c{{0.5, 0.0}, 2.0, 7};
  RngStream r1 = RngStream::derive(6, "ctrl-det");
  RngStream r2 = RngStream::derive(6, "ctrl-det");
  IlqrResult res1 = ilqr_solve(m, {1.0, 1.0}, c, 7, 15, 1e-10, 3.0, r1);
  IlqrResult res2 = ilqr_solve(m, {1.0, 1.0}, c, 7, 15, 1e-10, 3.0, r2);
  CHECK(res1.traj.u == res2.traj.u);
  CHECK(res1.gains.k == res2.gains.k);
  CHECK(res1.gains.K == res2.gains.K);
  CHECK(res1.cost == res2.cost);
}

TEST_CASE("ilqr descends on a nonlinear model") {
  QuadModel m(0.05);
  LatentCost c{{0.0}, 1.0, 10};
  RngStream rng = RngStream::derive(7, "ctrl-quad");
  IlqrResult res = ilqr_solve(m, {1.5}, c, 10, 50, 1e-10, 5.0, rng);
  REQUIRE(res.cost_history.size() >= 2);
  for (size_t i = 1; i < res.cost_history.size(); ++i)
    CHECK(res.cost_history[i] < res.cost_history[i - 1]);
  CHECK(res.cost < res.cost_history.front());
  CHECK(res.converged);
}

TEST_CASE("mpc reaches the planar goal from every start corner with true dynamics") {
  EnvConfig env = EnvConfig::defaults(Domain::planar);
  env.obstacles.clear();
  PlanarTruthModel m(env);
  MpcConfig cfg;
  cfg.horizon = 40;
  cfg.plan_window = 40;
  cfg.kappa = 50.0;
  EnvState goal = goal_state(env);
  for (size_t corner = 0; corner < 3; ++corner) {
    RngStream rng = RngStream::derive(100 + corner, "ctrl-mpc");
    EnvState start = start_state(env, corner, rng);
    MpcResult res = mpc_run(env, 0.0, m, start, goal, cfg, rng);
    CHECK_FALSE(res.any_solver_failure);
    CHECK(res.frac_in_goal > 0.4);
    // Once reached, the controller keeps the agent in the goal region.
    for (size_t k = res.steps.size() - 5; k < res.steps.size(); ++k)
      CHECK(res.steps[k].in_goal);
  }
}

TEST_CASE("mpc with start at the goal stays in the goal the whole run") {
  EnvConfig env = EnvConfig::defaults(Domain::planar);
  env.obstacles.clear();
  PlanarTruthModel m(env);
  MpcConfig cfg;
  cfg.horizon = 40;
  cfg.plan_window = 40;
  RngStream rng = RngStream::derive(11, "ctrl-mpc-goal");
  MpcResult res = mpc_run(env, 0.0, m, goal_state(env), goal_state(env), cfg, rng);
  CHECK(res.frac_in_goal == 1.0);
}

TEST_CASE("mpc keeps running with zero actions when the solver fails") {
  EnvConfig env = EnvConfig::defaults(Domain::planar);
  env.obstacles.clear();
  NanJacobianModel m;
  MpcConfig cfg;
  cfg.horizon = 8;
  cfg.plan_window = 8;
  RngStream rng = RngStream::derive(12, "ctrl-mpc-fail");
  EnvState start = start_state(env, 0, rng);
  MpcResult res = mpc_run(env, 0.0, m, start, goal_state(env), cfg, rng);
  CHECK(res.any_solver_failure);
  REQUIRE(res.steps.size() == 8);
  for (const auto& s : res.steps) {
    CHECK_FALSE(s.solver_ok);
    CHECK(s.action == std::vector<double>{0.0, 0.0});
  }
  // Zero actions leave the planar agent where it started.
  CHECK(res.steps.back().state == start.s);
}

TEST_CASE("mpc honors a coarser replan interval") {
  EnvConfig env = EnvConfig::defaults(Domain::planar);
  env.obstacles.clear();
  PlanarTruthModel m(env);
  MpcConfig cfg;
  cfg.horizon = 40;
  cfg.plan_window = 40;
  cfg.replan_every = 2;
  RngStream rng = RngStream::derive(13, "ctrl-mpc-replan");
  EnvState start = start_state(env, 1, rng);
  MpcResult res = mpc_run(env, 0.0, m, start, goal_state(env), cfg, rng);
  CHECK_FALSE(res.any_solver_failure);
  CHECK(res.frac_in_goal > 0.4);
}

TEST_CASE("mpc trajectory records serialize as CSV") {
  EnvConfig env = EnvConfig::defaults(Domain::planar);
  env.obstacles.clear();
  PlanarTruthModel m(env);
  MpcConfig cfg;
  cfg.horizon = 5;
  cfg.plan_window = 5;
  RngStream rng = RngStream::derive(14, "ctrl-mpc-csv");
  MpcResult res = mpc_run(env, 0.0, m, start_state(env, 0, rng), goal_state(env), cfg, rng);
  CHECK(mpc_csv_header(res) == "step,s0,s1,u0,u1,in_goal,planned_cost");
  std::string row = mpc_csv_row(res, 0);
  CHECK(row.substr(0, 2) == "0,");
  CHECK(std::count(row.begin(), row.end(), ',') == 6);
}
