#include "pcc/control.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "pcc/errors.hpp"

namespace pcc {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

VectorXd to_vec(const std::vector<double>& v) {
  return Eigen::Map<const VectorXd>(v.data(), long(v.size()));
}

std::vector<double> from_vec(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

void check_traj(const NominalTrajectory& traj, size_t nz, size_t nu, const char* who) {
  size_t t_len = traj.u.size();
  if (t_len == 0 || traj.z.size() != t_len + 1)
    throw ContractError(std::string(who) + ": need T actions and T+1 states");
  for (const auto& z : traj.z) {
    if (z.size() != nz) throw ContractError(std::string(who) + ": latent state size mismatch");
    if (!all_finite(z)) throw ContractError(std::string(who) + ": non-finite nominal state");
  }
  for (const auto& u : traj.u) {
    if (u.size() != nu) throw ContractError(std::string(who) + ": action size mismatch");
    if (!all_finite(u)) throw ContractError(std::string(who) + ": non-finite nominal action");
  }
}

}  // namespace

void LatentCost::validate() const {
  if (z_goal.empty()) throw ConfigError("LatentCost: z_goal is empty");
  if (!(kappa > 0.0)) throw ConfigError("LatentCost: kappa must be > 0");
}

CostDerivs cost_derivatives(const LatentCost& c, const VectorXd& z, const VectorXd& u) {
  c.validate();
  if (size_t(z.size()) != c.z_goal.size())
    throw ShapeError("cost_derivatives: z does not match z_goal");
  VectorXd dz = z - to_vec(c.z_goal);
  CostDerivs d;
  d.value = c.kappa * dz.squaredNorm() + u.squaredNorm();
  d.c_z = 2.0 * c.kappa * dz;
  d.c_u = 2.0 * u;
  d.c_zz = 2.0 * c.kappa * MatrixXd::Identity(z.size(), z.size());
  d.c_uu = 2.0 * MatrixXd::Identity(u.size(), u.size());
  d.c_uz = MatrixXd::Zero(u.size(), z.size());
  return d;
}

double trajectory_cost(const NominalTrajectory& traj, const LatentCost& c) {
  c.validate();
  VectorXd zg = to_vec(c.z_goal);
  double total = 0.0;
  for (size_t t = 0; t < traj.u.size(); ++t)
    total += c.kappa * (to_vec(traj.z[t]) - zg).squaredNorm() + to_vec(traj.u[t]).squaredNorm();
  total += c.kappa * (to_vec(traj.z.back()) - zg).squaredNorm();
  return total;
}

std::pair<Gains, double> backward_pass(const LatentModel& m, const NominalTrajectory& traj,
                                       const LatentCost& c, double mu_reg) {
  size_t nz = m.n_z(), nu = m.n_u();
  check_traj(traj, nz, nu, "backward_pass");
  size_t t_len = traj.u.size();

  VectorXd zg = to_vec(c.z_goal);
  VectorXd vz = 2.0 * c.kappa * (to_vec(traj.z[t_len]) - zg);
  MatrixXd vzz = 2.0 * c.kappa * MatrixXd::Identity(long(nz), long(nz));

  Gains g;
  g.k.resize(t_len);
  g.K.resize(t_len);
  double expected_improvement = 0.0;
  std::vector<double> av, bv;
  for (size_t ti = t_len; ti-- > 0;) {
    m.dynamics_jacobian(traj.z[ti], traj.u[ti], av, bv);
    Eigen::Map<const RowMat> A(av.data(), long(nz), long(nz));
    Eigen::Map<const RowMat> B(bv.data(), long(nz), long(nu));
    CostDerivs cd = cost_derivatives(c, to_vec(traj.z[ti]), to_vec(traj.u[ti]));

    VectorXd q_z = cd.c_z + A.transpose() * vz;
    VectorXd q_u = cd.c_u + B.transpose() * vz;
    MatrixXd q_zz = cd.c_zz + A.transpose() * vzz * A;
    MatrixXd q_uz = cd.c_uz + B.transpose() * vzz * A;
    MatrixXd q_uu = cd.c_uu + B.transpose() * vzz * B;
    if (!q_z.allFinite() || !q_u.allFinite() || !q_zz.allFinite() || !q_uz.allFinite() ||
        !q_uu.allFinite())
      throw NumericError("backward_pass: non-finite Q expansion at step " + std::to_string(ti));

    MatrixXd q_uu_reg = q_uu + mu_reg * MatrixXd::Identity(long(nu), long(nu));
    Eigen::LLT<MatrixXd> llt(q_uu_reg);
    if (llt.info() != Eigen::Success)
      throw SolverError("backward_pass: Q_uu not positive definite at step " +
                        std::to_string(ti) + " (mu_reg " + std::to_string(mu_reg) + ")");
    VectorXd k = -llt.solve(q_u);
    MatrixXd bigk = -llt.solve(q_uz);

    expected_improvement += -0.5 * k.dot(q_u);
    vz = q_z + bigk.transpose() * q_uu * k + bigk.transpose() * q_u + q_uz.transpose() * k;
    vzz = q_zz + bigk.transpose() * q_uu * bigk + bigk.transpose() * q_uz +
          q_uz.transpose() * bigk;
    vzz = 0.5 * (vzz + vzz.transpose()).eval();

    g.k[ti] = from_vec(k);
    g.K[ti].resize(nu * nz);
    for (size_t r = 0; r < nu; ++r)
      for (size_t cix = 0; cix < nz; ++cix) g.K[ti][r * nz + cix] = bigk(long(r), long(cix));
  }
  return {g, expected_improvement};
}

NominalTrajectory forward_pass(const LatentModel& m, const NominalTrajectory& traj,
                               const Gains& gains, double alpha) {
  size_t nz = m.n_z(), nu = m.n_u();
  check_traj(traj, nz, nu, "forward_pass");
  size_t t_len = traj.u.size();
  if (gains.k.size() != t_len || gains.K.size() != t_len)
    throw ContractError("forward_pass: gains do not match the trajectory length");

  NominalTrajectory out;
  out.z.resize(t_len + 1);
  out.u.resize(t_len);
  out.z[0] = traj.z[0];
  for (size_t t = 0; t < t_len; ++t) {
    VectorXd dz = to_vec(out.z[t]) - to_vec(traj.z[t]);
    Eigen::Map<const RowMat> bigk(gains.K[t].data(), long(nu), long(nz));
    VectorXd u = to_vec(traj.u[t]) + alpha * to_vec(gains.k[t]) + bigk * dz;
    out.u[t] = from_vec(u);
    out.z[t + 1] = m.dynamics_mean(out.z[t], out.u[t]);
    if (!all_finite(out.u[t]) || !all_finite(out.z[t + 1]))
      throw NumericError("forward_pass: non-finite rollout at step " + std::to_string(t));
  }
  return out;
}

IlqrResult ilqr_solve(const LatentModel& m, const std::vector<double>& z0, const LatentCost& c,
                      size_t t_plan, size_t max_iters, double tol, double action_bound,
                      RngStream& rng, const std::vector<std::vector<double>>* warm) {
  c.validate();
  size_t nz = m.n_z(), nu = m.n_u();
  if (t_plan < 1) throw ContractError("ilqr_solve: t_plan must be >= 1");
  if (z0.size() != nz) throw ContractError("ilqr_solve: z0 size mismatch");
  if (!(action_bound > 0.0)) throw ConfigError("ilqr_solve: action_bound must be > 0");

  NominalTrajectory traj;
  traj.u.assign(t_plan, std::vector<double>(nu, 0.0));
  for (size_t t = 0; t < t_plan; ++t) {
    if (warm && t < warm->size()) {
      if ((*warm)[t].size() != nu) throw ContractError("ilqr_solve: warm action size mismatch");
      traj.u[t] = (*warm)[t];
    } else if (!warm) {
      for (double& a : traj.u[t]) a = rng.uniform(-action_bound, action_bound);
    }
  }
  traj.z.resize(t_plan + 1);
  traj.z[0] = z0;
  for (size_t t = 0; t < t_plan; ++t) {
    traj.z[t + 1] = m.dynamics_mean(traj.z[t], traj.u[t]);
    if (!all_finite(traj.z[t + 1]))
      throw NumericError("ilqr_solve: non-finite initial rollout at step " + std::to_string(t));
  }

  IlqrResult res;
  res.traj = traj;
  res.cost = trajectory_cost(traj, c);
  res.cost_history.push_back(res.cost);

  double mu = 1e-6;
  const double mu_max = 1e10;
  double cost = res.cost;
  for (size_t iter = 1; iter <= max_iters; ++iter) {
    res.iterations = iter;
    Gains g;
    double ei = 0.0;
    for (;;) {
      try {
        std::tie(g, ei) = backward_pass(m, traj, c, mu);
        break;
      } catch (const SolverError&) {
        mu *= 10.0;
        if (mu > mu_max) return res;
      }
    }
    res.gains = g;

    bool accepted = false;
    for (double alpha = 1.0; alpha >= 1.0 / 1024.0; alpha *= 0.5) {
      NominalTrajectory cand;
      try {
        cand = forward_pass(m, traj, g, alpha);
      } catch (const NumericError&) {
        continue;
      }
      double cand_cost = trajectory_cost(cand, c);
      if (std::isfinite(cand_cost) && cand_cost < cost) {
        double rel = (cost - cand_cost) / std::max(1.0, std::abs(cost));
        traj = cand;
        cost = cand_cost;
        res.traj = traj;
        res.cost = cost;
        res.cost_history.push_back(cost);
        mu = std::max(mu * 0.5, 1e-12);
        accepted = true;
        if (rel < tol) res.converged = true;
        break;
      }
    }
    if (!accepted) {
      mu *= 10.0;
      if (mu > mu_max) return res;
      continue;
    }
    if (res.converged) return res;
  }
  return res;
}

MpcResult mpc_run(const EnvConfig& env, double sigma, const LatentModel& m,
                  const EnvState& s_start, const EnvState& s_goal, const MpcConfig& cfg,
                  RngStream& rng) {
  if (m.n_u() != env.n_u) throw ConfigError("mpc_run: model and env action dims differ");
  if (cfg.horizon < 1 || cfg.plan_window < 1 || cfg.replan_every < 1)
    throw ConfigError("mpc_run: horizon, plan_window, replan_every must be >= 1");

  std::vector<double> zero_u(env.n_u, 0.0);
  RngStream scratch = RngStream::derive(0, "mpc-zero-step");
  EnvState goal_next = step(env, s_goal, zero_u, 0.0, scratch);
  std::vector<double> z_goal = m.encode_mean(observe(env, s_goal, goal_next));

  LatentCost cost{z_goal, cfg.kappa, cfg.horizon};
  cost.validate();

  EnvState s_prev = s_start;
  EnvState s_cur = step(env, s_start, zero_u, 0.0, scratch);

  MpcResult result;
  result.steps.reserve(cfg.horizon);
  IlqrResult plan;
  bool plan_ok = false;
  size_t plan_offset = 0;
  size_t in_goal_count = 0;

  for (size_t k = 0; k < cfg.horizon; ++k) {
    if (k % cfg.replan_every == 0) {
      std::vector<double> z_now = m.encode_mean(observe(env, s_prev, s_cur));
      size_t window = std::min(cfg.plan_window, cfg.horizon - k);
      std::vector<std::vector<double>> warm;
      bool have_warm = plan_ok && plan.traj.u.size() > 1;
      if (have_warm) warm.assign(plan.traj.u.begin() + 1, plan.traj.u.end());
      try {
        plan = ilqr_solve(m, z_now, cost, window, cfg.max_iters, cfg.tol, env.action_bound, rng,
                          have_warm ? &warm : nullptr);
        plan_ok = true;
      } catch (const SolverError&) {
        plan_ok = false;
      } catch (const NumericError&) {
        plan_ok = false;
      }
      plan_offset = 0;
    }

    MpcStepRecord rec;
    rec.solver_ok = plan_ok && plan_offset < plan.traj.u.size();
    rec.action = zero_u;
    if (rec.solver_ok) {
      rec.action = plan.traj.u[plan_offset];
      for (double& a : rec.action) a = std::clamp(a, -env.action_bound, env.action_bound);
      rec.planned_cost = plan.cost;
    } else {
      result.any_solver_failure = true;
    }

    EnvState s_next = step(env, s_cur, rec.action, sigma, rng);
    rec.state = s_next.s;
    rec.in_goal = goal_check(env, s_next);
    if (rec.in_goal) ++in_goal_count;
    result.steps.push_back(std::move(rec));

    s_prev = s_cur;
    s_cur = s_next;
    ++plan_offset;
  }
  result.frac_in_goal = double(in_goal_count) / double(cfg.horizon);
  return result;
}

std::string mpc_csv_header(const MpcResult& r) {
  std::string h = "step";
  if (!r.steps.empty()) {
    for (size_t i = 0; i < r.steps[0].state.size(); ++i) h += ",s" + std::to_string(i);
    for (size_t i = 0; i < r.steps[0].action.size(); ++i) h += ",u" + std::to_string(i);
  }
  h += ",in_goal,planned_cost";
  return h;
}

std::string mpc_csv_row(const MpcResult& r, size_t step) {
  const MpcStepRecord& rec = r.steps.at(step);
  char buf[64];
  std::string row = std::to_string(step);
  for (double v : rec.state) {
    std::snprintf(buf, sizeof(buf), ",%.17g", v);
    row += buf;
  }
  for (double v : rec.action) {
    std::snprintf(buf, sizeof(buf), ",%.17g", v);
    row += buf;
  }
  row += rec.in_goal ? ",1" : ",0";
  std::snprintf(buf, sizeof(buf), ",%.17g", rec.planned_cost);
  row += buf;
  return row;
}

}  // namespace pcc
