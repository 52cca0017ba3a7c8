#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "pcc/envs.hpp"
#include "pcc/model.hpp"

namespace pcc {

// Minimal planning view of a latent model: deterministic encode, mean
// dynamics, and the local linearization. Plain row-major buffers at the
// boundary so hand-built linear models slot in next to the learned one.
class LatentModel {
 public:
  virtual ~LatentModel() = default;
  virtual size_t n_z() const = 0;
  virtual size_t n_u() const = 0;
  virtual std::vector<double> encode_mean(const std::vector<double>& x) const = 0;
  virtual std::vector<double> dynamics_mean(const std::vector<double>& z,
                                            const std::vector<double>& u) const = 0;
  virtual void dynamics_jacobian(const std::vector<double>& z, const std::vector<double>& u,
                                 std::vector<double>& a_out, std::vector<double>& b_out) const = 0;
};

class PccLatentModel : public LatentModel {
 public:
  explicit PccLatentModel(const PccModel& m) : m_(m) {}
  size_t n_z() const override { return m_.spec.n_z; }
  size_t n_u() const override { return m_.spec.n_u; }
  std::vector<double> encode_mean(const std::vector<double>& x) const override {
    return m_.encode_mean(x);
  }
  std::vector<double> dynamics_mean(const std::vector<double>& z,
                                    const std::vector<double>& u) const override {
    return m_.dynamics_mean(z, u);
  }
  void dynamics_jacobian(const std::vector<double>& z, const std::vector<double>& u,
                         std::vector<double>& a_out, std::vector<double>& b_out) const override {
    m_.dynamics_jacobian(z, u, a_out, b_out);
  }

 private:
  const PccModel& m_;
};

// Quadratic latent goal cost (z - z_goal)^T kappa I (z - z_goal) + u^T u,
// summed over the execution horizon.
struct LatentCost {
  std::vector<double> z_goal;
  double kappa = 50.0;
  size_t horizon = 40;

  void validate() const;
};

struct CostDerivs {
  double value = 0.0;
  Eigen::VectorXd c_z, c_u;
  Eigen::MatrixXd c_zz, c_uz, c_uu;
};
CostDerivs cost_derivatives(const LatentCost& c, const Eigen::VectorXd& z,
                            const Eigen::VectorXd& u);

// Nominal latent trajectory: states of length T+1, actions of length T.
struct NominalTrajectory {
  std::vector<std::vector<double>> z;
  std::vector<std::vector<double>> u;
};

// Time-varying affine policy u_t = u_bar_t + k_t + K_t (z_t - z_bar_t);
// K rows are row-major n_u x n_z.
struct Gains {
  std::vector<std::vector<double>> k;
  std::vector<std::vector<double>> K;
};

// Running cost over the trajectory plus the terminal state cost.
double trajectory_cost(const NominalTrajectory& traj, const LatentCost& c);

// Riccati-style sweep over the linearized dynamics with a Levenberg
// regularizer on Q_uu. Returns the gains and the predicted cost improvement
// sum 0.5 * Q_u^T (Q_uu + mu I)^-1 Q_u (nonnegative by construction). Noise
// enters the Q-expansion only through its constant block, so the gains plan
// on the dynamics mean. Throws SolverError if a regularized Q_uu is not
// positive definite and NumericError if a recursion step goes non-finite.
std::pair<Gains, double> backward_pass(const LatentModel& m, const NominalTrajectory& traj,
                                       const LatentCost& c, double mu_reg);

// Rolls the dynamics mean with the perturbed policy at line-search step
// alpha; alpha = 0 with zero deviation reproduces the nominal.
NominalTrajectory forward_pass(const LatentModel& m, const NominalTrajectory& traj,
                               const Gains& gains, double alpha);

struct IlqrResult {
  NominalTrajectory traj;
  Gains gains;
  double cost = 0.0;
  bool converged = false;
  size_t iterations = 0;
  std::vector<double> cost_history;  // initial cost, then each accepted cost
};

// Alternates backward and forward passes with a backtracking line search
// (alpha = 1, 1/2, ..., 2^-10, simple decrease) and the mu schedule x10 on
// failure / /2 on success from 1e-6, capped at 1e10. Actions initialize
// uniformly in [-action_bound, action_bound] unless `warm` provides them.
// Stops on relative cost change < tol; if the line search and mu cap are
// both exhausted, returns best-so-far with converged = false.
IlqrResult ilqr_solve(const LatentModel& m, const std::vector<double>& z0, const LatentCost& c,
                      size_t t_plan, size_t max_iters, double tol, double action_bound,
                      RngStream& rng, const std::vector<std::vector<double>>* warm = nullptr);

struct MpcConfig {
  size_t horizon = 40;       // executed env steps
  size_t plan_window = 40;   // lookahead, truncated to the remaining horizon
  size_t replan_every = 1;
  size_t max_iters = 20;
  double tol = 1e-6;
  double kappa = 50.0;
};

struct MpcStepRecord {
  std::vector<double> state;   // underlying env state after the action
  std::vector<double> action;
  bool in_goal = false;
  bool solver_ok = true;
  double planned_cost = 0.0;   // iLQR cost of the plan this action came from
};

struct MpcResult {
  std::vector<MpcStepRecord> steps;
  double frac_in_goal = 0.0;
  bool any_solver_failure = false;
};

// Receding-horizon loop: encode the goal and the current observation via
// encoder means, solve iLQR over min(plan_window, remaining) steps, apply
// the first action to the environment, re-encode, and warm-start the next
// solve from the previous plan shifted by one. A solver exception at a step
// applies a zero action and flags the run. frac_in_goal counts the states
// after each of the `horizon` executed actions.
MpcResult mpc_run(const EnvConfig& env, double sigma, const LatentModel& m,
                  const EnvState& s_start, const EnvState& s_goal, const MpcConfig& cfg,
                  RngStream& rng);

// One CSV row per executed step: step, state..., action..., in_goal,
// planned_cost. Column names are derived from the sizes in the first record.
std::string mpc_csv_header(const MpcResult& r);
std::string mpc_csv_row(const MpcResult& r, size_t step);

}  // namespace pcc
