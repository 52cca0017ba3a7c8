#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pcc/errors.hpp"
#include "pcc/rng.hpp"

namespace pcc {

enum class Domain : uint8_t { planar = 0, pendulum = 1, cartpole = 2, threelink = 3 };

const char* domain_name(Domain d);
Domain parse_domain(const std::string& name);  // ConfigError lists valid names

struct Disk {
  double x = 0, y = 0, r = 0;
};

// Per-domain constants. Everything a run needs to regenerate data and
// evaluate episodes lives here so runs are reproducible from the config echo.
struct EnvConfig {
  Domain domain = Domain::planar;

  size_t img_h = 40, img_w = 40, frames = 1;
  size_t state_dim = 2, n_u = 2;

  // Uniform action box [-action_bound, action_bound]^n_u.
  double action_bound = 3.0;

  // Planar arena.
  double arena = 40.0;
  double agent_radius = 1.5;
  std::vector<Disk> obstacles;
  double goal_radius = 2.0;
  double corner_margin = 2.0;

  // Link/cart dynamics.
  double dt = 0.05;
  double gravity = 9.8;
  double damping = 0.0;
  double pole_mass = 1.0, pole_length = 1.0;           // pendulum
  double cart_mass = 1.0, cartpole_pole_mass = 0.1;    // cartpole
  double cartpole_pole_length = 0.5, cart_limit = 2.4;
  std::array<double, 3> link_masses{1.0, 1.0, 1.0};    // three-link
  std::array<double, 3> link_lengths{1.0, 1.0, 1.0};

  // Uniform sampling ranges for dataset generation.
  double sample_vel = 8.0;        // pendulum |omega|
  double sample_cart_vel = 6.0;   // cartpole |xdot|
  double sample_cart_omega = 4.0; // cartpole |omega|
  double sample_cart_angle = 1.5707963267948966;  // cartpole |theta|
  double sample_link_vel = 4.0;   // three-link |omega_i|

  // Goal tolerances.
  double goal_angle_pendulum = 0.5235987755982988;   // pi/6
  double goal_angle_cartpole = 0.3141592653589793;   // pi/10
  double goal_angle_threelink = 0.5235987755982988;  // pi/6

  static EnvConfig defaults(Domain d);

  size_t obs_dim() const { return frames * img_h * img_w; }
};

struct EnvState {
  std::vector<double> s;
};

double wrap_angle(double a);  // to (-pi, pi]

// One transition. Actions outside the box are clamped (warned once per
// process); sigma scales i.i.d. Gaussian noise added to the state update.
EnvState step(const EnvConfig& cfg, const EnvState& s, const std::vector<double>& u,
              double sigma, RngStream& rng);

// Binary rasterization, row-major H x W of 0/1.
std::vector<double> render(const EnvConfig& cfg, const EnvState& s);

// Frame stack [render(prev), render(cur)] (single frame for planar).
std::vector<double> observe(const EnvConfig& cfg, const EnvState& prev, const EnvState& cur);

// Planar validity: inside walls, outside every inflated obstacle.
bool planar_valid(const EnvConfig& cfg, double x, double y, double tol = 1e-9);

EnvState sample_uniform_state(const EnvConfig& cfg, RngStream& rng);

bool goal_check(const EnvConfig& cfg, const EnvState& s);
EnvState goal_state(const EnvConfig& cfg);
EnvState start_state(const EnvConfig& cfg, size_t task_index, RngStream& rng);

// Absolute-coordinate accelerations of a chain of point-mass links driven by
// relative joint torques. Exposed so the single-link case can be checked
// against the closed-form pendulum.
std::vector<double> nlink_accel(const std::vector<double>& phi,
                                const std::vector<double>& phidot,
                                const std::vector<double>& torque_rel,
                                const std::vector<double>& masses,
                                const std::vector<double>& lengths, double g);

// ---------------- datasets ----------------

// Sampled transition triples with u8 pixel frames.
struct Dataset {
  Domain domain = Domain::planar;
  double sigma = 0.0;
  size_t n = 0, obs_dim = 0, u_dim = 0;
  std::vector<uint8_t> x;   // n * obs_dim
  std::vector<double> u;    // n * u_dim
  std::vector<uint8_t> xn;  // n * obs_dim
};

// Uniform-state / uniform-action triples. The previous frame of each stacked
// observation comes from anchoring the sampled state and advancing one
// zero-action step, so both frames of a stack are one true step apart.
Dataset generate_dataset(const EnvConfig& cfg, size_t n, double sigma, uint64_t seed);

void save_dataset(const std::string& path, const Dataset& ds, const EnvConfig& cfg);
Dataset load_dataset(const std::string& path, EnvConfig* layout_out = nullptr);

}  // namespace pcc
