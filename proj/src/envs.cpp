#include "pcc/envs.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <numbers>

namespace pcc {
namespace {

constexpr double kPi = std::numbers::pi;

void check_state(const EnvConfig& cfg, const EnvState& s) {
  if (s.s.size() != cfg.state_dim)
    throw ShapeError("env: state has " + std::to_string(s.s.size()) + " components, expected " +
                     std::to_string(cfg.state_dim));
}

std::vector<double> clamp_action(const EnvConfig& cfg, const std::vector<double>& u) {
  if (u.size() != cfg.n_u)
    throw ShapeError("env: action has " + std::to_string(u.size()) + " components, expected " +
                     std::to_string(cfg.n_u));
  std::vector<double> c = u;
  static bool warned = false;
  for (double& v : c) {
    if (v < -cfg.action_bound || v > cfg.action_bound) {
      if (!warned) {
        std::fprintf(stderr, "env: action outside [-%g, %g], clamping (reported once)\n",
                     cfg.action_bound, cfg.action_bound);
        warned = true;
      }
      v = std::min(cfg.action_bound, std::max(-cfg.action_bound, v));
    }
  }
  return c;
}

// Largest t in [0,1] such that the planar segment s -> s + t*d stays valid.
double planar_free_travel(const EnvConfig& cfg, double x, double y, double dx, double dy) {
  double t = 1.0;
  double lo = cfg.agent_radius, hi = cfg.arena - cfg.agent_radius;
  if (dx > 0) t = std::min(t, (hi - x) / dx);
  if (dx < 0) t = std::min(t, (lo - x) / dx);
  if (dy > 0) t = std::min(t, (hi - y) / dy);
  if (dy < 0) t = std::min(t, (lo - y) / dy);
  for (const Disk& o : cfg.obstacles) {
    double R = o.r + cfg.agent_radius;
    double px = x - o.x, py = y - o.y;
    double a = dx * dx + dy * dy;
    if (a == 0.0) continue;
    double b = 2.0 * (px * dx + py * dy);
    double c = px * px + py * py - R * R;
    double disc = b * b - 4.0 * a * c;
    if (disc <= 0.0) continue;
    double root = (-b - std::sqrt(disc)) / (2.0 * a);
    if (root >= 0.0 && root < t) t = root;
  }
  return std::max(0.0, t - 1e-9);
}

void pendulum_accel(const EnvConfig& cfg, double theta, double omega, double torque,
                    double& acc) {
  // theta measured from upright; gravity is destabilizing.
  double ml2 = cfg.pole_mass * cfg.pole_length * cfg.pole_length;
  acc = (cfg.gravity / cfg.pole_length) * std::sin(theta) + torque / ml2 -
        cfg.damping * omega;
}

}  // namespace

double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a <= 0.0) a += 2.0 * kPi;
  return a - kPi;
}

const char* domain_name(Domain d) {
  switch (d) {
    case Domain::planar: return "planar";
    case Domain::pendulum: return "pendulum";
    case Domain::cartpole: return "cartpole";
    case Domain::threelink: return "threelink";
  }
  return "unknown";
}

Domain parse_domain(const std::string& name) {
  for (Domain d : {Domain::planar, Domain::pendulum, Domain::cartpole, Domain::threelink})
    if (name == domain_name(d)) return d;
  throw ConfigError("unknown domain '" + name +
                    "' (valid: planar, pendulum, cartpole, threelink)");
}

EnvConfig EnvConfig::defaults(Domain d) {
  EnvConfig c;
  c.domain = d;
  switch (d) {
    case Domain::planar:
      c.img_h = c.img_w = 40;
      c.frames = 1;
      c.state_dim = 2;
      c.n_u = 2;
      c.action_bound = 3.0;
      // Two columns of three disks; edge corridors and the center gap stay open.
      c.obstacles = {{13.0, 8.0, 2.5},  {13.0, 20.0, 2.5}, {13.0, 32.0, 2.5},
                     {27.0, 8.0, 2.5},  {27.0, 20.0, 2.5}, {27.0, 32.0, 2.5}};
      break;
    case Domain::pendulum:
      c.img_h = c.img_w = 48;
      c.frames = 2;
      c.state_dim = 2;
      c.n_u = 1;
      c.action_bound = 2.0;
      c.dt = 0.05;
      break;
    case Domain::cartpole:
      c.img_h = c.img_w = 80;
      c.frames = 2;
      c.state_dim = 4;
      c.n_u = 1;
      c.action_bound = 10.0;
      c.dt = 0.02;
      break;
    case Domain::threelink:
      c.img_h = c.img_w = 80;
      c.frames = 2;
      c.state_dim = 6;
      c.n_u = 3;
      c.action_bound = 1.0;
      c.dt = 0.05;
      break;
  }
  return c;
}

std::vector<double> nlink_accel(const std::vector<double>& phi,
                                const std::vector<double>& phidot,
                                const std::vector<double>& torque_rel,
                                const std::vector<double>& masses,
                                const std::vector<double>& lengths, double g) {
  size_t n = phi.size();
  // Tail mass sums: csum[k] = sum of masses from link k outward.
  std::vector<double> csum(n + 1, 0.0);
  for (size_t k = n; k-- > 0;) csum[k] = csum[k + 1] + masses[k];

  Eigen::MatrixXd M(n, n);
  Eigen::VectorXd rhs(n);
  for (size_t i = 0; i < n; ++i) {
    double cor = 0.0;
    for (size_t j = 0; j < n; ++j) {
      double mass = csum[std::max(i, j)];
      M(i, j) = mass * lengths[i] * lengths[j] * std::cos(phi[i] - phi[j]);
      cor += mass * lengths[i] * lengths[j] * std::sin(phi[i] - phi[j]) * phidot[j] * phidot[j];
    }
    // Relative joint torque i acts between links i-1 and i.
    double tau = torque_rel[i] - (i + 1 < n ? torque_rel[i + 1] : 0.0);
    double grav = -g * lengths[i] * std::sin(phi[i]) * csum[i];  // upright = 0
    rhs(i) = tau - cor - grav;
  }
  Eigen::VectorXd acc = M.ldlt().solve(rhs);
  return std::vector<double>(acc.data(), acc.data() + n);
}

EnvState step(const EnvConfig& cfg, const EnvState& s, const std::vector<double>& u,
              double sigma, RngStream& rng) {
  check_state(cfg, s);
  std::vector<double> a = clamp_action(cfg, u);
  EnvState out;
  out.s.resize(cfg.state_dim);

  switch (cfg.domain) {
    case Domain::planar: {
      double dx = a[0], dy = a[1];
      if (sigma > 0.0) {
        dx += sigma * rng.normal();
        dy += sigma * rng.normal();
      }
      double t = planar_free_travel(cfg, s.s[0], s.s[1], dx, dy);
      out.s[0] = s.s[0] + t * dx;
      out.s[1] = s.s[1] + t * dy;
      break;
    }
    case Domain::pendulum: {
      double acc;
      pendulum_accel(cfg, s.s[0], s.s[1], a[0], acc);
      double omega = s.s[1] + cfg.dt * acc;
      double theta = s.s[0] + cfg.dt * omega;
      if (sigma > 0.0) {
        theta += sigma * rng.normal();
        omega += sigma * rng.normal();
      }
      out.s[0] = wrap_angle(theta);
      out.s[1] = omega;
      break;
    }
    case Domain::cartpole: {
      double x = s.s[0], xdot = s.s[1], th = s.s[2], om = s.s[3];
      double mc = cfg.cart_mass, mp = cfg.cartpole_pole_mass, l = cfg.cartpole_pole_length;
      double F = a[0];
      double temp = (F + mp * l * om * om * std::sin(th)) / (mc + mp);
      double thacc = (cfg.gravity * std::sin(th) - std::cos(th) * temp) /
                     (l * (4.0 / 3.0 - mp * std::cos(th) * std::cos(th) / (mc + mp)));
      double xacc = temp - mp * l * thacc * std::cos(th) / (mc + mp);
      xdot += cfg.dt * xacc;
      x += cfg.dt * xdot;
      om += cfg.dt * thacc;
      th += cfg.dt * om;
      if (sigma > 0.0) {
        x += sigma * rng.normal();
        xdot += sigma * rng.normal();
        th += sigma * rng.normal();
        om += sigma * rng.normal();
      }
      if (x > cfg.cart_limit) {
        x = cfg.cart_limit;
        xdot = 0.0;
      } else if (x < -cfg.cart_limit) {
        x = -cfg.cart_limit;
        xdot = 0.0;
      }
      out.s = {x, xdot, wrap_angle(th), om};
      break;
    }
    case Domain::threelink: {
      std::vector<double> phi(3), phidot(3), tau(a.begin(), a.end());
      double accth = 0.0, accom = 0.0;
      phi[0] = s.s[0];
      phidot[0] = s.s[3];
      for (int i = 1; i < 3; ++i) {
        phi[i] = phi[i - 1] + s.s[i];
        phidot[i] = phidot[i - 1] + s.s[3 + i];
      }
      std::vector<double> masses(cfg.link_masses.begin(), cfg.link_masses.end());
      std::vector<double> lengths(cfg.link_lengths.begin(), cfg.link_lengths.end());
      std::vector<double> phiacc = nlink_accel(phi, phidot, tau, masses, lengths, cfg.gravity);
      for (int i = 0; i < 3; ++i) {
        double rel_acc = i == 0 ? phiacc[0] : phiacc[i] - phiacc[i - 1];
        rel_acc -= cfg.damping * s.s[3 + i];
        accom = s.s[3 + i] + cfg.dt * rel_acc;
        accth = s.s[i] + cfg.dt * accom;
        if (sigma > 0.0) {
          accth += sigma * rng.normal();
          accom += sigma * rng.normal();
        }
        out.s[i] = wrap_angle(accth);
        out.s[3 + i] = accom;
      }
      break;
    }
  }
  return out;
}

// ---------------- rendering ----------------

namespace {

void draw_disk(std::vector<double>& img, size_t h, size_t w, double cx, double cy, double r) {
  double r2 = r * r;
  for (size_t i = 0; i < h; ++i)
    for (size_t j = 0; j < w; ++j) {
      double dx = (j + 0.5) - cx, dy = (i + 0.5) - cy;
      if (dx * dx + dy * dy <= r2) img[i * w + j] = 1.0;
    }
}

void draw_rod(std::vector<double>& img, size_t h, size_t w, double x0, double y0,
              double dirx, double diry, double len, double halfwidth) {
  for (size_t i = 0; i < h; ++i)
    for (size_t j = 0; j < w; ++j) {
      double px = (j + 0.5) - x0, py = (i + 0.5) - y0;
      double t = px * dirx + py * diry;
      double nrm = -px * diry + py * dirx;
      if (t >= 0.0 && t <= len && std::abs(nrm) <= halfwidth) img[i * w + j] = 1.0;
    }
}

}  // namespace

std::vector<double> render(const EnvConfig& cfg, const EnvState& s) {
  check_state(cfg, s);
  std::vector<double> img(cfg.img_h * cfg.img_w, 0.0);
  switch (cfg.domain) {
    case Domain::planar: {
      for (const Disk& o : cfg.obstacles)
        draw_disk(img, cfg.img_h, cfg.img_w, o.x, o.y, o.r);
      draw_disk(img, cfg.img_h, cfg.img_w, s.s[0], s.s[1], cfg.agent_radius);
      break;
    }
    case Domain::pendulum: {
      double cx = cfg.img_w / 2.0, cy = cfg.img_h / 2.0;
      draw_rod(img, cfg.img_h, cfg.img_w, cx, cy, std::sin(s.s[0]), -std::cos(s.s[0]), 18.0, 2.0);
      break;
    }
    case Domain::cartpole: {
      double scale = (cfg.img_w / 2.0 - 12.0) / cfg.cart_limit;
      double cx = cfg.img_w / 2.0 + s.s[0] * scale;
      double cart_top = cfg.img_h - 22.0;
      // Cart body.
      for (size_t i = 0; i < cfg.img_h; ++i)
        for (size_t j = 0; j < cfg.img_w; ++j) {
          double px = (j + 0.5) - cx, py = (i + 0.5) - (cart_top + 3.0);
          if (std::abs(px) <= 6.0 && std::abs(py) <= 3.0) img[i * cfg.img_w + j] = 1.0;
        }
      draw_rod(img, cfg.img_h, cfg.img_w, cx, cart_top, std::sin(s.s[2]), -std::cos(s.s[2]),
               28.0, 1.5);
      break;
    }
    case Domain::threelink: {
      double x = cfg.img_w / 2.0, y = cfg.img_h / 2.0, phi = 0.0;
      for (int i = 0; i < 3; ++i) {
        phi += s.s[i];
        double dx = std::sin(phi), dy = -std::cos(phi);
        draw_rod(img, cfg.img_h, cfg.img_w, x, y, dx, dy, 12.0, 1.5);
        x += 12.0 * dx;
        y += 12.0 * dy;
      }
      break;
    }
  }
  return img;
}

std::vector<double> observe(const EnvConfig& cfg, const EnvState& prev, const EnvState& cur) {
  if (cfg.frames == 1) return render(cfg, cur);
  std::vector<double> a = render(cfg, prev);
  std::vector<double> b = render(cfg, cur);
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// ---------------- state space ----------------

bool planar_valid(const EnvConfig& cfg, double x, double y, double tol) {
  double lo = cfg.agent_radius - tol, hi = cfg.arena - cfg.agent_radius + tol;
  if (x < lo || x > hi || y < lo || y > hi) return false;
  for (const Disk& o : cfg.obstacles) {
    double R = o.r + cfg.agent_radius;
    double dx = x - o.x, dy = y - o.y;
    if (dx * dx + dy * dy < R * R - tol) return false;
  }
  return true;
}

EnvState sample_uniform_state(const EnvConfig& cfg, RngStream& rng) {
  EnvState st;
  switch (cfg.domain) {
    case Domain::planar: {
      double lo = cfg.agent_radius, hi = cfg.arena - cfg.agent_radius;
      for (int tries = 0; tries < 10000; ++tries) {
        double x = rng.uniform(lo, hi), y = rng.uniform(lo, hi);
        if (planar_valid(cfg, x, y)) {
          st.s = {x, y};
          return st;
        }
      }
      throw NumericError("sample_uniform_state: rejection sampling failed");
    }
    case Domain::pendulum:
      st.s = {rng.uniform(-kPi, kPi), rng.uniform(-cfg.sample_vel, cfg.sample_vel)};
      return st;
    case Domain::cartpole:
      st.s = {rng.uniform(-cfg.cart_limit, cfg.cart_limit),
              rng.uniform(-cfg.sample_cart_vel, cfg.sample_cart_vel),
              rng.uniform(-cfg.sample_cart_angle, cfg.sample_cart_angle),
              rng.uniform(-cfg.sample_cart_omega, cfg.sample_cart_omega)};
      return st;
    case Domain::threelink:
      st.s.resize(6);
      for (int i = 0; i < 3; ++i) st.s[i] = rng.uniform(-kPi, kPi);
      for (int i = 3; i < 6; ++i) st.s[i] = rng.uniform(-cfg.sample_link_vel, cfg.sample_link_vel);
      return st;
  }
  throw ConfigError("sample_uniform_state: bad domain");
}

bool goal_check(const EnvConfig& cfg, const EnvState& s) {
  check_state(cfg, s);
  switch (cfg.domain) {
    case Domain::planar: {
      EnvState g = goal_state(cfg);
      double dx = s.s[0] - g.s[0], dy = s.s[1] - g.s[1];
      return std::sqrt(dx * dx + dy * dy) <= cfg.goal_radius;
    }
    case Domain::pendulum:
      return std::abs(wrap_angle(s.s[0])) <= cfg.goal_angle_pendulum;
    case Domain::cartpole:
      return std::abs(wrap_angle(s.s[2])) <= cfg.goal_angle_cartpole;
    case Domain::threelink:
      return std::abs(wrap_angle(s.s[0] + s.s[1] + s.s[2])) <= cfg.goal_angle_threelink;
  }
  return false;
}

EnvState goal_state(const EnvConfig& cfg) {
  switch (cfg.domain) {
    case Domain::planar: {
      double m = cfg.corner_margin;
      return {{cfg.arena - m, cfg.arena - m}};
    }
    case Domain::pendulum:
      return {{0.0, 0.0}};
    case Domain::cartpole:
      return {{0.0, 0.0, 0.0, 0.0}};
    case Domain::threelink:
      return {{0.0, 0.0, 0.0, 0.0, 0.0, 0.0}};
  }
  throw ConfigError("goal_state: bad domain");
}

EnvState start_state(const EnvConfig& cfg, size_t task_index, RngStream& rng) {
  switch (cfg.domain) {
    case Domain::planar: {
      double m = cfg.corner_margin, far = cfg.arena - cfg.corner_margin;
      // Three corners, excluding the goal corner; tasks cycle through them.
      const double xs[3] = {m, far, m};
      const double ys[3] = {m, m, far};
      size_t k = task_index % 3;
      return {{xs[k], ys[k]}};
    }
    case Domain::pendulum:
      return {{kPi, 0.0}};  // resting straight down
    case Domain::cartpole: {
      double th = rng.uniform(-kPi / 6.0, kPi / 6.0);
      return {{0.0, 0.0, th, 0.0}};
    }
    case Domain::threelink:
      // Poles at absolute angles (pi, 2pi/3, pi/3); stored as relative.
      return {{kPi, -kPi / 3.0, -kPi / 3.0, 0.0, 0.0, 0.0}};
  }
  throw ConfigError("start_state: bad domain");
}

}  // namespace pcc
