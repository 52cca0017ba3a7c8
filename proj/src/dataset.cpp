#include <cstring>
#include <fstream>

#include "pcc/envs.hpp"

namespace pcc {
namespace {

constexpr char kMagic[4] = {'P', 'C', 'C', 'D'};
constexpr uint16_t kVersion = 1;

template <class T>
void put(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& f, const char* field) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw FormatError(std::string("dataset: unexpected end of file reading ") + field);
  return v;
}

}  // namespace

Dataset generate_dataset(const EnvConfig& cfg, size_t n, double sigma, uint64_t seed) {
  Dataset ds;
  ds.domain = cfg.domain;
  ds.sigma = sigma;
  ds.n = n;
  ds.obs_dim = cfg.obs_dim();
  ds.u_dim = cfg.n_u;
  ds.x.resize(n * ds.obs_dim);
  ds.u.resize(n * ds.u_dim);
  ds.xn.resize(n * ds.obs_dim);

  RngStream rng = RngStream::derive(seed, "data");
  std::vector<double> zero_u(cfg.n_u, 0.0);
  for (size_t i = 0; i < n; ++i) {
    EnvState s0 = sample_uniform_state(cfg, rng);
    // Anchor frame plus one deterministic zero-action step, so stacked frames
    // are consecutive and the action applies to the later one.
    EnvState s1 = step(cfg, s0, zero_u, 0.0, rng);
    std::vector<double> act(cfg.n_u);
    for (double& a : act) a = rng.uniform(-cfg.action_bound, cfg.action_bound);
    EnvState s2 = step(cfg, s1, act, sigma, rng);

    std::vector<double> obs = observe(cfg, s0, s1);
    std::vector<double> obs_next = observe(cfg, s1, s2);
    for (size_t j = 0; j < ds.obs_dim; ++j) {
      ds.x[i * ds.obs_dim + j] = obs[j] > 0.5 ? 1 : 0;
      ds.xn[i * ds.obs_dim + j] = obs_next[j] > 0.5 ? 1 : 0;
    }
    std::memcpy(&ds.u[i * ds.u_dim], act.data(), ds.u_dim * sizeof(double));
  }
  return ds;
}

void save_dataset(const std::string& path, const Dataset& ds, const EnvConfig& cfg) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("dataset: cannot open " + path + " for writing");
  f.write(kMagic, 4);
  put(f, kVersion);
  put(f, static_cast<uint8_t>(ds.domain));
  put(f, ds.sigma);
  put(f, static_cast<uint64_t>(ds.n));
  put(f, static_cast<uint32_t>(ds.obs_dim));
  put(f, static_cast<uint32_t>(ds.u_dim));
  put(f, static_cast<uint32_t>(cfg.obstacles.size()));
  for (const Disk& o : cfg.obstacles) {
    put(f, o.x);
    put(f, o.y);
    put(f, o.r);
  }
  put(f, cfg.agent_radius);
  put(f, cfg.arena);
  put(f, cfg.action_bound);
  for (size_t i = 0; i < ds.n; ++i) {
    f.write(reinterpret_cast<const char*>(&ds.x[i * ds.obs_dim]), ds.obs_dim);
    f.write(reinterpret_cast<const char*>(&ds.u[i * ds.u_dim]), ds.u_dim * sizeof(double));
    f.write(reinterpret_cast<const char*>(&ds.xn[i * ds.obs_dim]), ds.obs_dim);
  }
  if (!f) throw FormatError("dataset: write failed for " + path);
}

Dataset load_dataset(const std::string& path, EnvConfig* layout_out) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("dataset: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("dataset: bad magic in " + path);
  uint16_t version = get<uint16_t>(f, "version");
  if (version != kVersion)
    throw FormatError("dataset: unsupported version " + std::to_string(version));
  uint8_t dom = get<uint8_t>(f, "domain");
  if (dom > 3) throw FormatError("dataset: bad domain tag " + std::to_string(dom));

  Dataset ds;
  ds.domain = static_cast<Domain>(dom);
  ds.sigma = get<double>(f, "sigma");
  ds.n = get<uint64_t>(f, "count");
  ds.obs_dim = get<uint32_t>(f, "obs_dim");
  ds.u_dim = get<uint32_t>(f, "u_dim");

  EnvConfig layout = EnvConfig::defaults(ds.domain);
  uint32_t n_disks = get<uint32_t>(f, "obstacle count");
  if (n_disks > 1000) throw FormatError("dataset: implausible obstacle count");
  layout.obstacles.clear();
  for (uint32_t i = 0; i < n_disks; ++i) {
    Disk o;
    o.x = get<double>(f, "obstacle x");
    o.y = get<double>(f, "obstacle y");
    o.r = get<double>(f, "obstacle r");
    layout.obstacles.push_back(o);
  }
  layout.agent_radius = get<double>(f, "agent radius");
  layout.arena = get<double>(f, "arena size");
  layout.action_bound = get<double>(f, "action bound");

  EnvConfig check = EnvConfig::defaults(ds.domain);
  if (ds.obs_dim != check.obs_dim())
    throw FormatError("dataset: obs_dim " + std::to_string(ds.obs_dim) +
                      " does not match domain " + domain_name(ds.domain));
  if (ds.u_dim != check.n_u)
    throw FormatError("dataset: u_dim " + std::to_string(ds.u_dim) +
                      " does not match domain " + domain_name(ds.domain));

  ds.x.resize(ds.n * ds.obs_dim);
  ds.u.resize(ds.n * ds.u_dim);
  ds.xn.resize(ds.n * ds.obs_dim);
  for (size_t i = 0; i < ds.n; ++i) {
    f.read(reinterpret_cast<char*>(&ds.x[i * ds.obs_dim]), ds.obs_dim);
    f.read(reinterpret_cast<char*>(&ds.u[i * ds.u_dim]), ds.u_dim * sizeof(double));
    f.read(reinterpret_cast<char*>(&ds.xn[i * ds.obs_dim]), ds.obs_dim);
    if (!f)
      throw FormatError("dataset: unexpected end of file in record " + std::to_string(i) +
                        " of " + std::to_string(ds.n));
  }
  for (size_t i = 0; i < ds.x.size(); ++i)
    if (ds.x[i] > 1 || ds.xn[i] > 1)
      throw FormatError("dataset: non-binary pixel at byte " + std::to_string(i));
  if (layout_out) *layout_out = layout;
  return ds;
}

}  // namespace pcc
