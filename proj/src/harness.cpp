#include "pcc/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pcc/errors.hpp"

namespace pcc {

namespace {

std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out << body;
  if (!out) throw FormatError("short write to " + path);
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

// Sample standard deviation over the values divided by sqrt(N).
double sem_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = mean_of(v), ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / double(v.size() - 1)) / std::sqrt(double(v.size()));
}

}  // namespace

DomainDefaults domain_defaults(Domain d) {
  switch (d) {
    case Domain::planar:
      return {40, 5000, 40};
    case Domain::pendulum:
      return {400, 20000, 20};
    case Domain::cartpole:
      return {200, 15000, 20};
    case Domain::threelink:
      return {400, 30000, 20};
  }
  throw ConfigError("domain_defaults: unknown domain");
}

void PipelineConfig::validate() const {
  if (n_models < 1 || n_tasks < 1)
    throw ConfigError("pipeline: n_models and n_tasks must be at least 1");
  if (kappa <= 0) throw ConfigError("pipeline: kappa must be positive");
  if (sigma < 0) throw ConfigError("pipeline: sigma must be nonnegative");
  train.weights.validate();
}

const char* variant_name(AblationVariant v) {
  switch (v) {
    case AblationVariant::full:
      return "full";
    case AblationVariant::no_consistency:
      return "no-consistency";
    case AblationVariant::no_curvature:
      return "no-curvature";
    case AblationVariant::amortized:
      return "amortized";
  }
  throw ConfigError("variant_name: unknown variant");
}

AblationVariant parse_variant(const std::string& name) {
  for (AblationVariant v : {AblationVariant::full, AblationVariant::no_consistency,
                            AblationVariant::no_curvature, AblationVariant::amortized})
    if (name == variant_name(v)) return v;
  throw ConfigError("unknown ablation variant '" + name +
                    "' (expected full, no-consistency, no-curvature, or amortized)");
}

LossWeights variant_weights(LossWeights w, AblationVariant v) {
  switch (v) {
    case AblationVariant::full:
      break;
    case AblationVariant::no_consistency:
      w.lambda_c = 0.0;
      break;
    case AblationVariant::no_curvature:
      w.lambda_cur = 0.0;
      break;
    case AblationVariant::amortized:
      w.amortized = true;
      break;
  }
  return w;
}

PipelineStats aggregate_stats(const std::vector<uint64_t>& seeds,
                              const std::vector<std::vector<double>>& task_scores,
                              const std::vector<std::vector<uint8_t>>& task_failed) {
  if (seeds.empty() || seeds.size() != task_scores.size() || seeds.size() != task_failed.size())
    throw ContractError("aggregate_stats: inconsistent inputs");
  PipelineStats st;
  st.seeds = seeds;
  st.task_scores = task_scores;
  st.task_failed = task_failed;

  std::vector<double> all;
  for (size_t mi = 0; mi < seeds.size(); ++mi) {
    if (task_scores[mi].empty() || task_scores[mi].size() != task_failed[mi].size())
      throw ContractError("aggregate_stats: inconsistent task rows");
    for (size_t ti = 0; ti < task_scores[mi].size(); ++ti) {
      double s = task_scores[mi][ti];
      if (s < 0.0 || s > 100.0) throw ContractError("aggregate_stats: score outside [0,100]");
      all.push_back(s);
      if (task_failed[mi][ti]) ++st.n_failed;
    }
    st.model_means.push_back(mean_of(task_scores[mi]));
  }
  st.grand_mean = mean_of(all);
  st.grand_sem = sem_of(all);

  size_t best = 0;
  for (size_t mi = 1; mi < seeds.size(); ++mi) {
    bool better = st.model_means[mi] > st.model_means[best] ||
                  (st.model_means[mi] == st.model_means[best] && seeds[mi] < seeds[best]);
    if (better) best = mi;
  }
  st.top1_seed = seeds[best];
  st.top1_mean = st.model_means[best];
  st.top1_sem = sem_of(task_scores[best]);
  return st;
}

TaskScore run_task(const EnvConfig& env, double sigma, const PccModel& m, size_t task_index,
                   uint64_t base_seed, size_t episode_len, size_t plan_window, double kappa) {
  TaskScore out;
  try {
    RngStream task_rng = RngStream::derive(base_seed, "pipeline-task", task_index);
    EnvState start = start_state(env, task_index, task_rng);
    EnvState goal = goal_state(env);
    PccLatentModel lm(m);
    MpcConfig mc;
    mc.horizon = episode_len;
    mc.plan_window = plan_window;
    mc.kappa = kappa;
    MpcResult r = mpc_run(env, sigma, lm, start, goal, mc, task_rng);
    out.score_pct = 100.0 * r.frac_in_goal;
    out.solver_flag = r.any_solver_failure;
  } catch (const std::exception&) {
    out.score_pct = 0.0;
    out.failed = true;
  }
  return out;
}

std::string pipeline_config_echo(const PipelineConfig& cfg) {
  DomainDefaults dd = domain_defaults(cfg.domain);
  std::string s;
  s += std::string("domain=") + domain_name(cfg.domain) + "\n";
  s += "n_models=" + std::to_string(cfg.n_models) + "\n";
  s += "n_tasks=" + std::to_string(cfg.n_tasks) + "\n";
  s += "episode_len=" + std::to_string(cfg.episode_len ? cfg.episode_len : dd.episode_len) + "\n";
  s += "plan_window=" + std::to_string(cfg.plan_window ? cfg.plan_window : dd.plan_window) + "\n";
  s += "kappa=" + fmt_double(cfg.kappa) + "\n";
  s += "sigma=" + fmt_double(cfg.sigma) + "\n";
  s += "base_seed=" + std::to_string(cfg.base_seed) + "\n";
  s += "dataset_n=" + std::to_string(cfg.dataset_n ? cfg.dataset_n : dd.dataset_n) + "\n";
  TrainConfig t = cfg.train;
  t.domain = cfg.domain;
  t.seed = cfg.base_seed;
  std::string te = config_echo(t);
  size_t pos = 0;
  while (pos < te.size()) {
    size_t nl = te.find('\n', pos);
    if (nl == std::string::npos) nl = te.size();
    s += "train_" + te.substr(pos, nl - pos) + "\n";
    pos = nl + 1;
  }
  return s;
}

PipelineStats run_pipeline(const PipelineConfig& cfg) {
  cfg.validate();
  DomainDefaults dd = domain_defaults(cfg.domain);
  size_t episode_len = cfg.episode_len ? cfg.episode_len : dd.episode_len;
  size_t plan_window = cfg.plan_window ? cfg.plan_window : dd.plan_window;
  size_t dataset_n = cfg.dataset_n ? cfg.dataset_n : dd.dataset_n;

  EnvConfig env = EnvConfig::defaults(cfg.domain);
  uint64_t data_seed = RngStream::derive(cfg.base_seed, "pipeline-data").next_u64();
  Dataset ds = generate_dataset(env, dataset_n, cfg.sigma, data_seed);

  bool to_disk = !cfg.out_dir.empty();
  if (to_disk) {
    std::filesystem::create_directories(cfg.out_dir);
    write_text(cfg.out_dir + "/pipeline_config.txt", pipeline_config_echo(cfg));
  }

  std::vector<uint64_t> seeds;
  std::vector<std::vector<double>> scores;
  std::vector<std::vector<uint8_t>> failed;
  std::vector<std::vector<uint8_t>> solver_flags;
  for (size_t mi = 0; mi < cfg.n_models; ++mi) {
    uint64_t seed = cfg.base_seed + mi;
    TrainConfig tcfg = cfg.train;
    tcfg.domain = cfg.domain;
    tcfg.seed = seed;
    tcfg.out_dir = to_disk ? cfg.out_dir + "/model-" + std::to_string(seed) : std::string();
    TrainResult tr = train(ds, tcfg);

    std::vector<double> row(cfg.n_tasks, 0.0);
    std::vector<uint8_t> frow(cfg.n_tasks, 0);
    std::vector<uint8_t> srow(cfg.n_tasks, 0);
    for (size_t ti = 0; ti < cfg.n_tasks; ++ti) {
      if (tr.aborted_nan) {
        frow[ti] = 1;  // training died; every episode of this model scores zero
        continue;
      }
      TaskScore ts = run_task(env, cfg.sigma, tr.model, ti, cfg.base_seed, episode_len,
                              plan_window, cfg.kappa);
      row[ti] = ts.score_pct;
      frow[ti] = ts.failed ? 1 : 0;
      srow[ti] = ts.solver_flag ? 1 : 0;
    }
    seeds.push_back(seed);
    scores.push_back(std::move(row));
    failed.push_back(std::move(frow));
    solver_flags.push_back(std::move(srow));
  }

  PipelineStats st = aggregate_stats(seeds, scores, failed);

  if (to_disk) {
    std::string tasks = "model_seed,task,score_pct,failed,solver_flag\n";
    for (size_t mi = 0; mi < st.seeds.size(); ++mi)
      for (size_t ti = 0; ti < cfg.n_tasks; ++ti)
        tasks += std::to_string(st.seeds[mi]) + "," + std::to_string(ti) + "," +
                 fmt_double(st.task_scores[mi][ti]) + "," +
                 std::to_string(int(st.task_failed[mi][ti])) + "," +
                 std::to_string(int(solver_flags[mi][ti])) + "\n";
    write_text(cfg.out_dir + "/tasks.csv", tasks);

    std::string per_model = "model_seed,mean_pct\n";
    for (size_t mi = 0; mi < st.seeds.size(); ++mi)
      per_model += std::to_string(st.seeds[mi]) + "," + fmt_double(st.model_means[mi]) + "\n";
    write_text(cfg.out_dir + "/per_model.csv", per_model);

    std::string summary;
    summary += "grand_mean=" + fmt_double(st.grand_mean) + "\n";
    summary += "grand_sem=" + fmt_double(st.grand_sem) + "\n";
    summary += "top1_seed=" + std::to_string(st.top1_seed) + "\n";
    summary += "top1_mean=" + fmt_double(st.top1_mean) + "\n";
    summary += "top1_sem=" + fmt_double(st.top1_sem) + "\n";
    summary += "n_failed=" + std::to_string(st.n_failed) + "\n";
    write_text(cfg.out_dir + "/summary.txt", summary);
  }
  return st;
}

PipelineStats run_ablation(const PipelineConfig& cfg, AblationVariant v) {
  PipelineConfig c = cfg;
  c.train.weights = variant_weights(cfg.train.weights, v);
  return run_pipeline(c);
}

std::vector<std::pair<double, PipelineStats>> noise_sweep(const PipelineConfig& cfg,
                                                          const std::vector<double>& sigmas) {
  if (sigmas.empty()) throw ConfigError("noise_sweep: empty sigma list");
  std::vector<std::pair<double, PipelineStats>> out;
  for (double sg : sigmas) {
    PipelineConfig c = cfg;
    c.sigma = sg;
    if (!cfg.out_dir.empty()) c.out_dir = cfg.out_dir + "/sigma-" + fmt_short(sg);
    out.emplace_back(sg, run_pipeline(c));
  }
  if (!cfg.out_dir.empty()) {
    std::string csv = "sigma,grand_mean,grand_sem,top1_seed,top1_mean,top1_sem\n";
    for (const auto& [sg, st] : out)
      csv += fmt_double(sg) + "," + fmt_double(st.grand_mean) + "," + fmt_double(st.grand_sem) +
             "," + std::to_string(st.top1_seed) + "," + fmt_double(st.top1_mean) + "," +
             fmt_double(st.top1_sem) + "\n";
    write_text(cfg.out_dir + "/sweep.csv", csv);
  }
  return out;
}

std::string latent_map_export(const PccModel& m, const EnvConfig& env, size_t stride) {
  if (env.domain != Domain::planar)
    throw ConfigError("latent_map_export: defined for the planar domain only");
  if (stride == 0) throw ConfigError("latent_map_export: stride must be positive");
  std::string csv = "s0,s1";
  for (size_t k = 0; k < m.spec.n_z; ++k) csv += ",z" + std::to_string(k);
  csv += "\n";
  size_t hi = size_t(env.arena);
  for (size_t y = 0; y <= hi; y += stride) {
    for (size_t x = 0; x <= hi; x += stride) {
      if (!planar_valid(env, double(x), double(y))) continue;
      EnvState s{{double(x), double(y)}};
      std::vector<double> z = m.encode_mean(observe(env, s, s));
      csv += fmt_double(double(x)) + "," + fmt_double(double(y));
      for (double v : z) csv += "," + fmt_double(v);
      csv += "\n";
    }
  }
  return csv;
}

}  // namespace pcc
