#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pcc/control.hpp"
#include "pcc/envs.hpp"
#include "pcc/model.hpp"
#include "pcc/trainer.hpp"

namespace pcc {

// Episode length, dataset size, and planning window used when a pipeline
// config leaves them at zero.
struct DomainDefaults {
  size_t episode_len = 0;
  size_t dataset_n = 0;
  size_t plan_window = 0;  // equal to episode_len where the full horizon is planned
};
DomainDefaults domain_defaults(Domain d);

struct PipelineConfig {
  Domain domain = Domain::planar;
  size_t n_models = 10;
  size_t n_tasks = 10;
  TrainConfig train;        // seed and domain are overwritten per model
  size_t episode_len = 0;   // 0: domain default
  size_t plan_window = 0;   // 0: domain default
  double kappa = 50.0;
  double sigma = 0.0;       // env noise, for both data generation and episodes
  uint64_t base_seed = 0;
  size_t dataset_n = 0;     // 0: domain default
  std::string out_dir;      // empty: no files written

  void validate() const;
};

struct PipelineStats {
  std::vector<uint64_t> seeds;                  // one per model
  std::vector<double> model_means;              // percent, aligned with seeds
  std::vector<std::vector<double>> task_scores; // percent, [model][task]
  std::vector<std::vector<uint8_t>> task_failed;
  double grand_mean = 0.0, grand_sem = 0.0;
  uint64_t top1_seed = 0;
  double top1_mean = 0.0, top1_sem = 0.0;
  size_t n_failed = 0;
};

enum class AblationVariant { full, no_consistency, no_curvature, amortized };
const char* variant_name(AblationVariant v);
AblationVariant parse_variant(const std::string& name);  // ConfigError on unknown

// Applies a variant to the loss weights: lambda_c=0, lambda_cur=0, or the
// amortized flag; `full` leaves them untouched.
LossWeights variant_weights(LossWeights w, AblationVariant v);

// Aggregation used by the pipeline, exposed for recomputation checks:
// per-model means, grand mean +- SEM over every task, top-1 by model mean
// with ties broken toward the lower seed.
PipelineStats aggregate_stats(const std::vector<uint64_t>& seeds,
                              const std::vector<std::vector<double>>& task_scores,
                              const std::vector<std::vector<uint8_t>>& task_failed);

// One control episode of a trained model: task-indexed start state, goal
// from the domain, receding-horizon MPC for `episode_len` steps. The task
// stream depends only on (base_seed, task_index), so every model faces the
// same task instances.
struct TaskScore {
  double score_pct = 0.0;
  bool failed = false;       // an exception ended the episode; scored as zero
  bool solver_flag = false;  // some step fell back to a zero action
};
TaskScore run_task(const EnvConfig& env, double sigma, const PccModel& m, size_t task_index,
                   uint64_t base_seed, size_t episode_len, size_t plan_window, double kappa);

// Full protocol: train n_models seeds on one shared dataset, score each on
// n_tasks episodes, aggregate. With out_dir set, writes per-model training
// artifacts, tasks.csv, per_model.csv, summary.txt, and a config echo.
PipelineStats run_pipeline(const PipelineConfig& cfg);

// Pipeline with variant-adjusted loss weights; `full` matches run_pipeline.
PipelineStats run_ablation(const PipelineConfig& cfg, AblationVariant v);

// Re-generates data and re-evaluates at each noise level.
std::vector<std::pair<double, PipelineStats>> noise_sweep(const PipelineConfig& cfg,
                                                          const std::vector<double>& sigmas);

// CSV of encoder means over the obstacle-free integer grid of the planar
// arena: header s0,s1,z0,...,z{n_z-1}, one row per valid cell. Planar only.
std::string latent_map_export(const PccModel& m, const EnvConfig& env, size_t stride);

std::string pipeline_config_echo(const PipelineConfig& cfg);

int cli_main(int argc, char** argv);

}  // namespace pcc
