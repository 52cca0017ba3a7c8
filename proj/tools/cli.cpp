#include <CLI11.hpp>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "pcc/errors.hpp"
#include "pcc/gradsuite.hpp"
#include "pcc/harness.hpp"

namespace pcc {

namespace {

std::string default_run_dir(Domain d, uint64_t seed) {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  localtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  return std::string("runs/") + domain_name(d) + "/" + stamp + "-" + std::to_string(seed);
}

void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out << body;
  if (!out) throw FormatError("short write to " + path);
}

std::vector<double> parse_sigma_list(const std::string& text) {
  std::vector<double> out;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t comma = text.find(',', pos);
    if (comma == std::string::npos) comma = text.size();
    std::string tok = text.substr(pos, comma - pos);
    if (tok.empty()) throw ConfigError("bad --sigmas list: empty entry");
    size_t used = 0;
    double v = std::stod(tok, &used);
    if (used != tok.size()) throw ConfigError("bad --sigmas entry '" + tok + "'");
    if (v < 0) throw ConfigError("--sigmas entries must be nonnegative");
    out.push_back(v);
    pos = comma + 1;
  }
  return out;
}

struct WeightFlags {
  void attach(CLI::App* cmd, LossWeights& w) {
    cmd->add_option("--lambda-p", w.lambda_p, "prediction weight");
    cmd->add_option("--lambda-c", w.lambda_c, "consistency weight");
    cmd->add_option("--lambda-cur", w.lambda_cur, "curvature weight");
    cmd->add_option("--w-vae", w.w_vae, "VAE auxiliary weight");
    cmd->add_option("--w-det", w.w_det, "deterministic auxiliary weight");
    cmd->add_option("--w-l2", w.w_l2, "L2 penalty weight");
    cmd->add_option("--sigma-eps", w.sigma_eps, "curvature perturbation scale");
    cmd->add_option("--amortized", w.amortized, "learn Jacobian heads (true|false)");
  }
};

void attach_train_flags(CLI::App* cmd, TrainConfig& t) {
  cmd->add_option("--batch", t.batch, "minibatch size");
  cmd->add_option("--epochs", t.epochs, "full passes over the dataset");
  cmd->add_option("--steps", t.steps, "optimizer step cap (0: none)");
  cmd->add_option("--lr", t.adam.lr, "Adam learning rate");
  cmd->add_option("--ckpt-every", t.checkpoint_every, "steps between checkpoints (0: off)");
  cmd->add_option("--log-every", t.log_every, "steps between history rows");
}

int print_stats(const PipelineStats& st) {
  std::printf("grand_mean=%.4f grand_sem=%.4f top1_seed=%llu top1_mean=%.4f top1_sem=%.4f\n",
              st.grand_mean, st.grand_sem, static_cast<unsigned long long>(st.top1_seed),
              st.top1_mean, st.top1_sem);
  if (st.n_failed > 0) std::printf("failed_tasks=%zu\n", st.n_failed);
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"latent embedding and locally-linear control toolkit"};
  app.require_subcommand(1);

  std::function<int()> action;

  // ---- gen-data ----
  {
    auto* cmd = app.add_subcommand("gen-data", "sample a transition dataset");
    auto domain = std::make_shared<std::string>("planar");
    auto n = std::make_shared<size_t>(0);
    auto sigma = std::make_shared<double>(0.0);
    auto seed = std::make_shared<uint64_t>(0);
    auto out = std::make_shared<std::string>();
    cmd->add_option("--domain", *domain, "planar|pendulum|cartpole|threelink");
    cmd->add_option("--n", *n, "sample count (0: domain default)");
    cmd->add_option("--sigma", *sigma, "dynamics noise scale");
    cmd->add_option("--seed", *seed, "rng seed");
    cmd->add_option("--out", *out, "output .pccd path")->required();
    cmd->callback([=, &action] {
      action = [=] {
        Domain d = parse_domain(*domain);
        EnvConfig env = EnvConfig::defaults(d);
        size_t count = *n ? *n : domain_defaults(d).dataset_n;
        std::printf("domain=%s\nn=%zu\nsigma=%.17g\nseed=%llu\nout=%s\n", domain_name(d), count,
                    *sigma, static_cast<unsigned long long>(*seed), out->c_str());
        Dataset ds = generate_dataset(env, count, *sigma, *seed);
        if (auto dir = std::filesystem::path(*out).parent_path(); !dir.empty())
          std::filesystem::create_directories(dir);
        save_dataset(*out, ds, env);
        std::printf("wrote %zu triples\n", ds.n);
        return 0;
      };
    });
  }

  // ---- train ----
  {
    auto* cmd = app.add_subcommand("train", "fit a model on a dataset");
    auto data = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto cfg = std::make_shared<TrainConfig>();
    auto wf = std::make_shared<WeightFlags>();
    cmd->add_option("--data", *data, "input .pccd dataset")->required();
    cmd->add_option("--out", *out, "run directory (default runs/<domain>/<stamp>-<seed>)");
    cmd->add_option("--seed", cfg->seed, "rng seed");
    attach_train_flags(cmd, *cfg);
    wf->attach(cmd, cfg->weights);
    cmd->callback([=, &action] {
      action = [=] {
        Dataset ds = load_dataset(*data);
        TrainConfig t = *cfg;
        t.domain = ds.domain;
        if (t.epochs == 0 && t.steps == 0) t.epochs = 1;
        t.out_dir = out->empty() ? default_run_dir(ds.domain, t.seed) : *out;
        std::fputs(config_echo(t).c_str(), stdout);
        std::printf("out_dir=%s\n", t.out_dir.c_str());
        TrainResult res = train(ds, t);
        if (res.aborted_nan) {
          std::fprintf(stderr, "training aborted on a non-finite value after %zu steps\n",
                       res.steps_run);
          return 2;
        }
        std::printf("steps=%zu final_total=%.17g checkpoint=%s\n", res.steps_run,
                    res.history.empty() ? 0.0 : res.history.back().report.total,
                    res.final_checkpoint.c_str());
        return 0;
      };
    });
  }

  // ---- control ----
  {
    auto* cmd = app.add_subcommand("control", "run one MPC episode with a trained model");
    auto ckpt = std::make_shared<std::string>();
    auto task = std::make_shared<size_t>(0);
    auto sigma = std::make_shared<double>(0.0);
    auto window = std::make_shared<size_t>(0);
    auto kappa = std::make_shared<double>(50.0);
    auto seed = std::make_shared<uint64_t>(0);
    auto episode = std::make_shared<size_t>(0);
    auto out = std::make_shared<std::string>();
    cmd->add_option("--checkpoint", *ckpt, "model .pccm path")->required();
    cmd->add_option("--task", *task, "task index");
    cmd->add_option("--sigma", *sigma, "env noise scale");
    cmd->add_option("--window", *window, "planning window (0: domain default)");
    cmd->add_option("--kappa", *kappa, "goal-state cost weight");
    cmd->add_option("--seed", *seed, "base seed for the task stream");
    cmd->add_option("--episode-len", *episode, "steps to execute (0: domain default)");
    cmd->add_option("--out", *out, "directory for the episode CSV");
    cmd->callback([=, &action] {
      action = [=] {
        PccModel m = load_model(*ckpt);
        Domain d = m.spec.domain;
        EnvConfig env = EnvConfig::defaults(d);
        DomainDefaults dd = domain_defaults(d);
        size_t T = *episode ? *episode : dd.episode_len;
        size_t W = *window ? *window : dd.plan_window;
        std::printf("domain=%s\ntask=%zu\nsigma=%.17g\nwindow=%zu\nkappa=%.17g\nseed=%llu\n",
                    domain_name(d), *task, *sigma, W, *kappa,
                    static_cast<unsigned long long>(*seed));
        RngStream rng = RngStream::derive(*seed, "pipeline-task", *task);
        EnvState start = start_state(env, *task, rng);
        EnvState goal = goal_state(env);
        PccLatentModel lm(m);
        MpcConfig mc;
        mc.horizon = T;
        mc.plan_window = W;
        mc.kappa = *kappa;
        MpcResult r = mpc_run(env, *sigma, lm, start, goal, mc, rng);
        std::printf("score_pct=%.4f solver_flag=%d\n", 100.0 * r.frac_in_goal,
                    int(r.any_solver_failure));
        if (!out->empty()) {
          std::filesystem::create_directories(*out);
          std::string csv = mpc_csv_header(r) + "\n";
          for (size_t k = 0; k < r.steps.size(); ++k) csv += mpc_csv_row(r, k) + "\n";
          write_file(*out + "/episode.csv", csv);
        }
        return 0;
      };
    });
  }

  // ---- eval ----
  {
    auto* cmd = app.add_subcommand("eval", "score a trained model over control tasks");
    auto ckpt = std::make_shared<std::string>();
    auto tasks = std::make_shared<size_t>(10);
    auto sigma = std::make_shared<double>(0.0);
    auto window = std::make_shared<size_t>(0);
    auto kappa = std::make_shared<double>(50.0);
    auto seed = std::make_shared<uint64_t>(0);
    auto episode = std::make_shared<size_t>(0);
    auto out = std::make_shared<std::string>();
    cmd->add_option("--checkpoint", *ckpt, "model .pccm path")->required();
    cmd->add_option("--tasks", *tasks, "number of tasks");
    cmd->add_option("--sigma", *sigma, "env noise scale");
    cmd->add_option("--window", *window, "planning window (0: domain default)");
    cmd->add_option("--kappa", *kappa, "goal-state cost weight");
    cmd->add_option("--seed", *seed, "base seed for task streams");
    cmd->add_option("--episode-len", *episode, "steps per episode (0: domain default)");
    cmd->add_option("--out", *out, "directory for tasks.csv");
    cmd->callback([=, &action] {
      action = [=] {
        if (*tasks == 0) throw ConfigError("eval: --tasks must be at least 1");
        PccModel m = load_model(*ckpt);
        Domain d = m.spec.domain;
        EnvConfig env = EnvConfig::defaults(d);
        DomainDefaults dd = domain_defaults(d);
        size_t T = *episode ? *episode : dd.episode_len;
        size_t W = *window ? *window : dd.plan_window;
        std::printf("domain=%s\ntasks=%zu\nsigma=%.17g\nwindow=%zu\nkappa=%.17g\nseed=%llu\n",
                    domain_name(d), *tasks, *sigma, W, *kappa,
                    static_cast<unsigned long long>(*seed));
        std::vector<double> scores;
        std::vector<uint8_t> failed;
        std::string csv = "task,score_pct,failed,solver_flag\n";
        for (size_t ti = 0; ti < *tasks; ++ti) {
          TaskScore ts = run_task(env, *sigma, m, ti, *seed, T, W, *kappa);
          scores.push_back(ts.score_pct);
          failed.push_back(ts.failed ? 1 : 0);
          csv += std::to_string(ti) + "," + std::to_string(ts.score_pct) + "," +
                 std::to_string(int(ts.failed)) + "," + std::to_string(int(ts.solver_flag)) + "\n";
        }
        PipelineStats st = aggregate_stats({*seed}, {scores}, {failed});
        std::printf("mean_pct=%.4f sem=%.4f\n", st.grand_mean, st.grand_sem);
        if (!out->empty()) {
          std::filesystem::create_directories(*out);
          write_file(*out + "/tasks.csv", csv);
        }
        return 0;
      };
    });
  }

  // ---- ablate (variant "full" is the plain pipeline) ----
  {
    auto* cmd = app.add_subcommand("ablate", "run the multi-seed evaluation pipeline");
    auto cfg = std::make_shared<PipelineConfig>();
    auto domain = std::make_shared<std::string>("planar");
    auto variant = std::make_shared<std::string>("full");
    auto out = std::make_shared<std::string>();
    auto wf = std::make_shared<WeightFlags>();
    cmd->add_option("--domain", *domain, "planar|pendulum|cartpole|threelink");
    cmd->add_option("--variant", *variant, "full|no-consistency|no-curvature|amortized");
    cmd->add_option("--models", cfg->n_models, "number of model seeds");
    cmd->add_option("--tasks", cfg->n_tasks, "tasks per model");
    cmd->add_option("--seed", cfg->base_seed, "base seed");
    cmd->add_option("--sigma", cfg->sigma, "env noise scale");
    cmd->add_option("--samples", cfg->dataset_n, "dataset size (0: domain default)");
    cmd->add_option("--window", cfg->plan_window, "planning window (0: domain default)");
    cmd->add_option("--episode-len", cfg->episode_len, "steps per episode (0: domain default)");
    cmd->add_option("--kappa", cfg->kappa, "goal-state cost weight");
    cmd->add_option("--out", *out, "run directory (default runs/<domain>/<stamp>-<seed>)");
    attach_train_flags(cmd, cfg->train);
    wf->attach(cmd, cfg->train.weights);
    cmd->callback([=, &action] {
      action = [=] {
        PipelineConfig c = *cfg;
        c.domain = parse_domain(*domain);
        AblationVariant v = parse_variant(*variant);
        if (c.train.epochs == 0 && c.train.steps == 0) c.train.epochs = 1;
        c.out_dir = out->empty() ? default_run_dir(c.domain, c.base_seed) : *out;
        c.train.weights = variant_weights(c.train.weights, v);
        std::printf("variant=%s\n", variant_name(v));
        std::fputs(pipeline_config_echo(c).c_str(), stdout);
        std::printf("out_dir=%s\n", c.out_dir.c_str());
        PipelineStats st = run_pipeline(c);
        return print_stats(st);
      };
    });
  }

  // ---- noise-sweep ----
  {
    auto* cmd = app.add_subcommand("noise-sweep", "pipeline across dynamics noise levels");
    auto cfg = std::make_shared<PipelineConfig>();
    auto domain = std::make_shared<std::string>("planar");
    auto sigmas = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto wf = std::make_shared<WeightFlags>();
    cmd->add_option("--domain", *domain, "planar|pendulum|cartpole|threelink");
    cmd->add_option("--sigmas", *sigmas, "comma-separated noise scales")->required();
    cmd->add_option("--models", cfg->n_models, "number of model seeds");
    cmd->add_option("--tasks", cfg->n_tasks, "tasks per model");
    cmd->add_option("--seed", cfg->base_seed, "base seed");
    cmd->add_option("--samples", cfg->dataset_n, "dataset size (0: domain default)");
    cmd->add_option("--window", cfg->plan_window, "planning window (0: domain default)");
    cmd->add_option("--episode-len", cfg->episode_len, "steps per episode (0: domain default)");
    cmd->add_option("--kappa", cfg->kappa, "goal-state cost weight");
    cmd->add_option("--out", *out, "run directory (default runs/<domain>/<stamp>-<seed>)");
    attach_train_flags(cmd, cfg->train);
    wf->attach(cmd, cfg->train.weights);
    cmd->callback([=, &action] {
      action = [=] {
        PipelineConfig c = *cfg;
        c.domain = parse_domain(*domain);
        std::vector<double> sg = parse_sigma_list(*sigmas);
        if (c.train.epochs == 0 && c.train.steps == 0) c.train.epochs = 1;
        c.out_dir = out->empty() ? default_run_dir(c.domain, c.base_seed) : *out;
        std::fputs(pipeline_config_echo(c).c_str(), stdout);
        std::printf("out_dir=%s\n", c.out_dir.c_str());
        auto results = noise_sweep(c, sg);
        for (const auto& [s, st] : results) {
          std::printf("sigma=%.17g ", s);
          print_stats(st);
        }
        return 0;
      };
    });
  }

  // ---- latent-map ----
  {
    auto* cmd = app.add_subcommand("latent-map", "export encoder means over the planar grid");
    auto ckpt = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto stride = std::make_shared<size_t>(1);
    cmd->add_option("--checkpoint", *ckpt, "model .pccm path")->required();
    cmd->add_option("--out", *out, "output CSV path")->required();
    cmd->add_option("--stride", *stride, "grid step in cells");
    cmd->callback([=, &action] {
      action = [=] {
        PccModel m = load_model(*ckpt);
        EnvConfig env = EnvConfig::defaults(m.spec.domain);
        std::string csv = latent_map_export(m, env, *stride);
        if (auto dir = std::filesystem::path(*out).parent_path(); !dir.empty())
          std::filesystem::create_directories(dir);
        write_file(*out, csv);
        size_t rows = size_t(std::count(csv.begin(), csv.end(), '\n')) - 1;
        std::printf("wrote %zu rows to %s\n", rows, out->c_str());
        return 0;
      };
    });
  }

  // ---- grad-check ----
  {
    auto* cmd = app.add_subcommand("grad-check", "finite-difference sweep of ops and loss terms");
    auto points = std::make_shared<size_t>(4);
    auto seed = std::make_shared<uint64_t>(0);
    cmd->add_option("--points", *points, "random points per entry");
    cmd->add_option("--seed", *seed, "rng seed");
    cmd->callback([=, &action] {
      action = [=] {
        GradSuiteResult res = grad_suite(*points, *seed);
        for (const auto& e : res.entries)
          std::printf("%-26s %s points=%zu max_rel_err=%.3e\n", e.name.c_str(),
                      e.composite ? "term" : "op  ", e.points, e.max_rel_err);
        std::printf("total_points=%zu worst_op=%.3e worst_term=%.3e\n", res.total_points,
                    res.worst_primitive, res.worst_composite);
        if (!res.pass()) {
          std::fprintf(stderr, "gradient suite failed tolerance\n");
          return 2;
        }
        return 0;
      };
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    return action ? action() : 1;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime error: %s\n", e.what());
    return 2;
  }
}

}  // namespace pcc

int main(int argc, char** argv) { return pcc::cli_main(argc, argv); }
