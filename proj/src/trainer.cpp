#include "pcc/trainer.hpp"

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

void write_text(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out << body;
  if (!out) throw FormatError("short write to " + path);
}

bool params_finite(const PccModel& m) {
  for (const Param& p : m.params)
    for (double v : *p.value)
      if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

void TrainConfig::validate(size_t dataset_n) const {
  weights.validate();
  if (batch == 0) throw ConfigError("train: batch must be positive");
  if (batch > dataset_n)
    throw ConfigError("train: batch " + std::to_string(batch) + " exceeds dataset size " +
                      std::to_string(dataset_n));
  if (epochs == 0 && steps == 0) throw ConfigError("train: set epochs or steps");
  if (log_every == 0) throw ConfigError("train: log_every must be positive");
  if (adam.lr <= 0 || adam.eps <= 0 || adam.beta1 < 0 || adam.beta1 >= 1 || adam.beta2 < 0 ||
      adam.beta2 >= 1)
    throw ConfigError("train: bad Adam settings");
}

std::vector<std::vector<size_t>> make_batches(const Dataset& ds, size_t batch, RngStream& rng) {
  if (batch == 0 || batch > ds.n) throw ConfigError("make_batches: bad batch size");
  std::vector<size_t> perm(ds.n);
  for (size_t i = 0; i < ds.n; ++i) perm[i] = i;
  for (size_t i = ds.n; i > 1; --i) {
    size_t j = size_t(rng.next_u64() % i);
    std::swap(perm[i - 1], perm[j]);
  }
  std::vector<std::vector<size_t>> out;
  out.reserve(ds.n / batch);
  for (size_t start = 0; start + batch <= ds.n; start += batch)
    out.emplace_back(perm.begin() + long(start), perm.begin() + long(start + batch));
  return out;
}

Triple gather_batch(Tape& t, const Dataset& ds, const std::vector<size_t>& idx) {
  size_t b = idx.size();
  if (b == 0) throw ContractError("gather_batch: empty index list");
  std::vector<double> x(b * ds.obs_dim), xn(b * ds.obs_dim), u(b * ds.u_dim);
  for (size_t r = 0; r < b; ++r) {
    size_t i = idx[r];
    if (i >= ds.n) throw ContractError("gather_batch: index out of range");
    for (size_t j = 0; j < ds.obs_dim; ++j) {
      x[r * ds.obs_dim + j] = double(ds.x[i * ds.obs_dim + j]);
      xn[r * ds.obs_dim + j] = double(ds.xn[i * ds.obs_dim + j]);
    }
    for (size_t j = 0; j < ds.u_dim; ++j) u[r * ds.u_dim + j] = ds.u[i * ds.u_dim + j];
  }
  Triple out;
  out.x = t.constant(std::move(x), {b, ds.obs_dim});
  out.u = t.constant(std::move(u), {b, ds.u_dim});
  out.xn = t.constant(std::move(xn), {b, ds.obs_dim});
  return out;
}

uint64_t train_step_seed(uint64_t seed, size_t step) {
  return RngStream::derive(seed, "train-step", step).next_u64();
}

RngStream train_batch_stream(uint64_t seed, size_t epoch) {
  return RngStream::derive(seed, "train-batches", epoch);
}

std::string config_echo(const TrainConfig& cfg) {
  std::string s;
  s += std::string("domain=") + domain_name(cfg.domain) + "\n";
  s += "batch=" + std::to_string(cfg.batch) + "\n";
  s += "adam_lr=" + fmt_double(cfg.adam.lr) + "\n";
  s += "adam_beta1=" + fmt_double(cfg.adam.beta1) + "\n";
  s += "adam_beta2=" + fmt_double(cfg.adam.beta2) + "\n";
  s += "adam_eps=" + fmt_double(cfg.adam.eps) + "\n";
  s += "lambda_p=" + fmt_double(cfg.weights.lambda_p) + "\n";
  s += "lambda_c=" + fmt_double(cfg.weights.lambda_c) + "\n";
  s += "lambda_cur=" + fmt_double(cfg.weights.lambda_cur) + "\n";
  s += "w_vae=" + fmt_double(cfg.weights.w_vae) + "\n";
  s += "w_det=" + fmt_double(cfg.weights.w_det) + "\n";
  s += "w_l2=" + fmt_double(cfg.weights.w_l2) + "\n";
  s += "sigma_eps=" + fmt_double(cfg.weights.sigma_eps) + "\n";
  s += "amortized=" + std::to_string(int(cfg.weights.amortized)) + "\n";
  s += "epochs=" + std::to_string(cfg.epochs) + "\n";
  s += "steps=" + std::to_string(cfg.steps) + "\n";
  s += "seed=" + std::to_string(cfg.seed) + "\n";
  s += "checkpoint_every=" + std::to_string(cfg.checkpoint_every) + "\n";
  s += "log_every=" + std::to_string(cfg.log_every) + "\n";
  return s;
}

TrainResult train(const Dataset& ds, const TrainConfig& cfg) {
  if (ds.domain != cfg.domain)
    throw ConfigError(std::string("train: dataset domain ") + domain_name(ds.domain) +
                      " does not match config domain " + domain_name(cfg.domain));
  cfg.validate(ds.n);

  size_t per_epoch = ds.n / cfg.batch;
  size_t total = cfg.epochs > 0 ? cfg.epochs * per_epoch : cfg.steps;
  if (cfg.steps > 0 && cfg.steps < total) total = cfg.steps;

  TrainResult res;
  res.model = init_model(ModelSpec::defaults(cfg.domain, cfg.weights.amortized), cfg.seed);
  AdamState adam = adam_init(cfg.adam, res.model.params);

  bool to_disk = !cfg.out_dir.empty();
  std::string last_ckpt;
  if (to_disk) {
    std::filesystem::create_directories(cfg.out_dir);
    write_text(cfg.out_dir + "/config.txt", config_echo(cfg));
  }

  auto log_row = [&](size_t step, const LossReport& rep) {
    res.history.push_back({step, rep});
  };
  auto save_ckpt = [&](const std::string& name) {
    std::string path = cfg.out_dir + "/" + name;
    save_model(res.model, path);
    return path;
  };

  bool model_good = true;
  size_t step = 0;
  for (size_t epoch = 0; step < total; ++epoch) {
    RngStream brng = train_batch_stream(cfg.seed, epoch);
    auto batches = make_batches(ds, cfg.batch, brng);
    for (const auto& idx : batches) {
      if (step >= total) break;
      Tape tape;
      ModelWiring w = res.model.wire(tape);
      Triple batch = gather_batch(tape, ds, idx);
      bool params_touched = false;
      try {
        LossReport rep =
            total_loss(res.model, w, batch, cfg.weights, train_step_seed(cfg.seed, step));
        if (!std::isfinite(rep.total)) throw NumericError("train: non-finite loss");
        tape.backward(rep.total_node);
        std::vector<const std::vector<double>*> grads;
        grads.reserve(w.leaves.size());
        for (const Tensor& leaf : w.leaves) grads.push_back(&tape.grad(leaf));
        params_touched = true;
        adam_step(adam, res.model.params, grads);
        if (!params_finite(res.model)) throw NumericError("train: non-finite parameter");
        if (step % cfg.log_every == 0 || step + 1 == total) log_row(step, rep);
      } catch (const NumericError&) {
        res.aborted_nan = true;
        // A throw before the update leaves the parameters at their last good
        // values; a throw during or after it does not.
        if (params_touched) model_good = false;
        break;
      }
      res.steps_run = step + 1;
      if (to_disk && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
          step + 1 != total) {
        char name[32];
        std::snprintf(name, sizeof name, "ckpt-%06zu.pccm", step + 1);
        last_ckpt = save_ckpt(name);
      }
      ++step;
    }
    if (res.aborted_nan) break;
  }

  if (to_disk) {
    if (model_good) {
      res.final_checkpoint = save_ckpt("final.pccm");
    } else {
      res.final_checkpoint = last_ckpt;  // newest checkpoint with finite parameters
    }
    std::string csv = std::string(LossReport::csv_header()) + "\n";
    for (const HistoryEntry& h : res.history) csv += h.report.csv_row(h.step) + "\n";
    write_text(cfg.out_dir + "/history.csv", csv);
  }
  return res;
}

}  // namespace pcc
