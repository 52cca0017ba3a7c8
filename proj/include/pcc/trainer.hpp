#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcc/adam.hpp"
#include "pcc/envs.hpp"
#include "pcc/losses.hpp"
#include "pcc/model.hpp"
#include "pcc/rng.hpp"

namespace pcc {

struct TrainConfig {
  Domain domain = Domain::planar;
  size_t batch = 128;
  AdamConfig adam;
  LossWeights weights;
  size_t epochs = 0;  // full passes over the dataset
  size_t steps = 0;   // optional cap on optimizer steps; 0 means no cap
  uint64_t seed = 0;
  size_t checkpoint_every = 500;  // steps between periodic checkpoints; 0 disables
  size_t log_every = 50;          // steps between history rows
  std::string out_dir;            // empty: keep everything in memory only

  // Throws ConfigError unless the schedule is runnable against `dataset_n`
  // samples: batch fits the dataset and at least one step would execute.
  void validate(size_t dataset_n) const;
};

struct HistoryEntry {
  size_t step = 0;  // 0-based optimizer step
  LossReport report;
};

struct TrainResult {
  PccModel model;
  std::vector<HistoryEntry> history;
  size_t steps_run = 0;
  bool aborted_nan = false;        // loss or a parameter went non-finite
  std::string final_checkpoint;    // path written, empty when none
};

// Shuffled index batches for one epoch; the trailing short batch is dropped.
std::vector<std::vector<size_t>> make_batches(const Dataset& ds, size_t batch, RngStream& rng);

// Copies the indexed triples into dense batch tensors on `t` (pixels as 0/1
// reals, actions as reals).
Triple gather_batch(Tape& t, const Dataset& ds, const std::vector<size_t>& idx);

// Seed fed to total_loss at a given optimizer step. Exposed so a history row
// can be recomputed exactly from (dataset, config, step).
uint64_t train_step_seed(uint64_t seed, size_t step);

// Per-epoch shuffle stream; epoch e of a run is always derived the same way.
RngStream train_batch_stream(uint64_t seed, size_t epoch);

// Full optimization loop: init model from cfg.seed, then per step build a
// tape, evaluate the combined loss, backprop, and apply one Adam update.
// With out_dir set, writes periodic checkpoints, final.pccm, history.csv,
// and a config.txt echo. A non-finite loss or parameter stops the run with
// aborted_nan set; parameters already written to disk are left untouched.
TrainResult train(const Dataset& ds, const TrainConfig& cfg);

// The config echo written next to run outputs, one key=value per line.
std::string config_echo(const TrainConfig& cfg);

}  // namespace pcc
