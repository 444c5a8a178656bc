#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dgt/eval.hpp"
#include "dgt/graph.hpp"
#include "dgt/model.hpp"
#include "dgt/objectives.hpp"
#include "dgt/tensor.hpp"

// Pre-training and fine-tuning loops, run configuration, and checkpointing.
// Both phases consume the same snapshot sequence with different objectives;
// the final snapshot is held out for evaluation and never read by training.

namespace dgt {

struct TrainConfig {
  ModelConfig model;

  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;

  int epochs_pretrain = 50;
  int epochs_finetune = 30;
  int steps_per_epoch = 0;  // 0: derived from graph size and batch size
  int batch_targets = 512;  // pre-training target sample size (capped at |V|)
  int finetune_pos = 256;   // positive links per fine-tuning step
  int neg_ratio = 10;
  double gamma = 1.0;

  double ppr_alpha = 0.15;
  double ppr_epsilon = 1e-4;

  std::uint64_t seed = 1;
  int patience = 10;        // early-stop patience in epochs (0 = off)
  int eval_window = 1;
  int chunk_size = 16;
  bool use_tc = true;       // zeroed + frozen projection when off
  bool use_sd = true;
  int train_steps = 0;      // 0: all but the last snapshot

  std::string to_json() const;
  static TrainConfig from_json(const std::string& json_text);
  std::uint64_t hash() const;  // over the canonical JSON dump

  int resolve_train_steps(int total_steps) const;
};

struct MetricRow {
  int epoch = 0;
  LossReport losses;
  double val_metric = 0.0;
};

struct Checkpoint {
  ModelParams params;
  AdamConfig adam_cfg;
  std::vector<std::vector<double>> adam_m, adam_v;
  long long adam_step = 0;
  int epoch = 0;
  std::uint64_t config_hash = 0;
  std::vector<MetricRow> history;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
// Verifies the stored config hash when expected_hash is nonzero.
Checkpoint load_checkpoint(const std::string& path, std::uint64_t expected_hash = 0);

// Self-supervised pre-training: per step, uniformly sampled targets get a
// deterministic top-K context set and a proportionally sampled alternative
// view; minimizes recon + gamma * view. Returns the checkpoint with the
// best validation reconstruction loss. run_dir (optional) receives
// config.json, metrics.csv and per-epoch checkpoints.
Checkpoint pretrain(const SnapshotSequence& s, const TrainConfig& cfg,
                    const std::string& run_dir = "");

// Supervised fine-tuning of next-step link prediction over all prefixes.
// start == nullptr trains from random initialization. Early-stops on the
// validation micro-AUC measured at the last training step.
Checkpoint finetune(const SnapshotSequence& s, const TrainConfig& cfg,
                    const Checkpoint* start = nullptr,
                    const std::string& run_dir = "");

}  // namespace dgt
