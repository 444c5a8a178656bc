#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "dgt/graph.hpp"
#include "dgt/model.hpp"
#include "dgt/sampler.hpp"
#include "dgt/tensor.hpp"

// Link-prediction, temporal-reconstruction, and multi-view contrastive
// losses plus their pre-training / fine-tuning compositions. All losses are
// mean-normalized (per pair or per element) so their scale is stable across
// batch sizes.

namespace dgt {

struct LossReport {
  double total = 0.0;
  double recon = 0.0;
  double view = 0.0;
  double link_pred = 0.0;
  long long positives = 0;
  long long negatives = 0;
};

struct LossResult {
  Tensor loss;  // scalar, on tape when any parameter contributed
  LossReport report;
};

// Binary cross-entropy of sigmoid(x_i . x_j) over positive and negative row
// pairs, averaged over all pairs. Throws when both pair sets are empty.
Tensor link_pred_loss(Tape& tape, const Tensor& x,
                      const std::vector<std::pair<int, int>>& pos_rows,
                      const std::vector<std::pair<int, int>>& neg_rows);

// Leave-one-snapshot-out reconstruction: for each step t the forward pass
// masks temporal rows of t and drops union edges supported only by t, a
// shared linear decoder maps target outputs to edge vectors, and the step's
// edges within the target-pair universe are scored against sampled
// non-edges (neg_ratio per positive). Requires at least two steps.
LossResult recon_loss(Tape& tape, const BoundModel& model,
                      const SnapshotSequence& s, const TemporalUnionGraph& g,
                      const BatchSpec& batch, int neg_ratio, std::uint64_t seed,
                      const ForwardOptions& opts = {});

// Symmetric stopped squared error between the two views' target outputs,
// normalized by element count. use_stop_gradient=false is the ablation arm
// that demonstrates representational collapse.
Tensor view_loss(Tape& tape, const Tensor& h, const Tensor& h_alt,
                 bool use_stop_gradient = true);

// recon + gamma * view, where the view term compares target outputs between
// the deterministic top-K context batch and the proportionally sampled one.
// Both batches must share the same target list.
LossResult pretrain_loss(Tape& tape, const BoundModel& model,
                         const SnapshotSequence& s, const TemporalUnionGraph& g,
                         const BatchSpec& batch, const BatchSpec& alt_batch,
                         double gamma, int neg_ratio, std::uint64_t seed,
                         const ForwardOptions& opts = {});

struct FinetuneBatch {
  LinkSample links;  // pairs drawn from the prediction step t+1
  BatchSpec batch;   // targets = pair endpoints, contexts from joint PPR
};
using FinetuneBatchFn = std::function<FinetuneBatch(int prefix_t)>;

// Next-step link prediction summed over prefixes: for each t in [1, T-1]
// the forward pass conditions on steps <= t only (temporal rows of later
// steps masked, distances on the prefix union) and target outputs score
// the step-(t+1) pairs directly. Requires at least two steps.
LossResult finetune_loss(Tape& tape, const BoundModel& model,
                         const SnapshotSequence& s, const TemporalUnionGraph& g,
                         const FinetuneBatchFn& batch_fn,
                         const ForwardOptions& opts = {});

}  // namespace dgt
