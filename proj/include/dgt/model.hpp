#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dgt/graph.hpp"
#include "dgt/sampler.hpp"
#include "dgt/tensor.hpp"

// Two-tower transformer encoder over target/context node sets with
// temporal-connection and spatial-distance attention bias, plus the
// single-tower and K-hop attention variants.

namespace dgt {

enum class TowerMode { TwoTower, SingleTower };

struct ModelConfig {
  int hidden = 128;
  int layers = 2;
  int heads = 8;
  int steps = 1;   // conditioning time-steps T
  int d_max = 5;   // shortest-path distance cap
  double dropout_hidden = 0.5;
  double dropout_attn = 0.1;
  TowerMode tower = TowerMode::TwoTower;
  int attn_hops = 0;  // 0 = full attention, k >= 1 masks pairs farther than k

  void validate() const;
};

// Pair-grid index matrices feeding the bias lookup tables. Temporal values
// are 2t / 2t-1 (edge present / absent at step t) or kMaskedStep; spatial
// values are capped shortest-path distances.
struct PairEncodingIndices {
  int rows = 0;
  int cols = 0;
  int steps = 0;
  int d_max = 0;
  std::vector<int> tc;  // rows*cols*steps, [ (r*cols + c)*steps + (t-1) ]
  std::vector<int> sd;  // rows*cols

  int tc_at(int r, int c, int t) const {
    return tc[(static_cast<std::size_t>(r) * cols + c) * steps + (t - 1)];
  }
  int sd_at(int r, int c) const {
    return sd[static_cast<std::size_t>(r) * cols + c];
  }
};

PairEncodingIndices encode_pair_indices(const TemporalUnionGraph& g,
                                        const std::vector<int>& row_nodes,
                                        const std::vector<int>& col_nodes,
                                        int model_steps,
                                        const std::vector<unsigned char>& step_active,
                                        const EdgeFilter& spd_filter, int d_max);

struct EncodedBatch {
  BatchSpec batch;
  PairEncodingIndices indices;  // tgt x ctx grid, or joint grid in single-tower mode
};

// Batch encoding honoring the configured tower mode. step_active masks
// temporal rows (empty = all active); spd_filter restricts distance queries.
EncodedBatch encode_batch(const TemporalUnionGraph& g, const BatchSpec& batch,
                          const ModelConfig& cfg,
                          const std::vector<unsigned char>& step_active = {},
                          const EdgeFilter& spd_filter = {});

// Learnable state. Both towers share one parameter set.
struct ModelParams {
  ModelConfig config;
  int num_nodes = 0;
  ParamStore store;

  static ModelParams init(const ModelConfig& cfg, int num_nodes, std::uint64_t seed);
};

// Per-tape view of the parameters (leaves when differentiable).
struct BoundModel {
  const ModelConfig* config = nullptr;
  const ParamStore* source = nullptr;
  std::vector<Tensor> bound;

  const Tensor& p(std::string_view name) const;
};

BoundModel bind(Tape& tape, ModelParams& params);
BoundModel bind_const(const ModelParams& params);  // no gradients, no tape

struct ForwardOptions {
  bool train = false;
  std::mt19937_64* rng = nullptr;  // required when train and dropout active
  RowAccessLog* tc_access = nullptr;
  RowAccessLog* sd_access = nullptr;
};

// Projects the gathered encodings into per-pair scalar bias matrices
// (temporal first, spatial second), both differentiable. Pairs whose every
// time-step is masked contribute zero temporal bias.
std::pair<Tensor, Tensor> compute_bias(Tape& tape, const BoundModel& model,
                                       const PairEncodingIndices& indices,
                                       const ForwardOptions& opts = {});

// Scaled dot-product attention from q_in rows onto kv_in rows, per-head
// logits with the per-pair scalar bias shared across heads, head outputs
// concatenated. mask flags pairs to suppress (empty = none). Shared by the
// tower layers and by chunked evaluation.
Tensor attention_block(Tape& tape, const BoundModel& model, int layer,
                       const Tensor& q_in, const Tensor& kv_in, const Tensor& bias,
                       const std::vector<unsigned char>& mask,
                       const ForwardOptions& opts = {});

// Pre-norm feed-forward with residual: FFN(LN(z)) + z.
Tensor ffn_block(Tape& tape, const BoundModel& model, int layer, const Tensor& z,
                 const ForwardOptions& opts = {});

// One two-tower layer. bias_* hold the combined additive bias for each
// view ((tgt x ctx) and its transpose); mask_* flag attention pairs to
// suppress (empty = none). An empty context set falls back to a
// residual-only pass for the target tower.
std::pair<Tensor, Tensor> two_tower_layer(Tape& tape, const BoundModel& model,
                                          int layer, const Tensor& h_tgt,
                                          const Tensor& h_ctx, const Tensor& bias_tgt,
                                          const Tensor& bias_ctx,
                                          const std::vector<unsigned char>& mask_tgt,
                                          const std::vector<unsigned char>& mask_ctx,
                                          const ForwardOptions& opts = {});

Tensor single_tower_layer(Tape& tape, const BoundModel& model, int layer,
                          const Tensor& h, const Tensor& bias,
                          const std::vector<unsigned char>& mask,
                          const ForwardOptions& opts = {});

// Full encoder: embeds the batch nodes, applies all layers, returns the
// final target-tower and context-tower outputs.
std::pair<Tensor, Tensor> model_forward(Tape& tape, const BoundModel& model,
                                        const EncodedBatch& encoded,
                                        const ForwardOptions& opts = {});

}  // namespace dgt
