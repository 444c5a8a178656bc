#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dgt/graph.hpp"
#include "dgt/model.hpp"
#include "dgt/tensor.hpp"

// Downstream link-prediction evaluation: chunked full-attention inference,
// Mann-Whitney AUC, split construction, and the logistic-regression
// protocol with micro/macro aggregation over a window of prediction steps.

namespace dgt {

struct EvalConfig {
  int chunk_size = 16;
  int window = 1;  // number of trailing prediction steps
  std::uint64_t seed = 1;
  double train_frac = 0.2;
  double val_frac = 0.2;
  bool new_links_only = false;
  std::string split_cache_dir;  // optional: persist split files here
};

// Labelled pair sample at prediction step t_star: equal numbers of edges
// and sampled non-edges, each partitioned into train / val / test.
struct EvalSplit {
  int t_star = 0;
  std::vector<std::pair<int, int>> pos, neg;
  std::vector<int> pos_part, neg_part;  // 0 = train, 1 = val, 2 = test

  void validate(const SnapshotSequence& s) const;
};

EvalSplit make_eval_split(const SnapshotSequence& s, int t_star, double train_frac,
                          double val_frac, std::uint64_t seed, bool new_links_only);

void save_split(const std::string& path, const EvalSplit& split);
EvalSplit load_split(const std::string& path);

// Full pairwise attention over node_set conditioned on the first prefix_t
// steps, computed in row blocks of chunk_size. Eval mode: no dropout, no
// gradients. Output row i is the embedding of node_set[i].
Tensor embed_all_chunked(const ModelParams& params, const SnapshotSequence& s,
                         const std::vector<int>& node_set, int chunk_size,
                         int prefix_t);

// Probability that a random positive outranks a random negative; ties count
// one half. Throws unless both classes are present.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct StepEval {
  int t = 0;
  double auc_test = 0.0;
  double auc_val = 0.0;
  int num_test = 0;
};

struct EvalReport {
  double micro_auc = 0.0;  // pooled test instances across steps
  double macro_auc = 0.0;  // mean of per-step test AUCs
  std::vector<StepEval> per_step;
  int t_star = 0;
  int window = 1;
  bool new_links_only = false;

  std::string to_json() const;
};

// Protocol at prediction step t_star (and window-1 earlier steps): hadamard
// edge features from chunked embeddings conditioned on each step's prefix,
// a deterministic logistic regression fit on the train split, AUC on the
// test split.
EvalReport evaluate(const ModelParams& params, const SnapshotSequence& s,
                    int t_star, const EvalConfig& cfg);

// Same protocol with positives restricted to links absent from every
// earlier snapshot. Throws when no such links exist.
EvalReport evaluate_new_links(const ModelParams& params, const SnapshotSequence& s,
                              int t_star, const EvalConfig& cfg);

}  // namespace dgt
