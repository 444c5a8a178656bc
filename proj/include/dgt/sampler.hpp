#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "dgt/graph.hpp"

// Approximate personalized PageRank by forward push and the joint
// target/context sampling strategy built on it.

namespace dgt {

struct SparsePpr {
  std::vector<std::pair<int, double>> entries;    // sorted by node id
  std::vector<std::pair<int, double>> residuals;  // unpushed mass, sorted
  double alpha = 0.15;
  double epsilon = 1e-4;

  double mass_at(int node) const;
  double total_mass() const;
};

// Forward-push approximation of the PPR vector from `source`. The push
// threshold is normalized by graph volume so the returned vector is within
// 2*epsilon L1 distance of the exact PPR vector. An isolated source keeps
// all mass on itself.
SparsePpr approx_ppr(const TemporalUnionGraph& g, int source, double alpha,
                     double epsilon);

// Element-wise sum of per-target PPR vectors, as a dense score vector.
std::vector<double> joint_ppr(const TemporalUnionGraph& g,
                              const std::vector<int>& targets, double alpha,
                              double epsilon);

struct BatchSpec {
  std::vector<int> targets;
  std::vector<int> contexts;
  int k = 0;

  void validate() const;  // throws on overlap / duplicates / size breach
};

// Deterministic top-K selection: excludes targets, orders candidates by
// (score desc, node id asc), keeps positive-score nodes only.
BatchSpec select_context_topk(const std::vector<double>& scores,
                              const std::vector<int>& targets, int k);

// K draws without replacement with probability proportional to score among
// the remaining non-target candidates. Throws when k > 0 and no candidate
// has positive score.
BatchSpec sample_context_random(const std::vector<double>& scores,
                                const std::vector<int>& targets, int k,
                                std::uint64_t seed);

struct LinkSample {
  std::vector<std::pair<int, int>> positives;
  std::vector<std::pair<int, int>> negatives;
  std::vector<int> targets;  // endpoint union, sorted
};

// num_pos uniform edges plus num_pos*neg_ratio uniform non-edges (canonical,
// deduplicated, resampled on collision). Throws when the graph has fewer
// than num_pos edges or not enough non-edges exist.
LinkSample sample_targets_for_links(const std::vector<std::pair<int, int>>& edges,
                                    int num_nodes, int num_pos, int neg_ratio,
                                    std::uint64_t seed);

}  // namespace dgt
