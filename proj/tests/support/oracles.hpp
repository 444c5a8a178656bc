#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <utility>
#include <vector>

#include "dgt/graph.hpp"

// Independent brute-force oracles. These deliberately avoid the library's
// data structures and algorithms so they can disagree with them.

namespace dgt::test {

// Set union of all snapshot edge sets with per-step membership recheck.
inline std::map<std::pair<int, int>, std::vector<bool>> brute_force_union(
    const SnapshotSequence& s) {
  std::map<std::pair<int, int>, std::vector<bool>> out;
  const int T = s.num_steps();
  for (int t = 1; t <= T; ++t) {
    for (const auto& e : s.steps[static_cast<std::size_t>(t - 1)]) {
      auto& mask = out[{e.u, e.v}];
      if (mask.empty()) mask.assign(static_cast<std::size_t>(T), false);
      mask[static_cast<std::size_t>(t - 1)] = true;
    }
  }
  return out;
}

// Capped all-pairs shortest paths by Floyd-Warshall over an explicit edge
// list; unreachable-within-cap collapses to the cap.
inline std::vector<std::vector<int>> floyd_warshall_capped(
    int num_nodes, const std::vector<std::pair<int, int>>& edges, int cap) {
  const int inf = 1 << 20;
  std::vector<std::vector<int>> d(static_cast<std::size_t>(num_nodes),
                                  std::vector<int>(static_cast<std::size_t>(num_nodes), inf));
  for (int i = 0; i < num_nodes; ++i) d[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = 0;
  for (const auto& [u, v] : edges) {
    d[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)] = 1;
    d[static_cast<std::size_t>(v)][static_cast<std::size_t>(u)] = 1;
  }
  for (int k = 0; k < num_nodes; ++k) {
    for (int i = 0; i < num_nodes; ++i) {
      for (int j = 0; j < num_nodes; ++j) {
        const int via = d[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] +
                        d[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
        if (via < d[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) {
          d[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = via;
        }
      }
    }
  }
  for (auto& row : d) {
    for (auto& x : row) x = std::min(x, cap);
  }
  return d;
}

// Exact personalized PageRank by dense power iteration to tolerance 1e-12.
inline std::vector<double> power_iteration_ppr(const TemporalUnionGraph& g, int source,
                                               double alpha, double tol = 1e-12) {
  const std::size_t n = static_cast<std::size_t>(g.num_nodes);
  std::vector<double> pi(n, 0.0), next(n, 0.0);
  pi[static_cast<std::size_t>(source)] = 1.0;
  for (int iter = 0; iter < 100000; ++iter) {
    std::fill(next.begin(), next.end(), 0.0);
    next[static_cast<std::size_t>(source)] += alpha;
    for (std::size_t u = 0; u < n; ++u) {
      if (pi[u] == 0.0) continue;
      const auto& nbrs = g.adjacency[u];
      if (nbrs.empty()) {
        // dangling mass restarts at the source, matching a walk that halts
        next[static_cast<std::size_t>(source)] += (1.0 - alpha) * pi[u];
        continue;
      }
      const double share = (1.0 - alpha) * pi[u] / static_cast<double>(nbrs.size());
      for (int v : nbrs) next[static_cast<std::size_t>(v)] += share;
    }
    double delta = 0.0;
    for (std::size_t i = 0; i < n; ++i) delta += std::abs(next[i] - pi[i]);
    pi.swap(next);
    if (delta < tol) break;
  }
  return pi;
}

// AUC by full pairwise enumeration, ties worth one half.
inline double brute_force_auc(const std::vector<double>& scores,
                              const std::vector<int>& labels) {
  double wins = 0.0;
  long long pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

// Uniform random snapshot sequence for oracle comparisons.
inline SnapshotSequence random_snapshots(int num_nodes, int num_steps,
                                         double edge_prob, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  SnapshotSequence s;
  s.num_nodes = num_nodes;
  for (int t = 0; t < num_steps; ++t) {
    std::vector<WeightedEdge> step;
    for (int u = 0; u < num_nodes; ++u) {
      for (int v = u + 1; v < num_nodes; ++v) {
        if (unif(rng) < edge_prob) step.push_back({u, v, 1});
      }
    }
    s.steps.push_back(std::move(step));
  }
  return s;
}

}  // namespace dgt::test
