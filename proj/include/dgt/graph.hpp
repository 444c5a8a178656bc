#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

// Snapshot-sequence data model, temporal-union graph construction, and the
// temporal-connection / spatial-distance index functions used as attention
// bias inputs. Graphs are undirected; edges are stored canonically with
// u < v and no self-loops.

namespace dgt {

struct WeightedEdge {
  int u = 0;
  int v = 0;
  long long weight = 1;
};

// Ordered snapshot graphs over a shared node set. Time steps are 1-based.
// Per-step access counters back the leakage assertions in the test suite.
struct SnapshotSequence {
  int num_nodes = 0;
  std::vector<std::vector<WeightedEdge>> steps;  // each sorted by (u, v)

  int num_steps() const { return static_cast<int>(steps.size()); }
  const std::vector<WeightedEdge>& edges(int t) const;  // bumps access counter

  long long access_count(int t) const;
  void reset_access_counts() const;

  void validate() const;  // throws on malformed input

  mutable std::vector<long long> access_counts;
};

// Copy of the first `k` steps (fresh access counters).
SnapshotSequence prefix_view(const SnapshotSequence& s, int k);

// Deduplicated union of all snapshot edge sets with per-edge temporal
// existence and per-node adjacency over the union edges.
struct TemporalUnionGraph {
  int num_nodes = 0;
  int num_steps = 0;
  std::vector<std::pair<int, int>> edges;   // sorted canonical
  std::vector<unsigned char> exists;        // edges.size() * num_steps, [e*T + (t-1)]
  std::vector<std::vector<int>> adjacency;  // sorted neighbor lists

  int find_edge(int u, int v) const;  // -1 when absent
  bool edge_at(int u, int v, int t) const;
  bool edge_at_index(int e, int t) const { return exists[static_cast<std::size_t>(e) * num_steps + (t - 1)] != 0; }
  int degree(int u) const { return static_cast<int>(adjacency[u].size()); }
};

TemporalUnionGraph build_union(const SnapshotSequence& s);

// Temporal connection index: 2t when the edge exists at step t, 2t-1
// otherwise, kMaskedStep when t equals masked_t. Throws on t out of range.
inline constexpr int kMaskedStep = -1;
int temporal_index(const TemporalUnionGraph& g, int u, int v, int t, int masked_t = 0);

// Edge subset selection for distance queries.
//   All            every union edge
//   ExcludeStepOnly drop edges whose existence bitmask is exactly step t
//   PrefixOnly     keep edges existing at some step <= t
struct EdgeFilter {
  enum class Mode { All, ExcludeStepOnly, PrefixOnly };
  Mode mode = Mode::All;
  int t = 0;

  static EdgeFilter all() { return {}; }
  static EdgeFilter exclude_step_only(int t) { return {Mode::ExcludeStepOnly, t}; }
  static EdgeFilter prefix_only(int t) { return {Mode::PrefixOnly, t}; }

  bool keeps(const TemporalUnionGraph& g, int edge_index) const;
};

// Depth-limited BFS distances from `source` over the filtered union graph.
// Nodes unreachable within d_max get d_max; distance to self is 0.
std::vector<int> bfs_distances(const TemporalUnionGraph& g, int source, int d_max,
                               const EdgeFilter& filter = {});

// Capped shortest-path distance between two nodes. When exclude_t is given,
// edges existing only at that step are removed first.
int spatial_distance(const TemporalUnionGraph& g, int u, int v, int d_max,
                     std::optional<int> exclude_t = std::nullopt);

// Flips the membership of ceil(fraction * C(N,2)) uniformly chosen node
// pairs per snapshot. Deterministic given seed; flipped-on edges get weight 1.
SnapshotSequence perturb_edges(const SnapshotSequence& s, double fraction,
                               std::uint64_t seed);

// Dynamic stochastic block model: contiguous equal blocks; each pair keeps
// its previous status with probability `persist`, otherwise resamples from
// the block probabilities.
SnapshotSequence synth_dynamic_sbm(int num_nodes, int num_blocks, int num_steps,
                                   double p_in, double p_out, double persist,
                                   std::uint64_t seed);

// --- snapshot text format -------------------------------------------------
// header line "nodes=<N> steps=<T>", then one line per interaction
// "t u v w" with 1-based t; duplicate (t,u,v) lines aggregate by summing w.
SnapshotSequence load_snapshots(const std::string& path);
void save_snapshots(const std::string& path, const SnapshotSequence& s);

// Windowing ingester for raw interaction logs of "epoch u v" lines.
// Equal-count windowing gives each snapshot the same number of interactions
// (remainder spread over the leading windows); fixed windowing cuts at
// window_len ticks of the epoch value. Raw node ids are remapped to
// [0, N) in sorted order. Malformed lines raise with their line number.
enum class WindowMode { EqualCount, FixedLength };
SnapshotSequence ingest_interactions(const std::string& path, int num_steps,
                                     WindowMode mode = WindowMode::EqualCount,
                                     long long window_len = 0);

}  // namespace dgt
