#include "dgt/graph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace dgt {

namespace {

void canonicalize(int& u, int& v) {
  if (u > v) std::swap(u, v);
}

// Decodes a linear index in [0, C(n,2)) into the canonical pair (u, v).
std::pair<int, int> pair_from_index(long long idx, int n) {
  // row u holds (n-1-u) pairs
  int u = 0;
  long long remaining = idx;
  while (remaining >= n - 1 - u) {
    remaining -= n - 1 - u;
    ++u;
  }
  return {u, u + 1 + static_cast<int>(remaining)};
}

}  // namespace

// -------------------------------------------------------- SnapshotSequence

const std::vector<WeightedEdge>& SnapshotSequence::edges(int t) const {
  if (t < 1 || t > num_steps()) {
    throw std::out_of_range("SnapshotSequence::edges: step out of range");
  }
  if (access_counts.size() != steps.size()) access_counts.assign(steps.size(), 0);
  ++access_counts[static_cast<std::size_t>(t - 1)];
  return steps[static_cast<std::size_t>(t - 1)];
}

long long SnapshotSequence::access_count(int t) const {
  if (access_counts.size() != steps.size()) return 0;
  return access_counts.at(static_cast<std::size_t>(t - 1));
}

void SnapshotSequence::reset_access_counts() const {
  access_counts.assign(steps.size(), 0);
}

void SnapshotSequence::validate() const {
  if (num_steps() < 1) throw std::invalid_argument("SnapshotSequence: needs at least one step");
  if (num_nodes < 1) throw std::invalid_argument("SnapshotSequence: needs at least one node");
  for (const auto& step : steps) {
    int pu = -1, pv = -1;
    for (const auto& e : step) {
      if (e.u < 0 || e.v < 0 || e.u >= num_nodes || e.v >= num_nodes) {
        throw std::invalid_argument("SnapshotSequence: node id out of range");
      }
      if (e.u >= e.v) throw std::invalid_argument("SnapshotSequence: edges must satisfy u < v");
      if (e.weight <= 0) throw std::invalid_argument("SnapshotSequence: non-positive weight");
      if (std::make_pair(e.u, e.v) <= std::make_pair(pu, pv)) {
        throw std::invalid_argument("SnapshotSequence: edges must be sorted and unique");
      }
      pu = e.u;
      pv = e.v;
    }
  }
}

SnapshotSequence prefix_view(const SnapshotSequence& s, int k) {
  if (k < 1 || k > s.num_steps()) {
    throw std::out_of_range("prefix_view: bad prefix length");
  }
  SnapshotSequence out;
  out.num_nodes = s.num_nodes;
  for (int t = 1; t <= k; ++t) out.steps.push_back(s.edges(t));
  return out;
}

// ------------------------------------------------------- TemporalUnionGraph

int TemporalUnionGraph::find_edge(int u, int v) const {
  canonicalize(u, v);
  auto it = std::lower_bound(edges.begin(), edges.end(), std::make_pair(u, v));
  if (it == edges.end() || *it != std::make_pair(u, v)) return -1;
  return static_cast<int>(it - edges.begin());
}

bool TemporalUnionGraph::edge_at(int u, int v, int t) const {
  const int e = find_edge(u, v);
  return e >= 0 && edge_at_index(e, t);
}

TemporalUnionGraph build_union(const SnapshotSequence& s) {
  s.validate();
  TemporalUnionGraph g;
  g.num_nodes = s.num_nodes;
  g.num_steps = s.num_steps();

  std::map<std::pair<int, int>, std::vector<int>> seen;  // edge -> steps present
  for (int t = 1; t <= g.num_steps; ++t) {
    for (const auto& e : s.edges(t)) {
      seen[{e.u, e.v}].push_back(t);
    }
  }
  g.edges.reserve(seen.size());
  g.exists.assign(seen.size() * static_cast<std::size_t>(g.num_steps), 0);
  g.adjacency.assign(static_cast<std::size_t>(g.num_nodes), {});
  std::size_t idx = 0;
  for (const auto& [edge, ts] : seen) {
    g.edges.push_back(edge);
    for (int t : ts) g.exists[idx * g.num_steps + (t - 1)] = 1;
    g.adjacency[edge.first].push_back(edge.second);
    g.adjacency[edge.second].push_back(edge.first);
    ++idx;
  }
  for (auto& nbrs : g.adjacency) std::sort(nbrs.begin(), nbrs.end());
  return g;
}

int temporal_index(const TemporalUnionGraph& g, int u, int v, int t, int masked_t) {
  if (t < 1 || t > g.num_steps) {
    throw std::out_of_range("temporal_index: step out of range");
  }
  if (t == masked_t) return kMaskedStep;
  return g.edge_at(u, v, t) ? 2 * t : 2 * t - 1;
}

bool EdgeFilter::keeps(const TemporalUnionGraph& g, int edge_index) const {
  switch (mode) {
    case Mode::All:
      return true;
    case Mode::ExcludeStepOnly: {
      // removed only when the bitmask has exactly the bit t set
      const std::size_t base = static_cast<std::size_t>(edge_index) * g.num_steps;
      for (int step = 1; step <= g.num_steps; ++step) {
        if (g.exists[base + (step - 1)] && step != t) return true;
      }
      return false;
    }
    case Mode::PrefixOnly: {
      const std::size_t base = static_cast<std::size_t>(edge_index) * g.num_steps;
      for (int step = 1; step <= std::min(t, g.num_steps); ++step) {
        if (g.exists[base + (step - 1)]) return true;
      }
      return false;
    }
  }
  return true;
}

std::vector<int> bfs_distances(const TemporalUnionGraph& g, int source, int d_max,
                               const EdgeFilter& filter) {
  if (d_max < 1) throw std::invalid_argument("bfs_distances: d_max must be >= 1");
  std::vector<int> dist(static_cast<std::size_t>(g.num_nodes), d_max);
  dist[static_cast<std::size_t>(source)] = 0;
  std::deque<int> queue{source};
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    const int du = dist[static_cast<std::size_t>(u)];
    if (du >= d_max) continue;
    for (int v : g.adjacency[static_cast<std::size_t>(u)]) {
      if (dist[static_cast<std::size_t>(v)] <= du + 1) continue;
      if (filter.mode != EdgeFilter::Mode::All) {
        const int e = g.find_edge(u, v);
        if (!filter.keeps(g, e)) continue;
      }
      dist[static_cast<std::size_t>(v)] = du + 1;
      queue.push_back(v);
    }
  }
  return dist;
}

int spatial_distance(const TemporalUnionGraph& g, int u, int v, int d_max,
                     std::optional<int> exclude_t) {
  if (u == v) return 0;
  const EdgeFilter filter =
      exclude_t ? EdgeFilter::exclude_step_only(*exclude_t) : EdgeFilter::all();
  return bfs_distances(g, u, d_max, filter)[static_cast<std::size_t>(v)];
}

// ------------------------------------------------------------ perturbation

SnapshotSequence perturb_edges(const SnapshotSequence& s, double fraction,
                               std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) {
    throw std::invalid_argument("perturb_edges: fraction must be in [0,1]");
  }
  s.validate();
  SnapshotSequence out;
  out.num_nodes = s.num_nodes;
  const long long universe =
      static_cast<long long>(s.num_nodes) * (s.num_nodes - 1) / 2;
  const long long flips =
      static_cast<long long>(std::ceil(fraction * static_cast<double>(universe)));
  std::mt19937_64 rng(seed);

  for (int t = 1; t <= s.num_steps(); ++t) {
    std::map<std::pair<int, int>, long long> members;
    for (const auto& e : s.edges(t)) members[{e.u, e.v}] = e.weight;

    // sample `flips` distinct pair indices via partial Fisher-Yates over the
    // implicit range [0, universe)
    std::unordered_map<long long, long long> moved;
    for (long long i = 0; i < flips; ++i) {
      std::uniform_int_distribution<long long> pick(i, universe - 1);
      const long long j = pick(rng);
      long long vi = moved.count(i) ? moved[i] : i;
      long long vj = moved.count(j) ? moved[j] : j;
      moved[i] = vj;
      moved[j] = vi;
      const auto [u, v] = pair_from_index(vj, s.num_nodes);
      auto it = members.find({u, v});
      if (it != members.end()) {
        members.erase(it);
      } else {
        members[{u, v}] = 1;
      }
    }

    std::vector<WeightedEdge> step;
    step.reserve(members.size());
    for (const auto& [edge, w] : members) step.push_back({edge.first, edge.second, w});
    out.steps.push_back(std::move(step));
  }
  return out;
}

SnapshotSequence synth_dynamic_sbm(int num_nodes, int num_blocks, int num_steps,
                                   double p_in, double p_out, double persist,
                                   std::uint64_t seed) {
  if (num_nodes < 2 || num_blocks < 1 || num_steps < 1) {
    throw std::invalid_argument("synth_dynamic_sbm: bad sizes");
  }
  if (!(0.0 <= p_out && p_out < p_in && p_in <= 1.0)) {
    throw std::invalid_argument("synth_dynamic_sbm: need 0 <= p_out < p_in <= 1");
  }
  if (persist < 0.0 || persist > 1.0) {
    throw std::invalid_argument("synth_dynamic_sbm: persist must be in [0,1]");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  auto block_of = [&](int v) {
    return static_cast<int>(static_cast<long long>(v) * num_blocks / num_nodes);
  };

  SnapshotSequence out;
  out.num_nodes = num_nodes;
  std::vector<unsigned char> status;  // per canonical pair, current membership
  const long long universe = static_cast<long long>(num_nodes) * (num_nodes - 1) / 2;
  status.assign(static_cast<std::size_t>(universe), 0);

  for (int t = 1; t <= num_steps; ++t) {
    std::vector<WeightedEdge> step;
    std::size_t idx = 0;
    for (int u = 0; u < num_nodes; ++u) {
      for (int v = u + 1; v < num_nodes; ++v, ++idx) {
        const double p = block_of(u) == block_of(v) ? p_in : p_out;
        if (t == 1 || unif(rng) >= persist) {
          status[idx] = unif(rng) < p ? 1 : 0;
        }
        if (status[idx]) step.push_back({u, v, 1});
      }
    }
    out.steps.push_back(std::move(step));
  }
  return out;
}

// ---------------------------------------------------------------- file i/o

SnapshotSequence load_snapshots(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_snapshots: cannot open " + path);
  std::string header;
  if (!std::getline(in, header)) {
    throw std::runtime_error("load_snapshots: empty file " + path);
  }
  int n = 0, steps = 0;
  if (std::sscanf(header.c_str(), "nodes=%d steps=%d", &n, &steps) != 2) {
    throw std::runtime_error("load_snapshots: bad header in " + path);
  }
  std::vector<std::map<std::pair<int, int>, long long>> acc(
      static_cast<std::size_t>(steps));
  std::string line;
  long long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    int t, u, v;
    long long w;
    if (!(ls >> t >> u >> v >> w)) {
      throw std::runtime_error("load_snapshots: malformed line " + std::to_string(lineno));
    }
    if (t < 1 || t > steps || u < 0 || v < 0 || u >= n || v >= n || u == v || w <= 0) {
      throw std::runtime_error("load_snapshots: bad record at line " + std::to_string(lineno));
    }
    canonicalize(u, v);
    acc[static_cast<std::size_t>(t - 1)][{u, v}] += w;
  }
  SnapshotSequence s;
  s.num_nodes = n;
  for (auto& step_map : acc) {
    std::vector<WeightedEdge> step;
    step.reserve(step_map.size());
    for (const auto& [edge, w] : step_map) step.push_back({edge.first, edge.second, w});
    s.steps.push_back(std::move(step));
  }
  s.validate();
  return s;
}

void save_snapshots(const std::string& path, const SnapshotSequence& s) {
  s.validate();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_snapshots: cannot open " + path);
  out << "nodes=" << s.num_nodes << " steps=" << s.num_steps() << "\n";
  for (int t = 1; t <= s.num_steps(); ++t) {
    for (const auto& e : s.edges(t)) {
      out << t << " " << e.u << " " << e.v << " " << e.weight << "\n";
    }
  }
  if (!out) throw std::runtime_error("save_snapshots: write failed for " + path);
}

SnapshotSequence ingest_interactions(const std::string& path, int num_steps,
                                     WindowMode mode, long long window_len) {
  if (num_steps < 1) throw std::invalid_argument("ingest_interactions: num_steps must be >= 1");
  std::ifstream in(path);
  if (!in) throw std::runtime_error("ingest_interactions: cannot open " + path);

  struct Interaction {
    long long epoch;
    int u, v;
  };
  std::vector<Interaction> rows;
  std::string line;
  long long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    long long epoch;
    long long u, v;
    if (!(ls >> epoch >> u >> v) || u < 0 || v < 0) {
      throw std::runtime_error("ingest_interactions: malformed line " +
                               std::to_string(lineno));
    }
    if (u == v) continue;  // self-interactions carry no edge
    rows.push_back({epoch, static_cast<int>(u), static_cast<int>(v)});
  }
  if (rows.empty()) throw std::runtime_error("ingest_interactions: no interactions in " + path);
  std::stable_sort(rows.begin(), rows.end(),
                   [](const Interaction& a, const Interaction& b) { return a.epoch < b.epoch; });

  // remap raw ids to [0, N) in sorted order
  std::vector<int> ids;
  ids.reserve(rows.size() * 2);
  for (const auto& r : rows) {
    ids.push_back(r.u);
    ids.push_back(r.v);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::unordered_map<int, int> remap;
  for (std::size_t i = 0; i < ids.size(); ++i) remap[ids[i]] = static_cast<int>(i);

  // assign each interaction a window
  std::vector<int> window_of(rows.size());
  if (mode == WindowMode::EqualCount) {
    const std::size_t total = rows.size();
    const std::size_t base = total / static_cast<std::size_t>(num_steps);
    const std::size_t extra = total % static_cast<std::size_t>(num_steps);
    std::size_t i = 0;
    for (int w = 0; w < num_steps; ++w) {
      std::size_t count = base + (static_cast<std::size_t>(w) < extra ? 1 : 0);
      if (count == 0) {
        throw std::runtime_error("ingest_interactions: empty window " + std::to_string(w + 1));
      }
      for (std::size_t k = 0; k < count; ++k) window_of[i++] = w;
    }
  } else {
    if (window_len <= 0) {
      throw std::invalid_argument("ingest_interactions: fixed mode needs window_len > 0");
    }
    const long long start = rows.front().epoch;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      long long w = (rows[i].epoch - start) / window_len;
      if (w >= num_steps) w = num_steps - 1;  // trailing spill joins the last window
      window_of[i] = static_cast<int>(w);
    }
    std::vector<char> seen(static_cast<std::size_t>(num_steps), 0);
    for (int w : window_of) seen[static_cast<std::size_t>(w)] = 1;
    for (int w = 0; w < num_steps; ++w) {
      if (!seen[static_cast<std::size_t>(w)]) {
        throw std::runtime_error("ingest_interactions: empty window " + std::to_string(w + 1));
      }
    }
  }

  std::vector<std::map<std::pair<int, int>, long long>> acc(
      static_cast<std::size_t>(num_steps));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    int u = remap[rows[i].u], v = remap[rows[i].v];
    canonicalize(u, v);
    acc[static_cast<std::size_t>(window_of[i])][{u, v}] += 1;
  }
  SnapshotSequence s;
  s.num_nodes = static_cast<int>(ids.size());
  for (auto& step_map : acc) {
    std::vector<WeightedEdge> step;
    for (const auto& [edge, w] : step_map) step.push_back({edge.first, edge.second, w});
    s.steps.push_back(std::move(step));
  }
  s.validate();
  return s;
}

}  // namespace dgt
