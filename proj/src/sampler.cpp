#include "dgt/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <random>
#include <set>
#include <stdexcept>
#include <unordered_set>

namespace dgt {

double SparsePpr::mass_at(int node) const {
  auto it = std::lower_bound(entries.begin(), entries.end(), node,
                             [](const auto& e, int n) { return e.first < n; });
  if (it == entries.end() || it->first != node) return 0.0;
  return it->second;
}

double SparsePpr::total_mass() const {
  double s = 0.0;
  for (const auto& [n, m] : entries) s += m;
  return s;
}

SparsePpr approx_ppr(const TemporalUnionGraph& g, int source, double alpha,
                     double epsilon) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("approx_ppr: alpha in (0,1)");
  if (!(epsilon > 0.0)) throw std::invalid_argument("approx_ppr: epsilon > 0");
  if (source < 0 || source >= g.num_nodes) throw std::invalid_argument("approx_ppr: bad source");

  SparsePpr out;
  out.alpha = alpha;
  out.epsilon = epsilon;
  if (g.degree(source) == 0) {
    out.entries = {{source, 1.0}};
    return out;
  }

  // Volume-normalized push threshold: when every residual r(u) is below
  // thresh * deg(u), the total unpushed mass is below sum_u thresh * deg(u)
  // = 2 * epsilon, which bounds the L1 error of the result.
  long long volume = 0;
  for (int u = 0; u < g.num_nodes; ++u) volume += g.degree(u);
  const double thresh = 2.0 * epsilon / static_cast<double>(volume);

  std::vector<double> mass(static_cast<std::size_t>(g.num_nodes), 0.0);
  std::vector<double> residual(static_cast<std::size_t>(g.num_nodes), 0.0);
  std::vector<unsigned char> queued(static_cast<std::size_t>(g.num_nodes), 0);
  residual[static_cast<std::size_t>(source)] = 1.0;
  std::deque<int> queue{source};
  queued[static_cast<std::size_t>(source)] = 1;

  // Standard forward-push work bound for the (normalized) tolerance.
  const long long push_budget =
      static_cast<long long>(std::ceil(1.0 / (thresh * alpha))) + 1;
  long long pushes = 0;

  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    queued[static_cast<std::size_t>(u)] = 0;
    const int deg = g.degree(u);
    const double r = residual[static_cast<std::size_t>(u)];
    if (deg == 0 || r < thresh * deg) continue;
    if (++pushes > push_budget) {
      throw std::logic_error("approx_ppr: push budget exceeded");
    }
    mass[static_cast<std::size_t>(u)] += alpha * r;
    residual[static_cast<std::size_t>(u)] = 0.0;
    const double share = (1.0 - alpha) * r / deg;
    for (int v : g.adjacency[static_cast<std::size_t>(u)]) {
      residual[static_cast<std::size_t>(v)] += share;
      const int dv = g.degree(v);
      if (!queued[static_cast<std::size_t>(v)] && dv > 0 &&
          residual[static_cast<std::size_t>(v)] >= thresh * dv) {
        queue.push_back(v);
        queued[static_cast<std::size_t>(v)] = 1;
      }
    }
  }

  for (int u = 0; u < g.num_nodes; ++u) {
    if (mass[static_cast<std::size_t>(u)] > 0.0) {
      out.entries.emplace_back(u, mass[static_cast<std::size_t>(u)]);
    }
    if (residual[static_cast<std::size_t>(u)] > 0.0) {
      out.residuals.emplace_back(u, residual[static_cast<std::size_t>(u)]);
    }
  }
  return out;
}

std::vector<double> joint_ppr(const TemporalUnionGraph& g,
                              const std::vector<int>& targets, double alpha,
                              double epsilon) {
  if (targets.empty()) throw std::invalid_argument("joint_ppr: no targets");
  std::vector<double> scores(static_cast<std::size_t>(g.num_nodes), 0.0);
  for (int t : targets) {
    const SparsePpr ppr = approx_ppr(g, t, alpha, epsilon);
    for (const auto& [node, m] : ppr.entries) {
      scores[static_cast<std::size_t>(node)] += m;
    }
  }
  return scores;
}

void BatchSpec::validate() const {
  std::set<int> t(targets.begin(), targets.end());
  if (t.size() != targets.size()) throw std::logic_error("BatchSpec: duplicate targets");
  std::set<int> c(contexts.begin(), contexts.end());
  if (c.size() != contexts.size()) throw std::logic_error("BatchSpec: duplicate contexts");
  if (static_cast<int>(contexts.size()) > k) throw std::logic_error("BatchSpec: too many contexts");
  for (int node : contexts) {
    if (t.count(node)) throw std::logic_error("BatchSpec: contexts overlap targets");
  }
}

BatchSpec select_context_topk(const std::vector<double>& scores,
                              const std::vector<int>& targets, int k) {
  if (k < 0) throw std::invalid_argument("select_context_topk: k must be >= 0");
  std::unordered_set<int> tset(targets.begin(), targets.end());
  std::vector<std::pair<double, int>> cand;  // (-score, id) for a single sort key
  for (int node = 0; node < static_cast<int>(scores.size()); ++node) {
    if (tset.count(node)) continue;
    if (scores[static_cast<std::size_t>(node)] <= 0.0) continue;
    cand.emplace_back(-scores[static_cast<std::size_t>(node)], node);
  }
  std::sort(cand.begin(), cand.end());
  BatchSpec spec;
  spec.targets = targets;
  spec.k = k;
  for (int i = 0; i < k && i < static_cast<int>(cand.size()); ++i) {
    spec.contexts.push_back(cand[static_cast<std::size_t>(i)].second);
  }
  return spec;
}

BatchSpec sample_context_random(const std::vector<double>& scores,
                                const std::vector<int>& targets, int k,
                                std::uint64_t seed) {
  if (k < 0) throw std::invalid_argument("sample_context_random: k must be >= 0");
  std::unordered_set<int> tset(targets.begin(), targets.end());
  std::vector<int> nodes;
  std::vector<double> weight;
  for (int node = 0; node < static_cast<int>(scores.size()); ++node) {
    if (tset.count(node)) continue;
    if (scores[static_cast<std::size_t>(node)] <= 0.0) continue;
    nodes.push_back(node);
    weight.push_back(scores[static_cast<std::size_t>(node)]);
  }
  if (k > 0 && nodes.empty()) {
    throw std::runtime_error("sample_context_random: all candidate scores are zero");
  }
  BatchSpec spec;
  spec.targets = targets;
  spec.k = k;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int draws = std::min<int>(k, static_cast<int>(nodes.size()));
  for (int d = 0; d < draws; ++d) {
    double total = 0.0;
    for (double w : weight) total += w;
    double target = unif(rng) * total;
    std::size_t pick = 0;
    for (; pick + 1 < nodes.size(); ++pick) {
      target -= weight[pick];
      if (target < 0.0) break;
    }
    spec.contexts.push_back(nodes[pick]);
    nodes.erase(nodes.begin() + static_cast<std::ptrdiff_t>(pick));
    weight.erase(weight.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  std::sort(spec.contexts.begin(), spec.contexts.end());
  return spec;
}

LinkSample sample_targets_for_links(const std::vector<std::pair<int, int>>& edges,
                                    int num_nodes, int num_pos, int neg_ratio,
                                    std::uint64_t seed) {
  if (num_pos < 1) throw std::invalid_argument("sample_targets_for_links: num_pos >= 1");
  if (neg_ratio < 0) throw std::invalid_argument("sample_targets_for_links: neg_ratio >= 0");
  if (static_cast<int>(edges.size()) < num_pos) {
    throw std::runtime_error("sample_targets_for_links: fewer edges than num_pos");
  }
  const long long universe = static_cast<long long>(num_nodes) * (num_nodes - 1) / 2;
  const long long num_neg = static_cast<long long>(num_pos) * neg_ratio;
  const long long free_pairs = universe - static_cast<long long>(edges.size());
  if (num_neg > free_pairs) {
    throw std::runtime_error("sample_targets_for_links: not enough non-edges");
  }

  std::mt19937_64 rng(seed);
  LinkSample out;

  // positives: partial Fisher-Yates over the edge list
  std::vector<std::size_t> order(edges.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int i = 0; i < num_pos; ++i) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i),
                                                    order.size() - 1);
    std::swap(order[static_cast<std::size_t>(i)], order[pick(rng)]);
    out.positives.push_back(edges[order[static_cast<std::size_t>(i)]]);
  }

  std::set<std::pair<int, int>> edge_set(edges.begin(), edges.end());
  std::set<std::pair<int, int>> chosen;
  std::uniform_int_distribution<int> node_pick(0, num_nodes - 1);
  while (static_cast<long long>(chosen.size()) < num_neg) {
    int u = node_pick(rng);
    int v = node_pick(rng);
    if (u == v) continue;
    if (u > v) std::swap(u, v);
    const std::pair<int, int> p{u, v};
    if (edge_set.count(p) || chosen.count(p)) continue;  // resample on collision
    chosen.insert(p);
    out.negatives.push_back(p);
  }

  std::set<int> nodes;
  for (const auto& [u, v] : out.positives) {
    nodes.insert(u);
    nodes.insert(v);
  }
  for (const auto& [u, v] : out.negatives) {
    nodes.insert(u);
    nodes.insert(v);
  }
  out.targets.assign(nodes.begin(), nodes.end());
  return out;
}

}  // namespace dgt
