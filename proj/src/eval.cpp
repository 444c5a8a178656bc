#include "dgt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace dgt {

// ------------------------------------------------------------------ split

void EvalSplit::validate(const SnapshotSequence& s) const {
  if (pos.size() != neg.size()) throw std::logic_error("EvalSplit: unbalanced classes");
  if (pos_part.size() != pos.size() || neg_part.size() != neg.size()) {
    throw std::logic_error("EvalSplit: partition size mismatch");
  }
  std::set<std::pair<int, int>> members;
  for (const auto& e : s.edges(t_star)) members.insert({e.u, e.v});
  for (const auto& p : pos) {
    if (!members.count(p)) throw std::logic_error("EvalSplit: positive is not an edge");
  }
  for (const auto& p : neg) {
    if (members.count(p)) throw std::logic_error("EvalSplit: negative is an edge");
  }
}

EvalSplit make_eval_split(const SnapshotSequence& s, int t_star, double train_frac,
                          double val_frac, std::uint64_t seed, bool new_links_only) {
  if (t_star < 1 || t_star > s.num_steps()) {
    throw std::invalid_argument("make_eval_split: t_star out of range");
  }
  if (train_frac <= 0.0 || val_frac < 0.0 || train_frac + val_frac >= 1.0) {
    throw std::invalid_argument("make_eval_split: bad fractions");
  }
  EvalSplit split;
  split.t_star = t_star;

  std::set<std::pair<int, int>> members;
  for (const auto& e : s.edges(t_star)) members.insert({e.u, e.v});

  if (new_links_only) {
    std::set<std::pair<int, int>> seen_before;
    for (int t = 1; t < t_star; ++t) {
      for (const auto& e : s.edges(t)) seen_before.insert({e.u, e.v});
    }
    for (const auto& p : members) {
      if (!seen_before.count(p)) split.pos.push_back(p);
    }
    if (split.pos.empty()) {
      throw std::runtime_error("make_eval_split: no new links at the prediction step");
    }
  } else {
    split.pos.assign(members.begin(), members.end());
    if (split.pos.empty()) {
      throw std::runtime_error("make_eval_split: prediction step has no edges");
    }
  }

  std::mt19937_64 rng(seed);
  const long long universe =
      static_cast<long long>(s.num_nodes) * (s.num_nodes - 1) / 2;
  const long long free_pairs = universe - static_cast<long long>(members.size());
  if (free_pairs < 1) {
    throw std::runtime_error("make_eval_split: no non-edges to sample");
  }
  if (static_cast<long long>(split.pos.size()) > free_pairs) {
    // very dense steps cannot support one negative per positive; keep the
    // classes balanced by subsampling the positives
    std::shuffle(split.pos.begin(), split.pos.end(), rng);
    split.pos.resize(static_cast<std::size_t>(free_pairs));
    std::sort(split.pos.begin(), split.pos.end());
  }
  std::uniform_int_distribution<int> node_pick(0, s.num_nodes - 1);
  std::set<std::pair<int, int>> chosen;
  while (chosen.size() < split.pos.size()) {
    int u = node_pick(rng);
    int v = node_pick(rng);
    if (u == v) continue;
    if (u > v) std::swap(u, v);
    const std::pair<int, int> p{u, v};
    if (members.count(p) || chosen.count(p)) continue;
    chosen.insert(p);
  }
  split.neg.assign(chosen.begin(), chosen.end());

  auto partition = [&](std::size_t n) {
    std::vector<int> parts(n, 2);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n_train = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n))));
    const std::size_t n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(n))));
    if (n_train + n_val >= n) {
      throw std::runtime_error("make_eval_split: too few examples to partition");
    }
    for (std::size_t i = 0; i < n_train; ++i) parts[order[i]] = 0;
    for (std::size_t i = n_train; i < n_train + n_val; ++i) parts[order[i]] = 1;
    return parts;
  };
  split.pos_part = partition(split.pos.size());
  split.neg_part = partition(split.neg.size());
  return split;
}

void save_split(const std::string& path, const EvalSplit& split) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_split: cannot open " + path);
  out << "t_star=" << split.t_star << "\n";
  for (std::size_t i = 0; i < split.pos.size(); ++i) {
    out << split.pos[i].first << " " << split.pos[i].second << " 1 "
        << split.pos_part[i] << "\n";
  }
  for (std::size_t i = 0; i < split.neg.size(); ++i) {
    out << split.neg[i].first << " " << split.neg[i].second << " 0 "
        << split.neg_part[i] << "\n";
  }
}

EvalSplit load_split(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_split: cannot open " + path);
  EvalSplit split;
  std::string header;
  if (!std::getline(in, header) ||
      std::sscanf(header.c_str(), "t_star=%d", &split.t_star) != 1) {
    throw std::runtime_error("load_split: bad header in " + path);
  }
  int u, v, label, part;
  while (in >> u >> v >> label >> part) {
    if (label == 1) {
      split.pos.emplace_back(u, v);
      split.pos_part.push_back(part);
    } else {
      split.neg.emplace_back(u, v);
      split.neg_part.push_back(part);
    }
  }
  return split;
}

// ------------------------------------------------------------- embeddings

Tensor embed_all_chunked(const ModelParams& params, const SnapshotSequence& s,
                         const std::vector<int>& node_set, int chunk_size,
                         int prefix_t) {
  if (chunk_size < 1) throw std::invalid_argument("embed_all_chunked: chunk_size >= 1");
  const ModelConfig& cfg = params.config;
  if (prefix_t < 1 || prefix_t > cfg.steps) {
    throw std::invalid_argument("embed_all_chunked: prefix_t out of range");
  }
  // Conditioning is limited to the prefix: the union itself only sees the
  // first prefix_t steps, and later temporal rows stay masked.
  const TemporalUnionGraph g = build_union(prefix_view(s, prefix_t));
  std::vector<unsigned char> active(static_cast<std::size_t>(cfg.steps), 0);
  for (int t = 1; t <= prefix_t; ++t) active[static_cast<std::size_t>(t - 1)] = 1;

  Tape tape;  // constants only; nothing is recorded
  const BoundModel model = bind_const(params);
  const std::size_t n = node_set.size();
  const std::size_t d = static_cast<std::size_t>(cfg.hidden);
  if (n == 0) return Tensor(Shape{0, d});

  std::vector<int> rows(node_set.begin(), node_set.end());
  Tensor h = tape.gather_rows(model.p("node_embed"), rows);
  const ForwardOptions opts;  // eval mode

  for (int layer = 0; layer < cfg.layers; ++layer) {
    const std::string key = "layer" + std::to_string(layer);
    const Tensor normed =
        tape.layer_norm(h, model.p(key + ".ln1_gain"), model.p(key + ".ln1_bias"));
    std::vector<Tensor> z_blocks;
    for (std::size_t a = 0; a < n; a += static_cast<std::size_t>(chunk_size)) {
      const std::size_t b = std::min(n, a + static_cast<std::size_t>(chunk_size));
      std::vector<int> chunk_nodes(node_set.begin() + static_cast<std::ptrdiff_t>(a),
                                   node_set.begin() + static_cast<std::ptrdiff_t>(b));
      const PairEncodingIndices idx = encode_pair_indices(
          g, chunk_nodes, node_set, cfg.steps, active, EdgeFilter::all(), cfg.d_max);
      auto [bias_tc, bias_sd] = compute_bias(tape, model, idx);
      const Tensor bias = tape.add(bias_tc, bias_sd);
      std::vector<unsigned char> mask;
      if (cfg.attn_hops > 0) {
        mask.resize(idx.sd.size());
        for (std::size_t p = 0; p < idx.sd.size(); ++p) {
          mask[p] = idx.sd[p] > cfg.attn_hops ? 1 : 0;
        }
      }
      const Tensor q = tape.slice_rows(normed, a, b);
      const Tensor attn = attention_block(tape, model, layer, q, normed, bias, mask, opts);
      z_blocks.push_back(tape.add(attn, tape.slice_rows(h, a, b)));
    }
    const Tensor z = z_blocks.size() == 1 ? z_blocks[0] : tape.concat_rows(z_blocks);
    h = ffn_block(tape, model, layer, z, opts);
  }
  return h;
}

// ------------------------------------------------------------------- AUC

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw std::invalid_argument("auc: scores and labels must align and be non-empty");
  }
  long long num_pos = 0;
  for (int l : labels) num_pos += l ? 1 : 0;
  const long long num_neg = static_cast<long long>(labels.size()) - num_pos;
  if (num_pos == 0 || num_neg == 0) {
    throw std::invalid_argument("auc: both classes required");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  // tie-averaged ranks (1-based)
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]]) rank_sum_pos += avg_rank;
    }
    i = j + 1;
  }
  const double p = static_cast<double>(num_pos);
  return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * static_cast<double>(num_neg));
}

// --------------------------------------------------------------- protocol

namespace {

struct Logistic {
  std::vector<double> w;
  double b = 0.0;

  double score(const std::vector<double>& z) const {
    double s = b;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * z[i];
    return s;
  }
};

// Full-batch gradient descent, fixed iterations, zero init: deterministic.
Logistic fit_logistic(const std::vector<std::vector<double>>& feats,
                      const std::vector<int>& labels, int iters, double lr) {
  if (feats.empty()) throw std::invalid_argument("fit_logistic: no training data");
  Logistic model;
  model.w.assign(feats[0].size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(feats.size());
  std::vector<double> gw(model.w.size());
  for (int it = 0; it < iters; ++it) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < feats.size(); ++i) {
      const double z = model.score(feats[i]);
      const double p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                                : std::exp(z) / (1.0 + std::exp(z));
      const double err = p - static_cast<double>(labels[i]);
      for (std::size_t k = 0; k < gw.size(); ++k) gw[k] += err * feats[i][k];
      gb += err;
    }
    for (std::size_t k = 0; k < gw.size(); ++k) model.w[k] -= lr * gw[k] * inv_n;
    model.b -= lr * gb * inv_n;
  }
  return model;
}

std::vector<double> hadamard_feature(const Tensor& emb, int row_u, int row_v) {
  const std::size_t d = emb.cols();
  std::vector<double> z(d);
  for (std::size_t k = 0; k < d; ++k) {
    z[k] = emb.at(static_cast<std::size_t>(row_u), k) *
           emb.at(static_cast<std::size_t>(row_v), k);
  }
  return z;
}

EvalReport run_protocol(const ModelParams& params, const SnapshotSequence& s,
                        int t_star, const EvalConfig& cfg, bool new_links_only) {
  if (cfg.window < 1) throw std::invalid_argument("evaluate: window >= 1");
  if (t_star - cfg.window + 1 < 2) {
    throw std::invalid_argument("evaluate: window reaches before step 2");
  }
  if (t_star > s.num_steps()) throw std::invalid_argument("evaluate: t_star out of range");

  EvalReport report;
  report.t_star = t_star;
  report.window = cfg.window;
  report.new_links_only = new_links_only;

  std::vector<double> pooled_scores;
  std::vector<int> pooled_labels;

  for (int ts = t_star - cfg.window + 1; ts <= t_star; ++ts) {
    EvalSplit split;
    const std::string cache =
        cfg.split_cache_dir.empty()
            ? ""
            : cfg.split_cache_dir + "/split_t" + std::to_string(ts) +
                  (new_links_only ? "_new" : "") + ".txt";
    if (!cache.empty() && std::filesystem::exists(cache)) {
      split = load_split(cache);
    } else {
      split = make_eval_split(s, ts, cfg.train_frac, cfg.val_frac,
                              derive_seed(cfg.seed, static_cast<std::uint64_t>(ts)),
                              new_links_only);
      if (!cache.empty()) save_split(cache, split);
    }
    split.validate(s);
    const long long reads_after_split = s.access_count(ts);

    // embeddings conditioned strictly on steps before ts
    const int prefix = std::min(ts - 1, params.config.steps);
    std::vector<int> all_nodes(static_cast<std::size_t>(s.num_nodes));
    std::iota(all_nodes.begin(), all_nodes.end(), 0);
    const Tensor emb = embed_all_chunked(params, s, all_nodes, cfg.chunk_size, prefix);

    std::vector<std::vector<double>> train_feats;
    std::vector<int> train_labels;
    std::vector<double> test_scores, val_scores;
    std::vector<int> test_labels, val_labels;
    std::vector<std::pair<const std::vector<std::pair<int, int>>*, const std::vector<int>*>>
        classes = {{&split.pos, &split.pos_part}, {&split.neg, &split.neg_part}};
    Logistic classifier;
    for (int pass = 0; pass < 2; ++pass) {
      for (int c = 0; c < 2; ++c) {
        const auto& pairs = *classes[static_cast<std::size_t>(c)].first;
        const auto& parts = *classes[static_cast<std::size_t>(c)].second;
        const int label = c == 0 ? 1 : 0;
        for (std::size_t i = 0; i < pairs.size(); ++i) {
          const auto z = hadamard_feature(emb, pairs[i].first, pairs[i].second);
          if (pass == 0 && parts[i] == 0) {
            train_feats.push_back(z);
            train_labels.push_back(label);
          } else if (pass == 1 && parts[i] == 1) {
            val_scores.push_back(classifier.score(z));
            val_labels.push_back(label);
          } else if (pass == 1 && parts[i] == 2) {
            test_scores.push_back(classifier.score(z));
            test_labels.push_back(label);
          }
        }
      }
      if (pass == 0) classifier = fit_logistic(train_feats, train_labels, 500, 0.1);
    }

    if (s.access_count(ts) != reads_after_split) {
      throw std::logic_error("evaluate: prediction step read outside split construction");
    }

    StepEval step;
    step.t = ts;
    step.auc_test = auc(test_scores, test_labels);
    step.auc_val = val_scores.empty() ? 0.0 : auc(val_scores, val_labels);
    step.num_test = static_cast<int>(test_scores.size());
    report.per_step.push_back(step);
    pooled_scores.insert(pooled_scores.end(), test_scores.begin(), test_scores.end());
    pooled_labels.insert(pooled_labels.end(), test_labels.begin(), test_labels.end());
  }

  report.micro_auc = auc(pooled_scores, pooled_labels);
  double macro = 0.0;
  for (const auto& st : report.per_step) macro += st.auc_test;
  report.macro_auc = macro / static_cast<double>(report.per_step.size());
  return report;
}

}  // namespace

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["micro_auc"] = micro_auc;
  j["macro_auc"] = macro_auc;
  j["t_star"] = t_star;
  j["window"] = window;
  j["new_links_only"] = new_links_only;
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& st : per_step) {
    steps.push_back({{"t", st.t},
                     {"auc_test", st.auc_test},
                     {"auc_val", st.auc_val},
                     {"num_test", st.num_test}});
  }
  j["per_step"] = std::move(steps);
  return j.dump(2);
}

EvalReport evaluate(const ModelParams& params, const SnapshotSequence& s,
                    int t_star, const EvalConfig& cfg) {
  return run_protocol(params, s, t_star, cfg, cfg.new_links_only);
}

EvalReport evaluate_new_links(const ModelParams& params, const SnapshotSequence& s,
                              int t_star, const EvalConfig& cfg) {
  return run_protocol(params, s, t_star, cfg, true);
}

}  // namespace dgt
