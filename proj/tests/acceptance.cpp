// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Runs single-threaded; every tolerance is pinned in code.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dgt/eval.hpp"
#include "dgt/graph.hpp"
#include "dgt/model.hpp"
#include "dgt/objectives.hpp"
#include "dgt/sampler.hpp"
#include "dgt/tensor.hpp"
#include "dgt/trainer.hpp"
#include "support/checks.hpp"
#include "support/oracles.hpp"
#include "support/reference_layer.hpp"

using namespace dgt;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int criterion, const char* name, bool pass, const std::string& detail = "") {
  std::printf("[%s] criterion %d: %s%s%s\n", pass ? "PASS" : "FAIL", criterion, name,
              detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double elapsed_s(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string format2(double a, double b, const char* fmt) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), fmt, a, b);
  return buf;
}

// Shared desk-scale experiment configuration (criteria 7-9).
TrainConfig desk_config() {
  TrainConfig cfg;
  cfg.model.hidden = 32;
  cfg.model.layers = 2;
  cfg.model.heads = 4;
  cfg.model.d_max = 5;
  cfg.model.dropout_hidden = 0.1;
  cfg.model.dropout_attn = 0.1;
  cfg.lr = 3e-3;
  cfg.epochs_pretrain = 50;
  cfg.epochs_finetune = 30;
  cfg.steps_per_epoch = 4;
  cfg.batch_targets = 16;
  cfg.finetune_pos = 32;
  cfg.neg_ratio = 10;
  cfg.patience = 0;
  cfg.chunk_size = 16;
  return cfg;
}

SnapshotSequence desk_data(std::uint64_t seed) {
  return synth_dynamic_sbm(60, 3, 6, 0.3, 0.02, 0.8, seed);
}

double desk_pipeline(const SnapshotSequence& s, TrainConfig cfg, std::uint64_t seed,
                     bool with_pretrain) {
  cfg.seed = derive_seed(seed, 42);
  Checkpoint fin;
  if (with_pretrain) {
    const Checkpoint pre = pretrain(s, cfg);
    fin = finetune(s, cfg, &pre);
  } else {
    fin = finetune(s, cfg, nullptr);
  }
  EvalConfig ec;
  ec.chunk_size = cfg.chunk_size;
  ec.seed = derive_seed(seed, 7);
  return evaluate(fin.params, s, s.num_steps(), ec).micro_auc;
}

// ---------------------------------------------------------------------- 1

bool criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(11);
  auto project = [](Tape& t, const Tensor& y, std::uint64_t wseed) {
    std::mt19937_64 wrng(wseed);
    return t.sum_all(t.mul(y, Tensor::randn(y.shape, wrng)));
  };

  struct KernelCheck {
    const char* name;
    std::vector<Tensor> inputs;
    dgt::test::LossBuilder build;
  };
  std::vector<KernelCheck> checks;
  checks.push_back({"matmul",
                    {Tensor::randn({3, 4}, rng), Tensor::randn({4, 2}, rng)},
                    [&](Tape& t, const std::vector<Tensor>& b) {
                      return project(t, t.matmul(b[0], b[1]), 1);
                    }});
  checks.push_back({"transpose",
                    {Tensor::randn({3, 4}, rng)},
                    [&](Tape& t, const std::vector<Tensor>& b) {
                      return project(t, t.transpose(b[0]), 2);
                    }});
  checks.push_back({"add/sub/mul/scale",
                    {Tensor::randn({3, 4}, rng), Tensor::randn({3, 4}, rng)},
                    [&](Tape& t, const std::vector<Tensor>& b) {
                      return project(
                          t, t.scale(t.sub(t.add(b[0], b[1]), t.mul(b[0], b[1])), 0.7), 3);
                    }});
  checks.push_back({"row_softmax",
                    {Tensor::randn({4, 5}, rng)},
                    [&](Tape& t, const std::vector<Tensor>& b) {
                      return project(t, t.row_softmax(b[0]), 4);
                    }});
  checks.push_back({"layer_norm",
                    {Tensor::randn({4, 6}, rng), Tensor::randn({6}, rng, 0.5),
                     Tensor::randn({6}, rng, 0.5)},
                    [&](Tape& t, const std::vector<Tensor>& b) {
                      return project(t, t.layer_norm(b[0], b[1], b[2]), 5);
                    }});
  checks.push_back({"gelu",
                    {Tensor::randn({3, 5}, rng)},
                    [&](Tape& t, const std::vector<Tensor>& b) {
                      return project(t, t.gelu(b[0]), 6);
                    }});
  checks.push_back({"sigmoid",
                    {Tensor::randn({3, 5}, rng)},
                    [&](Tape& t, const std::vector<Tensor>& b) {
                      return project(t, t.sigmoid(b[0]), 7);
                    }});
  checks.push_back({"softplus",
                    {Tensor::randn({3, 5}, rng)},
                    [&](Tape& t, const std::vector<Tensor>& b) {
                      return project(t, t.softplus(b[0]), 8);
                    }});
  checks.push_back({"concat/slice",
                    {Tensor::randn({3, 2}, rng), Tensor::randn({3, 3}, rng),
                     Tensor::randn({2, 5}, rng)},
                    [&](Tape& t, const std::vector<Tensor>& b) {
                      const Tensor tall = t.concat_rows({t.concat_cols({b[0], b[1]}), b[2]});
                      return project(t, t.slice_rows(t.slice_cols(tall, 1, 4), 1, 5), 9);
                    }});
  checks.push_back({"gather_rows",
                    {Tensor::randn({5, 3}, rng)},
                    [&](Tape& t, const std::vector<Tensor>& b) {
                      return project(t, t.gather_rows(b[0], {4, -1, 0, 2, 2}), 10);
                    }});
  checks.push_back({"masked_fill+softmax",
                    {Tensor::randn({2, 4}, rng)},
                    [&](Tape& t, const std::vector<Tensor>& b) {
                      const std::vector<unsigned char> mask = {0, 1, 0, 0, 1, 0, 0, 1};
                      return project(t, t.row_softmax(t.masked_fill(b[0], mask, kMaskedLogit)),
                                     11);
                    }});
  checks.push_back({"dropout",
                    {Tensor::randn({4, 4}, rng)},
                    [&](Tape& t, const std::vector<Tensor>& b) {
                      std::mt19937_64 drop(99);
                      return project(t, t.dropout(b[0], 0.4, drop), 12);
                    }});
  checks.push_back({"reductions",
                    {Tensor::randn({3, 4}, rng)},
                    [&](Tape& t, const std::vector<Tensor>& b) {
                      Tensor y = t.add(t.sum_all(b[0]), t.mean_all(b[0]));
                      y = t.add(y, t.frobenius_sq(b[0]));
                      return t.add(y, t.sum_all(t.row_sum(b[0])));
                    }});
  checks.push_back({"broadcast/rowvec/reshape",
                    {Tensor::randn({3, 4}, rng), Tensor::randn({4}, rng),
                     Tensor::randn({3}, rng)},
                    [&](Tape& t, const std::vector<Tensor>& b) {
                      Tensor y = t.scale_rows(t.add_rowvec(b[0], b[1]), b[2]);
                      y = t.add(y, t.broadcast_rows(b[1], 3));
                      return project(t, t.reshape(y, Shape{12}), 13);
                    }});
  for (const auto& check : checks) {
    const auto res = dgt::test::check_gradients(check.inputs, check.build, 1e-4);
    if (!res.ok) {
      report(1, "gradient suite", false, std::string(check.name) + ": " + res.detail);
      return false;
    }
  }

  // stop_gradient cannot face naive finite differences (the value function
  // ignores the stop): the live branch must match FD with the stopped value
  // held constant, and the stopped branch must be exactly zero.
  {
    std::mt19937_64 srng(31);
    const Tensor a0 = Tensor::randn({3, 3}, srng);
    const Tensor b0 = Tensor::randn({3, 3}, srng);
    Tape tape;
    const Tensor a = tape.leaf(a0);
    const Tensor b = tape.leaf(b0);
    tape.backward(tape.frobenius_sq(tape.sub(tape.stop_gradient(a), b)));
    for (double v : tape.grad(a.node)) {
      if (v != 0.0) {
        report(1, "gradient suite", false, "stop_gradient: stopped branch leaked");
        return false;
      }
    }
    const double h = 1e-5;
    for (std::size_t j = 0; j < b0.size(); ++j) {
      auto live = [&](double delta) {
        double acc = 0.0;
        for (std::size_t i = 0; i < b0.size(); ++i) {
          const double bv = b0.data()[i] + (i == j ? delta : 0.0);
          const double d = a0.data()[i] - bv;
          acc += d * d;
        }
        return acc;
      };
      const double fd = (live(h) - live(-h)) / (2.0 * h);
      if (!dgt::test::close_rel(tape.grad(b.node)[j], fd, 1e-4)) {
        report(1, "gradient suite", false, "stop_gradient: live branch mismatch");
        return false;
      }
    }
  }

  // full model at the pinned batch size: 6 targets x 6 contexts, d=8, L=2,
  // h=2, T=3
  ModelConfig mc;
  mc.hidden = 8;
  mc.layers = 2;
  mc.heads = 2;
  mc.steps = 3;
  mc.d_max = 4;
  mc.dropout_hidden = 0.0;
  mc.dropout_attn = 0.0;
  std::mt19937_64 grng(17);
  const SnapshotSequence s = dgt::test::random_snapshots(16, 3, 0.25, grng);
  const TemporalUnionGraph g = build_union(s);
  ModelParams params = ModelParams::init(mc, 16, 19);
  {
    std::mt19937_64 prng(23);
    std::normal_distribution<double> dist(0.0, 0.2);
    for (std::size_t i = 0; i < params.store.size(); ++i) {
      if (params.store.name(i).find("gain") != std::string::npos) continue;
      for (auto& v : params.store.tensor(i).mut()) v = dist(prng);
    }
  }
  BatchSpec batch;
  batch.targets = {0, 2, 4, 6, 8, 10};
  batch.contexts = {1, 3, 5, 7, 9, 11};
  batch.k = 6;
  const EncodedBatch encoded = encode_batch(g, batch, mc);
  std::vector<Tensor> inputs;
  for (std::size_t i = 0; i < params.store.size(); ++i) inputs.push_back(params.store.tensor(i));
  const auto res = dgt::test::check_gradients(
      inputs,
      [&](Tape& t, const std::vector<Tensor>& b) {
        BoundModel m;
        m.config = &mc;
        m.source = &params.store;
        m.bound = b;
        auto [h_tgt, h_ctx] = model_forward(t, m, encoded, {});
        return project(t, h_tgt, 29);
      },
      1e-4);
  const double secs = elapsed_s(t0);
  if (!res.ok) {
    report(1, "gradient suite", false, "full model: " + res.detail);
    return false;
  }
  if (secs >= 60.0) {
    report(1, "gradient suite", false, format2(secs, 60.0, "runtime %.1fs over %.0fs budget"));
    return false;
  }
  report(1, "gradient suite (all kernels + full model, rel err <= 1e-4)", true,
         format2(secs, 0, "%.1fs"));
  return true;
}

// ---------------------------------------------------------------------- 2

bool criterion_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(31);

  // union vs brute force
  for (int trial = 0; trial < 5; ++trial) {
    const SnapshotSequence s = dgt::test::random_snapshots(30, 20, 0.05, rng);
    const TemporalUnionGraph g = build_union(s);
    const auto oracle = dgt::test::brute_force_union(s);
    if (g.edges.size() != oracle.size()) {
      report(2, "oracle equivalence", false, "union edge count mismatch");
      return false;
    }
    std::size_t i = 0;
    for (const auto& [edge, mask] : oracle) {
      if (g.edges[i] != edge) {
        report(2, "oracle equivalence", false, "union edge order mismatch");
        return false;
      }
      for (int t = 1; t <= s.num_steps(); ++t) {
        if (g.edge_at_index(static_cast<int>(i), t) != mask[static_cast<std::size_t>(t - 1)]) {
          report(2, "oracle equivalence", false, "union bitmask mismatch");
          return false;
        }
      }
      ++i;
    }
  }

  // bounded distances vs capped floyd-warshall, 25 forty-node graphs
  for (int trial = 0; trial < 25; ++trial) {
    const SnapshotSequence s = dgt::test::random_snapshots(40, 2, 0.045, rng);
    const TemporalUnionGraph g = build_union(s);
    const auto oracle = dgt::test::floyd_warshall_capped(40, g.edges, 5);
    for (int u = 0; u < 40; ++u) {
      const auto dist = bfs_distances(g, u, 5);
      for (int v = 0; v < 40; ++v) {
        if (dist[static_cast<std::size_t>(v)] !=
            oracle[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)]) {
          report(2, "oracle equivalence", false, "distance mismatch vs floyd-warshall");
          return false;
        }
      }
    }
  }

  // forward-push PPR vs dense power iteration
  const double eps = 1e-4;
  for (int trial = 0; trial < 3; ++trial) {
    const SnapshotSequence s = dgt::test::random_snapshots(50, 1, 0.08, rng);
    const TemporalUnionGraph g = build_union(s);
    for (int source = 0; source < 50; ++source) {
      if (g.degree(source) == 0) continue;
      const SparsePpr approx = approx_ppr(g, source, 0.15, eps);
      const auto oracle = dgt::test::power_iteration_ppr(g, source, 0.15);
      std::vector<double> dense(50, 0.0);
      for (const auto& [node, m] : approx.entries) dense[static_cast<std::size_t>(node)] = m;
      double l1 = 0.0;
      for (std::size_t i = 0; i < 50; ++i) l1 += std::abs(dense[i] - oracle[i]);
      if (l1 > 2.0 * eps) {
        report(2, "oracle equivalence", false,
               format2(l1, 2.0 * eps, "ppr L1 %.2e over bound %.2e"));
        return false;
      }
    }
  }

  // rank-based AUC vs pairwise enumeration
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> coin(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> scores;
    std::vector<int> labels;
    bool pos = false, neg = false;
    for (int i = 0; i < 60; ++i) {
      scores.push_back(std::round(unif(rng) * 16.0) / 16.0);
      labels.push_back(coin(rng));
      pos = pos || labels.back();
      neg = neg || !labels.back();
    }
    if (!pos || !neg) continue;
    if (auc(scores, labels) != dgt::test::brute_force_auc(scores, labels)) {
      report(2, "oracle equivalence", false, "auc mismatch vs enumeration");
      return false;
    }
  }

  const double secs = elapsed_s(t0);
  if (secs >= 120.0) {
    report(2, "oracle equivalence", false, format2(secs, 120.0, "runtime %.1fs over %.0fs"));
    return false;
  }
  report(2, "oracle equivalence (union, distances, ppr, auc)", true, format2(secs, 0, "%.1fs"));
  return true;
}

// ---------------------------------------------------------------------- 3

bool criterion_equation_fidelity() {
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<int> size_pick(1, 6);
  const int dims[] = {8, 16};
  const int heads[] = {1, 2, 4};
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig mc;
    mc.hidden = dims[trial % 2];
    mc.heads = heads[trial % 3];
    mc.layers = 1;
    mc.steps = 2;
    mc.d_max = 3;
    ModelParams params = ModelParams::init(mc, 8, 500 + static_cast<std::uint64_t>(trial));
    {
      std::mt19937_64 prng(600 + static_cast<std::uint64_t>(trial));
      std::normal_distribution<double> dist(0.0, 0.4);
      for (std::size_t i = 0; i < params.store.size(); ++i) {
        if (params.store.name(i).find("gain") != std::string::npos) continue;
        for (auto& v : params.store.tensor(i).mut()) v = dist(prng);
      }
    }
    const std::size_t nt = static_cast<std::size_t>(size_pick(rng));
    const std::size_t nc = static_cast<std::size_t>(size_pick(rng));
    const std::size_t d = static_cast<std::size_t>(mc.hidden);
    const Tensor h_tgt = Tensor::randn({nt, d}, rng);
    const Tensor h_ctx = Tensor::randn({nc, d}, rng);
    const Tensor bias = Tensor::randn({nt, nc}, rng, 0.5);

    Tape tape;
    const BoundModel model = bind_const(params);
    auto [out_tgt, out_ctx] =
        two_tower_layer(tape, model, 0, h_tgt, h_ctx, bias, tape.transpose(bias), {}, {});

    dgt::test::RefWeights w;
    w.d = mc.hidden;
    w.heads = mc.heads;
    w.ln1_gain = params.store.get("layer0.ln1_gain").data();
    w.ln1_bias = params.store.get("layer0.ln1_bias").data();
    w.ln2_gain = params.store.get("layer0.ln2_gain").data();
    w.ln2_bias = params.store.get("layer0.ln2_bias").data();
    auto to_mat = [](const Tensor& t) {
      dgt::test::Mat m(t.rows(), std::vector<double>(t.cols()));
      for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
      return m;
    };
    w.w_q = to_mat(params.store.get("layer0.w_q"));
    w.w_k = to_mat(params.store.get("layer0.w_k"));
    w.w_v = to_mat(params.store.get("layer0.w_v"));
    w.ffn_w1 = to_mat(params.store.get("layer0.ffn_w1"));
    w.ffn_b1 = params.store.get("layer0.ffn_b1").data();
    w.ffn_w2 = to_mat(params.store.get("layer0.ffn_w2"));
    w.ffn_b2 = params.store.get("layer0.ffn_b2").data();

    const auto [ref_tgt, ref_ctx] = dgt::test::ref_two_tower_layer(
        w, to_mat(h_tgt), to_mat(h_ctx), to_mat(bias), kLayerNormEpsilon);
    for (std::size_t i = 0; i < nt; ++i)
      for (std::size_t j = 0; j < d; ++j)
        worst = std::max(worst, std::abs(out_tgt.at(i, j) - ref_tgt[i][j]));
    for (std::size_t i = 0; i < nc; ++i)
      for (std::size_t j = 0; j < d; ++j)
        worst = std::max(worst, std::abs(out_ctx.at(i, j) - ref_ctx[i][j]));
  }
  const bool pass = worst < 1e-10;
  report(3, "equation fidelity (20 configs vs straight-line reference)", pass,
         format2(worst, 1e-10, "max |diff| %.2e vs %.0e"));
  return pass;
}

// ---------------------------------------------------------------------- 4

bool criterion_leakage() {
  ModelConfig mc;
  mc.hidden = 8;
  mc.heads = 2;
  mc.layers = 2;
  mc.steps = 4;
  mc.d_max = 4;
  mc.dropout_hidden = 0.0;
  mc.dropout_attn = 0.0;
  std::mt19937_64 rng(43);
  const SnapshotSequence s = dgt::test::random_snapshots(14, 4, 0.3, rng);
  const TemporalUnionGraph g = build_union(s);
  ModelParams params = ModelParams::init(mc, 14, 47);
  BatchSpec batch;
  batch.targets = {0, 1, 2, 3, 4, 5};
  batch.contexts = {6, 7, 8};
  batch.k = 3;

  long long violations = 0;

  // per-step masked forwards must not gather the masked step's rows
  for (int t = 1; t <= 4; ++t) {
    std::vector<unsigned char> active(4, 1);
    active[static_cast<std::size_t>(t - 1)] = 0;
    RowAccessLog log;
    ForwardOptions opts;
    opts.tc_access = &log;
    Tape tape;
    const EncodedBatch enc =
        encode_batch(g, batch, mc, active, EdgeFilter::exclude_step_only(t));
    model_forward(tape, bind_const(params), enc, opts);
    if (log.size() >= static_cast<std::size_t>(2 * t)) {
      violations += log[static_cast<std::size_t>(2 * t - 2)];
      violations += log[static_cast<std::size_t>(2 * t - 1)];
    }
  }

  // prefix forwards must not gather any later step's rows
  for (int t = 1; t <= 3; ++t) {
    std::vector<unsigned char> active(4, 0);
    for (int k = 1; k <= t; ++k) active[static_cast<std::size_t>(k - 1)] = 1;
    RowAccessLog log;
    ForwardOptions opts;
    opts.tc_access = &log;
    Tape tape;
    const EncodedBatch enc = encode_batch(g, batch, mc, active, EdgeFilter::prefix_only(t));
    model_forward(tape, bind_const(params), enc, opts);
    for (int later = t + 1; later <= 4; ++later) {
      if (log.size() >= static_cast<std::size_t>(2 * later)) {
        violations += log[static_cast<std::size_t>(2 * later - 2)];
        violations += log[static_cast<std::size_t>(2 * later - 1)];
      }
    }
  }

  // the composite losses carry the same guards internally and throw on leak
  bool guards_ok = true;
  try {
    Tape tape;
    recon_loss(tape, bind_const(params), s, g, batch, 3, 5, {});
    auto batch_fn = [&](int prefix_t) {
      FinetuneBatch fb;
      std::vector<std::pair<int, int>> pairs;
      for (const auto& e : s.steps[static_cast<std::size_t>(prefix_t)]) pairs.emplace_back(e.u, e.v);
      fb.links = sample_targets_for_links(pairs, 14, 3, 2, 9);
      fb.batch.targets = fb.links.targets;
      fb.batch.k = 0;
      return fb;
    };
    Tape tape2;
    finetune_loss(tape2, bind_const(params), s, g, batch_fn, {});
  } catch (const std::logic_error&) {
    guards_ok = false;
  }

  // evaluation may read the prediction step only while building the split
  bool eval_ok = true;
  try {
    ModelConfig emc = mc;
    emc.steps = 3;  // conditioning stops before the prediction step
    emc.tower = TowerMode::SingleTower;
    const ModelParams eval_model = ModelParams::init(emc, 14, 53);
    s.reset_access_counts();
    EvalConfig ec;
    ec.chunk_size = 5;
    ec.window = 2;
    ec.seed = 3;
    evaluate(eval_model, s, 4, ec);
  } catch (const std::logic_error&) {
    eval_ok = false;
  }

  const bool pass = violations == 0 && guards_ok && eval_ok;
  char buf[120];
  std::snprintf(buf, sizeof(buf), "tc-row violations=%lld, guards %s, eval reads %s",
                violations, guards_ok ? "silent" : "tripped", eval_ok ? "clean" : "dirty");
  report(4, "leakage counters", pass, buf);
  return pass;
}

// ---------------------------------------------------------------------- 5

bool criterion_chunked() {
  std::mt19937_64 rng(59);
  const int n = 64;
  const SnapshotSequence s = dgt::test::random_snapshots(n, 3, 0.08, rng);
  ModelConfig mc;
  mc.hidden = 16;
  mc.heads = 4;
  mc.layers = 2;
  mc.steps = 3;
  mc.d_max = 5;
  mc.dropout_hidden = 0.0;
  mc.dropout_attn = 0.0;
  mc.tower = TowerMode::SingleTower;
  ModelParams params = ModelParams::init(mc, n, 61);
  {
    std::mt19937_64 prng(67);
    std::normal_distribution<double> dist(0.0, 0.3);
    for (std::size_t i = 0; i < params.store.size(); ++i) {
      if (params.store.name(i).find("gain") != std::string::npos) continue;
      for (auto& v : params.store.tensor(i).mut()) v = dist(prng);
    }
  }

  const TemporalUnionGraph g = build_union(s);
  BatchSpec batch;
  batch.targets.resize(static_cast<std::size_t>(n));
  std::iota(batch.targets.begin(), batch.targets.end(), 0);
  batch.k = 0;
  const EncodedBatch enc = encode_batch(g, batch, mc);
  Tape tape;
  auto [mono, ctx] = model_forward(tape, bind_const(params), enc, {});

  std::vector<int> nodes(static_cast<std::size_t>(n));
  std::iota(nodes.begin(), nodes.end(), 0);
  double worst = 0.0;
  for (int chunk : {1, 2, 7, n}) {
    const Tensor emb = embed_all_chunked(params, s, nodes, chunk, 3);
    for (std::size_t i = 0; i < emb.size(); ++i) {
      worst = std::max(worst, std::abs(emb.data()[i] - mono.data()[i]));
    }
  }
  const bool pass = worst < 1e-10;
  report(5, "chunked inference equals monolithic (chunks 1,2,7,64)", pass,
         format2(worst, 1e-10, "max |diff| %.2e vs %.0e"));
  return pass;
}

// ---------------------------------------------------------------------- 6

double output_row_variance(const ModelParams& params, const TemporalUnionGraph& g,
                           const BatchSpec& probe) {
  Tape tape;
  const EncodedBatch enc = encode_batch(g, probe, params.config);
  auto [h, hc] = model_forward(tape, bind_const(params), enc, {});
  const std::size_t n = h.rows(), d = h.cols();
  double total = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += h.at(i, j);
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) var += (h.at(i, j) - mean) * (h.at(i, j) - mean);
    total += var / static_cast<double>(n);
  }
  return total / static_cast<double>(d);
}

bool criterion_stop_gradient() {
  // (a) gradients through the stopped branches are exactly zero
  bool exact_zero = true;
  {
    std::mt19937_64 rng(71);
    Tape tape;
    const Tensor h = tape.leaf(Tensor::randn({4, 5}, rng));
    const Tensor alt = tape.leaf(Tensor::randn({4, 5}, rng));
    // isolate each stopped branch: loss built from the stopped tensor only
    const Tensor stopped_alt = tape.stop_gradient(alt);
    const Tensor term1 = tape.frobenius_sq(tape.sub(h, stopped_alt));
    tape.backward(term1);
    for (double v : tape.grad(alt.node)) exact_zero = exact_zero && v == 0.0;
  }
  {
    std::mt19937_64 rng(73);
    Tape tape;
    const Tensor h = tape.leaf(Tensor::randn({4, 5}, rng));
    const Tensor alt = tape.leaf(Tensor::randn({4, 5}, rng));
    const Tensor term2 = tape.frobenius_sq(tape.sub(tape.stop_gradient(h), alt));
    tape.backward(term2);
    for (double v : tape.grad(h.node)) exact_zero = exact_zero && v == 0.0;
  }
  report(6, "stop-gradient blocks stopped branches exactly", exact_zero);

  // (b) collapse contrast when training on the view loss alone. For this
  // shared-parameter two-branch network the symmetric stopped loss has
  // exactly half the gradient of the unstopped loss, so the two arms trace
  // near-identical optimizer paths; the required contrast cannot emerge.
  // The experiment runs as stated and reports the measured ratios.
  int contrast = 0;
  double example_unstopped = 0.0, example_stopped = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SnapshotSequence s = synth_dynamic_sbm(30, 3, 3, 0.4, 0.05, 0.8, seed);
    const TemporalUnionGraph g = build_union(s);
    double ratio[2] = {0.0, 0.0};
    for (int stopped = 0; stopped < 2; ++stopped) {
      ModelConfig mc;
      mc.hidden = 16;
      mc.heads = 2;
      mc.layers = 1;
      mc.steps = 3;
      mc.d_max = 4;
      mc.dropout_hidden = 0.0;
      mc.dropout_attn = 0.0;
      ModelParams params = ModelParams::init(mc, 30, derive_seed(seed, 77));
      AdamState adam({1e-2, 0.9, 0.999, 1e-8, 0.0}, params.store);

      BatchSpec probe;
      probe.targets = {0, 3, 6, 9, 12, 15, 18, 21};
      probe = select_context_topk(joint_ppr(g, probe.targets, 0.15, 1e-4), probe.targets, 8);
      const double v0 = output_row_variance(params, g, probe);

      std::mt19937_64 batch_rng(derive_seed(seed, 5));
      for (int step = 0; step < 200; ++step) {
        std::vector<int> all(30);
        std::iota(all.begin(), all.end(), 0);
        for (int i = 0; i < 8; ++i) {
          std::uniform_int_distribution<int> pick(i, 29);
          std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(pick(batch_rng))]);
        }
        std::vector<int> targets(all.begin(), all.begin() + 8);
        std::sort(targets.begin(), targets.end());
        const auto scores = joint_ppr(g, targets, 0.15, 1e-4);
        const BatchSpec top = select_context_topk(scores, targets, 8);
        if (top.contexts.empty()) continue;
        const BatchSpec alt =
            sample_context_random(scores, targets, 8, derive_seed(seed, 1000 + step));

        Tape tape;
        const BoundModel bound = bind(tape, params);
        auto [ha, ca] = model_forward(tape, bound, encode_batch(g, top, mc), {});
        auto [hb, cb] = model_forward(tape, bound, encode_batch(g, alt, mc), {});
        const Tensor loss = view_loss(tape, ha, hb, stopped == 1);
        if (loss.node < 0) continue;
        tape.backward(loss);
        std::vector<const std::vector<double>*> grads;
        for (const auto& b : bound.bound) grads.push_back(&tape.grad(b.node));
        adam.step(params.store, grads);
      }
      ratio[stopped] = output_row_variance(params, g, probe) / v0;
    }
    if (seed == 1) {
      example_unstopped = ratio[0];
      example_stopped = ratio[1];
    }
    if (ratio[0] < 1e-6 && ratio[1] >= 0.1) ++contrast;
  }
  const bool collapse_pass = contrast >= 4;
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "contrast on %d/5 seeds (seed-1 variance ratios: unstopped %.2e, stopped "
                "%.2e); stopped gradient is exactly half the unstopped one here, see "
                "decisions ledger",
                contrast, example_unstopped, example_stopped);
  report(6, "view-loss collapse contrast", collapse_pass, buf);
  return exact_zero && collapse_pass;
}

// ------------------------------------------------------------------- 7+8

struct DeskResults {
  std::vector<double> with_pretrain;
  std::vector<double> without_pretrain;
};

bool criterion_end_to_end(const DeskResults& desk, double pretrain_only_secs) {
  int wins = 0;
  std::ostringstream aucs;
  for (double a : desk.with_pretrain) {
    wins += a >= 0.80 ? 1 : 0;
    aucs << (aucs.tellp() > 0 ? " " : "") << std::fixed << std::setprecision(3) << a;
  }
  const bool pass = wins >= 4 && pretrain_only_secs < 600.0;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "micro-AUC [%s], %d/5 >= 0.80, %.0fs < 600s",
                aucs.str().c_str(), wins, pretrain_only_secs);
  report(7, "end-to-end synthetic", pass, buf);
  return pass;
}

bool criterion_pretrain_direction(const DeskResults& desk) {
  const double with_mean =
      std::accumulate(desk.with_pretrain.begin(), desk.with_pretrain.end(), 0.0) / 5.0;
  const double without_mean =
      std::accumulate(desk.without_pretrain.begin(), desk.without_pretrain.end(), 0.0) / 5.0;
  const bool pass = with_mean >= without_mean;
  report(8, "pre-training direction", pass,
         format2(with_mean, without_mean, "mean with %.4f vs without %.4f"));
  return pass;
}

// ---------------------------------------------------------------------- 9

bool criterion_robustness() {
  double degr_full = 0.0, degr_hop = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SnapshotSequence s = desk_data(seed);
    SnapshotSequence noisy = perturb_edges(s, 0.5, derive_seed(seed, 0xA0));
    noisy.steps.back() = s.steps.back();  // prediction labels stay clean

    for (int hop : {0, 1}) {
      TrainConfig cfg = desk_config();
      cfg.model.tower = TowerMode::SingleTower;
      cfg.model.attn_hops = hop;
      const double clean = desk_pipeline(s, cfg, seed, true);
      const double corrupted = desk_pipeline(noisy, cfg, seed, true);
      if (hop == 0) degr_full += clean - corrupted;
      else degr_hop += clean - corrupted;
    }
  }
  degr_full /= 5.0;
  degr_hop /= 5.0;
  const bool pass = degr_full <= degr_hop;
  report(9, "noise robustness direction", pass,
         format2(degr_full, degr_hop, "mean degradation full %.4f <= 1-hop %.4f"));
  return pass;
}

// --------------------------------------------------------------------- 10

bool criterion_determinism() {
  const std::string root = "acceptance_tmp";
  fs::remove_all(root);
  fs::create_directories(root);
  auto shell = [&](const std::string& args) {
    return std::system((std::string(DGT_BIN) + " " + args + " >/dev/null 2>&1").c_str());
  };
  auto slurp = [](const std::string& path) {
    std::ifstream in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  bool pass = true;
  std::string detail;
  const std::string flags =
      " --epochs-pretrain 3 --epochs-finetune 2 --steps-per-epoch 2 --hidden 8 --heads 2"
      " --layers 1 --batch-targets 6 --finetune-pos 6 --neg-ratio 3 --dropout-hidden 0.2"
      " --dropout-attn 0.1 --patience 0 --seed 5";
  if (shell("synth --out " + root + "/d.txt --nodes 20 --blocks 2 --steps 4 --p-in 0.5"
            " --p-out 0.05 --seed 3") != 0) {
    pass = false;
    detail = "synth failed";
  }
  if (pass && (shell("pretrain --data " + root + "/d.txt --out " + root + "/p1" + flags) != 0 ||
               shell("pretrain --manifest " + root + "/p1/manifest.json --out " + root + "/p2") != 0)) {
    pass = false;
    detail = "pretrain runs failed";
  }
  if (pass && slurp(root + "/p1/metrics.csv") != slurp(root + "/p2/metrics.csv")) {
    pass = false;
    detail = "pretrain metrics differ";
  }
  if (pass && (shell("finetune --data " + root + "/d.txt --out " + root + "/f1" + flags +
                     " --start " + root + "/p1/checkpoints/best.ckpt") != 0 ||
               shell("finetune --manifest " + root + "/f1/manifest.json --out " + root + "/f2") != 0)) {
    pass = false;
    detail = "finetune runs failed";
  }
  if (pass && slurp(root + "/f1/metrics.csv") != slurp(root + "/f2/metrics.csv")) {
    pass = false;
    detail = "finetune metrics differ";
  }
  if (pass) detail = "pretrain and finetune metrics byte-identical across manifest re-runs";
  fs::remove_all(root);
  report(10, "determinism from run manifests", pass, detail);
  return pass;
}

}  // namespace

int main() {
  std::printf("acceptance suite (single-threaded)\n");
  const auto t0 = std::chrono::steady_clock::now();

  criterion_gradients();
  criterion_oracles();
  criterion_equation_fidelity();
  criterion_leakage();
  criterion_chunked();
  criterion_stop_gradient();

  const auto desk_t0 = std::chrono::steady_clock::now();
  DeskResults desk;
  desk.with_pretrain.reserve(5);
  {
    // criterion 7 measures the with-pretraining arm's runtime on its own
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const SnapshotSequence s = desk_data(seed);
      desk.with_pretrain.push_back(desk_pipeline(s, desk_config(), seed, true));
    }
  }
  const double pretrain_secs = elapsed_s(desk_t0);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SnapshotSequence s = desk_data(seed);
    desk.without_pretrain.push_back(desk_pipeline(s, desk_config(), seed, false));
  }

  criterion_end_to_end(desk, pretrain_secs);
  criterion_pretrain_direction(desk);
  criterion_robustness();
  criterion_determinism();

  std::printf("%d criterion(s) failed; total %.0fs\n", g_failures, elapsed_s(t0));
  return g_failures == 0 ? 0 : 1;
}
