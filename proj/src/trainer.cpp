#include "dgt/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "dgt/sampler.hpp"
#include "json.hpp"

namespace dgt {

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

nlohmann::json model_to_json(const ModelConfig& m) {
  return {{"hidden", m.hidden},
          {"layers", m.layers},
          {"heads", m.heads},
          {"steps", m.steps},
          {"d_max", m.d_max},
          {"dropout_hidden", m.dropout_hidden},
          {"dropout_attn", m.dropout_attn},
          {"tower", m.tower == TowerMode::TwoTower ? "two" : "single"},
          {"attn_hops", m.attn_hops}};
}

ModelConfig model_from_json(const nlohmann::json& j) {
  ModelConfig m;
  m.hidden = j.at("hidden").get<int>();
  m.layers = j.at("layers").get<int>();
  m.heads = j.at("heads").get<int>();
  m.steps = j.at("steps").get<int>();
  m.d_max = j.at("d_max").get<int>();
  m.dropout_hidden = j.at("dropout_hidden").get<double>();
  m.dropout_attn = j.at("dropout_attn").get<double>();
  m.tower = j.at("tower").get<std::string>() == "single" ? TowerMode::SingleTower
                                                         : TowerMode::TwoTower;
  m.attn_hops = j.at("attn_hops").get<int>();
  return m;
}

}  // namespace

std::string TrainConfig::to_json() const {
  nlohmann::json j = model_to_json(model);
  j["lr"] = lr;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["weight_decay"] = weight_decay;
  j["epochs_pretrain"] = epochs_pretrain;
  j["epochs_finetune"] = epochs_finetune;
  j["steps_per_epoch"] = steps_per_epoch;
  j["batch_targets"] = batch_targets;
  j["finetune_pos"] = finetune_pos;
  j["neg_ratio"] = neg_ratio;
  j["gamma"] = gamma;
  j["ppr_alpha"] = ppr_alpha;
  j["ppr_epsilon"] = ppr_epsilon;
  j["seed"] = seed;
  j["patience"] = patience;
  j["eval_window"] = eval_window;
  j["chunk_size"] = chunk_size;
  j["use_tc"] = use_tc;
  j["use_sd"] = use_sd;
  j["train_steps"] = train_steps;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& json_text) {
  const nlohmann::json j = nlohmann::json::parse(json_text);
  TrainConfig c;
  c.model = model_from_json(j);
  c.lr = j.at("lr").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.epochs_pretrain = j.at("epochs_pretrain").get<int>();
  c.epochs_finetune = j.at("epochs_finetune").get<int>();
  c.steps_per_epoch = j.at("steps_per_epoch").get<int>();
  c.batch_targets = j.at("batch_targets").get<int>();
  c.finetune_pos = j.at("finetune_pos").get<int>();
  c.neg_ratio = j.at("neg_ratio").get<int>();
  c.gamma = j.at("gamma").get<double>();
  c.ppr_alpha = j.at("ppr_alpha").get<double>();
  c.ppr_epsilon = j.at("ppr_epsilon").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.patience = j.at("patience").get<int>();
  c.eval_window = j.at("eval_window").get<int>();
  c.chunk_size = j.at("chunk_size").get<int>();
  c.use_tc = j.at("use_tc").get<bool>();
  c.use_sd = j.at("use_sd").get<bool>();
  c.train_steps = j.at("train_steps").get<int>();
  return c;
}

std::uint64_t TrainConfig::hash() const { return fnv1a_hash(to_json()); }

int TrainConfig::resolve_train_steps(int total_steps) const {
  const int ts = train_steps > 0 ? train_steps : total_steps - 1;
  if (ts < 2) throw std::invalid_argument("TrainConfig: needs at least two training steps");
  if (ts > total_steps) throw std::invalid_argument("TrainConfig: train_steps exceeds data");
  return ts;
}

// ------------------------------------------------------------- checkpoint

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  ParamStore all;
  for (std::size_t i = 0; i < ckpt.params.store.size(); ++i) {
    all.add(ckpt.params.store.name(i), ckpt.params.store.tensor(i));
  }
  for (std::size_t i = 0; i < ckpt.adam_m.size(); ++i) {
    const Shape shape{ckpt.adam_m[i].size()};
    all.add("adam.m." + ckpt.params.store.name(i), Tensor(shape, ckpt.adam_m[i]));
    all.add("adam.v." + ckpt.params.store.name(i), Tensor(shape, ckpt.adam_v[i]));
  }
  nlohmann::json extra;
  extra["model"] = model_to_json(ckpt.params.config);
  extra["num_nodes"] = ckpt.params.num_nodes;
  extra["epoch"] = ckpt.epoch;
  extra["adam_step"] = ckpt.adam_step;
  extra["adam"] = {{"lr", ckpt.adam_cfg.lr},
                   {"beta1", ckpt.adam_cfg.beta1},
                   {"beta2", ckpt.adam_cfg.beta2},
                   {"eps", ckpt.adam_cfg.eps},
                   {"weight_decay", ckpt.adam_cfg.weight_decay}};
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& row : ckpt.history) {
    hist.push_back({{"epoch", row.epoch},
                    {"total", row.losses.total},
                    {"recon", row.losses.recon},
                    {"view", row.losses.view},
                    {"link_pred", row.losses.link_pred},
                    {"val", row.val_metric}});
  }
  extra["history"] = std::move(hist);
  save_tensor_file(path, all, ckpt.config_hash, extra.dump());
}

Checkpoint load_checkpoint(const std::string& path, std::uint64_t expected_hash) {
  TensorFile file = load_tensor_file(path);
  if (expected_hash != 0 && file.config_hash != expected_hash) {
    throw std::runtime_error("load_checkpoint: config hash mismatch for " + path);
  }
  const nlohmann::json extra = nlohmann::json::parse(file.extra_json);

  Checkpoint ckpt;
  ckpt.config_hash = file.config_hash;
  ckpt.epoch = extra.at("epoch").get<int>();
  ckpt.adam_step = extra.at("adam_step").get<long long>();
  ckpt.adam_cfg.lr = extra.at("adam").at("lr").get<double>();
  ckpt.adam_cfg.beta1 = extra.at("adam").at("beta1").get<double>();
  ckpt.adam_cfg.beta2 = extra.at("adam").at("beta2").get<double>();
  ckpt.adam_cfg.eps = extra.at("adam").at("eps").get<double>();
  ckpt.adam_cfg.weight_decay = extra.at("adam").at("weight_decay").get<double>();
  ckpt.params.config = model_from_json(extra.at("model"));
  ckpt.params.num_nodes = extra.at("num_nodes").get<int>();
  for (const auto& row : extra.at("history")) {
    MetricRow r;
    r.epoch = row.at("epoch").get<int>();
    r.losses.total = row.at("total").get<double>();
    r.losses.recon = row.at("recon").get<double>();
    r.losses.view = row.at("view").get<double>();
    r.losses.link_pred = row.at("link_pred").get<double>();
    r.val_metric = row.at("val").get<double>();
    ckpt.history.push_back(r);
  }

  for (std::size_t i = 0; i < file.params.size(); ++i) {
    const std::string& name = file.params.name(i);
    if (name.rfind("adam.", 0) == 0) continue;
    ckpt.params.store.add(name, file.params.tensor(i));
    if (file.params.contains("adam.m." + name)) {
      ckpt.adam_m.push_back(file.params.get("adam.m." + name).data());
      ckpt.adam_v.push_back(file.params.get("adam.v." + name).data());
    }
  }
  return ckpt;
}

// ---------------------------------------------------------------- helpers

namespace {

struct RunWriter {
  std::string dir;
  std::ofstream metrics;
  bool enabled = false;
  bool pretrain_phase = true;

  RunWriter(const std::string& run_dir, const TrainConfig& cfg, bool pretrain_mode)
      : dir(run_dir), pretrain_phase(pretrain_mode) {
    if (dir.empty()) return;
    enabled = true;
    std::filesystem::create_directories(dir + "/checkpoints");
    std::ofstream cfg_out(dir + "/config.json");
    cfg_out << cfg.to_json() << "\n";
    metrics.open(dir + "/metrics.csv");
    metrics << (pretrain_phase ? "epoch,recon,view,total,val_recon\n"
                               : "epoch,link_pred,total,val_auc\n");
  }

  void row(const MetricRow& r) {
    if (!enabled) return;
    if (pretrain_phase) {
      metrics << r.epoch << "," << format_double(r.losses.recon) << ","
              << format_double(r.losses.view) << "," << format_double(r.losses.total)
              << "," << format_double(r.val_metric) << "\n";
    } else {
      metrics << r.epoch << "," << format_double(r.losses.link_pred) << ","
              << format_double(r.losses.total) << "," << format_double(r.val_metric)
              << "\n";
    }
    metrics.flush();
  }

  void checkpoint(const Checkpoint& ckpt, const std::string& name) {
    if (!enabled) return;
    save_checkpoint(dir + "/checkpoints/" + name + ".ckpt", ckpt);
  }
};

std::vector<unsigned char> frozen_mask(const ModelParams& params,
                                       const TrainConfig& cfg) {
  std::vector<unsigned char> frozen(params.store.size(), 0);
  auto freeze = [&](const std::string& name) {
    frozen[params.store.index_of(name)] = 1;
  };
  if (!cfg.use_tc) {
    freeze("tc_proj_w");
    freeze("tc_proj_b");
  }
  if (!cfg.use_sd) {
    freeze("sd_proj_w");
    freeze("sd_proj_b");
  }
  return frozen;
}

void apply_encoding_toggles(ModelParams& params, const TrainConfig& cfg) {
  // Toggles zero the scalar projection instead of removing parameters, so
  // checkpoints stay shape-compatible across ablation cells.
  auto zero = [&](const std::string& name) {
    auto& d = params.store.get(name).mut();
    std::fill(d.begin(), d.end(), 0.0);
  };
  if (!cfg.use_tc) {
    zero("tc_proj_w");
    zero("tc_proj_b");
  }
  if (!cfg.use_sd) {
    zero("sd_proj_w");
    zero("sd_proj_b");
  }
}

std::vector<int> sample_nodes(int num_nodes, int count, std::mt19937_64& rng) {
  std::vector<int> all(static_cast<std::size_t>(num_nodes));
  std::iota(all.begin(), all.end(), 0);
  const int take = std::min(count, num_nodes);
  for (int i = 0; i < take; ++i) {
    std::uniform_int_distribution<int> pick(i, num_nodes - 1);
    std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(pick(rng))]);
  }
  std::vector<int> out(all.begin(), all.begin() + take);
  std::sort(out.begin(), out.end());
  return out;
}

// Context views for a target set: deterministic top-K and the proportional
// sample. Falls back to the top-K set when no candidate has positive score.
std::pair<BatchSpec, BatchSpec> context_views(const TemporalUnionGraph& g,
                                              const std::vector<int>& targets,
                                              const TrainConfig& cfg,
                                              std::uint64_t seed) {
  const std::vector<double> scores =
      joint_ppr(g, targets, cfg.ppr_alpha, cfg.ppr_epsilon);
  const int k = static_cast<int>(targets.size());
  BatchSpec top = select_context_topk(scores, targets, k);
  BatchSpec alt = top.contexts.empty()
                      ? top
                      : sample_context_random(scores, targets, k, seed);
  return {top, alt};
}

struct StepGrads {
  std::vector<const std::vector<double>*> grads;
};

StepGrads collect_grads(Tape& tape, const BoundModel& bound) {
  StepGrads out;
  out.grads.reserve(bound.bound.size());
  for (const auto& t : bound.bound) out.grads.push_back(&tape.grad(t.node));
  return out;
}

// Early-stop metric: predict the last training step from its prefix and
// score the held-out validation portion of that step's split. Keeps the
// true evaluation snapshot unread during training.
double validation_auc(const ModelParams& params, const SnapshotSequence& train_view,
                      const TrainConfig& cfg) {
  EvalConfig ec;
  ec.chunk_size = cfg.chunk_size;
  ec.window = 1;
  ec.seed = derive_seed(cfg.seed, 0x7a11);
  const EvalReport report = evaluate(params, train_view, train_view.num_steps(), ec);
  return report.per_step.front().auc_val;
}

}  // namespace

// ---------------------------------------------------------------- pretrain

Checkpoint pretrain(const SnapshotSequence& s, const TrainConfig& cfg,
                    const std::string& run_dir) {
  const int train_steps = cfg.resolve_train_steps(s.num_steps());
  ModelConfig mc = cfg.model;
  mc.steps = train_steps;
  mc.validate();

  const SnapshotSequence train_view = prefix_view(s, train_steps);
  const TemporalUnionGraph g = build_union(train_view);

  ModelParams params = ModelParams::init(mc, s.num_nodes, derive_seed(cfg.seed, 0));
  apply_encoding_toggles(params, cfg);
  const auto frozen = frozen_mask(params, cfg);
  AdamState adam({cfg.lr, cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay}, params.store);

  TrainConfig cfg_resolved = cfg;
  cfg_resolved.model = mc;
  cfg_resolved.train_steps = train_steps;
  const std::uint64_t chash = cfg_resolved.hash();

  RunWriter writer(run_dir, cfg_resolved, /*pretrain_mode=*/true);
  std::mt19937_64 batch_rng(derive_seed(cfg.seed, 1));
  std::mt19937_64 dropout_rng(derive_seed(cfg.seed, 2));

  const int steps_per_epoch =
      cfg.steps_per_epoch > 0
          ? cfg.steps_per_epoch
          : std::max(1, s.num_nodes / std::max(1, cfg.batch_targets));

  // fixed validation batch, evaluated without dropout
  std::mt19937_64 val_rng(derive_seed(cfg.seed, 3));
  const std::vector<int> val_targets =
      sample_nodes(s.num_nodes, cfg.batch_targets, val_rng);
  auto [val_batch, val_alt] =
      context_views(g, val_targets, cfg, derive_seed(cfg.seed, 4));

  auto snapshot = [&](int epoch) {
    Checkpoint ckpt;
    ckpt.params = params;
    ckpt.adam_cfg = adam.config();
    ckpt.adam_m = adam.first_moments();
    ckpt.adam_v = adam.second_moments();
    ckpt.adam_step = adam.step_count();
    ckpt.epoch = epoch;
    ckpt.config_hash = chash;
    return ckpt;
  };

  Checkpoint best = snapshot(0);
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::uint64_t step_counter = 0;

  for (int epoch = 1; epoch <= cfg.epochs_pretrain; ++epoch) {
    LossReport epoch_losses;
    for (int step = 0; step < steps_per_epoch; ++step) {
      ++step_counter;
      const std::vector<int> targets =
          sample_nodes(s.num_nodes, cfg.batch_targets, batch_rng);
      auto [top, alt] =
          context_views(g, targets, cfg, derive_seed(cfg.seed, 100 + step_counter));

      Tape tape;
      const BoundModel bound = bind(tape, params);
      ForwardOptions opts;
      opts.train = true;
      opts.rng = &dropout_rng;
      LossResult result =
          pretrain_loss(tape, bound, train_view, g, top, alt, cfg.gamma,
                        cfg.neg_ratio, derive_seed(cfg.seed, 200 + step_counter), opts);
      epoch_losses.total += result.report.total;
      epoch_losses.recon += result.report.recon;
      epoch_losses.view += result.report.view;
      if (result.loss.node < 0) continue;  // no differentiable term this step
      tape.backward(result.loss);
      const StepGrads grads = collect_grads(tape, bound);
      adam.step(params.store, grads.grads, &frozen);
    }
    epoch_losses.total /= steps_per_epoch;
    epoch_losses.recon /= steps_per_epoch;
    epoch_losses.view /= steps_per_epoch;

    Tape val_tape;
    const BoundModel val_bound = bind(val_tape, params);
    const LossResult val = recon_loss(val_tape, val_bound, train_view, g, val_batch,
                                      cfg.neg_ratio, derive_seed(cfg.seed, 5), {});

    MetricRow row{epoch, epoch_losses, val.report.recon};
    writer.row(row);
    Checkpoint current = snapshot(epoch);
    current.history.push_back(row);
    writer.checkpoint(current, "epoch_" + std::to_string(epoch));

    best.history.push_back(row);
    if (val.report.recon < best_val) {
      best_val = val.report.recon;
      auto history = std::move(best.history);
      best = snapshot(epoch);
      best.history = std::move(history);
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }

  writer.checkpoint(best, "best");
  writer.checkpoint(best, "final");
  return best;
}

// ---------------------------------------------------------------- finetune

Checkpoint finetune(const SnapshotSequence& s, const TrainConfig& cfg,
                    const Checkpoint* start, const std::string& run_dir) {
  const int train_steps = cfg.resolve_train_steps(s.num_steps());
  ModelConfig mc = cfg.model;
  mc.steps = train_steps;
  mc.validate();

  const SnapshotSequence train_view = prefix_view(s, train_steps);
  const TemporalUnionGraph g = build_union(train_view);

  ModelParams params;
  if (start) {
    if (start->params.config.steps != train_steps ||
        start->params.config.hidden != mc.hidden ||
        start->params.config.layers != mc.layers ||
        start->params.config.d_max != mc.d_max ||
        start->params.num_nodes != s.num_nodes) {
      throw std::invalid_argument("finetune: start checkpoint is incompatible");
    }
    params = start->params;
    params.config = mc;  // tower/hop ablations may differ from pre-training
  } else {
    params = ModelParams::init(mc, s.num_nodes, derive_seed(cfg.seed, 10));
  }
  apply_encoding_toggles(params, cfg);
  const auto frozen = frozen_mask(params, cfg);
  AdamState adam({cfg.lr, cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay}, params.store);

  TrainConfig cfg_resolved = cfg;
  cfg_resolved.model = mc;
  cfg_resolved.train_steps = train_steps;
  const std::uint64_t chash = cfg_resolved.hash();

  RunWriter writer(run_dir, cfg_resolved, /*pretrain_mode=*/false);
  std::mt19937_64 dropout_rng(derive_seed(cfg.seed, 12));

  const int steps_per_epoch =
      cfg.steps_per_epoch > 0
          ? cfg.steps_per_epoch
          : std::max(1, s.num_nodes / std::max(1, cfg.batch_targets));

  auto snapshot = [&](int epoch) {
    Checkpoint ckpt;
    ckpt.params = params;
    ckpt.adam_cfg = adam.config();
    ckpt.adam_m = adam.first_moments();
    ckpt.adam_v = adam.second_moments();
    ckpt.adam_step = adam.step_count();
    ckpt.epoch = epoch;
    ckpt.config_hash = chash;
    return ckpt;
  };

  Checkpoint best = snapshot(0);
  double best_val = -std::numeric_limits<double>::infinity();
  int since_best = 0;
  std::uint64_t step_counter = 0;

  for (int epoch = 1; epoch <= cfg.epochs_finetune; ++epoch) {
    LossReport epoch_losses;
    for (int step = 0; step < steps_per_epoch; ++step) {
      ++step_counter;
      const std::uint64_t step_seed = derive_seed(cfg.seed, 300 + step_counter);

      auto batch_fn = [&](int prefix_t) {
        FinetuneBatch fb;
        const auto& step_edges = train_view.edges(prefix_t + 1);
        std::vector<std::pair<int, int>> pairs;
        pairs.reserve(step_edges.size());
        for (const auto& e : step_edges) pairs.emplace_back(e.u, e.v);
        const int num_pos =
            std::min<int>(cfg.finetune_pos, static_cast<int>(pairs.size()));
        if (num_pos == 0) return fb;
        fb.links = sample_targets_for_links(
            pairs, train_view.num_nodes, num_pos, cfg.neg_ratio,
            derive_seed(step_seed, static_cast<std::uint64_t>(prefix_t)));
        auto [top, alt] = context_views(g, fb.links.targets, cfg,
                                        derive_seed(step_seed, 7700));
        fb.batch = top;
        return fb;
      };

      Tape tape;
      const BoundModel bound = bind(tape, params);
      ForwardOptions opts;
      opts.train = true;
      opts.rng = &dropout_rng;
      LossResult result = finetune_loss(tape, bound, train_view, g, batch_fn, opts);
      epoch_losses.total += result.report.total;
      epoch_losses.link_pred += result.report.link_pred;
      if (result.loss.node < 0) continue;
      tape.backward(result.loss);
      const StepGrads grads = collect_grads(tape, bound);
      adam.step(params.store, grads.grads, &frozen);
    }
    epoch_losses.total /= steps_per_epoch;
    epoch_losses.link_pred /= steps_per_epoch;

    const double val_auc = validation_auc(params, train_view, cfg);
    MetricRow row{epoch, epoch_losses, val_auc};
    writer.row(row);
    Checkpoint current = snapshot(epoch);
    current.history.push_back(row);
    writer.checkpoint(current, "epoch_" + std::to_string(epoch));

    best.history.push_back(row);
    if (val_auc > best_val) {
      best_val = val_auc;
      auto history = std::move(best.history);
      best = snapshot(epoch);
      best.history = std::move(history);
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }

  writer.checkpoint(best, "best");
  writer.checkpoint(best, "final");
  return best;
}

}  // namespace dgt
