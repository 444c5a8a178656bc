// Command-line entry points wiring the pipeline together: synthetic data,
// ingestion, pre-training, fine-tuning, evaluation, and ablation sweeps.
// Every command writes a manifest with its fully resolved configuration and
// can be re-run from that manifest alone.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dgt/eval.hpp"
#include "dgt/graph.hpp"
#include "dgt/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct SynthArgs {
  int nodes = 60;
  int blocks = 3;
  int steps = 6;
  double p_in = 0.3;
  double p_out = 0.02;
  double persist = 0.8;
  std::uint64_t seed = 1;
  std::string out;
};

struct IngestArgs {
  std::string in;
  std::string out;
  int steps = 10;
  std::string window_mode = "equal";
  long long window_len = 0;
};

struct EvalArgs {
  std::string data;
  std::string ckpt;
  std::string out;
  int t_star = 0;  // 0: last step
  int window = 1;
  int chunk_size = 16;
  std::uint64_t seed = 1;
  bool new_links = false;
};

struct AblateArgs {
  std::string data;
  std::string out;
  std::vector<std::string> towers;
  std::vector<int> hops;  // 0 = full attention
  std::vector<std::string> encodings;
  std::vector<int> layers;
  std::vector<double> noise;
};

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string run_root() {
  const char* env = std::getenv("DGT_RUN_ROOT");
  return env ? env : "runs";
}

std::string resolve_out(const std::string& out, const std::string& fallback_name) {
  if (!out.empty()) return out;
  return run_root() + "/" + fallback_name;
}

void write_manifest(const std::string& dir, const std::string& command,
                    const json& inputs, const json& config) {
  json m;
  m["command"] = command;
  m["inputs"] = inputs;
  m["output"] = dir;
  m["config"] = config;
  fs::create_directories(dir);
  write_file(dir + "/manifest.json", m.dump(2) + "\n");
}

// Pre-scan for --manifest so stored values become the parse defaults.
std::optional<json> load_manifest_arg(int argc, char** argv, const std::string& command) {
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--manifest") {
      const json m = json::parse(read_file(argv[i + 1]));
      if (m.at("command").get<std::string>() != command) {
        throw std::runtime_error("manifest was recorded for command '" +
                                 m.at("command").get<std::string>() + "'");
      }
      return m;
    }
  }
  return std::nullopt;
}

std::optional<std::string> find_config_arg(int argc, char** argv) {
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") return std::string(argv[i + 1]);
  }
  return std::nullopt;
}

void add_train_options(CLI::App* app, dgt::TrainConfig& cfg) {
  app->add_option("--hidden", cfg.model.hidden, "hidden size");
  app->add_option("--layers", cfg.model.layers, "encoder layers");
  app->add_option("--heads", cfg.model.heads, "attention heads");
  app->add_option("--d-max", cfg.model.d_max, "shortest-path distance cap");
  app->add_option("--dropout-hidden", cfg.model.dropout_hidden, "feed-forward dropout");
  app->add_option("--dropout-attn", cfg.model.dropout_attn, "attention dropout");
  app->add_option_function<std::string>(
      "--tower",
      [&cfg](const std::string& v) {
        if (v != "two" && v != "single") throw CLI::ValidationError("--tower", "use two|single");
        cfg.model.tower = v == "two" ? dgt::TowerMode::TwoTower : dgt::TowerMode::SingleTower;
      },
      "tower mode: two|single");
  app->add_option("--attn-hops", cfg.model.attn_hops, "k-hop attention mask (0 = full)");
  app->add_option("--lr", cfg.lr, "learning rate");
  app->add_option("--weight-decay", cfg.weight_decay, "decoupled weight decay");
  app->add_option("--epochs-pretrain", cfg.epochs_pretrain, "pre-training epochs");
  app->add_option("--epochs-finetune", cfg.epochs_finetune, "fine-tuning epochs");
  app->add_option("--steps-per-epoch", cfg.steps_per_epoch, "steps per epoch (0 = auto)");
  app->add_option("--batch-targets", cfg.batch_targets, "target nodes per batch");
  app->add_option("--finetune-pos", cfg.finetune_pos, "positive links per step");
  app->add_option("--neg-ratio", cfg.neg_ratio, "negative sampling ratio");
  app->add_option("--gamma", cfg.gamma, "multi-view loss weight");
  app->add_option("--ppr-alpha", cfg.ppr_alpha, "PPR teleport probability");
  app->add_option("--ppr-epsilon", cfg.ppr_epsilon, "PPR push tolerance");
  app->add_option("--seed", cfg.seed, "run seed");
  app->add_option("--patience", cfg.patience, "early-stop patience (0 = off)");
  app->add_option("--eval-window", cfg.eval_window, "prediction steps in evaluation");
  app->add_option("--chunk-size", cfg.chunk_size, "attention chunk rows at inference");
  app->add_flag_callback("--no-tc", [&cfg] { cfg.use_tc = false; },
                         "disable the temporal connection encoding");
  app->add_flag_callback("--no-sd", [&cfg] { cfg.use_sd = false; },
                         "disable the spatial distance encoding");
  app->add_option("--train-steps", cfg.train_steps, "training steps (0 = all but last)");
}

int cmd_synth(const SynthArgs& args) {
  const dgt::SnapshotSequence s = dgt::synth_dynamic_sbm(
      args.nodes, args.blocks, args.steps, args.p_in, args.p_out, args.persist, args.seed);
  if (const auto parent = fs::path(args.out).parent_path(); !parent.empty()) {
    fs::create_directories(parent);
  }
  dgt::save_snapshots(args.out, s);
  json config{{"nodes", args.nodes}, {"blocks", args.blocks}, {"steps", args.steps},
              {"p_in", args.p_in},   {"p_out", args.p_out},   {"persist", args.persist},
              {"seed", args.seed},   {"out", args.out}};
  json m{{"command", "synth"},
         {"inputs", json::object()},
         {"output", args.out},
         {"config", config}};
  write_file(args.out + ".manifest.json", m.dump(2) + "\n");
  std::cout << "wrote " << args.out << " (" << args.nodes << " nodes, " << args.steps
            << " steps)\n";
  return 0;
}

int cmd_ingest(const IngestArgs& args) {
  const dgt::WindowMode mode = args.window_mode == "fixed" ? dgt::WindowMode::FixedLength
                                                           : dgt::WindowMode::EqualCount;
  const dgt::SnapshotSequence s =
      dgt::ingest_interactions(args.in, args.steps, mode, args.window_len);
  if (const auto parent = fs::path(args.out).parent_path(); !parent.empty()) {
    fs::create_directories(parent);
  }
  dgt::save_snapshots(args.out, s);
  json config{{"in", args.in},
              {"out", args.out},
              {"steps", args.steps},
              {"window_mode", args.window_mode},
              {"window_len", args.window_len}};
  json m{{"command", "ingest"},
         {"inputs", {{"raw", args.in}}},
         {"output", args.out},
         {"config", config}};
  write_file(args.out + ".manifest.json", m.dump(2) + "\n");
  std::cout << "wrote " << args.out << " (" << s.num_nodes << " nodes, " << s.num_steps()
            << " steps)\n";
  return 0;
}

int cmd_pretrain(const std::string& data, const std::string& out,
                 const dgt::TrainConfig& cfg) {
  const dgt::SnapshotSequence s = dgt::load_snapshots(data);
  const std::string dir = resolve_out(out, "pretrain");
  write_manifest(dir, "pretrain", {{"data", data}}, json::parse(cfg.to_json()));
  const dgt::Checkpoint ckpt = dgt::pretrain(s, cfg, dir);
  std::cout << "pretrained to epoch " << ckpt.epoch << "; best checkpoint in " << dir
            << "/checkpoints\n";
  return 0;
}

int cmd_finetune(const std::string& data, const std::string& out,
                 const std::string& start, const dgt::TrainConfig& cfg) {
  const dgt::SnapshotSequence s = dgt::load_snapshots(data);
  const std::string dir = resolve_out(out, "finetune");
  json inputs{{"data", data}};
  if (!start.empty()) inputs["start"] = start;
  write_manifest(dir, "finetune", inputs, json::parse(cfg.to_json()));
  std::optional<dgt::Checkpoint> warm;
  if (!start.empty()) warm = dgt::load_checkpoint(start);
  const dgt::Checkpoint ckpt = dgt::finetune(s, cfg, warm ? &*warm : nullptr, dir);
  std::cout << "finetuned to epoch " << ckpt.epoch << "; best checkpoint in " << dir
            << "/checkpoints\n";
  return 0;
}

int cmd_eval(const EvalArgs& args) {
  const dgt::SnapshotSequence s = dgt::load_snapshots(args.data);
  const dgt::Checkpoint ckpt = dgt::load_checkpoint(args.ckpt);
  const std::string dir = resolve_out(args.out, "eval");
  const int t_star = args.t_star > 0 ? args.t_star : s.num_steps();
  json config{{"data", args.data},     {"ckpt", args.ckpt},
              {"t_star", t_star},      {"window", args.window},
              {"chunk_size", args.chunk_size}, {"seed", args.seed},
              {"new_links", args.new_links}};
  write_manifest(dir, "eval", {{"data", args.data}, {"ckpt", args.ckpt}}, config);

  dgt::EvalConfig ec;
  ec.chunk_size = args.chunk_size;
  ec.window = args.window;
  ec.seed = args.seed;
  ec.split_cache_dir = dir;
  ec.new_links_only = args.new_links;
  const dgt::EvalReport report = dgt::evaluate(ckpt.params, s, t_star, ec);
  write_file(dir + "/report.json", report.to_json() + "\n");
  std::cout << "micro_auc=" << report.micro_auc << " macro_auc=" << report.macro_auc
            << " (report in " << dir << "/report.json)\n";
  return 0;
}

struct AblationCell {
  std::string tower;
  int hops = 0;
  std::string encodings;
  int layers = 2;
  double noise = 0.0;

  std::string name() const {
    std::ostringstream ss;
    ss << "tower-" << tower << "_hops-" << (hops == 0 ? "none" : std::to_string(hops))
       << "_enc-" << encodings << "_layers-" << layers << "_noise-" << noise;
    return ss.str();
  }
};

int cmd_ablate(const AblateArgs& args, dgt::TrainConfig base) {
  const dgt::SnapshotSequence s = dgt::load_snapshots(args.data);
  const std::string dir = resolve_out(args.out, "ablate");

  const std::vector<std::string> towers =
      args.towers.empty()
          ? std::vector<std::string>{base.model.tower == dgt::TowerMode::TwoTower ? "two"
                                                                                  : "single"}
          : args.towers;
  const std::vector<int> hops =
      args.hops.empty() ? std::vector<int>{base.model.attn_hops} : args.hops;
  const std::vector<std::string> encodings =
      args.encodings.empty() ? std::vector<std::string>{"both"} : args.encodings;
  const std::vector<int> layers =
      args.layers.empty() ? std::vector<int>{base.model.layers} : args.layers;
  const std::vector<double> noise =
      args.noise.empty() ? std::vector<double>{0.0} : args.noise;

  json config = json::parse(base.to_json());
  config["axes"] = {{"towers", towers},
                    {"hops", hops},
                    {"encodings", encodings},
                    {"layers", layers},
                    {"noise", noise}};
  write_manifest(dir, "ablate", {{"data", args.data}}, config);

  std::ofstream summary(dir + "/summary.csv");
  summary << "cell,tower,hops,encodings,layers,noise,micro_auc,macro_auc\n";

  for (const auto& tower : towers) {
    for (int hop : hops) {
      for (const auto& enc : encodings) {
        for (int layer_count : layers) {
          for (double nz : noise) {
            AblationCell cell{tower, hop, enc, layer_count, nz};
            const std::string cell_dir = dir + "/cells/" + cell.name();
            fs::create_directories(cell_dir);

            dgt::TrainConfig cfg = base;
            cfg.model.tower =
                tower == "single" ? dgt::TowerMode::SingleTower : dgt::TowerMode::TwoTower;
            cfg.model.attn_hops = hop;
            cfg.model.layers = layer_count;
            cfg.use_tc = enc == "both" || enc == "tc";
            cfg.use_sd = enc == "both" || enc == "sd";
            // cells draw independent seed streams keyed by their own name,
            // so execution order cannot matter
            cfg.seed = dgt::derive_seed(base.seed, dgt::fnv1a_hash(cell.name()));

            dgt::SnapshotSequence cell_data = s;
            if (nz > 0.0) {
              cell_data = dgt::perturb_edges(s, nz, dgt::derive_seed(cfg.seed, 0xA0));
              // prediction labels stay clean: only conditioning steps corrupt
              cell_data.steps.back() = s.steps.back();
            }

            const dgt::Checkpoint pre =
                dgt::pretrain(cell_data, cfg, cell_dir + "/pretrain");
            const dgt::Checkpoint fin =
                dgt::finetune(cell_data, cfg, &pre, cell_dir + "/finetune");

            dgt::EvalConfig ec;
            ec.chunk_size = cfg.chunk_size;
            ec.window = cfg.eval_window;
            ec.seed = dgt::derive_seed(cfg.seed, 0xE7);
            ec.split_cache_dir = cell_dir;
            const dgt::EvalReport report =
                dgt::evaluate(fin.params, cell_data, cell_data.num_steps(), ec);
            write_file(cell_dir + "/report.json", report.to_json() + "\n");
            summary << cell.name() << "," << tower << ","
                    << (hop == 0 ? "none" : std::to_string(hop)) << "," << enc << ","
                    << layer_count << "," << nz << "," << report.micro_auc << ","
                    << report.macro_auc << "\n";
            summary.flush();
            std::cout << cell.name() << ": micro_auc=" << report.micro_auc << "\n";
          }
        }
      }
    }
  }
  std::cout << "summary in " << dir << "/summary.csv\n";
  return 0;
}

dgt::TrainConfig initial_train_config(const std::optional<json>& manifest,
                                      const std::optional<std::string>& config_path) {
  if (manifest) {
    json cfg = manifest->at("config");
    cfg.erase("axes");  // ablate manifests carry the sweep axes alongside
    return dgt::TrainConfig::from_json(cfg.dump());
  }
  if (config_path) return dgt::TrainConfig::from_json(read_file(*config_path));
  return {};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dynamic graph transformer toolkit"};
  app.require_subcommand(1);
  // repeated flags override earlier ones, so manifest- or script-provided
  // argument lists can be extended at the call site
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::string manifest_path, config_path;

  SynthArgs synth;
  CLI::App* synth_app = app.add_subcommand("synth", "generate a dynamic SBM snapshot file");
  synth_app->add_option("--out", synth.out, "output snapshot file");
  synth_app->add_option("--nodes", synth.nodes, "node count");
  synth_app->add_option("--blocks", synth.blocks, "block count");
  synth_app->add_option("--steps", synth.steps, "time steps");
  synth_app->add_option("--p-in", synth.p_in, "within-block edge probability");
  synth_app->add_option("--p-out", synth.p_out, "cross-block edge probability");
  synth_app->add_option("--persist", synth.persist, "per-pair persistence probability");
  synth_app->add_option("--seed", synth.seed, "generator seed");
  synth_app->add_option("--manifest", manifest_path, "re-run from a stored manifest");

  IngestArgs ingest;
  CLI::App* ingest_app = app.add_subcommand("ingest", "window a raw interaction log");
  ingest_app->add_option("--in", ingest.in, "raw log of 'epoch u v' lines");
  ingest_app->add_option("--out", ingest.out, "output snapshot file");
  ingest_app->add_option("--steps", ingest.steps, "number of snapshots");
  ingest_app->add_option("--window-mode", ingest.window_mode, "equal|fixed");
  ingest_app->add_option("--window-len", ingest.window_len, "fixed window length");
  ingest_app->add_option("--manifest", manifest_path, "re-run from a stored manifest");

  dgt::TrainConfig pre_cfg, fin_cfg, ablate_cfg;
  std::string pre_data, pre_out, fin_data, fin_out, fin_start;
  CLI::App* pre_app = app.add_subcommand("pretrain", "self-supervised pre-training");
  pre_app->add_option("--data", pre_data, "snapshot file");
  pre_app->add_option("--out", pre_out, "run directory");
  pre_app->add_option("--config", config_path, "flat JSON config file");
  pre_app->add_option("--manifest", manifest_path, "re-run from a stored manifest");

  CLI::App* fin_app = app.add_subcommand("finetune", "link-prediction fine-tuning");
  fin_app->add_option("--data", fin_data, "snapshot file");
  fin_app->add_option("--out", fin_out, "run directory");
  fin_app->add_option("--start", fin_start, "pre-trained checkpoint to start from");
  fin_app->add_option("--config", config_path, "flat JSON config file");
  fin_app->add_option("--manifest", manifest_path, "re-run from a stored manifest");

  EvalArgs eval_args;
  CLI::App* eval_app = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_app->add_option("--data", eval_args.data, "snapshot file");
  eval_app->add_option("--ckpt", eval_args.ckpt, "checkpoint file");
  eval_app->add_option("--out", eval_args.out, "run directory");
  eval_app->add_option("--t-star", eval_args.t_star, "prediction step (0 = last)");
  eval_app->add_option("--window", eval_args.window, "trailing prediction steps");
  eval_app->add_option("--chunk-size", eval_args.chunk_size, "attention chunk rows");
  eval_app->add_option("--seed", eval_args.seed, "split sampling seed");
  eval_app->add_flag("--new-links", eval_args.new_links, "restrict to unseen links");
  eval_app->add_option("--manifest", manifest_path, "re-run from a stored manifest");

  AblateArgs ablate;
  CLI::App* ablate_app = app.add_subcommand("ablate", "sweep model variants");
  ablate_app->add_option("--data", ablate.data, "snapshot file");
  ablate_app->add_option("--out", ablate.out, "run directory");
  ablate_app->add_option("--config", config_path, "flat JSON config file");
  ablate_app->add_option("--towers", ablate.towers, "tower modes to sweep")->delimiter(',');
  ablate_app->add_option("--hops", ablate.hops, "attention hop limits (0 = full)")
      ->delimiter(',');
  ablate_app->add_option("--encodings", ablate.encodings, "both|none|tc|sd")->delimiter(',');
  ablate_app->add_option("--layers-list", ablate.layers, "layer counts")->delimiter(',');
  ablate_app->add_option("--noise", ablate.noise, "perturbation fractions")->delimiter(',');
  ablate_app->add_option("--manifest", manifest_path, "re-run from a stored manifest");

  try {
    const std::string command = argc > 1 ? argv[1] : "";
    const std::optional<json> manifest = load_manifest_arg(argc, argv, command);
    const auto config_file = find_config_arg(argc, argv);

    if (command == "pretrain") {
      pre_cfg = initial_train_config(manifest, config_file);
      if (manifest) pre_data = manifest->at("inputs").at("data").get<std::string>();
    } else if (command == "finetune") {
      fin_cfg = initial_train_config(manifest, config_file);
      if (manifest) {
        fin_data = manifest->at("inputs").at("data").get<std::string>();
        if (manifest->at("inputs").contains("start")) {
          fin_start = manifest->at("inputs").at("start").get<std::string>();
        }
      }
    } else if (command == "ablate") {
      ablate_cfg = initial_train_config(manifest, config_file);
      if (manifest) {
        ablate.data = manifest->at("inputs").at("data").get<std::string>();
        const json axes = manifest->at("config").at("axes");
        ablate.towers = axes.at("towers").get<std::vector<std::string>>();
        ablate.hops = axes.at("hops").get<std::vector<int>>();
        ablate.encodings = axes.at("encodings").get<std::vector<std::string>>();
        ablate.layers = axes.at("layers").get<std::vector<int>>();
        ablate.noise = axes.at("noise").get<std::vector<double>>();
      }
    } else if (command == "synth" && manifest) {
      const json c = manifest->at("config");
      synth.nodes = c.at("nodes").get<int>();
      synth.blocks = c.at("blocks").get<int>();
      synth.steps = c.at("steps").get<int>();
      synth.p_in = c.at("p_in").get<double>();
      synth.p_out = c.at("p_out").get<double>();
      synth.persist = c.at("persist").get<double>();
      synth.seed = c.at("seed").get<std::uint64_t>();
      synth.out = c.at("out").get<std::string>();
    } else if (command == "ingest" && manifest) {
      const json c = manifest->at("config");
      ingest.in = c.at("in").get<std::string>();
      ingest.out = c.at("out").get<std::string>();
      ingest.steps = c.at("steps").get<int>();
      ingest.window_mode = c.at("window_mode").get<std::string>();
      ingest.window_len = c.at("window_len").get<long long>();
    } else if (command == "eval" && manifest) {
      const json c = manifest->at("config");
      eval_args.data = c.at("data").get<std::string>();
      eval_args.ckpt = c.at("ckpt").get<std::string>();
      eval_args.t_star = c.at("t_star").get<int>();
      eval_args.window = c.at("window").get<int>();
      eval_args.chunk_size = c.at("chunk_size").get<int>();
      eval_args.seed = c.at("seed").get<std::uint64_t>();
      eval_args.new_links = c.at("new_links").get<bool>();
    }

    add_train_options(pre_app, pre_cfg);
    add_train_options(fin_app, fin_cfg);
    add_train_options(ablate_app, ablate_cfg);

    app.parse(argc, argv);

    if (synth_app->parsed()) {
      if (synth.out.empty()) throw std::runtime_error("synth: --out is required");
      return cmd_synth(synth);
    }
    if (ingest_app->parsed()) {
      if (ingest.in.empty() || ingest.out.empty()) {
        throw std::runtime_error("ingest: --in and --out are required");
      }
      return cmd_ingest(ingest);
    }
    if (pre_app->parsed()) {
      if (pre_data.empty()) throw std::runtime_error("pretrain: --data is required");
      return cmd_pretrain(pre_data, pre_out, pre_cfg);
    }
    if (fin_app->parsed()) {
      if (fin_data.empty()) throw std::runtime_error("finetune: --data is required");
      return cmd_finetune(fin_data, fin_out, fin_start, fin_cfg);
    }
    if (eval_app->parsed()) {
      if (eval_args.data.empty() || eval_args.ckpt.empty()) {
        throw std::runtime_error("eval: --data and --ckpt are required");
      }
      return cmd_eval(eval_args);
    }
    if (ablate_app->parsed()) {
      if (ablate.data.empty()) throw std::runtime_error("ablate: --data is required");
      return cmd_ablate(ablate, ablate_cfg);
    }
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
