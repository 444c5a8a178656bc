#include "dgt/model.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>
#include <unordered_map>

namespace dgt {

void ModelConfig::validate() const {
  if (hidden < 1 || layers < 1 || heads < 1 || steps < 1 || d_max < 1) {
    throw std::invalid_argument("ModelConfig: sizes must be positive");
  }
  if (hidden % heads != 0) {
    throw std::invalid_argument("ModelConfig: hidden must be divisible by heads");
  }
  if (dropout_hidden < 0.0 || dropout_hidden >= 1.0 || dropout_attn < 0.0 ||
      dropout_attn >= 1.0) {
    throw std::invalid_argument("ModelConfig: dropout probabilities must be in [0,1)");
  }
  if (attn_hops < 0 || attn_hops > d_max) {
    throw std::invalid_argument("ModelConfig: attn_hops must be in [0, d_max]");
  }
}

PairEncodingIndices encode_pair_indices(const TemporalUnionGraph& g,
                                        const std::vector<int>& row_nodes,
                                        const std::vector<int>& col_nodes,
                                        int model_steps,
                                        const std::vector<unsigned char>& step_active,
                                        const EdgeFilter& spd_filter, int d_max) {
  if (model_steps < 1) {
    throw std::invalid_argument("encode_pair_indices: bad step count");
  }
  if (!step_active.empty() && static_cast<int>(step_active.size()) != model_steps) {
    throw std::invalid_argument("encode_pair_indices: step_active length mismatch");
  }
  // the union may cover fewer steps than the model (prefix conditioning);
  // only steps actually consulted must exist in it
  for (int t = 1; t <= model_steps; ++t) {
    const bool active = step_active.empty() || step_active[static_cast<std::size_t>(t - 1)];
    if (active && t > g.num_steps) {
      throw std::invalid_argument("encode_pair_indices: active step beyond union steps");
    }
  }
  PairEncodingIndices idx;
  idx.rows = static_cast<int>(row_nodes.size());
  idx.cols = static_cast<int>(col_nodes.size());
  idx.steps = model_steps;
  idx.d_max = d_max;
  idx.tc.assign(static_cast<std::size_t>(idx.rows) * idx.cols * model_steps, kMaskedStep);
  idx.sd.assign(static_cast<std::size_t>(idx.rows) * idx.cols, d_max);

  std::unordered_map<int, std::vector<int>> dist_cache;
  for (int r = 0; r < idx.rows; ++r) {
    const int u = row_nodes[static_cast<std::size_t>(r)];
    auto it = dist_cache.find(u);
    if (it == dist_cache.end()) {
      it = dist_cache.emplace(u, bfs_distances(g, u, d_max, spd_filter)).first;
    }
    const auto& dist = it->second;
    for (int c = 0; c < idx.cols; ++c) {
      const int v = col_nodes[static_cast<std::size_t>(c)];
      const std::size_t p = static_cast<std::size_t>(r) * idx.cols + c;
      idx.sd[p] = dist[static_cast<std::size_t>(v)];
      const int e = g.find_edge(u, v);
      for (int t = 1; t <= model_steps; ++t) {
        if (!step_active.empty() && !step_active[static_cast<std::size_t>(t - 1)]) {
          continue;  // stays kMaskedStep
        }
        const bool present = e >= 0 && g.edge_at_index(e, t);
        idx.tc[p * model_steps + (t - 1)] = present ? 2 * t : 2 * t - 1;
      }
    }
  }
  return idx;
}

EncodedBatch encode_batch(const TemporalUnionGraph& g, const BatchSpec& batch,
                          const ModelConfig& cfg,
                          const std::vector<unsigned char>& step_active,
                          const EdgeFilter& spd_filter) {
  EncodedBatch out;
  out.batch = batch;
  if (cfg.tower == TowerMode::TwoTower) {
    out.indices = encode_pair_indices(g, batch.targets, batch.contexts, cfg.steps,
                                      step_active, spd_filter, cfg.d_max);
  } else {
    std::vector<int> joint = batch.targets;
    joint.insert(joint.end(), batch.contexts.begin(), batch.contexts.end());
    out.indices =
        encode_pair_indices(g, joint, joint, cfg.steps, step_active, spd_filter, cfg.d_max);
  }
  return out;
}

// ------------------------------------------------------------- parameters

namespace {
std::string layer_key(int layer, const char* field) {
  return "layer" + std::to_string(layer) + "." + field;
}
}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, int num_nodes,
                              std::uint64_t seed) {
  cfg.validate();
  if (num_nodes < 1) throw std::invalid_argument("ModelParams: num_nodes must be >= 1");
  std::mt19937_64 rng(seed);
  const std::size_t d = static_cast<std::size_t>(cfg.hidden);
  const double init_std = 0.02;

  ModelParams p;
  p.config = cfg;
  p.num_nodes = num_nodes;
  auto& s = p.store;
  s.add("node_embed", Tensor::randn({static_cast<std::size_t>(num_nodes), d}, rng, init_std));
  s.add("tc_table", Tensor::randn({static_cast<std::size_t>(2 * cfg.steps), d}, rng, init_std));
  s.add("sd_table", Tensor::randn({static_cast<std::size_t>(cfg.d_max + 1), d}, rng, init_std));
  s.add("tc_time_weights", Tensor(Shape{static_cast<std::size_t>(cfg.steps)}, 0.0));
  s.add("tc_proj_w", Tensor::randn({d, 1}, rng, init_std));
  s.add("tc_proj_b", Tensor(Shape{1}, 0.0));
  s.add("sd_proj_w", Tensor::randn({d, 1}, rng, init_std));
  s.add("sd_proj_b", Tensor(Shape{1}, 0.0));
  for (int l = 0; l < cfg.layers; ++l) {
    s.add(layer_key(l, "ln1_gain"), Tensor(Shape{d}, 1.0));
    s.add(layer_key(l, "ln1_bias"), Tensor(Shape{d}, 0.0));
    s.add(layer_key(l, "w_q"), Tensor::randn({d, d}, rng, init_std));
    s.add(layer_key(l, "w_k"), Tensor::randn({d, d}, rng, init_std));
    s.add(layer_key(l, "w_v"), Tensor::randn({d, d}, rng, init_std));
    s.add(layer_key(l, "ln2_gain"), Tensor(Shape{d}, 1.0));
    s.add(layer_key(l, "ln2_bias"), Tensor(Shape{d}, 0.0));
    s.add(layer_key(l, "ffn_w1"), Tensor::randn({d, 4 * d}, rng, init_std));
    s.add(layer_key(l, "ffn_b1"), Tensor(Shape{4 * d}, 0.0));
    s.add(layer_key(l, "ffn_w2"), Tensor::randn({4 * d, d}, rng, init_std));
    s.add(layer_key(l, "ffn_b2"), Tensor(Shape{d}, 0.0));
  }
  s.add("decoder_w", Tensor::randn({d, d}, rng, init_std));
  s.add("decoder_b", Tensor(Shape{d}, 0.0));
  return p;
}

const Tensor& BoundModel::p(std::string_view name) const {
  return bound[source->index_of(name)];
}

BoundModel bind(Tape& tape, ModelParams& params) {
  BoundModel m;
  m.config = &params.config;
  m.source = &params.store;
  m.bound.reserve(params.store.size());
  for (std::size_t i = 0; i < params.store.size(); ++i) {
    m.bound.push_back(tape.leaf(params.store.tensor(i)));
  }
  return m;
}

BoundModel bind_const(const ModelParams& params) {
  BoundModel m;
  m.config = &params.config;
  m.source = &params.store;
  m.bound.reserve(params.store.size());
  for (std::size_t i = 0; i < params.store.size(); ++i) {
    m.bound.push_back(params.store.tensor(i));
  }
  return m;
}

// ------------------------------------------------------------------- bias

std::pair<Tensor, Tensor> compute_bias(Tape& tape, const BoundModel& model,
                                       const PairEncodingIndices& indices,
                                       const ForwardOptions& opts) {
  const int T = indices.steps;
  const std::size_t pairs = static_cast<std::size_t>(indices.rows) * indices.cols;
  if (T != model.config->steps) {
    throw std::invalid_argument("compute_bias: index steps do not match config");
  }
  for (int v : indices.sd) {
    if (v < 0 || v > indices.d_max) throw std::out_of_range("compute_bias: sd index out of range");
  }

  // Aggregation weights: learned per-step logits, softmaxed over the
  // unmasked steps of each pair. Masked positions gather a zero row and get
  // exactly zero weight, so they drop out of the average.
  const Tensor logits = tape.broadcast_rows(model.p("tc_time_weights"), pairs);
  std::vector<unsigned char> masked(pairs * static_cast<std::size_t>(T), 0);
  std::vector<double> any_active(pairs, 0.0);
  for (std::size_t p = 0; p < pairs; ++p) {
    for (int t = 0; t < T; ++t) {
      if (indices.tc[p * T + t] == kMaskedStep) {
        masked[p * T + t] = 1;
      } else {
        any_active[p] = 1.0;
      }
    }
  }
  const Tensor weights =
      tape.row_softmax(tape.masked_fill(logits, masked, kMaskedLogit));

  Tensor averaged;
  for (int t = 0; t < T; ++t) {
    std::vector<int> rows(pairs, -1);
    for (std::size_t p = 0; p < pairs; ++p) {
      const int tc = indices.tc[p * T + t];
      if (tc != kMaskedStep) rows[p] = tc - 1;  // table rows are 0-based
    }
    const Tensor gathered = tape.gather_rows(model.p("tc_table"), rows, opts.tc_access);
    const Tensor w_t = tape.reshape(
        tape.slice_cols(weights, static_cast<std::size_t>(t), static_cast<std::size_t>(t) + 1),
        Shape{pairs});
    const Tensor term = tape.scale_rows(gathered, w_t);
    averaged = t == 0 ? term : tape.add(averaged, term);
  }
  Tensor bias_tc = tape.add_rowvec(tape.matmul(averaged, model.p("tc_proj_w")),
                                   model.p("tc_proj_b"));
  // All-masked pairs carry no temporal signal at all, including the bias.
  bias_tc = tape.scale_rows(bias_tc, Tensor(Shape{pairs}, std::move(any_active)));
  bias_tc = tape.reshape(bias_tc, Shape{static_cast<std::size_t>(indices.rows),
                                        static_cast<std::size_t>(indices.cols)});

  std::vector<int> sd_rows(indices.sd.begin(), indices.sd.end());
  const Tensor sd_emb = tape.gather_rows(model.p("sd_table"), sd_rows, opts.sd_access);
  Tensor bias_sd = tape.add_rowvec(tape.matmul(sd_emb, model.p("sd_proj_w")),
                                   model.p("sd_proj_b"));
  bias_sd = tape.reshape(bias_sd, Shape{static_cast<std::size_t>(indices.rows),
                                        static_cast<std::size_t>(indices.cols)});
  return {bias_tc, bias_sd};
}

// -------------------------------------------------------------- attention

Tensor attention_block(Tape& tape, const BoundModel& model, int layer,
                       const Tensor& q_in, const Tensor& kv_in,
                       const Tensor& bias,
                       const std::vector<unsigned char>& mask,
                       const ForwardOptions& opts) {
  const int heads = model.config->heads;
  const std::size_t d = static_cast<std::size_t>(model.config->hidden);
  const std::size_t dh = d / static_cast<std::size_t>(heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor& wq = model.p(layer_key(layer, "w_q"));
  const Tensor& wk = model.p(layer_key(layer, "w_k"));
  const Tensor& wv = model.p(layer_key(layer, "w_v"));

  // Rows with every pair masked would softmax to uniform; zero them instead
  // so masked pairs get exactly zero weight.
  Tensor row_keep;
  bool need_keep = false;
  if (!mask.empty()) {
    const std::size_t nq = q_in.rows(), nk = kv_in.rows();
    std::vector<double> keep(nq, 0.0);
    for (std::size_t i = 0; i < nq; ++i) {
      for (std::size_t j = 0; j < nk; ++j) {
        if (!mask[i * nk + j]) {
          keep[i] = 1.0;
          break;
        }
      }
      if (keep[i] == 0.0) need_keep = true;
    }
    row_keep = Tensor(Shape{nq}, std::move(keep));
  }

  std::vector<Tensor> head_outputs;
  head_outputs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const std::size_t j0 = static_cast<std::size_t>(h) * dh;
    const Tensor qh = tape.matmul(q_in, tape.slice_cols(wq, j0, j0 + dh));
    const Tensor kh = tape.matmul(kv_in, tape.slice_cols(wk, j0, j0 + dh));
    const Tensor vh = tape.matmul(kv_in, tape.slice_cols(wv, j0, j0 + dh));
    Tensor logits = tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_sqrt);
    logits = tape.add(logits, bias);
    if (!mask.empty()) logits = tape.masked_fill(logits, mask, kMaskedLogit);
    Tensor attn = tape.row_softmax(logits);
    if (need_keep) attn = tape.scale_rows(attn, row_keep);
    if (opts.train && model.config->dropout_attn > 0.0) {
      if (!opts.rng) throw std::invalid_argument("attention: train mode needs an rng");
      attn = tape.dropout(attn, model.config->dropout_attn, *opts.rng);
    }
    head_outputs.push_back(tape.matmul(attn, vh));
  }
  return heads == 1 ? head_outputs[0] : tape.concat_cols(head_outputs);
}

namespace {

Tensor feed_forward(Tape& tape, const BoundModel& model, int layer, const Tensor& x,
                    const ForwardOptions& opts) {
  Tensor h = tape.add_rowvec(tape.matmul(x, model.p(layer_key(layer, "ffn_w1"))),
                             model.p(layer_key(layer, "ffn_b1")));
  h = tape.gelu(h);
  if (opts.train && model.config->dropout_hidden > 0.0) {
    if (!opts.rng) throw std::invalid_argument("feed_forward: train mode needs an rng");
    h = tape.dropout(h, model.config->dropout_hidden, *opts.rng);
  }
  return tape.add_rowvec(tape.matmul(h, model.p(layer_key(layer, "ffn_w2"))),
                         model.p(layer_key(layer, "ffn_b2")));
}

void warn_empty_context_once() {
  static bool warned = false;
  if (!warned) {
    std::cerr << "warning: empty context set, attention skipped (residual-only pass)\n";
    warned = true;
  }
}

}  // namespace

Tensor ffn_block(Tape& tape, const BoundModel& model, int layer, const Tensor& z,
                 const ForwardOptions& opts) {
  if (z.rows() == 0) return z;
  const Tensor normed = tape.layer_norm(z, model.p(layer_key(layer, "ln2_gain")),
                                        model.p(layer_key(layer, "ln2_bias")));
  return tape.add(feed_forward(tape, model, layer, normed, opts), z);
}

std::pair<Tensor, Tensor> two_tower_layer(Tape& tape, const BoundModel& model,
                                          int layer, const Tensor& h_tgt,
                                          const Tensor& h_ctx, const Tensor& bias_tgt,
                                          const Tensor& bias_ctx,
                                          const std::vector<unsigned char>& mask_tgt,
                                          const std::vector<unsigned char>& mask_ctx,
                                          const ForwardOptions& opts) {
  Tensor z_tgt, z_ctx;
  if (h_ctx.rows() == 0) {
    warn_empty_context_once();
    z_tgt = h_tgt;
    z_ctx = h_ctx;
  } else {
    const Tensor& g1 = model.p(layer_key(layer, "ln1_gain"));
    const Tensor& b1 = model.p(layer_key(layer, "ln1_bias"));
    const Tensor lt = tape.layer_norm(h_tgt, g1, b1);
    const Tensor lc = tape.layer_norm(h_ctx, g1, b1);
    z_tgt = tape.add(
        attention_block(tape, model, layer, lt, lc, bias_tgt, mask_tgt, opts), h_tgt);
    z_ctx = tape.add(
        attention_block(tape, model, layer, lc, lt, bias_ctx, mask_ctx, opts), h_ctx);
  }
  return {ffn_block(tape, model, layer, z_tgt, opts),
          ffn_block(tape, model, layer, z_ctx, opts)};
}

Tensor single_tower_layer(Tape& tape, const BoundModel& model, int layer,
                          const Tensor& h, const Tensor& bias,
                          const std::vector<unsigned char>& mask,
                          const ForwardOptions& opts) {
  const Tensor normed = tape.layer_norm(h, model.p(layer_key(layer, "ln1_gain")),
                                        model.p(layer_key(layer, "ln1_bias")));
  const Tensor z = tape.add(
      attention_block(tape, model, layer, normed, normed, bias, mask, opts), h);
  return ffn_block(tape, model, layer, z, opts);
}

// ---------------------------------------------------------------- forward

namespace {
std::vector<unsigned char> hop_mask(const PairEncodingIndices& idx, int hops) {
  if (hops <= 0) return {};
  std::vector<unsigned char> mask(idx.sd.size(), 0);
  for (std::size_t p = 0; p < idx.sd.size(); ++p) mask[p] = idx.sd[p] > hops ? 1 : 0;
  return mask;
}

std::vector<unsigned char> transpose_mask(const std::vector<unsigned char>& mask,
                                          int rows, int cols) {
  if (mask.empty()) return {};
  std::vector<unsigned char> out(mask.size());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      out[static_cast<std::size_t>(c) * rows + r] = mask[static_cast<std::size_t>(r) * cols + c];
  return out;
}
}  // namespace

std::pair<Tensor, Tensor> model_forward(Tape& tape, const BoundModel& model,
                                        const EncodedBatch& encoded,
                                        const ForwardOptions& opts) {
  const ModelConfig& cfg = *model.config;
  cfg.validate();
  const auto& batch = encoded.batch;
  auto [bias_tc, bias_sd] = compute_bias(tape, model, encoded.indices, opts);
  const Tensor bias = tape.add(bias_tc, bias_sd);

  std::vector<int> tgt_rows(batch.targets.begin(), batch.targets.end());
  std::vector<int> ctx_rows(batch.contexts.begin(), batch.contexts.end());

  if (cfg.tower == TowerMode::TwoTower) {
    if (encoded.indices.rows != static_cast<int>(batch.targets.size()) ||
        encoded.indices.cols != static_cast<int>(batch.contexts.size())) {
      throw std::invalid_argument("model_forward: indices do not match batch");
    }
    Tensor h_tgt = tape.gather_rows(model.p("node_embed"), tgt_rows);
    Tensor h_ctx = tape.gather_rows(model.p("node_embed"), ctx_rows);
    const Tensor bias_ctx = batch.contexts.empty() ? Tensor(Shape{0, 0}) : tape.transpose(bias);
    const auto mask_tgt = hop_mask(encoded.indices, cfg.attn_hops);
    const auto mask_ctx =
        transpose_mask(mask_tgt, encoded.indices.rows, encoded.indices.cols);
    for (int l = 0; l < cfg.layers; ++l) {
      std::tie(h_tgt, h_ctx) =
          two_tower_layer(tape, model, l, h_tgt, h_ctx, bias, bias_ctx, mask_tgt, mask_ctx, opts);
    }
    return {h_tgt, h_ctx};
  }

  // single tower: joint node list with full pairwise attention
  std::vector<int> joint = tgt_rows;
  joint.insert(joint.end(), ctx_rows.begin(), ctx_rows.end());
  if (encoded.indices.rows != static_cast<int>(joint.size()) ||
      encoded.indices.cols != static_cast<int>(joint.size())) {
    throw std::invalid_argument("model_forward: indices do not match joint batch");
  }
  Tensor h = tape.gather_rows(model.p("node_embed"), joint);
  const auto mask = hop_mask(encoded.indices, cfg.attn_hops);
  for (int l = 0; l < cfg.layers; ++l) {
    h = single_tower_layer(tape, model, l, h, bias, mask, opts);
  }
  const std::size_t nt = batch.targets.size();
  const Tensor empty(Shape{0, static_cast<std::size_t>(cfg.hidden)});
  Tensor h_tgt = nt > 0 ? tape.slice_rows(h, 0, nt) : empty;
  Tensor h_ctx = joint.size() > nt ? tape.slice_rows(h, nt, joint.size()) : empty;
  return {h_tgt, h_ctx};
}

}  // namespace dgt
