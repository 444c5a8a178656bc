#include "dgt/objectives.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <stdexcept>
#include <unordered_map>

namespace dgt {

namespace {

std::unordered_map<int, int> row_index(const std::vector<int>& nodes) {
  std::unordered_map<int, int> map;
  for (std::size_t i = 0; i < nodes.size(); ++i) map[nodes[i]] = static_cast<int>(i);
  return map;
}

std::pair<int, int> to_rows(const std::unordered_map<int, int>& rows,
                            std::pair<int, int> pair) {
  auto iu = rows.find(pair.first);
  auto iv = rows.find(pair.second);
  if (iu == rows.end() || iv == rows.end()) {
    throw std::invalid_argument("loss: pair endpoint is not a target node");
  }
  return {iu->second, iv->second};
}

// Enforces that a masked forward never gathered the given temporal rows,
// then folds the per-term counts into the caller's log.
void check_tc_rows_untouched(const RowAccessLog& term_log,
                             const std::vector<int>& forbidden_rows,
                             RowAccessLog* sink, const char* who) {
  for (int row : forbidden_rows) {
    if (static_cast<std::size_t>(row) < term_log.size() &&
        term_log[static_cast<std::size_t>(row)] != 0) {
      throw std::logic_error(std::string(who) + ": masked temporal row was read");
    }
  }
  if (sink) {
    if (sink->size() < term_log.size()) sink->resize(term_log.size(), 0);
    for (std::size_t i = 0; i < term_log.size(); ++i) (*sink)[i] += term_log[i];
  }
}

}  // namespace

Tensor link_pred_loss(Tape& tape, const Tensor& x,
                      const std::vector<std::pair<int, int>>& pos_rows,
                      const std::vector<std::pair<int, int>>& neg_rows) {
  if (pos_rows.empty() && neg_rows.empty()) {
    throw std::invalid_argument("link_pred_loss: empty pair sets");
  }
  const double inv = 1.0 / static_cast<double>(pos_rows.size() + neg_rows.size());

  auto pair_logits = [&](const std::vector<std::pair<int, int>>& pairs) {
    std::vector<int> lhs, rhs;
    lhs.reserve(pairs.size());
    rhs.reserve(pairs.size());
    for (const auto& [i, j] : pairs) {
      lhs.push_back(i);
      rhs.push_back(j);
    }
    return tape.row_sum(
        tape.mul(tape.gather_rows(x, lhs), tape.gather_rows(x, rhs)));
  };

  // -log sigmoid(z) = softplus(-z); -log(1 - sigmoid(z)) = softplus(z)
  Tensor loss;
  bool first = true;
  if (!pos_rows.empty()) {
    loss = tape.sum_all(tape.softplus(tape.scale(pair_logits(pos_rows), -1.0)));
    first = false;
  }
  if (!neg_rows.empty()) {
    const Tensor neg = tape.sum_all(tape.softplus(pair_logits(neg_rows)));
    loss = first ? neg : tape.add(loss, neg);
  }
  return tape.scale(loss, inv);
}

LossResult recon_loss(Tape& tape, const BoundModel& model,
                      const SnapshotSequence& s, const TemporalUnionGraph& g,
                      const BatchSpec& batch, int neg_ratio, std::uint64_t seed,
                      const ForwardOptions& opts) {
  const int T = model.config->steps;
  if (T < 2) throw std::invalid_argument("recon_loss: needs at least two steps");
  if (s.num_steps() < T) throw std::invalid_argument("recon_loss: sequence shorter than model steps");

  const auto rows = row_index(batch.targets);
  LossResult out;
  Tensor total;
  bool have_term = false;

  for (int t = 1; t <= T; ++t) {
    // positives: step-t edges with both endpoints among the targets
    std::vector<std::pair<int, int>> pos;
    std::set<std::pair<int, int>> members;
    for (const auto& e : s.edges(t)) {
      auto iu = rows.find(e.u);
      auto iv = rows.find(e.v);
      if (iu == rows.end() || iv == rows.end()) continue;
      pos.emplace_back(iu->second, iv->second);
      members.insert({std::min(e.u, e.v), std::max(e.u, e.v)});
    }
    if (pos.empty()) continue;

    // negatives: uniform target-pair non-edges at step t
    std::vector<std::pair<int, int>> free_pairs;
    for (std::size_t a = 0; a < batch.targets.size(); ++a) {
      for (std::size_t b = a + 1; b < batch.targets.size(); ++b) {
        const int u = std::min(batch.targets[a], batch.targets[b]);
        const int v = std::max(batch.targets[a], batch.targets[b]);
        if (!members.count({u, v})) {
          free_pairs.emplace_back(static_cast<int>(a), static_cast<int>(b));
        }
      }
    }
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
    const std::size_t want = std::min<std::size_t>(
        free_pairs.size(), pos.size() * static_cast<std::size_t>(neg_ratio));
    std::vector<std::pair<int, int>> neg;
    neg.reserve(want);
    for (std::size_t i = 0; i < want; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, free_pairs.size() - 1);
      std::swap(free_pairs[i], free_pairs[pick(rng)]);
      neg.push_back(free_pairs[i]);
    }

    // forward with step t hidden from both encodings
    std::vector<unsigned char> active(static_cast<std::size_t>(T), 1);
    active[static_cast<std::size_t>(t - 1)] = 0;
    const EncodedBatch encoded =
        encode_batch(g, batch, *model.config, active, EdgeFilter::exclude_step_only(t));
    ForwardOptions term_opts = opts;
    RowAccessLog term_log;
    term_opts.tc_access = &term_log;
    auto [h_tgt, h_ctx] = model_forward(tape, model, encoded, term_opts);
    check_tc_rows_untouched(term_log, {2 * t - 2, 2 * t - 1}, opts.tc_access,
                            "recon_loss");

    const Tensor decoded = tape.add_rowvec(
        tape.matmul(h_tgt, model.p("decoder_w")), model.p("decoder_b"));
    const Tensor term = link_pred_loss(tape, decoded, pos, neg);
    total = have_term ? tape.add(total, term) : term;
    have_term = true;
    out.report.positives += static_cast<long long>(pos.size());
    out.report.negatives += static_cast<long long>(neg.size());
  }

  out.loss = have_term ? total : Tensor::scalar(0.0);
  out.report.recon = out.loss.item();
  out.report.total = out.report.recon;
  return out;
}

Tensor view_loss(Tape& tape, const Tensor& h, const Tensor& h_alt,
                 bool use_stop_gradient) {
  if (h.shape != h_alt.shape) throw std::invalid_argument("view_loss: shape mismatch");
  if (h.size() == 0) return Tensor::scalar(0.0);
  const double inv = 1.0 / static_cast<double>(h.size());
  const Tensor alt_ref = use_stop_gradient ? tape.stop_gradient(h_alt) : h_alt;
  const Tensor h_ref = use_stop_gradient ? tape.stop_gradient(h) : h;
  const Tensor term1 = tape.frobenius_sq(tape.sub(h, alt_ref));
  const Tensor term2 = tape.frobenius_sq(tape.sub(h_ref, h_alt));
  return tape.scale(tape.add(term1, term2), inv);
}

LossResult pretrain_loss(Tape& tape, const BoundModel& model,
                         const SnapshotSequence& s, const TemporalUnionGraph& g,
                         const BatchSpec& batch, const BatchSpec& alt_batch,
                         double gamma, int neg_ratio, std::uint64_t seed,
                         const ForwardOptions& opts) {
  if (batch.targets != alt_batch.targets) {
    throw std::invalid_argument("pretrain_loss: views must share the same targets");
  }
  LossResult out = recon_loss(tape, model, s, g, batch, neg_ratio, seed, opts);

  const EncodedBatch enc_a = encode_batch(g, batch, *model.config);
  const EncodedBatch enc_b = encode_batch(g, alt_batch, *model.config);
  auto [h_a, ctx_a] = model_forward(tape, model, enc_a, opts);
  auto [h_b, ctx_b] = model_forward(tape, model, enc_b, opts);
  const Tensor view = view_loss(tape, h_a, h_b);

  out.report.view = view.item();
  out.loss = gamma == 0.0 ? out.loss : tape.add(out.loss, tape.scale(view, gamma));
  out.report.total = out.loss.item();
  return out;
}

LossResult finetune_loss(Tape& tape, const BoundModel& model,
                         const SnapshotSequence& s, const TemporalUnionGraph& g,
                         const FinetuneBatchFn& batch_fn,
                         const ForwardOptions& opts) {
  const int T = model.config->steps;
  if (T < 2) throw std::invalid_argument("finetune_loss: needs at least two steps");
  if (s.num_steps() < T) throw std::invalid_argument("finetune_loss: sequence shorter than model steps");

  LossResult out;
  Tensor total;
  bool have_term = false;
  for (int t = 1; t <= T - 1; ++t) {
    const FinetuneBatch fb = batch_fn(t);
    if (fb.links.positives.empty() && fb.links.negatives.empty()) continue;
    const auto rows = row_index(fb.batch.targets);
    std::vector<std::pair<int, int>> pos, neg;
    for (const auto& p : fb.links.positives) pos.push_back(to_rows(rows, p));
    for (const auto& p : fb.links.negatives) neg.push_back(to_rows(rows, p));

    std::vector<unsigned char> active(static_cast<std::size_t>(T), 0);
    for (int k = 1; k <= t; ++k) active[static_cast<std::size_t>(k - 1)] = 1;
    const EncodedBatch encoded =
        encode_batch(g, fb.batch, *model.config, active, EdgeFilter::prefix_only(t));
    ForwardOptions term_opts = opts;
    RowAccessLog term_log;
    term_opts.tc_access = &term_log;
    auto [h_tgt, h_ctx] = model_forward(tape, model, encoded, term_opts);
    std::vector<int> future_rows;
    for (int later = t + 1; later <= T; ++later) {
      future_rows.push_back(2 * later - 2);
      future_rows.push_back(2 * later - 1);
    }
    check_tc_rows_untouched(term_log, future_rows, opts.tc_access, "finetune_loss");

    const Tensor term = link_pred_loss(tape, h_tgt, pos, neg);
    total = have_term ? tape.add(total, term) : term;
    have_term = true;
    out.report.positives += static_cast<long long>(fb.links.positives.size());
    out.report.negatives += static_cast<long long>(fb.links.negatives.size());
  }
  out.loss = have_term ? total : Tensor::scalar(0.0);
  out.report.link_pred = out.loss.item();
  out.report.total = out.report.link_pred;
  return out;
}

}  // namespace dgt
