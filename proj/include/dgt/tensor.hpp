#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

// Dense 64-bit tensors with a recording tape for reverse-mode
// differentiation, plus the Adam optimizer and a named parameter store.
// Everything is single-threaded and deterministic given fixed seeds.

namespace dgt {

using Shape = std::vector<std::size_t>;

// Per-row epsilon used inside layer_norm; also part of the layer contract
// tests compare against.
inline constexpr double kLayerNormEpsilon = 1e-12;

// Additive sentinel used to mask attention logits before softmax. Large
// enough that exp(sentinel - row_max) underflows to exactly zero.
inline constexpr double kMaskedLogit = -1e30;

struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<double>> values;
  int node = -1;  // tape node handle; -1 for constants

  Tensor();
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor randn(Shape s, std::mt19937_64& rng, double stddev = 1.0);

  std::size_t size() const;
  std::size_t rows() const;  // first dim (requires 1-D or 2-D)
  std::size_t cols() const;  // second dim, 1 for 1-D

  const std::vector<double>& data() const { return *values; }
  // Mutable access; clones the buffer if shared. Only valid off-tape.
  std::vector<double>& mut();

  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;
  double item() const;  // requires size() == 1
};

// Counts table-row reads made by gather_rows; used by leakage checks.
using RowAccessLog = std::vector<long long>;

// Append-only operation tape. Node order is insertion order; backward
// walks nodes in strict reverse insertion order. Nodes created by
// stop_gradient receive gradients but never propagate them.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a differentiable leaf (parameter or input).
  Tensor leaf(const Tensor& value);

  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& a);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double c);
  Tensor row_softmax(const Tensor& a);
  Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
  Tensor gelu(const Tensor& a);
  Tensor sigmoid(const Tensor& a);
  Tensor softplus(const Tensor& a);
  Tensor concat_cols(const std::vector<Tensor>& parts);
  Tensor slice_cols(const Tensor& a, std::size_t j0, std::size_t j1);
  Tensor concat_rows(const std::vector<Tensor>& parts);
  Tensor slice_rows(const Tensor& a, std::size_t i0, std::size_t i1);
  // idx entries of -1 yield a zero row and do not touch the table.
  Tensor gather_rows(const Tensor& table, const std::vector<int>& idx,
                     RowAccessLog* access = nullptr);
  Tensor masked_fill(const Tensor& a, const std::vector<unsigned char>& mask,
                     double value);
  // Inverted dropout; p == 0 returns the input unchanged.
  Tensor dropout(const Tensor& a, double p, std::mt19937_64& rng);
  Tensor row_sum(const Tensor& a);   // {n,m} -> {n}
  Tensor sum_all(const Tensor& a);   // -> {1}
  Tensor mean_all(const Tensor& a);  // -> {1}
  Tensor frobenius_sq(const Tensor& a);
  Tensor add_rowvec(const Tensor& x, const Tensor& v);     // {n,m} + {m}
  Tensor scale_rows(const Tensor& x, const Tensor& s);     // row i scaled by s[i]
  Tensor broadcast_rows(const Tensor& v, std::size_t n);   // {m} -> {n,m}
  Tensor reshape(const Tensor& a, Shape s);
  Tensor stop_gradient(const Tensor& a);

  // Seeds the scalar loss with gradient 1 and pulls gradients back through
  // every reachable node. Unreached leaves keep zero gradients.
  void backward(const Tensor& loss);

  const std::vector<double>& grad(int node) const;
  bool is_stop_node(int node) const;
  std::size_t num_nodes() const { return nodes_.size(); }

  // Accumulation buffer for `node`; exposed for kernel backward closures.
  std::vector<double>& grad_accum(int node);

 private:
  using PullFn = std::function<void(Tape&, const std::vector<double>&)>;

  struct Node {
    std::size_t value_size = 0;
    PullFn pull;  // empty for leaves and stop nodes
    bool stop = false;
  };

  int record(std::size_t value_size, PullFn pull, bool stop = false);

  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  std::vector<unsigned char> touched_;
  bool ran_backward_ = false;
};

// Insertion-ordered named tensor collection (model parameters).
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& tensor(std::size_t i) { return tensors_[i]; }
  const Tensor& tensor(std::size_t i) const { return tensors_[i]; }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
};

// Bias-corrected Adam over a ParamStore. Moment buffers are laid out in
// store order and must match parameter shapes.
class AdamState {
 public:
  AdamState() = default;
  AdamState(AdamConfig cfg, const ParamStore& params);

  // Applies one update in place. grads[i] == nullptr means zero gradient.
  // Parameters with frozen[i] set are left untouched.
  void step(ParamStore& params, const std::vector<const std::vector<double>*>& grads,
            const std::vector<unsigned char>* frozen = nullptr);

  long long step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  void set_step_count(long long s) { step_ = s; }

 private:
  AdamConfig cfg_;
  long long step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// --- tensor container file format ---------------------------------------
// 8-byte magic, u64 little-endian header length, JSON header listing
// parameter names/shapes/offsets plus a config hash and free-form extra
// metadata, then the concatenated raw little-endian 64-bit values.

struct TensorFile {
  ParamStore params;
  std::uint64_t config_hash = 0;
  std::string extra_json;  // serialized JSON object
};

void save_tensor_file(const std::string& path, const ParamStore& params,
                      std::uint64_t config_hash, const std::string& extra_json);
TensorFile load_tensor_file(const std::string& path);

// FNV-1a over a string; stable across runs, used for config hashes.
std::uint64_t fnv1a_hash(std::string_view s);

// Seed derivation for independent deterministic substreams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace dgt
