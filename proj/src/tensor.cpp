#include "dgt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace dgt {

namespace {

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw std::runtime_error(std::string(op) + ": non-finite output");
    }
  }
}

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  // log(1 + e^x) without overflow
  return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0);
}

constexpr double kGeluCoeff = 0.044715;

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor() : shape{0}, values(std::make_shared<std::vector<double>>()) {}

Tensor::Tensor(Shape s, double fill)
    : shape(std::move(s)),
      values(std::make_shared<std::vector<double>>(shape_size(shape), fill)) {}

Tensor::Tensor(Shape s, std::vector<double> data)
    : shape(std::move(s)),
      values(std::make_shared<std::vector<double>>(std::move(data))) {
  if (values->size() != shape_size(shape)) {
    throw std::invalid_argument("Tensor: data length does not match shape");
  }
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

Tensor Tensor::randn(Shape s, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> d(shape_size(s));
  for (double& x : d) x = dist(rng);
  return Tensor(std::move(s), std::move(d));
}

std::size_t Tensor::size() const { return values->size(); }

std::size_t Tensor::rows() const {
  if (shape.empty() || shape.size() > 2) {
    throw std::invalid_argument("Tensor::rows: requires 1-D or 2-D tensor");
  }
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (shape.empty() || shape.size() > 2) {
    throw std::invalid_argument("Tensor::cols: requires 1-D or 2-D tensor");
  }
  return shape.size() == 2 ? shape[1] : 1;
}

std::vector<double>& Tensor::mut() {
  if (node >= 0) {
    throw std::logic_error("Tensor::mut: refusing to mutate a taped tensor");
  }
  if (values.use_count() > 1) {
    values = std::make_shared<std::vector<double>>(*values);
  }
  return *values;
}

double Tensor::at(std::size_t i) const { return (*values)[i]; }

double Tensor::at(std::size_t i, std::size_t j) const {
  return (*values)[i * cols() + j];
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("Tensor::item: not a scalar");
  return (*values)[0];
}

// ------------------------------------------------------------------ Tape

int Tape::record(std::size_t value_size, PullFn pull, bool stop) {
  Node n;
  n.value_size = value_size;
  n.pull = std::move(pull);
  n.stop = stop;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor Tape::leaf(const Tensor& value) {
  Tensor out = value;
  out.node = record(out.size(), PullFn{});
  return out;
}

std::vector<double>& Tape::grad_accum(int node) {
  touched_.at(static_cast<std::size_t>(node)) = 1;
  return grads_.at(static_cast<std::size_t>(node));
}

const std::vector<double>& Tape::grad(int node) const {
  if (!ran_backward_) throw std::logic_error("Tape::grad: backward not run");
  return grads_.at(static_cast<std::size_t>(node));
}

bool Tape::is_stop_node(int node) const {
  return nodes_.at(static_cast<std::size_t>(node)).stop;
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
  if (loss.node < 0) throw std::invalid_argument("backward: loss is detached from the tape");

  grads_.assign(nodes_.size(), {});
  touched_.assign(nodes_.size(), 0);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    grads_[i].assign(nodes_[i].value_size, 0.0);
  }
  grads_[static_cast<std::size_t>(loss.node)][0] = 1.0;
  touched_[static_cast<std::size_t>(loss.node)] = 1;
  ran_backward_ = true;

  for (std::size_t k = nodes_.size(); k-- > 0;) {
    if (!touched_[k] || nodes_[k].stop || !nodes_[k].pull) continue;
    nodes_[k].pull(*this, grads_[k]);
  }
}

// Helper used by kernel backward closures: accumulate `g` into node's buffer.
namespace {
inline void accum(Tape& tape, int node, const std::vector<double>& g) {
  if (node < 0) return;
  auto& buf = tape.grad_accum(node);
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}
}  // namespace

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  require(a.shape.size() == 2 && b.shape.size() == 2, "matmul: 2-D tensors required");
  require(a.shape[1] == b.shape[0], "matmul: inner dimensions differ");
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor out(Shape{m, n});
  {
    auto& o = *out.values;
    const auto& av = a.data();
    const auto& bv = b.data();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = av[i * k + p];
        if (aip == 0.0) continue;
        const double* brow = bv.data() + p * n;
        double* orow = o.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
      }
    }
    check_finite(o, "matmul");
  }
  if (a.node < 0 && b.node < 0) return out;
  Tensor ac = a, bc = b;
  out.node = record(out.size(), [ac, bc, m, k, n](Tape& t, const std::vector<double>& g) {
    if (ac.node >= 0) {
      // dA = dC * B^T
      auto& ga = t.grad_accum(ac.node);
      const auto& bv = bc.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          double s = 0.0;
          const double* grow = g.data() + i * n;
          const double* brow = bv.data() + j * n;
          for (std::size_t p = 0; p < n; ++p) s += grow[p] * brow[p];
          ga[i * k + j] += s;
        }
      }
    }
    if (bc.node >= 0) {
      // dB = A^T * dC
      auto& gb = t.grad_accum(bc.node);
      const auto& av = ac.data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          if (aip == 0.0) continue;
          double* brow = gb.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) brow[j] += aip * grow[j];
        }
      }
    }
  });
  return out;
}

Tensor Tape::transpose(const Tensor& a) {
  require(a.shape.size() == 2, "transpose: 2-D tensor required");
  const std::size_t m = a.shape[0], n = a.shape[1];
  Tensor out(Shape{n, m});
  {
    auto& o = *out.values;
    const auto& av = a.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) o[j * m + i] = av[i * n + j];
  }
  if (a.node < 0) return out;
  const int an = a.node;
  out.node = record(out.size(), [an, m, n](Tape& t, const std::vector<double>& g) {
    auto& ga = t.grad_accum(an);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
  return out;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  require(a.shape == b.shape, "add: shape mismatch");
  Tensor out(a.shape);
  {
    auto& o = *out.values;
    const auto& av = a.data();
    const auto& bv = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
    check_finite(o, "add");
  }
  if (a.node < 0 && b.node < 0) return out;
  const int an = a.node, bn = b.node;
  out.node = record(out.size(), [an, bn](Tape& t, const std::vector<double>& g) {
    accum(t, an, g);
    accum(t, bn, g);
  });
  return out;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  require(a.shape == b.shape, "sub: shape mismatch");
  Tensor out(a.shape);
  {
    auto& o = *out.values;
    const auto& av = a.data();
    const auto& bv = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] - bv[i];
    check_finite(o, "sub");
  }
  if (a.node < 0 && b.node < 0) return out;
  const int an = a.node, bn = b.node;
  out.node = record(out.size(), [an, bn](Tape& t, const std::vector<double>& g) {
    accum(t, an, g);
    if (bn >= 0) {
      auto& gb = t.grad_accum(bn);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  require(a.shape == b.shape, "mul: shape mismatch");
  Tensor out(a.shape);
  {
    auto& o = *out.values;
    const auto& av = a.data();
    const auto& bv = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * bv[i];
    check_finite(o, "mul");
  }
  if (a.node < 0 && b.node < 0) return out;
  Tensor ac = a, bc = b;
  out.node = record(out.size(), [ac, bc](Tape& t, const std::vector<double>& g) {
    if (ac.node >= 0) {
      auto& ga = t.grad_accum(ac.node);
      const auto& bv = bc.data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (bc.node >= 0) {
      auto& gb = t.grad_accum(bc.node);
      const auto& av = ac.data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
  return out;
}

Tensor Tape::scale(const Tensor& a, double c) {
  Tensor out(a.shape);
  {
    auto& o = *out.values;
    const auto& av = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * c;
    check_finite(o, "scale");
  }
  if (a.node < 0) return out;
  const int an = a.node;
  out.node = record(out.size(), [an, c](Tape& t, const std::vector<double>& g) {
    auto& ga = t.grad_accum(an);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
  });
  return out;
}

Tensor Tape::row_softmax(const Tensor& a) {
  require(a.shape.size() == 2, "row_softmax: 2-D tensor required");
  const std::size_t n = a.shape[0], m = a.shape[1];
  require(m > 0, "row_softmax: empty rows");
  Tensor out(a.shape);
  {
    auto& o = *out.values;
    const auto& av = a.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = av.data() + i * m;
      double mx = row[0];
      for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      double* orow = o.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) {
        orow[j] = std::exp(row[j] - mx);
        sum += orow[j];
      }
      for (std::size_t j = 0; j < m; ++j) orow[j] /= sum;
    }
    check_finite(o, "row_softmax");
  }
  if (a.node < 0) return out;
  const int an = a.node;
  Tensor oc = out;
  out.node = record(out.size(), [an, oc, n, m](Tape& t, const std::vector<double>& g) {
    auto& ga = t.grad_accum(an);
    const auto& s = oc.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double* srow = s.data() + i * m;
      const double* grow = g.data() + i * m;
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += srow[j] * grow[j];
      double* garow = ga.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) garow[j] += srow[j] * (grow[j] - dot);
    }
  });
  return out;
}

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  require(x.shape.size() == 2, "layer_norm: 2-D tensor required");
  const std::size_t n = x.shape[0], m = x.shape[1];
  require(gain.shape == Shape{m} && bias.shape == Shape{m},
          "layer_norm: gain/bias must be length-m vectors");
  Tensor out(x.shape);
  std::vector<double> inv_std(n), means(n);
  {
    auto& o = *out.values;
    const auto& xv = x.data();
    const auto& gv = gain.data();
    const auto& bv = bias.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = xv.data() + i * m;
      double mean = 0.0;
      for (std::size_t j = 0; j < m; ++j) mean += row[j];
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        const double d = row[j] - mean;
        var += d * d;
      }
      var /= static_cast<double>(m);
      const double is = 1.0 / std::sqrt(var + kLayerNormEpsilon);
      means[i] = mean;
      inv_std[i] = is;
      double* orow = o.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) {
        orow[j] = (row[j] - mean) * is * gv[j] + bv[j];
      }
    }
    check_finite(o, "layer_norm");
  }
  if (x.node < 0 && gain.node < 0 && bias.node < 0) return out;
  Tensor xc = x, gc = gain;
  const int bn = bias.node;
  out.node = record(out.size(), [xc, gc, bn, means, inv_std, n, m](
                                    Tape& t, const std::vector<double>& g) {
    const auto& xv = xc.data();
    const auto& gv = gc.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = xv.data() + i * m;
      const double* grow = g.data() + i * m;
      const double is = inv_std[i];
      const double mean = means[i];
      if (gc.node >= 0 || bn >= 0) {
        for (std::size_t j = 0; j < m; ++j) {
          const double xhat = (row[j] - mean) * is;
          if (gc.node >= 0) t.grad_accum(gc.node)[j] += grow[j] * xhat;
          if (bn >= 0) t.grad_accum(bn)[j] += grow[j];
        }
      }
      if (xc.node >= 0) {
        // dxhat = g * gain; dx = is * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
          const double xhat = (row[j] - mean) * is;
          const double dxhat = grow[j] * gv[j];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
        }
        const double inv_m = 1.0 / static_cast<double>(m);
        auto& gx = t.grad_accum(xc.node);
        for (std::size_t j = 0; j < m; ++j) {
          const double xhat = (row[j] - mean) * is;
          const double dxhat = grow[j] * gv[j];
          gx[i * m + j] +=
              is * (dxhat - inv_m * sum_dxhat - xhat * inv_m * sum_dxhat_xhat);
        }
      }
    }
  });
  return out;
}

Tensor Tape::gelu(const Tensor& a) {
  Tensor out(a.shape);
  {
    auto& o = *out.values;
    const auto& av = a.data();
    const double c = std::sqrt(2.0 / M_PI);
    for (std::size_t i = 0; i < o.size(); ++i) {
      const double x = av[i];
      const double u = c * (x + kGeluCoeff * x * x * x);
      o[i] = 0.5 * x * (1.0 + std::tanh(u));
    }
    check_finite(o, "gelu");
  }
  if (a.node < 0) return out;
  Tensor ac = a;
  out.node = record(out.size(), [ac](Tape& t, const std::vector<double>& g) {
    auto& ga = t.grad_accum(ac.node);
    const auto& av = ac.data();
    const double c = std::sqrt(2.0 / M_PI);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = av[i];
      const double u = c * (x + kGeluCoeff * x * x * x);
      const double th = std::tanh(u);
      const double du = c * (1.0 + 3.0 * kGeluCoeff * x * x);
      const double d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
      ga[i] += g[i] * d;
    }
  });
  return out;
}

Tensor Tape::sigmoid(const Tensor& a) {
  Tensor out(a.shape);
  {
    auto& o = *out.values;
    const auto& av = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = stable_sigmoid(av[i]);
    check_finite(o, "sigmoid");
  }
  if (a.node < 0) return out;
  Tensor oc = out;
  const int an = a.node;
  out.node = record(out.size(), [an, oc](Tape& t, const std::vector<double>& g) {
    auto& ga = t.grad_accum(an);
    const auto& s = oc.data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s[i] * (1.0 - s[i]);
  });
  return out;
}

Tensor Tape::softplus(const Tensor& a) {
  Tensor out(a.shape);
  {
    auto& o = *out.values;
    const auto& av = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = stable_softplus(av[i]);
    check_finite(o, "softplus");
  }
  if (a.node < 0) return out;
  Tensor ac = a;
  out.node = record(out.size(), [ac](Tape& t, const std::vector<double>& g) {
    auto& ga = t.grad_accum(ac.node);
    const auto& av = ac.data();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * stable_sigmoid(av[i]);
  });
  return out;
}

Tensor Tape::concat_cols(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_cols: no parts");
  require(parts[0].shape.size() == 2, "concat_cols: 2-D parts required");
  const std::size_t n = parts[0].shape[0];
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.shape.size() == 2 && p.shape[0] == n, "concat_cols: row mismatch");
    total += p.shape[1];
  }
  Tensor out(Shape{n, total});
  {
    auto& o = *out.values;
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t m = p.shape[1];
      const auto& pv = p.data();
      for (std::size_t i = 0; i < n; ++i)
        std::copy_n(pv.data() + i * m, m, o.data() + i * total + off);
      off += m;
    }
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.node >= 0;
  if (!any) return out;
  std::vector<int> nodes;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    nodes.push_back(p.node);
    widths.push_back(p.shape[1]);
  }
  out.node = record(out.size(), [nodes, widths, n, total](Tape& t,
                                                          const std::vector<double>& g) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const std::size_t m = widths[k];
      if (nodes[k] >= 0) {
        auto& gp = t.grad_accum(nodes[k]);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) gp[i * m + j] += g[i * total + off + j];
      }
      off += m;
    }
  });
  return out;
}

Tensor Tape::slice_cols(const Tensor& a, std::size_t j0, std::size_t j1) {
  require(a.shape.size() == 2, "slice_cols: 2-D tensor required");
  require(j0 < j1 && j1 <= a.shape[1], "slice_cols: bad column range");
  const std::size_t n = a.shape[0], m = a.shape[1], w = j1 - j0;
  Tensor out(Shape{n, w});
  {
    auto& o = *out.values;
    const auto& av = a.data();
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(av.data() + i * m + j0, w, o.data() + i * w);
  }
  if (a.node < 0) return out;
  const int an = a.node;
  out.node = record(out.size(), [an, j0, n, m, w](Tape& t, const std::vector<double>& g) {
    auto& ga = t.grad_accum(an);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) ga[i * m + j0 + j] += g[i * w + j];
  });
  return out;
}

Tensor Tape::concat_rows(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_rows: no parts");
  const std::size_t m = parts[0].cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.shape.size() == 2 && p.shape[1] == m, "concat_rows: column mismatch");
    total += p.shape[0];
  }
  Tensor out(Shape{total, m});
  {
    auto& o = *out.values;
    std::size_t off = 0;
    for (const auto& p : parts) {
      std::copy(p.data().begin(), p.data().end(), o.begin() + off);
      off += p.size();
    }
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.node >= 0;
  if (!any) return out;
  std::vector<int> nodes;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    nodes.push_back(p.node);
    sizes.push_back(p.size());
  }
  out.node = record(out.size(), [nodes, sizes](Tape& t, const std::vector<double>& g) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (nodes[k] >= 0) {
        auto& gp = t.grad_accum(nodes[k]);
        for (std::size_t i = 0; i < sizes[k]; ++i) gp[i] += g[off + i];
      }
      off += sizes[k];
    }
  });
  return out;
}

Tensor Tape::slice_rows(const Tensor& a, std::size_t i0, std::size_t i1) {
  require(a.shape.size() == 2, "slice_rows: 2-D tensor required");
  require(i0 < i1 && i1 <= a.shape[0], "slice_rows: bad row range");
  const std::size_t m = a.shape[1], h = i1 - i0;
  Tensor out(Shape{h, m});
  std::copy_n(a.data().data() + i0 * m, h * m, out.values->data());
  if (a.node < 0) return out;
  const int an = a.node;
  out.node = record(out.size(), [an, i0, m, h](Tape& t, const std::vector<double>& g) {
    auto& ga = t.grad_accum(an);
    for (std::size_t i = 0; i < h * m; ++i) ga[i0 * m + i] += g[i];
  });
  return out;
}

Tensor Tape::gather_rows(const Tensor& table, const std::vector<int>& idx,
                         RowAccessLog* access) {
  require(table.shape.size() == 2, "gather_rows: 2-D table required");
  const std::size_t r = table.shape[0], d = table.shape[1];
  Tensor out(Shape{idx.size(), d});
  {
    auto& o = *out.values;
    const auto& tv = table.data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const int ix = idx[i];
      if (ix < 0) continue;  // zero row, no table access
      require(static_cast<std::size_t>(ix) < r, "gather_rows: index out of range");
      std::copy_n(tv.data() + static_cast<std::size_t>(ix) * d, d, o.data() + i * d);
      if (access) {
        if (access->size() < r) access->resize(r, 0);
        ++(*access)[static_cast<std::size_t>(ix)];
      }
    }
  }
  if (table.node < 0) return out;
  const int tn = table.node;
  auto idx_copy = idx;
  out.node = record(out.size(), [tn, idx_copy, d](Tape& t, const std::vector<double>& g) {
    auto& gt = t.grad_accum(tn);
    for (std::size_t i = 0; i < idx_copy.size(); ++i) {
      const int ix = idx_copy[i];
      if (ix < 0) continue;
      for (std::size_t j = 0; j < d; ++j)
        gt[static_cast<std::size_t>(ix) * d + j] += g[i * d + j];
    }
  });
  return out;
}

Tensor Tape::masked_fill(const Tensor& a, const std::vector<unsigned char>& mask,
                         double value) {
  require(mask.size() == a.size(), "masked_fill: mask size mismatch");
  Tensor out(a.shape);
  {
    auto& o = *out.values;
    const auto& av = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = mask[i] ? value : av[i];
  }
  if (a.node < 0) return out;
  const int an = a.node;
  auto mask_copy = mask;
  out.node = record(out.size(), [an, mask_copy](Tape& t, const std::vector<double>& g) {
    auto& ga = t.grad_accum(an);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!mask_copy[i]) ga[i] += g[i];
  });
  return out;
}

Tensor Tape::dropout(const Tensor& a, double p, std::mt19937_64& rng) {
  require(p >= 0.0 && p < 1.0, "dropout: probability must be in [0,1)");
  if (p == 0.0) return a;
  const double keep = 1.0 - p;
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<unsigned char> kept(a.size());
  for (auto& k : kept) k = dist(rng) < keep ? 1 : 0;
  Tensor out(a.shape);
  {
    auto& o = *out.values;
    const auto& av = a.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = kept[i] ? av[i] / keep : 0.0;
    check_finite(o, "dropout");
  }
  if (a.node < 0) return out;
  const int an = a.node;
  out.node = record(out.size(), [an, kept, keep](Tape& t, const std::vector<double>& g) {
    auto& ga = t.grad_accum(an);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (kept[i]) ga[i] += g[i] / keep;
  });
  return out;
}

Tensor Tape::row_sum(const Tensor& a) {
  require(a.shape.size() == 2, "row_sum: 2-D tensor required");
  const std::size_t n = a.shape[0], m = a.shape[1];
  Tensor out(Shape{n});
  {
    auto& o = *out.values;
    const auto& av = a.data();
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += av[i * m + j];
      o[i] = s;
    }
    check_finite(o, "row_sum");
  }
  if (a.node < 0) return out;
  const int an = a.node;
  out.node = record(out.size(), [an, n, m](Tape& t, const std::vector<double>& g) {
    auto& ga = t.grad_accum(an);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[i];
  });
  return out;
}

Tensor Tape::sum_all(const Tensor& a) {
  Tensor out = Tensor::scalar(std::accumulate(a.data().begin(), a.data().end(), 0.0));
  check_finite(*out.values, "sum_all");
  if (a.node < 0) return out;
  const int an = a.node;
  const std::size_t sz = a.size();
  out.node = record(1, [an, sz](Tape& t, const std::vector<double>& g) {
    auto& ga = t.grad_accum(an);
    for (std::size_t i = 0; i < sz; ++i) ga[i] += g[0];
  });
  return out;
}

Tensor Tape::mean_all(const Tensor& a) {
  require(a.size() > 0, "mean_all: empty tensor");
  const double inv = 1.0 / static_cast<double>(a.size());
  Tensor out = Tensor::scalar(
      std::accumulate(a.data().begin(), a.data().end(), 0.0) * inv);
  check_finite(*out.values, "mean_all");
  if (a.node < 0) return out;
  const int an = a.node;
  const std::size_t sz = a.size();
  out.node = record(1, [an, sz, inv](Tape& t, const std::vector<double>& g) {
    auto& ga = t.grad_accum(an);
    for (std::size_t i = 0; i < sz; ++i) ga[i] += g[0] * inv;
  });
  return out;
}

Tensor Tape::frobenius_sq(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x * x;
  Tensor out = Tensor::scalar(s);
  check_finite(*out.values, "frobenius_sq");
  if (a.node < 0) return out;
  Tensor ac = a;
  out.node = record(1, [ac](Tape& t, const std::vector<double>& g) {
    auto& ga = t.grad_accum(ac.node);
    const auto& av = ac.data();
    for (std::size_t i = 0; i < av.size(); ++i) ga[i] += 2.0 * av[i] * g[0];
  });
  return out;
}

Tensor Tape::add_rowvec(const Tensor& x, const Tensor& v) {
  require(x.shape.size() == 2, "add_rowvec: 2-D tensor required");
  const std::size_t n = x.shape[0], m = x.shape[1];
  require(v.shape == Shape{m}, "add_rowvec: vector length mismatch");
  Tensor out(x.shape);
  {
    auto& o = *out.values;
    const auto& xv = x.data();
    const auto& vv = v.data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) o[i * m + j] = xv[i * m + j] + vv[j];
    check_finite(o, "add_rowvec");
  }
  if (x.node < 0 && v.node < 0) return out;
  const int xn = x.node, vn = v.node;
  out.node = record(out.size(), [xn, vn, n, m](Tape& t, const std::vector<double>& g) {
    accum(t, xn, g);
    if (vn >= 0) {
      auto& gv = t.grad_accum(vn);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gv[j] += g[i * m + j];
    }
  });
  return out;
}

Tensor Tape::scale_rows(const Tensor& x, const Tensor& s) {
  require(x.shape.size() == 2, "scale_rows: 2-D tensor required");
  const std::size_t n = x.shape[0], m = x.shape[1];
  require(s.shape == Shape{n}, "scale_rows: scale length mismatch");
  Tensor out(x.shape);
  {
    auto& o = *out.values;
    const auto& xv = x.data();
    const auto& sv = s.data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) o[i * m + j] = xv[i * m + j] * sv[i];
    check_finite(o, "scale_rows");
  }
  if (x.node < 0 && s.node < 0) return out;
  Tensor xc = x, sc = s;
  out.node = record(out.size(), [xc, sc, n, m](Tape& t, const std::vector<double>& g) {
    if (xc.node >= 0) {
      auto& gx = t.grad_accum(xc.node);
      const auto& sv = sc.data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += g[i * m + j] * sv[i];
    }
    if (sc.node >= 0) {
      auto& gs = t.grad_accum(sc.node);
      const auto& xv = xc.data();
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * xv[i * m + j];
        gs[i] += acc;
      }
    }
  });
  return out;
}

Tensor Tape::broadcast_rows(const Tensor& v, std::size_t n) {
  require(v.shape.size() == 1, "broadcast_rows: 1-D vector required");
  const std::size_t m = v.shape[0];
  Tensor out(Shape{n, m});
  {
    auto& o = *out.values;
    const auto& vv = v.data();
    for (std::size_t i = 0; i < n; ++i) std::copy_n(vv.data(), m, o.data() + i * m);
  }
  if (v.node < 0) return out;
  const int vn = v.node;
  out.node = record(out.size(), [vn, n, m](Tape& t, const std::vector<double>& g) {
    auto& gv = t.grad_accum(vn);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) gv[j] += g[i * m + j];
  });
  return out;
}

Tensor Tape::reshape(const Tensor& a, Shape s) {
  require(shape_size(s) == a.size(), "reshape: element count mismatch");
  Tensor out = a;
  out.shape = std::move(s);
  if (a.node < 0) {
    out.node = -1;
    return out;
  }
  const int an = a.node;
  out.node = record(out.size(), [an](Tape& t, const std::vector<double>& g) {
    accum(t, an, g);
  });
  return out;
}

Tensor Tape::stop_gradient(const Tensor& a) {
  Tensor out(a.shape, a.data());
  if (a.node < 0) return out;  // constant stays constant
  out.node = record(out.size(), PullFn{}, /*stop=*/true);
  return out;
}

// ------------------------------------------------------------- ParamStore

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
  index_[name] = names_.size();
  names_.push_back(name);
  tensors_.push_back(std::move(t));
  return tensors_.back();
}

Tensor& ParamStore::get(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter " + std::string(name));
  return tensors_[it->second];
}

const Tensor& ParamStore::get(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter " + std::string(name));
  return tensors_[it->second];
}

bool ParamStore::contains(std::string_view name) const {
  return index_.count(std::string(name)) > 0;
}

std::size_t ParamStore::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter " + std::string(name));
  return it->second;
}

// ------------------------------------------------------------------ Adam

AdamState::AdamState(AdamConfig cfg, const ParamStore& params) : cfg_(cfg) {
  m_.resize(params.size());
  v_.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i].assign(params.tensor(i).size(), 0.0);
    v_[i].assign(params.tensor(i).size(), 0.0);
  }
}

void AdamState::step(ParamStore& params,
                     const std::vector<const std::vector<double>*>& grads,
                     const std::vector<unsigned char>* frozen) {
  if (grads.size() != params.size()) {
    throw std::invalid_argument("AdamState::step: gradient list size mismatch");
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (frozen && (*frozen)[i]) continue;
    auto& p = params.tensor(i).mut();
    if (m_[i].size() != p.size()) {
      throw std::invalid_argument("AdamState::step: moment/parameter shape mismatch");
    }
    const std::vector<double>* g = grads[i];
    if (g && g->size() != p.size()) {
      throw std::invalid_argument("AdamState::step: gradient/parameter shape mismatch");
    }
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g ? (*g)[j] : 0.0;
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * gj;
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * gj * gj;
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      p[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p[j]);
    }
  }
}

// --------------------------------------------------------- serialization

void save_tensor_file(const std::string& path, const ParamStore& params,
                      std::uint64_t config_hash, const std::string& extra_json) {
  nlohmann::json header;
  header["config_hash"] = config_hash;
  header["extra"] = extra_json.empty() ? nlohmann::json::object()
                                       : nlohmann::json::parse(extra_json);
  nlohmann::json plist = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    nlohmann::json e;
    e["name"] = params.name(i);
    e["shape"] = params.tensor(i).shape;
    e["offset"] = offset;
    offset += params.tensor(i).size();
    plist.push_back(std::move(e));
  }
  header["params"] = std::move(plist);
  const std::string hs = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_tensor_file: cannot open " + path);
  out.write("DGTCKPT1", 8);
  const std::uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& d = params.tensor(i).data();
    out.write(reinterpret_cast<const char*>(d.data()),
              static_cast<std::streamsize>(d.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("save_tensor_file: write failed for " + path);
}

TensorFile load_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_tensor_file: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "DGTCKPT1", 8) != 0) {
    throw std::runtime_error("load_tensor_file: bad magic in " + path);
  }
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw std::runtime_error("load_tensor_file: truncated header in " + path);
  nlohmann::json header = nlohmann::json::parse(hs);

  TensorFile file;
  file.config_hash = header.at("config_hash").get<std::uint64_t>();
  file.extra_json = header.at("extra").dump();
  for (const auto& e : header.at("params")) {
    Shape shape = e.at("shape").get<Shape>();
    Tensor t(shape);
    auto& d = t.mut();
    in.read(reinterpret_cast<char*>(d.data()),
            static_cast<std::streamsize>(d.size() * sizeof(double)));
    if (!in) throw std::runtime_error("load_tensor_file: truncated data in " + path);
    file.params.add(e.at("name").get<std::string>(), std::move(t));
  }
  return file;
}

std::uint64_t fnv1a_hash(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 over the combined value
  std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace dgt
