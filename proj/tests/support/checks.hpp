#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dgt/tensor.hpp"

// Shared test helpers: random tensors, tolerant comparison, and the central
// finite-difference gradient checker used across the suites.

namespace dgt::test {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  return Tensor::randn(std::move(shape), rng, scale);
}

// Relative error with a floor on the denominator: below the floor the
// comparison degrades to an absolute tolerance of tol * floor, which absorbs
// finite-difference round-off on near-zero gradients.
inline bool close_rel(double a, double b, double tol = 1e-4, double floor = 1e-3) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) <= tol * denom;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Builds the loss on a fresh tape from the given leaf inputs. The builder
// must be deterministic (re-seed any internal rng per call).
using LossBuilder = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

struct GradCheckResult {
  bool ok = true;
  std::string detail;
};

inline GradCheckResult check_gradients(const std::vector<Tensor>& inputs,
                                       const LossBuilder& build, double tol = 1e-4,
                                       double h = 1e-5) {
  // analytic pass
  Tape tape;
  std::vector<Tensor> bound;
  bound.reserve(inputs.size());
  for (const auto& t : inputs) bound.push_back(tape.leaf(t));
  const Tensor loss = build(tape, bound);
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& t : bound) analytic.push_back(tape.grad(t.node));

  auto eval_at = [&](std::size_t which, std::size_t j, double value) {
    std::vector<Tensor> shifted = inputs;
    Tensor t(shifted[which].shape, shifted[which].data());
    t.mut()[j] = value;
    shifted[which] = t;
    Tape local;
    std::vector<Tensor> local_bound;
    for (const auto& x : shifted) local_bound.push_back(local.leaf(x));
    return build(local, local_bound).item();
  };

  for (std::size_t which = 0; which < inputs.size(); ++which) {
    for (std::size_t j = 0; j < inputs[which].size(); ++j) {
      const double x = inputs[which].data()[j];
      const double up = eval_at(which, j, x + h);
      const double down = eval_at(which, j, x - h);
      const double fd = (up - down) / (2.0 * h);
      const double ad = analytic[which][j];
      if (!close_rel(ad, fd, tol)) {
        return {false, "input " + std::to_string(which) + " elem " + std::to_string(j) +
                           ": analytic " + std::to_string(ad) + " vs fd " +
                           std::to_string(fd)};
      }
    }
  }
  return {};
}

}  // namespace dgt::test
