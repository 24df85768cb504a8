// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "empath/common.hpp"

namespace empath::nn {

/// A named parameter matrix with an accumulated gradient. Vectors are stored as 1 x d.
struct Tensor {
  Matd value;
  Matd grad;
  bool trainable = true;

  void init(Index rows, Index cols, bool train = true) {
    value = Matd::Zero(rows, cols);
    grad = Matd::Zero(rows, cols);
    trainable = train;
  }
  void zero_grad() { grad.setZero(); }
};

/// Flat, ordered view over a module tree's parameters. Iteration order is the
/// registration order, which is fixed per model configuration; the optimizer,
/// gradient clipping, and checkpoints all rely on it.
class ParamRegistry {
 public:
  void add(const std::string& name, Tensor* t) { entries_.emplace_back(name, t); }

  const std::vector<std::pair<std::string, Tensor*>>& entries() const { return entries_; }

  void zero_grads() {
    for (auto& [name, t] : entries_) t->zero_grad();
  }

  double grad_norm(bool trainable_only = true) const {
    double sq = 0.0;
    for (const auto& [name, t] : entries_) {
      if (trainable_only && !t->trainable) continue;
      sq += t->grad.squaredNorm();
    }
    return std::sqrt(sq);
  }

  /// Scales trainable gradients so their global norm is at most `max_norm`.
  /// Returns the pre-clip norm.
  double clip_grad_norm(double max_norm) {
    const double norm = grad_norm(true);
    if (norm > max_norm && norm > 0.0) {
      const double scale = max_norm / norm;
      for (auto& [name, t] : entries_)
        if (t->trainable) t->grad *= scale;
    }
    return norm;
  }

  Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : entries_)
      if (n == name) return t;
    return nullptr;
  }

 private:
  std::vector<std::pair<std::string, Tensor*>> entries_;
};

}  // namespace empath::nn
