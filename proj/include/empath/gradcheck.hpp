// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "empath/tensor.hpp"

namespace empath::gradcheck {

struct TensorResult {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

struct ComponentResult {
  std::string name;
  std::vector<TensorResult> tensors;
  bool pass = true;
  double seconds = 0.0;
};

struct Report {
  std::vector<ComponentResult> components;
  bool pass = true;
  double tolerance = 1e-4;
};

/// A checkable component: a scalar loss over some named parameter tensors and
/// a routine that populates their analytic gradients.
struct Component {
  std::string name;
  std::vector<std::pair<std::string, nn::Tensor*>> tensors;
  std::function<double()> loss;              // forward only
  std::function<void()> compute_gradients;   // zero + forward + backward
};

/// Central finite differences against analytic gradients, entry by entry.
/// rel_err = |analytic - fd| / max(1, |analytic|, |fd|).
ComponentResult check_component(const Component& component, double h = 1e-5,
                                double tolerance = 1e-4);

Report run_all(const std::vector<Component>& components, double h = 1e-5,
               double tolerance = 1e-4);

std::string report_to_json(const Report& report);

/// The standard component suite at verification scale (tiny sequences, 64-bit):
/// intra/inter self-attention, cross-modal attention, the masked low-rank
/// projection, the modality adapter, and the CE / KL loss composites.
/// Components own their fixtures; run them through check_component/run_all.
class StandardSuite {
 public:
  explicit StandardSuite(std::uint64_t seed = 7);
  ~StandardSuite();
  StandardSuite(const StandardSuite&) = delete;
  StandardSuite& operator=(const StandardSuite&) = delete;

  const std::vector<Component>& components() const { return components_; }

 private:
  struct Impl;
  Impl* impl_;
  std::vector<Component> components_;
};

}  // namespace empath::gradcheck
