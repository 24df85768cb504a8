// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "empath/model.hpp"

namespace empath::train {

struct AdamWOptions {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// Decoupled-weight-decay Adam over a parameter registry's trainable tensors.
class AdamW {
 public:
  AdamW(nn::ParamRegistry& registry, AdamWOptions opts);

  /// One update from the currently accumulated gradients.
  void step();
  long step_count() const { return t_; }

 private:
  nn::ParamRegistry& registry_;
  AdamWOptions opts_;
  std::vector<Matd> m_, v_;
  long t_ = 0;
};

struct TrainOptions {
  AdamWOptions adamw;
  double clip_norm = 1.0;
  double lambda_kl = 1.0;
  double kd_temperature = 2.0;
  int batch_size = 8;
  int steps = 500;
  std::uint64_t seed = 42;
};

struct StepCallbackInfo {
  int step = 0;
  fusion::LossReport report;
};

/// Serialized single-writer training loop over prepared examples.
class Trainer {
 public:
  Trainer(pipeline::Model& model, TrainOptions opts);

  /// One optimizer step over a batch of example indices; returns the averaged
  /// loss report. Aborts (throws) on a non-finite loss.
  fusion::LossReport train_step(const std::vector<pipeline::Example>& examples,
                                const std::vector<std::size_t>& batch);

  /// Runs `opts.steps` steps with seeded batch sampling.
  void run(const std::vector<pipeline::Example>& examples,
           const std::function<void(const StepCallbackInfo&)>& on_step = nullptr);

  int steps_done() const { return steps_done_; }

 private:
  pipeline::Model& model_;
  TrainOptions opts_;
  AdamW optimizer_;
  Rng data_rng_;
  Rng dropout_rng_;
  std::map<std::size_t, Matd> teacher_cache_;  // example index -> text-path logits
  int steps_done_ = 0;
};

/// Binary checkpoint: magic, version, JSON header (config echo, seed, step,
/// tensor directory), then row-major doubles per tensor in directory order.
void save_checkpoint(const std::string& path, const nn::ParamRegistry& registry,
                     const std::string& config_json, std::uint64_t seed, int step);

struct CheckpointInfo {
  std::string config_json;
  std::uint64_t seed = 0;
  int step = 0;
};

/// Loads tensors by name into an already-initialized registry; shapes must match.
CheckpointInfo load_checkpoint(const std::string& path, nn::ParamRegistry& registry);

/// Reads only the header of a checkpoint (to rebuild the model before loading).
CheckpointInfo peek_checkpoint(const std::string& path);

}  // namespace empath::train
