// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "empath/model.hpp"
#include "empath/trainer.hpp"

namespace empath::config {

/// Full run configuration: serializable, echoed verbatim into every output
/// artifact so runs can be reproduced from their outputs alone.
struct RunConfig {
  std::uint64_t seed = 42;

  std::string corpus;      // manifest path, or "synth[:n]" for a generated corpus
  std::string checkpoint;
  std::string out;

  // features
  int sample_rate = 16000;
  int n_mels = 128;
  int win_ms = 25;
  int hop_ms = 10;
  int downsample_factor = 4;

  // stage 1
  Index model_dim = 64;
  int n_heads = 4;
  int encoder_depth = 2;
  bool encoder_trainable = false;
  Index max_frames = 512;
  Index max_turns = 64;
  std::vector<int> adapter_kernel_sizes = {5, 5, 5};
  int adapter_stride = 2;
  Index adapter_hidden_dim = 512;

  // toy LM
  Index vocab_size = 256;
  Index lm_model_dim = 64;
  int lm_layers = 2;
  int lm_heads = 4;
  Index max_len = 512;
  bool train_base_lm = false;

  // partial low-rank adaptation
  int lora_rank = 16;
  double lora_alpha = 16.0;
  double lora_dropout = 0.1;

  // training
  double lr = 5e-5;
  double weight_decay = 0.05;
  int epochs = 2;
  int batch = 8;
  double clip = 1.0;
  int steps = 0;  // 0 -> derive from epochs
  double lambda_kl = 1.0;
  double kd_temp = 2.0;

  // stage 3
  double epsilon = 0.001;
  double trend_tol = 1e-6;
  Index style_dim = 128;
  std::string style_roles = "all";  // all | speaker | listener

  std::string template_format = "qwen-style";
  int max_new_tokens = 96;

  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
  static RunConfig load_file(const std::string& path);

  /// All validation problems at once (empty when the config is sound).
  std::vector<std::string> validate() const;

  pipeline::ModelConfig model_config() const;
  train::TrainOptions train_options() const;
  features::MelConfig mel_config() const;
  synth::RoleFilter role_filter() const;
};

}  // namespace empath::config
