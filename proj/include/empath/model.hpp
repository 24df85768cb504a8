// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "empath/affect.hpp"
#include "empath/corpus.hpp"
#include "empath/features.hpp"
#include "empath/fusion.hpp"
#include "empath/synth.hpp"

namespace empath::pipeline {

struct ModelConfig {
  affect::AffectContextEncoder::Config stage1;
  fusion::ToyLMConfig lm;
  fusion::PartialAdapterConfig lora;
  corpus::TemplateFormat format = corpus::TemplateFormat::QwenStyle;
  features::MelConfig mel;
  int downsample_factor = 4;
  std::uint64_t seed = 42;
  bool train_base_lm = false;

  void validate_and_link() {
    // the adapter feeds the LM embedding space and consumes the stage-1 width
    stage1.feature_dim = mel.n_mels;
    stage1.adapter.in_dim = stage1.attention.model_dim;
    stage1.adapter.out_dim = lm.model_dim;
    stage1.attention.seed = seed;
    lm.seed = seed;
  }
};

/// One training example: per-turn downsampled speech features plus the rendered
/// template split into history prefix and continuation/target suffix.
struct Example {
  std::vector<features::FeatureMatrix> turn_features;
  corpus::RenderResult render;
  std::vector<int> full_tokens;
  std::vector<int> prefix_tokens;   // history portion (system + turns)
  std::vector<int> suffix_tokens;   // continuation instruction onward
  std::size_t target_begin = 0;     // token index into full_tokens
  std::size_t target_end = 0;
};

/// The complete trainable bundle: stage-1 affect encoder, cross-modal fuser,
/// and the toy language model with partial low-rank adaptation.
class Model {
 public:
  ModelConfig cfg;
  affect::AffectContextEncoder stage1;
  fusion::CrossModalFuser fuser;
  fusion::ToyLM lm;
  nn::ParamRegistry registry;

  void init(ModelConfig config);

  struct ForwardCaches {
    affect::AffectContextEncoder::Cache stage1;
    fusion::CrossModalFuser::Cache fuser;
    fusion::ToyLM::Cache speech;
    Matd speech_logits;
    Matd text_logits;
    std::vector<int> prefix_tokens;
    std::vector<int> targets;          // per speech-path row
    std::vector<char> valid;           // per speech-path row
    std::vector<Index> teacher_rows;   // text-path row per valid speech-path row
  };

  /// Teacher-side (text path) logits for an example. Constant across steps
  /// while the base LM stays frozen, so trainers may cache it per example.
  Matd teacher_logits(const Example& ex) const;

  /// Full dual-path forward; fills caches for backward when requested.
  /// `precomputed_teacher` skips the text-path forward when supplied.
  fusion::LossReport forward_losses(const Example& ex, double lambda, double temperature,
                                    ForwardCaches* caches = nullptr,
                                    Rng* dropout_rng = nullptr,
                                    const Matd* precomputed_teacher = nullptr) const;

  /// Backward for the CE + lambda*KL objective; accumulates gradients.
  void backward(const ForwardCaches& caches, double lambda, double temperature);

  /// Greedy response text for a dialogue (history audio + text).
  std::string respond(const Example& ex, int max_new_tokens = 96) const;
};

Example prepare_example(const corpus::DialogueHistory& dialogue, const ModelConfig& cfg,
                        bool include_target = true);

/// Stage-3 control record for a dialogue plus the generated response text.
synth::ControlRecord stage3_control(const corpus::DialogueHistory& dialogue,
                                    const std::string& response_text,
                                    const features::MelConfig& mel, double epsilon,
                                    double trend_tol, Index style_dim, std::uint64_t seed,
                                    synth::RoleFilter filter = synth::RoleFilter::All);

}  // namespace empath::pipeline
