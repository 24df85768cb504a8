// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "empath/common.hpp"
#include "empath/features.hpp"
#include "empath/nn.hpp"

namespace empath::affect {

enum class Modality { Speech, Text, Fused };

/// A length x model-dim sequence in a shared latent space. turn_boundaries holds
/// the start row of each turn and must partition [0, L) without gaps.
struct EmbeddingSequence {
  Matd values;
  Modality modality = Modality::Speech;
  std::vector<Index> turn_boundaries;  // start indices, first is always 0

  Index length() const { return values.rows(); }
  Index dim() const { return values.cols(); }
};

struct AttentionConfig {
  Index model_dim = 64;
  int n_heads = 4;
  std::uint64_t seed = 42;

  void validate() const {
    require(n_heads >= 1 && model_dim % n_heads == 0,
            "model_dim must be divisible by n_heads");
  }
};

struct AdapterConfig {
  std::vector<int> kernel_sizes = {5, 5, 5};
  int stride = 2;
  int padding = 2;
  Index in_dim = 64;
  Index hidden_dim = 512;
  Index out_dim = 64;

  int total_factor() const {
    int f = 1;
    for (std::size_t i = 0; i < kernel_sizes.size(); ++i) f *= stride;
    return f;
  }
};

/// Applies multi-head self-attention to a sequence; shape-preserving.
EmbeddingSequence mhsa(const EmbeddingSequence& x, const nn::MultiHeadAttention& attn);

/// Concatenates per-turn representations chronologically, recording turn spans.
EmbeddingSequence concat_history(const std::vector<EmbeddingSequence>& turns);

/// Three-layer strided convolutional subsampler mapping speech-side sequences
/// into the target embedding space.
class ModalityAdapter {
 public:
  AdapterConfig cfg;
  std::vector<nn::Conv1d> layers;

  struct Cache {
    std::vector<nn::Conv1d::Cache> convs;
    std::vector<Matd> pre_act;  // inputs to the mid-stack activations
  };

  void init(const AdapterConfig& config, Rng& rng, bool trainable = true);
  Index out_len(Index l_in) const;
  Matd forward(const Matd& x, Cache* cache = nullptr) const;
  Matd backward(const Cache& cache, const Matd& dy);
  void register_params(nn::ParamRegistry& reg, const std::string& prefix);
};

/// Stage-1 pipeline: per-turn projection + positional embedding + intra-turn
/// attention, chronological concatenation with turn-index embeddings, inter-turn
/// attention, a small pre-norm transformer encoder stand-in, and the modality
/// adapter into the language-model embedding space.
class AffectContextEncoder {
 public:
  struct Config {
    Index feature_dim = 128;      // mel bins after downsampling
    AttentionConfig attention;    // model_dim / n_heads / seed
    int encoder_depth = 2;
    bool encoder_trainable = false;
    Index max_frames = 512;       // per turn, post-downsampling
    Index max_turns = 64;
    AdapterConfig adapter;
  };

  struct Cache {
    std::vector<Matd> turn_inputs;        // projected + positioned per turn
    std::vector<nn::MaskedLowRankLinear::Cache> proj_caches;
    std::vector<nn::MultiHeadAttention::Cache> intra_caches;
    std::vector<std::vector<int>> pos_ids;
    std::vector<Index> boundaries;
    std::vector<int> turn_ids;            // one per row of the concatenated sequence
    nn::MultiHeadAttention::Cache inter_cache;
    Matd hist;                            // concatenated intra outputs + turn embedding
    std::vector<nn::EncoderBlock::Cache> encoder_caches;
    ModalityAdapter::Cache adapter_cache;
  };

  Config cfg;
  nn::MaskedLowRankLinear input_proj;   // feature_dim -> model_dim
  nn::EmbeddingTable pos_emb;           // max_frames x model_dim
  nn::EmbeddingTable turn_emb;          // max_turns x model_dim
  nn::MultiHeadAttention intra_attn;
  nn::MultiHeadAttention inter_attn;
  std::vector<nn::EncoderBlock> encoder;
  ModalityAdapter adapter;

  void init(const Config& config, Rng& rng);

  /// One turn's downsampled features -> intra-turn representation (same length).
  EmbeddingSequence intra_turn_attention(const features::FeatureMatrix& turn) const;

  /// Full stage-1 forward over the history turns' downsampled features.
  /// Returns the adapter output (speech-side sequence in LM space).
  EmbeddingSequence forward(const std::vector<features::FeatureMatrix>& turns,
                            Cache* cache = nullptr) const;

  /// Backpropagates dL/d(adapter output); accumulates parameter grads.
  void backward(const Cache& cache, const Matd& dy);

  void register_params(nn::ParamRegistry& reg, const std::string& prefix);
};

/// Encoder stand-in applied to an inter-turn representation: depth-0 is the
/// identity; otherwise a stack of pre-norm transformer blocks.
EmbeddingSequence speech_encoder(const EmbeddingSequence& h_inter,
                                 const std::vector<nn::EncoderBlock>& blocks);

}  // namespace empath::affect
