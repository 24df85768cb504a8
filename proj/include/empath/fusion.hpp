// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "empath/affect.hpp"
#include "empath/nn.hpp"

namespace empath::fusion {

using affect::EmbeddingSequence;
using affect::Modality;

struct ToyLMConfig {
  Index vocab_size = 256;
  Index model_dim = 64;
  int n_layers = 2;
  int n_heads = 4;
  Index max_len = 512;
  std::uint64_t seed = 42;

  void validate() const {
    require(vocab_size >= 2, "vocab_size must be >= 2");
    require(n_heads >= 1 && model_dim % n_heads == 0,
            "model_dim must be divisible by n_heads");
  }
};

struct PartialAdapterConfig {
  int rank = 16;
  double alpha = 16.0;
  double dropout = 0.1;

  void validate() const {
    require(rank >= 1, "LoRA rank must be >= 1");
    require(dropout >= 0.0 && dropout < 1.0, "LoRA dropout must be in [0, 1)");
  }
};

/// Per-step loss summary. total = ce + lambda * kl.
struct LossReport {
  double ce = 0.0;
  double kl = 0.0;
  double total = 0.0;
  Index n_valid = 0;
  double temperature = 2.0;
  double lambda = 1.0;
  double grad_norm = 0.0;          // pre-clip global norm
  double grad_norm_clipped = 0.0;  // norm actually applied
};

// ---------------------------------------------------------------------------
// Speech-guided cross-modal fusion: speech queries, text keys/values, residual
// ---------------------------------------------------------------------------

class CrossModalFuser {
 public:
  nn::MultiHeadAttention attn;

  struct Cache {
    nn::MultiHeadAttention::Cache attn_cache;
  };

  void init(Index model_dim, int n_heads, Rng& rng) { attn.init(model_dim, n_heads, rng); }

  /// E_fused = E_spch + CrossAttn(E_spch, E_text, E_text).
  EmbeddingSequence forward(const EmbeddingSequence& speech, const EmbeddingSequence& text,
                            Cache* cache = nullptr) const;

  /// Returns {dL/dE_spch, dL/dE_text}.
  std::pair<Matd, Matd> backward(const Cache& cache, const Matd& dy);

  void register_params(nn::ParamRegistry& reg, const std::string& prefix);
};

EmbeddingSequence cross_modal_attention(const EmbeddingSequence& speech,
                                        const EmbeddingSequence& text,
                                        const CrossModalFuser& fuser);

// ---------------------------------------------------------------------------
// Toy causal decoder with partial low-rank adaptation on attention projections
// ---------------------------------------------------------------------------

enum class Path { Text, Speech };

/// Input to one decoder pass: an optional pre-computed embedding prefix (the
/// fused speech representations) followed by token ids. The speech mask marks
/// the positions whose attention projections route through low-rank deltas.
struct LMInput {
  Matd prefix;                   // P x model_dim; 0 rows for the text path
  std::vector<int> tokens;       // appended after the prefix
  std::vector<char> speech_mask; // empty, or (prefix rows + tokens) long

  Index length() const { return prefix.rows() + static_cast<Index>(tokens.size()); }
};

class ToyLM {
 public:
  ToyLMConfig cfg;
  PartialAdapterConfig lora_cfg;
  nn::EmbeddingTable token_emb;
  nn::EmbeddingTable pos_emb;
  std::vector<nn::EncoderBlock> blocks;
  nn::LayerNorm ln_f;
  nn::MaskedLowRankLinear head;

  struct Cache {
    Matd emb;                                  // input embeddings incl. positions
    std::vector<int> tokens;
    Index prefix_rows = 0;
    std::vector<char> speech_mask;
    std::vector<int> pos_ids;
    std::vector<nn::EncoderBlock::Cache> block_caches;
    nn::LayerNorm::Cache ln_cache;
    nn::MaskedLowRankLinear::Cache head_cache;
    Matd normed;
  };

  /// Base weights are created frozen unless `base_trainable`; low-rank deltas
  /// on the attention projections are always trainable.
  void init(const ToyLMConfig& config, const PartialAdapterConfig& lora, Rng& rng,
            bool base_trainable = false);

  /// Returns logits (L x vocab). The text path ignores any speech mask and
  /// never routes through adapter deltas.
  Matd forward(const LMInput& input, Path path, Cache* cache = nullptr,
               Rng* dropout_rng = nullptr) const;

  /// Backward from dL/dlogits. Returns dL/d(prefix rows) (P x model_dim).
  Matd backward(const Cache& cache, const Matd& d_logits);

  Matd embed_tokens(const std::vector<int>& tokens) const { return token_emb.rows(tokens); }

  void register_params(nn::ParamRegistry& reg, const std::string& prefix);
};

/// Per-position next-token distributions (rows sum to 1).
Matd lm_probs(const ToyLM& lm, const LMInput& input, Path path);

/// Greedy decoding. Starts from `input`, appends argmax tokens until
/// `max_new_tokens` or until the generated text ends with `stop_text`
/// (checked over the decoded byte string). Returns the new token ids only.
std::vector<int> generate_greedy(const ToyLM& lm, LMInput input, int max_new_tokens,
                                 const std::string& stop_text = "");

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

constexpr double kProbFloor = 1e-12;

/// -(1/|V|) sum over valid positions of log p(target). Distributions are
/// floored at 1e-12 before the log.
double ce_loss(const Matd& dists, const std::vector<int>& targets,
               const std::vector<char>& valid);

/// Mean KL(student || teacher) over valid positions after temperature
/// softening of both distributions (p^(1/T), renormalized). The teacher is a
/// constant under differentiation.
double kl_distill_loss(const Matd& p_student, const Matd& p_teacher,
                       const std::vector<char>& valid, double temperature);

double total_loss(double ce, double kl, double lambda);

/// dL/dlogits for the CE term above when dists = softmax(logits).
Matd ce_grad_wrt_logits(const Matd& dists, const std::vector<int>& targets,
                        const std::vector<char>& valid);

/// dL/d(student logits) for the KL term with softening from logits/T.
Matd kl_grad_wrt_student_logits(const Matd& student_logits, const Matd& teacher_logits,
                                const std::vector<char>& valid, double temperature);

/// Temperature-softened distributions directly from logits.
Matd soften_logits(const Matd& logits, double temperature);

}  // namespace empath::fusion
