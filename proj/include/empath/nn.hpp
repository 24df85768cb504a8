// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "empath/common.hpp"
#include "empath/tensor.hpp"

namespace empath::nn {

// ---------------------------------------------------------------------------
// Expression-style free functions
// ---------------------------------------------------------------------------

/// Row-wise softmax. Stable under large magnitudes (max subtraction).
/// Underflowing exponentials (incl. -inf mask scores) are flushed to exact
/// zero; denormals in the weight matrix would cripple the downstream matmuls.
template <typename Derived>
Matd softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  constexpr double kExpFloor = -708.0;  // below this exp() underflows double
  Matd shifted = x;
  const Vecd m = shifted.rowwise().maxCoeff();
  shifted.colwise() -= m;
  Matd e = (shifted.array() < kExpFloor).select(0.0, shifted.array().exp());
  const Vecd sums = e.rowwise().sum();
  e.array().colwise() /= sums.array();
  return e;
}

/// dL/dS for Y = softmax_rows(S), given Y and dL/dY.
inline Matd softmax_rows_backward(const Matd& y, const Matd& dy) {
  Matd ds(y.rows(), y.cols());
  for (Index r = 0; r < y.rows(); ++r) {
    const double dot = y.row(r).dot(dy.row(r));
    ds.row(r) = y.row(r).cwiseProduct((dy.row(r).array() - dot).matrix());
  }
  return ds;
}

inline double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }
inline double gelu_grad_scalar(double x) {
  const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)) + x * phi;
}

inline Matd gelu(const Matd& x) { return x.unaryExpr(&gelu_scalar); }
inline Matd gelu_backward(const Matd& x, const Matd& dy) {
  return dy.cwiseProduct(x.unaryExpr(&gelu_grad_scalar));
}

// ---------------------------------------------------------------------------
// Linear projection with an optional masked low-rank delta
// ---------------------------------------------------------------------------

/// Low-rank adapter pair. `down` is in x r, `up` is r x out. `up` starts at zero
/// so a freshly attached adapter leaves the base projection untouched.
struct LoRADelta {
  Tensor down;  // A
  Tensor up;    // B
  double scaling = 1.0;  // alpha / r
  double dropout = 0.0;

  void init(Index in, int rank, Index out, double alpha, double drop, Rng& rng) {
    down.init(in, rank);
    scaled_uniform_fill(down.value, rng);
    up.init(rank, out);  // zero
    scaling = alpha / rank;
    dropout = drop;
  }
};

/// y = x W + b, plus (alpha/r) * drop(x) A B added only on rows where the
/// position mask is true. Rows with mask=false receive exactly the base
/// projection. An absent adapter means a plain dense layer.
class MaskedLowRankLinear {
 public:
  Tensor w;  // in x out
  Tensor b;  // 1 x out
  std::optional<LoRADelta> lora;

  struct Cache {
    Matd x;             // input
    Matd x_dropped;     // input after dropout (adapter branch only)
    Matd mid;           // drop(x) * A
    std::vector<char> mask;
  };

  void init(Index in, Index out, Rng& rng, bool trainable = true) {
    w.init(in, out, trainable);
    scaled_uniform_fill(w.value, rng);
    b.init(1, out, trainable);
  }

  void attach_lora(int rank, double alpha, double dropout, Rng& rng) {
    lora.emplace();
    lora->init(w.value.rows(), rank, w.value.cols(), alpha, dropout, rng);
  }

  Index in_dim() const { return w.value.rows(); }
  Index out_dim() const { return w.value.cols(); }

  /// `mask` may be empty (no adapter routing at any position) or x.rows() long.
  Matd forward(const Matd& x, const std::vector<char>& mask = {}, Cache* cache = nullptr,
               Rng* dropout_rng = nullptr) const;
  /// Accumulates parameter grads; returns dL/dx.
  Matd backward(const Cache& cache, const Matd& dy);

  void register_params(ParamRegistry& reg, const std::string& prefix);
};

// ---------------------------------------------------------------------------
// Layer norm
// ---------------------------------------------------------------------------

class LayerNorm {
 public:
  Tensor gamma;  // 1 x d
  Tensor beta;   // 1 x d
  double eps = 1e-6;

  struct Cache {
    Matd x_hat;
    Vecd inv_std;
  };

  void init(Index dim, bool trainable = true) {
    gamma.init(1, dim, trainable);
    gamma.value.setOnes();
    beta.init(1, dim, trainable);
  }

  Matd forward(const Matd& x, Cache* cache = nullptr) const;
  Matd backward(const Cache& cache, const Matd& dy);

  void register_params(ParamRegistry& reg, const std::string& prefix);
};

// ---------------------------------------------------------------------------
// Multi-head attention
// ---------------------------------------------------------------------------

/// Multi-head attention over row-sequences. Self-attention when query and
/// key/value inputs are the same matrix; cross-attention otherwise. Optional
/// causal mask. Projections may carry masked low-rank adapters (toy LM use).
class MultiHeadAttention {
 public:
  int n_heads = 1;
  bool causal = false;
  MaskedLowRankLinear proj_q, proj_k, proj_v, proj_o;

  struct Cache {
    Matd q, k, v;                    // post-projection, pre-split
    std::vector<Matd> attn;          // per-head softmax weights (Lq x Lk)
    Matd concat;                     // concatenated head outputs (Lq x d)
    MaskedLowRankLinear::Cache cq, ck, cv, co;
  };

  void init(Index model_dim, int heads, Rng& rng, bool trainable = true, bool causal_mask = false);
  void attach_lora(int rank, double alpha, double dropout, Rng& rng);

  Index model_dim() const { return proj_q.in_dim(); }

  /// q_in: Lq x d, kv_in: Lk x d. `speech_mask_q` / `speech_mask_kv` select the
  /// positions whose projections route through the low-rank deltas.
  Matd forward(const Matd& q_in, const Matd& kv_in, Cache* cache = nullptr,
               const std::vector<char>& speech_mask_q = {},
               const std::vector<char>& speech_mask_kv = {}, Rng* dropout_rng = nullptr) const;

  /// Returns {dL/dq_in, dL/dkv_in}; accumulates parameter grads. For
  /// self-attention callers must add the two pieces.
  std::pair<Matd, Matd> backward(const Cache& cache, const Matd& dy);

  void register_params(ParamRegistry& reg, const std::string& prefix);
};

// ---------------------------------------------------------------------------
// Position-wise feed-forward (GELU)
// ---------------------------------------------------------------------------

class FeedForward {
 public:
  MaskedLowRankLinear fc1, fc2;

  struct Cache {
    MaskedLowRankLinear::Cache c1, c2;
    Matd pre_act;
  };

  void init(Index dim, Index hidden, Rng& rng, bool trainable = true);
  Matd forward(const Matd& x, Cache* cache = nullptr) const;
  Matd backward(const Cache& cache, const Matd& dy);
  void register_params(ParamRegistry& reg, const std::string& prefix);
};

// ---------------------------------------------------------------------------
// Pre-norm transformer encoder block: x + Attn(LN(x)), then x + FFN(LN(x))
// ---------------------------------------------------------------------------

class EncoderBlock {
 public:
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  FeedForward ffn;

  struct Cache {
    Matd x0, x1;
    LayerNorm::Cache cln1, cln2;
    MultiHeadAttention::Cache cattn;
    FeedForward::Cache cffn;
  };

  void init(Index dim, int heads, Index ffn_hidden, Rng& rng, bool trainable = true,
            bool causal = false);
  void attach_lora_to_attention(int rank, double alpha, double dropout, Rng& rng);

  Matd forward(const Matd& x, Cache* cache = nullptr, const std::vector<char>& speech_mask = {},
               Rng* dropout_rng = nullptr) const;
  Matd backward(const Cache& cache, const Matd& dy);
  void register_params(ParamRegistry& reg, const std::string& prefix);
};

// ---------------------------------------------------------------------------
// Strided 1-D convolution over time (rows), kernel/stride/padding configurable
// ---------------------------------------------------------------------------

class Conv1d {
 public:
  Tensor w;  // (kernel * in_ch) x out_ch
  Tensor b;  // 1 x out_ch
  int kernel = 5;
  int stride = 2;
  int padding = 2;

  struct Cache {
    Matd cols;  // im2col matrix, L_out x (kernel * in_ch)
    Index l_in = 0;
    Index in_ch = 0;
  };

  void init(Index in_ch, Index out_ch, int k, int s, int p, Rng& rng, bool trainable = true);

  static Index out_len(Index l_in, int kernel, int stride, int padding) {
    return (l_in + 2 * padding - kernel) / stride + 1;
  }
  Index out_len(Index l_in) const { return out_len(l_in, kernel, stride, padding); }

  Matd forward(const Matd& x, Cache* cache = nullptr) const;
  Matd backward(const Cache& cache, const Matd& dy);
  void register_params(ParamRegistry& reg, const std::string& prefix);
};

// ---------------------------------------------------------------------------
// Learned lookup table (token / positional / turn embeddings)
// ---------------------------------------------------------------------------

class EmbeddingTable {
 public:
  Tensor table;  // count x dim

  void init(Index count, Index dim, Rng& rng, bool trainable = true, double init_scale = 0.05) {
    table.init(count, dim, trainable);
    uniform_fill(table.value, rng, init_scale);
  }

  Matd rows(const std::vector<int>& ids) const;
  void accumulate_grad(const std::vector<int>& ids, const Matd& dy);
  void register_params(ParamRegistry& reg, const std::string& prefix) {
    reg.add(prefix, &table);
  }
};

}  // namespace empath::nn
