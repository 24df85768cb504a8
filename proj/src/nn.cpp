// SPDX-License-Identifier: Apache-2.0
#include "empath/nn.hpp"

namespace empath::nn {

// ---------------------------------------------------------------------------
// MaskedLowRankLinear
// ---------------------------------------------------------------------------

Matd MaskedLowRankLinear::forward(const Matd& x, const std::vector<char>& mask, Cache* cache,
                                  Rng* dropout_rng) const {
  require(x.cols() == w.value.rows(), "linear: input dim mismatch");
  require(mask.empty() || static_cast<Index>(mask.size()) == x.rows(),
          "mask length mismatch");
  Matd y = x * w.value;
  y.rowwise() += b.value.row(0);

  if (lora && !mask.empty()) {
    Matd xd = x;
    if (lora->dropout > 0.0 && dropout_rng != nullptr) {
      const double keep = 1.0 - lora->dropout;
      for (Index r = 0; r < xd.rows(); ++r) {
        if (!mask[static_cast<std::size_t>(r)]) continue;
        for (Index c = 0; c < xd.cols(); ++c)
          xd(r, c) = dropout_rng->bernoulli(keep) ? xd(r, c) / keep : 0.0;
      }
    }
    Matd mid = xd * lora->down.value;
    Matd delta = (mid * lora->up.value) * lora->scaling;
    for (Index r = 0; r < y.rows(); ++r)
      if (mask[static_cast<std::size_t>(r)]) y.row(r) += delta.row(r);
    if (cache) {
      cache->x_dropped = std::move(xd);
      cache->mid = std::move(mid);
    }
  }
  if (cache) {
    cache->x = x;
    cache->mask = mask;
  }
  return y;
}

Matd MaskedLowRankLinear::backward(const Cache& cache, const Matd& dy) {
  w.grad.noalias() += cache.x.transpose() * dy;
  b.grad.row(0) += dy.colwise().sum();
  Matd dx = dy * w.value.transpose();

  if (lora && !cache.mask.empty()) {
    // Only masked rows contribute to / receive the adapter branch.
    Matd dy_masked = dy;
    for (Index r = 0; r < dy_masked.rows(); ++r)
      if (!cache.mask[static_cast<std::size_t>(r)]) dy_masked.row(r).setZero();
    Matd d_delta = dy_masked * lora->scaling;
    lora->up.grad.noalias() += cache.mid.transpose() * d_delta;
    Matd d_mid = d_delta * lora->up.value.transpose();
    lora->down.grad.noalias() += cache.x_dropped.transpose() * d_mid;
    Matd d_xd = d_mid * lora->down.value.transpose();
    if (lora->dropout > 0.0) {
      // Chain through the dropout scaling: x_dropped is either x/keep or 0.
      const double keep = 1.0 - lora->dropout;
      for (Index r = 0; r < d_xd.rows(); ++r)
        for (Index c = 0; c < d_xd.cols(); ++c) {
          const bool kept = cache.x_dropped(r, c) != 0.0 || cache.x(r, c) == 0.0;
          d_xd(r, c) = kept ? d_xd(r, c) / keep : 0.0;
        }
    }
    dx += d_xd;
  }
  return dx;
}

void MaskedLowRankLinear::register_params(ParamRegistry& reg, const std::string& prefix) {
  reg.add(prefix + ".w", &w);
  reg.add(prefix + ".b", &b);
  if (lora) {
    reg.add(prefix + ".lora_down", &lora->down);
    reg.add(prefix + ".lora_up", &lora->up);
  }
}

// ---------------------------------------------------------------------------
// LayerNorm
// ---------------------------------------------------------------------------

Matd LayerNorm::forward(const Matd& x, Cache* cache) const {
  const Index d = x.cols();
  require(d == gamma.value.cols(), "layernorm: dim mismatch");
  Matd x_hat(x.rows(), d);
  Vecd inv_std(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    RowVecd centered = x.row(r).array() - mu;
    const double var = centered.squaredNorm() / d;
    const double is = 1.0 / std::sqrt(var + eps);
    x_hat.row(r) = centered * is;
    inv_std[r] = is;
  }
  Matd y = x_hat.array().rowwise() * gamma.value.row(0).array();
  y.rowwise() += beta.value.row(0);
  if (cache) {
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Matd LayerNorm::backward(const Cache& cache, const Matd& dy) {
  const Index d = dy.cols();
  beta.grad.row(0) += dy.colwise().sum();
  gamma.grad.row(0) += dy.cwiseProduct(cache.x_hat).colwise().sum();
  Matd dx(dy.rows(), d);
  for (Index r = 0; r < dy.rows(); ++r) {
    RowVecd dxhat = dy.row(r).cwiseProduct(gamma.value.row(0));
    const double m1 = dxhat.mean();
    const double m2 = dxhat.cwiseProduct(cache.x_hat.row(r)).mean();
    dx.row(r) =
        cache.inv_std[r] * (dxhat.array() - m1 - cache.x_hat.row(r).array() * m2).matrix();
  }
  return dx;
}

void LayerNorm::register_params(ParamRegistry& reg, const std::string& prefix) {
  reg.add(prefix + ".gamma", &gamma);
  reg.add(prefix + ".beta", &beta);
}

// ---------------------------------------------------------------------------
// MultiHeadAttention
// ---------------------------------------------------------------------------

void MultiHeadAttention::init(Index model_dim, int heads, Rng& rng, bool trainable,
                              bool causal_mask) {
  require(heads >= 1 && model_dim % heads == 0, "model_dim must be divisible by n_heads");
  n_heads = heads;
  causal = causal_mask;
  proj_q.init(model_dim, model_dim, rng, trainable);
  proj_k.init(model_dim, model_dim, rng, trainable);
  proj_v.init(model_dim, model_dim, rng, trainable);
  proj_o.init(model_dim, model_dim, rng, trainable);
}

void MultiHeadAttention::attach_lora(int rank, double alpha, double dropout, Rng& rng) {
  proj_q.attach_lora(rank, alpha, dropout, rng);
  proj_k.attach_lora(rank, alpha, dropout, rng);
  proj_v.attach_lora(rank, alpha, dropout, rng);
  proj_o.attach_lora(rank, alpha, dropout, rng);
}

Matd MultiHeadAttention::forward(const Matd& q_in, const Matd& kv_in, Cache* cache,
                                 const std::vector<char>& speech_mask_q,
                                 const std::vector<char>& speech_mask_kv,
                                 Rng* dropout_rng) const {
  require(q_in.rows() >= 1 && kv_in.rows() >= 1, "attention over empty sequence");
  const Index d = model_dim();
  const Index dh = d / n_heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  Cache local;
  Cache& c = cache ? *cache : local;
  Matd q = proj_q.forward(q_in, speech_mask_q, cache ? &c.cq : nullptr, dropout_rng);
  Matd k = proj_k.forward(kv_in, speech_mask_kv, cache ? &c.ck : nullptr, dropout_rng);
  Matd v = proj_v.forward(kv_in, speech_mask_kv, cache ? &c.cv : nullptr, dropout_rng);

  Matd concat(q_in.rows(), d);
  c.attn.assign(static_cast<std::size_t>(n_heads), Matd());
  for (int h = 0; h < n_heads; ++h) {
    auto qh = q.middleCols(h * dh, dh);
    auto kh = k.middleCols(h * dh, dh);
    auto vh = v.middleCols(h * dh, dh);
    Matd scores = (qh * kh.transpose()) * inv_sqrt_dh;
    if (causal) {
      for (Index i = 0; i < scores.rows(); ++i)
        for (Index j = i + 1; j < scores.cols(); ++j)
          scores(i, j) = -std::numeric_limits<double>::infinity();
    }
    Matd a = softmax_rows(scores);
    concat.middleCols(h * dh, dh) = a * vh;
    c.attn[static_cast<std::size_t>(h)] = std::move(a);
  }
  Matd out = proj_o.forward(concat, speech_mask_q, cache ? &c.co : nullptr, dropout_rng);
  if (cache) {
    c.q = std::move(q);
    c.k = std::move(k);
    c.v = std::move(v);
    c.concat = std::move(concat);
  }
  return out;
}

std::pair<Matd, Matd> MultiHeadAttention::backward(const Cache& cache, const Matd& dy) {
  const Index d = model_dim();
  const Index dh = d / n_heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  Matd d_concat = proj_o.backward(cache.co, dy);
  Matd dq(cache.q.rows(), d), dk(cache.k.rows(), d), dv(cache.v.rows(), d);
  for (int h = 0; h < n_heads; ++h) {
    const Matd& a = cache.attn[static_cast<std::size_t>(h)];
    auto qh = cache.q.middleCols(h * dh, dh);
    auto kh = cache.k.middleCols(h * dh, dh);
    auto vh = cache.v.middleCols(h * dh, dh);
    auto d_oh = d_concat.middleCols(h * dh, dh);
    Matd da = d_oh * vh.transpose();
    dv.middleCols(h * dh, dh) = a.transpose() * d_oh;
    Matd ds = softmax_rows_backward(a, da);
    dq.middleCols(h * dh, dh) = (ds * kh) * inv_sqrt_dh;
    dk.middleCols(h * dh, dh) = (ds.transpose() * qh) * inv_sqrt_dh;
  }
  Matd d_q_in = proj_q.backward(cache.cq, dq);
  Matd d_kv_in = proj_k.backward(cache.ck, dk);
  d_kv_in += proj_v.backward(cache.cv, dv);
  return {std::move(d_q_in), std::move(d_kv_in)};
}

void MultiHeadAttention::register_params(ParamRegistry& reg, const std::string& prefix) {
  proj_q.register_params(reg, prefix + ".q");
  proj_k.register_params(reg, prefix + ".k");
  proj_v.register_params(reg, prefix + ".v");
  proj_o.register_params(reg, prefix + ".o");
}

// ---------------------------------------------------------------------------
// FeedForward
// ---------------------------------------------------------------------------

void FeedForward::init(Index dim, Index hidden, Rng& rng, bool trainable) {
  fc1.init(dim, hidden, rng, trainable);
  fc2.init(hidden, dim, rng, trainable);
}

Matd FeedForward::forward(const Matd& x, Cache* cache) const {
  Matd pre = fc1.forward(x, {}, cache ? &cache->c1 : nullptr);
  Matd y = fc2.forward(gelu(pre), {}, cache ? &cache->c2 : nullptr);
  if (cache) cache->pre_act = std::move(pre);
  return y;
}

Matd FeedForward::backward(const Cache& cache, const Matd& dy) {
  Matd d_act = fc2.backward(cache.c2, dy);
  Matd d_pre = gelu_backward(cache.pre_act, d_act);
  return fc1.backward(cache.c1, d_pre);
}

void FeedForward::register_params(ParamRegistry& reg, const std::string& prefix) {
  fc1.register_params(reg, prefix + ".fc1");
  fc2.register_params(reg, prefix + ".fc2");
}

// ---------------------------------------------------------------------------
// EncoderBlock
// ---------------------------------------------------------------------------

void EncoderBlock::init(Index dim, int heads, Index ffn_hidden, Rng& rng, bool trainable,
                        bool causal) {
  ln1.init(dim, trainable);
  ln2.init(dim, trainable);
  attn.init(dim, heads, rng, trainable, causal);
  ffn.init(dim, ffn_hidden, rng, trainable);
}

void EncoderBlock::attach_lora_to_attention(int rank, double alpha, double dropout, Rng& rng) {
  attn.attach_lora(rank, alpha, dropout, rng);
}

Matd EncoderBlock::forward(const Matd& x, Cache* cache, const std::vector<char>& speech_mask,
                           Rng* dropout_rng) const {
  Cache local;
  Cache& c = cache ? *cache : local;
  Matd n1 = ln1.forward(x, cache ? &c.cln1 : nullptr);
  Matd h = x + attn.forward(n1, n1, cache ? &c.cattn : nullptr, speech_mask, speech_mask,
                            dropout_rng);
  Matd n2 = ln2.forward(h, cache ? &c.cln2 : nullptr);
  Matd out = h + ffn.forward(n2, cache ? &c.cffn : nullptr);
  if (cache) {
    c.x0 = x;
    c.x1 = std::move(h);
  }
  return out;
}

Matd EncoderBlock::backward(const Cache& cache, const Matd& dy) {
  Matd d_n2 = ffn.backward(cache.cffn, dy);
  Matd dh = dy + ln2.backward(cache.cln2, d_n2);
  auto [dq, dkv] = attn.backward(cache.cattn, dh);
  Matd d_n1 = dq + dkv;
  return dh + ln1.backward(cache.cln1, d_n1);
}

void EncoderBlock::register_params(ParamRegistry& reg, const std::string& prefix) {
  ln1.register_params(reg, prefix + ".ln1");
  attn.register_params(reg, prefix + ".attn");
  ln2.register_params(reg, prefix + ".ln2");
  ffn.register_params(reg, prefix + ".ffn");
}

// ---------------------------------------------------------------------------
// Conv1d
// ---------------------------------------------------------------------------

void Conv1d::init(Index in_ch, Index out_ch, int k, int s, int p, Rng& rng, bool trainable) {
  kernel = k;
  stride = s;
  padding = p;
  w.init(static_cast<Index>(k) * in_ch, out_ch, trainable);
  scaled_uniform_fill(w.value, rng);
  b.init(1, out_ch, trainable);
}

Matd Conv1d::forward(const Matd& x, Cache* cache) const {
  const Index l_in = x.rows();
  const Index in_ch = x.cols();
  require(static_cast<Index>(kernel) * in_ch == w.value.rows(), "conv1d: channel mismatch");
  const Index l_out = out_len(l_in);
  require(l_out >= 1, "sequence too short for adapter");

  Matd cols = Matd::Zero(l_out, static_cast<Index>(kernel) * in_ch);
  for (Index t = 0; t < l_out; ++t) {
    const Index start = t * stride - padding;
    for (int k = 0; k < kernel; ++k) {
      const Index src = start + k;
      if (src < 0 || src >= l_in) continue;
      cols.block(t, static_cast<Index>(k) * in_ch, 1, in_ch) = x.row(src);
    }
  }
  Matd y = cols * w.value;
  y.rowwise() += b.value.row(0);
  if (cache) {
    cache->cols = std::move(cols);
    cache->l_in = l_in;
    cache->in_ch = in_ch;
  }
  return y;
}

Matd Conv1d::backward(const Cache& cache, const Matd& dy) {
  w.grad.noalias() += cache.cols.transpose() * dy;
  b.grad.row(0) += dy.colwise().sum();
  Matd d_cols = dy * w.value.transpose();
  Matd dx = Matd::Zero(cache.l_in, cache.in_ch);
  for (Index t = 0; t < dy.rows(); ++t) {
    const Index start = t * stride - padding;
    for (int k = 0; k < kernel; ++k) {
      const Index src = start + k;
      if (src < 0 || src >= cache.l_in) continue;
      dx.row(src) += d_cols.block(t, static_cast<Index>(k) * cache.in_ch, 1, cache.in_ch);
    }
  }
  return dx;
}

void Conv1d::register_params(ParamRegistry& reg, const std::string& prefix) {
  reg.add(prefix + ".w", &w);
  reg.add(prefix + ".b", &b);
}

// ---------------------------------------------------------------------------
// EmbeddingTable
// ---------------------------------------------------------------------------

Matd EmbeddingTable::rows(const std::vector<int>& ids) const {
  Matd out(static_cast<Index>(ids.size()), table.value.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < table.value.rows(), "embedding index out of range");
    out.row(static_cast<Index>(i)) = table.value.row(ids[i]);
  }
  return out;
}

void EmbeddingTable::accumulate_grad(const std::vector<int>& ids, const Matd& dy) {
  for (std::size_t i = 0; i < ids.size(); ++i)
    table.grad.row(ids[i]) += dy.row(static_cast<Index>(i));
}

}  // namespace empath::nn
