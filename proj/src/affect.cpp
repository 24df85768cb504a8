// SPDX-License-Identifier: Apache-2.0
#include "empath/affect.hpp"

#include <numeric>

namespace empath::affect {

EmbeddingSequence mhsa(const EmbeddingSequence& x, const nn::MultiHeadAttention& attn) {
  require(x.length() >= 1, "attention over empty sequence");
  require(x.dim() == attn.model_dim(), "sequence dim does not match attention config");
  EmbeddingSequence out = x;
  out.values = attn.forward(x.values, x.values);
  return out;
}

EmbeddingSequence concat_history(const std::vector<EmbeddingSequence>& turns) {
  require(!turns.empty(), "concat_history: empty turn list");
  const Index d = turns.front().dim();
  Index total = 0;
  for (const auto& t : turns) {
    require(t.dim() == d, "concat_history: model_dim mismatch across turns");
    require(t.length() >= 1, "concat_history: empty turn");
    total += t.length();
  }
  EmbeddingSequence out;
  out.modality = turns.front().modality;
  out.values.resize(total, d);
  out.turn_boundaries.clear();
  Index at = 0;
  for (const auto& t : turns) {
    out.turn_boundaries.push_back(at);
    out.values.middleRows(at, t.length()) = t.values;
    at += t.length();
  }
  return out;
}

// ---------------------------------------------------------------------------
// ModalityAdapter
// ---------------------------------------------------------------------------

void ModalityAdapter::init(const AdapterConfig& config, Rng& rng, bool trainable) {
  cfg = config;
  require(!cfg.kernel_sizes.empty(), "adapter needs at least one layer");
  layers.clear();
  layers.resize(cfg.kernel_sizes.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Index in = i == 0 ? cfg.in_dim : cfg.hidden_dim;
    const Index out = i + 1 == layers.size() ? cfg.out_dim : cfg.hidden_dim;
    layers[i].init(in, out, cfg.kernel_sizes[i], cfg.stride, cfg.padding, rng, trainable);
  }
}

Index ModalityAdapter::out_len(Index l_in) const {
  Index l = l_in;
  for (const auto& layer : layers) l = layer.out_len(l);
  return l;
}

Matd ModalityAdapter::forward(const Matd& x, Cache* cache) const {
  require(x.rows() >= 1, "adapter input is empty");
  if (out_len(x.rows()) < 1) throw ValidationError("sequence too short for adapter");
  if (cache) {
    cache->convs.resize(layers.size());
    cache->pre_act.clear();
  }
  Matd h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].forward(h, cache ? &cache->convs[i] : nullptr);
    if (i + 1 < layers.size()) {
      if (cache) cache->pre_act.push_back(h);
      h = nn::gelu(h);
    }
  }
  return h;
}

Matd ModalityAdapter::backward(const Cache& cache, const Matd& dy) {
  Matd g = dy;
  for (std::size_t i = layers.size(); i-- > 0;) {
    g = layers[i].backward(cache.convs[i], g);
    if (i > 0) g = nn::gelu_backward(cache.pre_act[i - 1], g);
  }
  return g;
}

void ModalityAdapter::register_params(nn::ParamRegistry& reg, const std::string& prefix) {
  for (std::size_t i = 0; i < layers.size(); ++i)
    layers[i].register_params(reg, prefix + ".conv" + std::to_string(i));
}

// ---------------------------------------------------------------------------
// AffectContextEncoder
// ---------------------------------------------------------------------------

void AffectContextEncoder::init(const Config& config, Rng& rng) {
  cfg = config;
  cfg.attention.validate();
  const Index d = cfg.attention.model_dim;
  input_proj.init(cfg.feature_dim, d, rng);
  pos_emb.init(cfg.max_frames, d, rng);
  turn_emb.init(cfg.max_turns, d, rng);
  intra_attn.init(d, cfg.attention.n_heads, rng);
  inter_attn.init(d, cfg.attention.n_heads, rng);
  encoder.clear();
  encoder.resize(static_cast<std::size_t>(cfg.encoder_depth));
  for (auto& block : encoder) block.init(d, cfg.attention.n_heads, 4 * d, rng,
                                         cfg.encoder_trainable);
  adapter.init(cfg.adapter, rng);
}

namespace {
std::vector<int> iota_ids(Index n, int offset = 0) {
  std::vector<int> ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), offset);
  return ids;
}
}  // namespace

EmbeddingSequence AffectContextEncoder::intra_turn_attention(
    const features::FeatureMatrix& turn) const {
  require(turn.frames() >= 1, "empty turn");
  require(turn.frames() <= cfg.max_frames, "turn longer than max_frames");
  require(turn.dim() == cfg.feature_dim, "feature dim does not match encoder config");
  Matd x = input_proj.forward(turn.values);
  x += pos_emb.rows(iota_ids(x.rows()));
  EmbeddingSequence seq;
  seq.values = intra_attn.forward(x, x);
  seq.modality = Modality::Speech;
  seq.turn_boundaries = {0};
  return seq;
}

EmbeddingSequence AffectContextEncoder::forward(
    const std::vector<features::FeatureMatrix>& turns, Cache* cache) const {
  require(!turns.empty(), "no history turns with speech features");
  require(static_cast<Index>(turns.size()) <= cfg.max_turns, "too many turns");

  std::vector<EmbeddingSequence> intra(turns.size());
  if (cache) {
    cache->turn_inputs.resize(turns.size());
    cache->proj_caches.resize(turns.size());
    cache->intra_caches.resize(turns.size());
    cache->pos_ids.resize(turns.size());
  }
  for (std::size_t k = 0; k < turns.size(); ++k) {
    const auto& turn = turns[k];
    require(turn.frames() >= 1, "empty turn");
    require(turn.frames() <= cfg.max_frames, "turn longer than max_frames");
    require(turn.dim() == cfg.feature_dim, "feature dim does not match encoder config");
    Matd x = input_proj.forward(turn.values, {}, cache ? &cache->proj_caches[k] : nullptr);
    auto ids = iota_ids(x.rows());
    x += pos_emb.rows(ids);
    intra[k].values = intra_attn.forward(x, x, cache ? &cache->intra_caches[k] : nullptr);
    intra[k].modality = Modality::Speech;
    intra[k].turn_boundaries = {0};
    if (cache) {
      cache->turn_inputs[k] = std::move(x);
      cache->pos_ids[k] = std::move(ids);
    }
  }

  EmbeddingSequence hist = concat_history(intra);
  std::vector<int> turn_ids(static_cast<std::size_t>(hist.length()));
  for (std::size_t k = 0; k < turns.size(); ++k) {
    const Index lo = hist.turn_boundaries[k];
    const Index hi = k + 1 < turns.size() ? hist.turn_boundaries[k + 1] : hist.length();
    for (Index i = lo; i < hi; ++i) turn_ids[static_cast<std::size_t>(i)] = static_cast<int>(k);
  }
  hist.values += turn_emb.rows(turn_ids);

  Matd inter = inter_attn.forward(hist.values, hist.values, cache ? &cache->inter_cache : nullptr);

  if (cache) {
    cache->boundaries = hist.turn_boundaries;
    cache->turn_ids = turn_ids;
    cache->hist = hist.values;
    cache->encoder_caches.resize(encoder.size());
  }
  Matd enc = inter;
  for (std::size_t i = 0; i < encoder.size(); ++i)
    enc = encoder[i].forward(enc, cache ? &cache->encoder_caches[i] : nullptr);

  EmbeddingSequence out;
  out.values = adapter.forward(enc, cache ? &cache->adapter_cache : nullptr);
  out.modality = Modality::Speech;
  out.turn_boundaries = {0};
  return out;
}

void AffectContextEncoder::backward(const Cache& cache, const Matd& dy) {
  Matd g = adapter.backward(cache.adapter_cache, dy);
  for (std::size_t i = encoder.size(); i-- > 0;)
    g = encoder[i].backward(cache.encoder_caches[i], g);

  auto [dq, dkv] = inter_attn.backward(cache.inter_cache, g);
  Matd d_hist = dq + dkv;
  turn_emb.accumulate_grad(cache.turn_ids, d_hist);

  for (std::size_t k = 0; k < cache.turn_inputs.size(); ++k) {
    const Index lo = cache.boundaries[k];
    const Index len = cache.turn_inputs[k].rows();
    Matd d_turn = d_hist.middleRows(lo, len);
    auto [dtq, dtkv] = intra_attn.backward(cache.intra_caches[k], d_turn);
    Matd d_in = dtq + dtkv;
    pos_emb.accumulate_grad(cache.pos_ids[k], d_in);
    input_proj.backward(cache.proj_caches[k], d_in);
  }
}

void AffectContextEncoder::register_params(nn::ParamRegistry& reg, const std::string& prefix) {
  input_proj.register_params(reg, prefix + ".proj");
  pos_emb.register_params(reg, prefix + ".pos_emb");
  turn_emb.register_params(reg, prefix + ".turn_emb");
  intra_attn.register_params(reg, prefix + ".intra");
  inter_attn.register_params(reg, prefix + ".inter");
  for (std::size_t i = 0; i < encoder.size(); ++i)
    encoder[i].register_params(reg, prefix + ".encoder" + std::to_string(i));
  adapter.register_params(reg, prefix + ".adapter");
}

EmbeddingSequence speech_encoder(const EmbeddingSequence& h_inter,
                                 const std::vector<nn::EncoderBlock>& blocks) {
  EmbeddingSequence out = h_inter;
  for (const auto& block : blocks) out.values = block.forward(out.values);
  return out;
}

}  // namespace empath::affect
