// SPDX-License-Identifier: Apache-2.0
#include "empath/fusion.hpp"

#include <numeric>

namespace empath::fusion {

// ---------------------------------------------------------------------------
// CrossModalFuser
// ---------------------------------------------------------------------------

EmbeddingSequence CrossModalFuser::forward(const EmbeddingSequence& speech,
                                           const EmbeddingSequence& text, Cache* cache) const {
  require(speech.length() >= 1 && text.length() >= 1, "cross-modal attention over empty input");
  require(speech.dim() == text.dim() && speech.dim() == attn.model_dim(),
          "cross-modal attention: dim mismatch");
  EmbeddingSequence out;
  out.values = speech.values +
               attn.forward(speech.values, text.values, cache ? &cache->attn_cache : nullptr);
  out.modality = Modality::Fused;
  out.turn_boundaries = speech.turn_boundaries;
  return out;
}

std::pair<Matd, Matd> CrossModalFuser::backward(const Cache& cache, const Matd& dy) {
  auto [d_spch, d_text] = attn.backward(cache.attn_cache, dy);
  d_spch += dy;  // residual
  return {std::move(d_spch), std::move(d_text)};
}

void CrossModalFuser::register_params(nn::ParamRegistry& reg, const std::string& prefix) {
  attn.register_params(reg, prefix);
}

EmbeddingSequence cross_modal_attention(const EmbeddingSequence& speech,
                                        const EmbeddingSequence& text,
                                        const CrossModalFuser& fuser) {
  return fuser.forward(speech, text);
}

// ---------------------------------------------------------------------------
// ToyLM
// ---------------------------------------------------------------------------

void ToyLM::init(const ToyLMConfig& config, const PartialAdapterConfig& lora, Rng& rng,
                 bool base_trainable) {
  config.validate();
  lora.validate();
  cfg = config;
  lora_cfg = lora;
  token_emb.init(cfg.vocab_size, cfg.model_dim, rng, base_trainable);
  pos_emb.init(cfg.max_len, cfg.model_dim, rng, base_trainable);
  blocks.clear();
  blocks.resize(static_cast<std::size_t>(cfg.n_layers));
  for (auto& block : blocks) {
    block.init(cfg.model_dim, cfg.n_heads, 4 * cfg.model_dim, rng, base_trainable,
               /*causal=*/true);
    block.attach_lora_to_attention(lora.rank, lora.alpha, lora.dropout, rng);
  }
  ln_f.init(cfg.model_dim, base_trainable);
  head.init(cfg.model_dim, cfg.vocab_size, rng, base_trainable);
}

Matd ToyLM::forward(const LMInput& input, Path path, Cache* cache, Rng* dropout_rng) const {
  const Index prefix_rows = input.prefix.rows();
  const Index len = input.length();
  require(len >= 1, "empty language-model input");
  if (len > cfg.max_len) throw ValidationError("overlong input");
  if (prefix_rows > 0)
    require(input.prefix.cols() == cfg.model_dim, "prefix dim does not match model_dim");

  std::vector<char> mask;
  if (path == Path::Speech && !input.speech_mask.empty()) {
    require(static_cast<Index>(input.speech_mask.size()) == len, "mask length mismatch");
    mask = input.speech_mask;
  }

  Matd emb(len, cfg.model_dim);
  if (prefix_rows > 0) emb.topRows(prefix_rows) = input.prefix;
  if (!input.tokens.empty()) emb.bottomRows(len - prefix_rows) = token_emb.rows(input.tokens);
  std::vector<int> pos_ids(static_cast<std::size_t>(len));
  std::iota(pos_ids.begin(), pos_ids.end(), 0);
  emb += pos_emb.rows(pos_ids);

  if (cache) {
    cache->emb = emb;
    cache->tokens = input.tokens;
    cache->prefix_rows = prefix_rows;
    cache->speech_mask = mask;
    cache->pos_ids = pos_ids;
    cache->block_caches.resize(blocks.size());
  }
  Matd h = emb;
  for (std::size_t i = 0; i < blocks.size(); ++i)
    h = blocks[i].forward(h, cache ? &cache->block_caches[i] : nullptr, mask, dropout_rng);
  Matd normed = ln_f.forward(h, cache ? &cache->ln_cache : nullptr);
  Matd logits = head.forward(normed, {}, cache ? &cache->head_cache : nullptr);
  if (cache) cache->normed = std::move(normed);
  return logits;
}

Matd ToyLM::backward(const Cache& cache, const Matd& d_logits) {
  Matd g = head.backward(cache.head_cache, d_logits);
  g = ln_f.backward(cache.ln_cache, g);
  for (std::size_t i = blocks.size(); i-- > 0;) g = blocks[i].backward(cache.block_caches[i], g);
  // g is now dL/d(emb). Split into prefix / token / positional contributions.
  pos_emb.accumulate_grad(cache.pos_ids, g);
  if (!cache.tokens.empty())
    token_emb.accumulate_grad(cache.tokens, g.bottomRows(static_cast<Index>(cache.tokens.size())));
  return cache.prefix_rows > 0 ? Matd(g.topRows(cache.prefix_rows))
                               : Matd(0, cfg.model_dim);
}

void ToyLM::register_params(nn::ParamRegistry& reg, const std::string& prefix) {
  token_emb.register_params(reg, prefix + ".token_emb");
  pos_emb.register_params(reg, prefix + ".pos_emb");
  for (std::size_t i = 0; i < blocks.size(); ++i)
    blocks[i].register_params(reg, prefix + ".block" + std::to_string(i));
  ln_f.register_params(reg, prefix + ".ln_f");
  head.register_params(reg, prefix + ".head");
}

Matd lm_probs(const ToyLM& lm, const LMInput& input, Path path) {
  return nn::softmax_rows(lm.forward(input, path));
}

std::vector<int> generate_greedy(const ToyLM& lm, LMInput input, int max_new_tokens,
                                 const std::string& stop_text) {
  std::vector<int> out;
  std::string decoded;
  for (int step = 0; step < max_new_tokens; ++step) {
    if (input.length() >= lm.cfg.max_len) break;
    Matd logits = lm.forward(input, input.prefix.rows() > 0 ? Path::Speech : Path::Text);
    Index best = 0;
    logits.row(logits.rows() - 1).maxCoeff(&best);
    const int tok = static_cast<int>(best);
    out.push_back(tok);
    input.tokens.push_back(tok);
    if (!input.speech_mask.empty()) input.speech_mask.push_back(0);
    decoded.push_back(static_cast<char>(static_cast<unsigned char>(tok & 0xff)));
    if (!stop_text.empty() && decoded.size() >= stop_text.size() &&
        decoded.compare(decoded.size() - stop_text.size(), stop_text.size(), stop_text) == 0)
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

namespace {
Index count_valid(const std::vector<char>& valid) {
  Index n = 0;
  for (char v : valid) n += v ? 1 : 0;
  return n;
}
}  // namespace

double ce_loss(const Matd& dists, const std::vector<int>& targets,
               const std::vector<char>& valid) {
  require(static_cast<Index>(targets.size()) == dists.rows() &&
              static_cast<Index>(valid.size()) == dists.rows(),
          "ce_loss: length mismatch");
  const Index n = count_valid(valid);
  if (n == 0) throw ValidationError("no valid targets");
  double acc = 0.0;
  for (Index t = 0; t < dists.rows(); ++t) {
    if (!valid[static_cast<std::size_t>(t)]) continue;
    const int y = targets[static_cast<std::size_t>(t)];
    require(y >= 0 && y < dists.cols(), "ce_loss: target out of range");
    acc -= std::log(std::max(dists(t, y), kProbFloor));
  }
  return acc / static_cast<double>(n);
}

Matd soften_distribution(const Matd& p, double temperature) {
  Matd q = p.cwiseMax(kProbFloor);
  if (temperature != 1.0) {
    q = q.array().pow(1.0 / temperature).matrix();
  }
  for (Index r = 0; r < q.rows(); ++r) q.row(r) /= q.row(r).sum();
  return q;
}

double kl_distill_loss(const Matd& p_student, const Matd& p_teacher,
                       const std::vector<char>& valid, double temperature) {
  require(temperature > 0.0, "temperature must be > 0");
  require(p_student.rows() == p_teacher.rows() && p_student.cols() == p_teacher.cols(),
          "kl_distill_loss: shape mismatch");
  require(static_cast<Index>(valid.size()) == p_student.rows(),
          "kl_distill_loss: mask length mismatch");
  const Index n = count_valid(valid);
  if (n == 0) throw ValidationError("no valid targets");
  const Matd ps = soften_distribution(p_student, temperature);
  const Matd qs = soften_distribution(p_teacher, temperature);
  double acc = 0.0;
  for (Index t = 0; t < ps.rows(); ++t) {
    if (!valid[static_cast<std::size_t>(t)]) continue;
    for (Index i = 0; i < ps.cols(); ++i) {
      const double p = std::max(ps(t, i), kProbFloor);
      const double q = std::max(qs(t, i), kProbFloor);
      acc += p * (std::log(p) - std::log(q));
    }
  }
  return acc / static_cast<double>(n);
}

double total_loss(double ce, double kl, double lambda) { return ce + lambda * kl; }

Matd ce_grad_wrt_logits(const Matd& dists, const std::vector<int>& targets,
                        const std::vector<char>& valid) {
  const Index n = count_valid(valid);
  require(n > 0, "no valid targets");
  Matd g = Matd::Zero(dists.rows(), dists.cols());
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Index t = 0; t < dists.rows(); ++t) {
    if (!valid[static_cast<std::size_t>(t)]) continue;
    g.row(t) = dists.row(t) * inv_n;
    g(t, targets[static_cast<std::size_t>(t)]) -= inv_n;
  }
  return g;
}

Matd soften_logits(const Matd& logits, double temperature) {
  return nn::softmax_rows(logits / temperature);
}

Matd kl_grad_wrt_student_logits(const Matd& student_logits, const Matd& teacher_logits,
                                const std::vector<char>& valid, double temperature) {
  const Index n = count_valid(valid);
  require(n > 0, "no valid targets");
  const Matd ps = soften_logits(student_logits, temperature);
  const Matd qs = soften_logits(teacher_logits, temperature);
  Matd g = Matd::Zero(ps.rows(), ps.cols());
  const double scale = 1.0 / (static_cast<double>(n) * temperature);
  for (Index t = 0; t < ps.rows(); ++t) {
    if (!valid[static_cast<std::size_t>(t)]) continue;
    RowVecd diff(ps.cols());
    double row_kl = 0.0;
    for (Index i = 0; i < ps.cols(); ++i) {
      const double p = std::max(ps(t, i), kProbFloor);
      const double q = std::max(qs(t, i), kProbFloor);
      diff[i] = std::log(p) - std::log(q);
      row_kl += p * diff[i];
    }
    g.row(t) = (ps.row(t).array() * (diff.array() - row_kl) * scale).matrix();
  }
  return g;
}

}  // namespace empath::fusion
