// SPDX-License-Identifier: Apache-2.0
#include "empath/model.hpp"

#include "empath/wav.hpp"

namespace empath::pipeline {

void Model::init(ModelConfig config) {
  config.validate_and_link();
  cfg = config;
  Rng rng(cfg.seed);
  stage1.init(cfg.stage1, rng);
  fuser.init(cfg.lm.model_dim, cfg.lm.n_heads, rng);
  lm.init(cfg.lm, cfg.lora, rng, cfg.train_base_lm);

  registry = nn::ParamRegistry();
  stage1.register_params(registry, "stage1");
  fuser.register_params(registry, "fuser");
  lm.register_params(registry, "lm");
}

Example prepare_example(const corpus::DialogueHistory& dialogue, const ModelConfig& cfg,
                        bool include_target) {
  Example ex;
  for (const auto& turn : dialogue.turns) {
    features::FeatureMatrix feats;
    if (turn.features) {
      feats = *turn.features;
    } else if (turn.waveform) {
      feats = features::extract_features(*turn.waveform, cfg.mel);
    } else if (!turn.audio_path.empty()) {
      feats = features::extract_features(features::read_wav(turn.audio_path), cfg.mel);
    } else {
      throw ValidationError("turn " + std::to_string(turn.index) + " of dialogue " +
                            dialogue.dialogue_id + " has neither audio nor features");
    }
    ex.turn_features.push_back(features::downsample_input(feats, cfg.downsample_factor));
  }
  ex.render = corpus::render_template(dialogue, cfg.format, include_target);
  ex.full_tokens = corpus::tokenize(ex.render.text);
  // byte-level tokens: template byte offsets are token offsets
  ex.prefix_tokens = corpus::tokenize(ex.render.text.substr(0, ex.render.history_end));
  ex.suffix_tokens = corpus::tokenize(ex.render.text.substr(ex.render.history_end));
  ex.target_begin = ex.render.target_begin;
  ex.target_end = ex.render.target_end;
  return ex;
}

Matd Model::teacher_logits(const Example& ex) const {
  fusion::LMInput text_input;
  text_input.tokens = ex.full_tokens;
  return lm.forward(text_input, fusion::Path::Text);
}

fusion::LossReport Model::forward_losses(const Example& ex, double lambda, double temperature,
                                         ForwardCaches* caches, Rng* dropout_rng,
                                         const Matd* precomputed_teacher) const {
  require(ex.target_end > ex.target_begin, "example has no target span");

  ForwardCaches local;
  ForwardCaches& c = caches ? *caches : local;

  // Stage 1 over the history audio, then speech-guided fusion over the text
  // history embeddings.
  affect::EmbeddingSequence e_spch =
      stage1.forward(ex.turn_features, caches ? &c.stage1 : nullptr);
  affect::EmbeddingSequence e_text;
  e_text.values = lm.embed_tokens(ex.prefix_tokens);
  e_text.modality = affect::Modality::Text;
  e_text.turn_boundaries = {0};
  affect::EmbeddingSequence e_fused =
      fuser.forward(e_spch, e_text, caches ? &c.fuser : nullptr);

  // Speech path: fused prefix + suffix tokens. Text path: the full template.
  const Index prefix_rows = e_fused.length();
  fusion::LMInput speech_input;
  speech_input.prefix = e_fused.values;
  speech_input.tokens = ex.suffix_tokens;
  speech_input.speech_mask.assign(
      static_cast<std::size_t>(prefix_rows + static_cast<Index>(ex.suffix_tokens.size())), 0);
  for (Index i = 0; i < prefix_rows; ++i) speech_input.speech_mask[static_cast<std::size_t>(i)] = 1;

  Matd speech_logits = lm.forward(speech_input, fusion::Path::Speech,
                                  caches ? &c.speech : nullptr, dropout_rng);
  Matd text_logits = precomputed_teacher ? *precomputed_teacher : teacher_logits(ex);

  // Valid positions: rows predicting the target-span tokens (prompt masked out).
  const Index ls = speech_logits.rows();
  std::vector<int> targets(static_cast<std::size_t>(ls), 0);
  std::vector<char> valid(static_cast<std::size_t>(ls), 0);
  std::vector<Index> teacher_rows;
  const std::size_t h_end = ex.render.history_end;
  for (std::size_t i = ex.target_begin; i < ex.target_end; ++i) {
    const Index srow = prefix_rows + static_cast<Index>(i - h_end) - 1;
    targets[static_cast<std::size_t>(srow)] = ex.full_tokens[i];
    valid[static_cast<std::size_t>(srow)] = 1;
    teacher_rows.push_back(static_cast<Index>(i) - 1);
  }

  const Matd speech_probs = nn::softmax_rows(speech_logits);
  fusion::LossReport report;
  report.ce = fusion::ce_loss(speech_probs, targets, valid);

  // Teacher distributions aligned row-by-row with the valid student rows.
  Matd student_valid(static_cast<Index>(teacher_rows.size()), speech_logits.cols());
  Matd teacher_valid(static_cast<Index>(teacher_rows.size()), text_logits.cols());
  {
    Index at = 0;
    for (Index r = 0; r < ls; ++r) {
      if (!valid[static_cast<std::size_t>(r)]) continue;
      student_valid.row(at) = speech_logits.row(r);
      teacher_valid.row(at) = text_logits.row(teacher_rows[static_cast<std::size_t>(at)]);
      ++at;
    }
  }
  const std::vector<char> all_valid(static_cast<std::size_t>(student_valid.rows()), 1);
  report.kl = fusion::kl_distill_loss(nn::softmax_rows(student_valid),
                                      nn::softmax_rows(teacher_valid), all_valid, temperature);
  report.total = fusion::total_loss(report.ce, report.kl, lambda);
  report.n_valid = static_cast<Index>(teacher_rows.size());
  report.temperature = temperature;
  report.lambda = lambda;

  if (caches) {
    c.speech_logits = std::move(speech_logits);
    c.text_logits = std::move(text_logits);
    c.prefix_tokens = ex.prefix_tokens;
    c.targets = std::move(targets);
    c.valid = std::move(valid);
    c.teacher_rows = std::move(teacher_rows);
  }
  return report;
}

void Model::backward(const ForwardCaches& c, double lambda, double temperature) {
  const Matd speech_probs = nn::softmax_rows(c.speech_logits);
  Matd d_logits = fusion::ce_grad_wrt_logits(speech_probs, c.targets, c.valid);

  // KL gradient on the compacted valid rows, scattered back.
  const Index n_valid = static_cast<Index>(c.teacher_rows.size());
  Matd student_valid(n_valid, c.speech_logits.cols());
  Matd teacher_valid(n_valid, c.text_logits.cols());
  {
    Index at = 0;
    for (Index r = 0; r < c.speech_logits.rows(); ++r) {
      if (!c.valid[static_cast<std::size_t>(r)]) continue;
      student_valid.row(at) = c.speech_logits.row(r);
      teacher_valid.row(at) = c.text_logits.row(c.teacher_rows[static_cast<std::size_t>(at)]);
      ++at;
    }
  }
  const std::vector<char> all_valid(static_cast<std::size_t>(n_valid), 1);
  const Matd d_kl =
      fusion::kl_grad_wrt_student_logits(student_valid, teacher_valid, all_valid, temperature);
  {
    Index at = 0;
    for (Index r = 0; r < d_logits.rows(); ++r) {
      if (!c.valid[static_cast<std::size_t>(r)]) continue;
      d_logits.row(r) += lambda * d_kl.row(at);
      ++at;
    }
  }

  Matd d_prefix = lm.backward(c.speech, d_logits);
  auto [d_spch, d_text] = fuser.backward(c.fuser, d_prefix);
  lm.token_emb.accumulate_grad(c.prefix_tokens, d_text);
  stage1.backward(c.stage1, d_spch);
}

std::string Model::respond(const Example& ex, int max_new_tokens) const {
  affect::EmbeddingSequence e_spch = stage1.forward(ex.turn_features);
  affect::EmbeddingSequence e_text;
  e_text.values = lm.embed_tokens(ex.prefix_tokens);
  e_text.modality = affect::Modality::Text;
  e_text.turn_boundaries = {0};
  affect::EmbeddingSequence e_fused = fuser.forward(e_spch, e_text);

  fusion::LMInput input;
  input.prefix = e_fused.values;
  input.tokens = ex.suffix_tokens;
  input.speech_mask.assign(
      static_cast<std::size_t>(input.length()), 0);
  for (Index i = 0; i < e_fused.length(); ++i) input.speech_mask[static_cast<std::size_t>(i)] = 1;

  const std::string stop = corpus::template_stop_marker(cfg.format);
  const std::vector<int> out = fusion::generate_greedy(lm, std::move(input), max_new_tokens, stop);
  std::string text = corpus::detokenize(out);
  if (text.size() >= stop.size() &&
      text.compare(text.size() - stop.size(), stop.size(), stop) == 0)
    text.erase(text.size() - stop.size());
  // untrained models emit arbitrary bytes; downstream records carry UTF-8 text
  return sanitize_utf8(text);
}

synth::ControlRecord stage3_control(const corpus::DialogueHistory& dialogue,
                                    const std::string& response_text,
                                    const features::MelConfig& mel, double epsilon,
                                    double trend_tol, Index style_dim, std::uint64_t seed,
                                    synth::RoleFilter filter) {
  const synth::EnergyTrajectory traj = synth::energy_trajectory(dialogue, mel, filter);
  const synth::StrategyDecision decision =
      synth::select_strategy(synth::energy_trend(traj), trend_tol);

  synth::FeatureStyleEncoder style_encoder(style_dim, mel.n_mels, seed);
  std::vector<Vecd> styles;
  std::vector<int> indices;
  for (const auto& turn : dialogue.turns) {
    if (filter == synth::RoleFilter::SpeakerOnly && turn.role != corpus::Role::Speaker) continue;
    if (filter == synth::RoleFilter::ListenerOnly && turn.role != corpus::Role::Listener)
      continue;
    features::FeatureMatrix feats;
    if (turn.features) {
      feats = *turn.features;
    } else if (turn.waveform) {
      feats = features::extract_features(*turn.waveform, mel);
    } else {
      feats = features::extract_features(features::read_wav(turn.audio_path), mel);
    }
    styles.push_back(style_encoder.encode(feats));
    indices.push_back(turn.index);
  }
  const synth::StyleFusion fusion = synth::fuse(styles, traj.energies, epsilon);
  return synth::emit_control_record(response_text, decision, fusion, traj.energies, indices);
}

}  // namespace empath::pipeline
