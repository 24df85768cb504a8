// SPDX-License-Identifier: Apache-2.0
#include "empath/config.hpp"

#include <fstream>

#include "json.hpp"

namespace empath::config {

using nlohmann::json;

std::string RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["paths"] = {{"corpus", corpus}, {"checkpoint", checkpoint}, {"out", out}};
  j["features"] = {{"sample_rate", sample_rate},
                   {"n_mels", n_mels},
                   {"win_ms", win_ms},
                   {"hop_ms", hop_ms},
                   {"downsample_factor", downsample_factor}};
  j["stage1"] = {{"model_dim", model_dim},
                 {"n_heads", n_heads},
                 {"encoder_depth", encoder_depth},
                 {"encoder_trainable", encoder_trainable},
                 {"max_frames", max_frames},
                 {"max_turns", max_turns},
                 {"adapter",
                  {{"kernel_sizes", adapter_kernel_sizes},
                   {"stride", adapter_stride},
                   {"hidden_dim", adapter_hidden_dim},
                   {"out_dim", lm_model_dim}}}};
  j["lm"] = {{"vocab_size", vocab_size}, {"model_dim", lm_model_dim}, {"n_layers", lm_layers},
             {"n_heads", lm_heads},      {"max_len", max_len},        {"train_base", train_base_lm}};
  j["lora"] = {{"rank", lora_rank}, {"alpha", lora_alpha}, {"dropout", lora_dropout}};
  j["train"] = {{"lr", lr},     {"weight_decay", weight_decay},
                {"epochs", epochs}, {"batch", batch},
                {"clip", clip}, {"steps", steps},
                {"lambda_kl", lambda_kl}, {"kd_temp", kd_temp}};
  j["stage3"] = {{"epsilon", epsilon},
                 {"trend_tol", trend_tol},
                 {"style_dim", style_dim},
                 {"style_roles", style_roles}};
  j["template_format"] = template_format;
  j["max_new_tokens"] = max_new_tokens;
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  RunConfig c;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  c.seed = j.value("seed", c.seed);
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    c.corpus = p.value("corpus", c.corpus);
    c.checkpoint = p.value("checkpoint", c.checkpoint);
    c.out = p.value("out", c.out);
  }
  if (j.contains("features")) {
    const auto& f = j["features"];
    c.sample_rate = f.value("sample_rate", c.sample_rate);
    c.n_mels = f.value("n_mels", c.n_mels);
    c.win_ms = f.value("win_ms", c.win_ms);
    c.hop_ms = f.value("hop_ms", c.hop_ms);
    c.downsample_factor = f.value("downsample_factor", c.downsample_factor);
  }
  if (j.contains("stage1")) {
    const auto& s = j["stage1"];
    c.model_dim = s.value("model_dim", c.model_dim);
    c.n_heads = s.value("n_heads", c.n_heads);
    c.encoder_depth = s.value("encoder_depth", c.encoder_depth);
    c.encoder_trainable = s.value("encoder_trainable", c.encoder_trainable);
    c.max_frames = s.value("max_frames", c.max_frames);
    c.max_turns = s.value("max_turns", c.max_turns);
    if (s.contains("adapter")) {
      const auto& a = s["adapter"];
      c.adapter_kernel_sizes = a.value("kernel_sizes", c.adapter_kernel_sizes);
      c.adapter_stride = a.value("stride", c.adapter_stride);
      c.adapter_hidden_dim = a.value("hidden_dim", c.adapter_hidden_dim);
    }
  }
  if (j.contains("lm")) {
    const auto& l = j["lm"];
    c.vocab_size = l.value("vocab_size", c.vocab_size);
    c.lm_model_dim = l.value("model_dim", c.lm_model_dim);
    c.lm_layers = l.value("n_layers", c.lm_layers);
    c.lm_heads = l.value("n_heads", c.lm_heads);
    c.max_len = l.value("max_len", c.max_len);
    c.train_base_lm = l.value("train_base", c.train_base_lm);
  }
  if (j.contains("lora")) {
    const auto& l = j["lora"];
    c.lora_rank = l.value("rank", c.lora_rank);
    c.lora_alpha = l.value("alpha", c.lora_alpha);
    c.lora_dropout = l.value("dropout", c.lora_dropout);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    c.lr = t.value("lr", c.lr);
    c.weight_decay = t.value("weight_decay", c.weight_decay);
    c.epochs = t.value("epochs", c.epochs);
    c.batch = t.value("batch", c.batch);
    c.clip = t.value("clip", c.clip);
    c.steps = t.value("steps", c.steps);
    c.lambda_kl = t.value("lambda_kl", c.lambda_kl);
    c.kd_temp = t.value("kd_temp", c.kd_temp);
  }
  if (j.contains("stage3")) {
    const auto& s = j["stage3"];
    c.epsilon = s.value("epsilon", c.epsilon);
    c.trend_tol = s.value("trend_tol", c.trend_tol);
    c.style_dim = s.value("style_dim", c.style_dim);
    c.style_roles = s.value("style_roles", c.style_roles);
  }
  c.template_format = j.value("template_format", c.template_format);
  c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
  return c;
}

RunConfig RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeFailure("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json(text);
}

std::vector<std::string> RunConfig::validate() const {
  std::vector<std::string> problems;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) problems.push_back(msg);
  };
  check(sample_rate > 0, "features.sample_rate must be > 0");
  check(n_mels >= 1, "features.n_mels must be >= 1");
  check(win_ms > 0 && hop_ms > 0, "features.win_ms and hop_ms must be > 0");
  check(downsample_factor >= 1, "features.downsample_factor must be >= 1");
  check(n_heads >= 1 && model_dim % n_heads == 0,
        "stage1.model_dim must be divisible by stage1.n_heads");
  check(lm_heads >= 1 && lm_model_dim % lm_heads == 0,
        "lm.model_dim must be divisible by lm.n_heads");
  check(vocab_size >= 2, "lm.vocab_size must be >= 2");
  check(lora_rank >= 1, "lora.rank must be >= 1");
  check(lora_dropout >= 0.0 && lora_dropout < 1.0, "lora.dropout must be in [0, 1)");
  check(batch >= 1, "train.batch must be >= 1");
  check(epochs >= 0 && steps >= 0, "train.epochs and train.steps must be >= 0");
  check(clip > 0.0, "train.clip must be > 0");
  check(kd_temp > 0.0, "train.kd_temp must be > 0");
  check(epsilon > 0.0, "stage3.epsilon must be > 0");
  check(trend_tol >= 0.0, "stage3.trend_tol must be >= 0");
  check(style_dim >= 1, "stage3.style_dim must be >= 1");
  check(style_roles == "all" || style_roles == "speaker" || style_roles == "listener",
        "stage3.style_roles must be all|speaker|listener");
  try {
    corpus::template_format_from_name(template_format);
  } catch (const std::exception& e) {
    problems.emplace_back(e.what());
  }
  return problems;
}

pipeline::ModelConfig RunConfig::model_config() const {
  pipeline::ModelConfig m;
  m.mel = mel_config();
  m.downsample_factor = downsample_factor;
  m.seed = seed;
  m.train_base_lm = train_base_lm;
  m.format = corpus::template_format_from_name(template_format);

  m.stage1.feature_dim = n_mels;
  m.stage1.attention.model_dim = model_dim;
  m.stage1.attention.n_heads = n_heads;
  m.stage1.attention.seed = seed;
  m.stage1.encoder_depth = encoder_depth;
  m.stage1.encoder_trainable = encoder_trainable;
  m.stage1.max_frames = max_frames;
  m.stage1.max_turns = max_turns;
  m.stage1.adapter.kernel_sizes = adapter_kernel_sizes;
  m.stage1.adapter.stride = adapter_stride;
  m.stage1.adapter.hidden_dim = adapter_hidden_dim;

  m.lm.vocab_size = vocab_size;
  m.lm.model_dim = lm_model_dim;
  m.lm.n_layers = lm_layers;
  m.lm.n_heads = lm_heads;
  m.lm.max_len = max_len;
  m.lm.seed = seed;

  m.lora.rank = lora_rank;
  m.lora.alpha = lora_alpha;
  m.lora.dropout = lora_dropout;
  m.validate_and_link();
  return m;
}

train::TrainOptions RunConfig::train_options() const {
  train::TrainOptions t;
  t.adamw.lr = lr;
  t.adamw.weight_decay = weight_decay;
  t.clip_norm = clip;
  t.lambda_kl = lambda_kl;
  t.kd_temperature = kd_temp;
  t.batch_size = batch;
  t.steps = steps;
  t.seed = seed;
  return t;
}

features::MelConfig RunConfig::mel_config() const {
  features::MelConfig mel;
  mel.n_mels = n_mels;
  mel.win_samples = sample_rate * win_ms / 1000;
  mel.hop_samples = sample_rate * hop_ms / 1000;
  return mel;
}

synth::RoleFilter RunConfig::role_filter() const {
  if (style_roles == "speaker") return synth::RoleFilter::SpeakerOnly;
  if (style_roles == "listener") return synth::RoleFilter::ListenerOnly;
  return synth::RoleFilter::All;
}

}  // namespace empath::config
