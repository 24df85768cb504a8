// SPDX-License-Identifier: Apache-2.0
#include "empath/trainer.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace empath::train {

using nlohmann::json;

AdamW::AdamW(nn::ParamRegistry& registry, AdamWOptions opts)
    : registry_(registry), opts_(opts) {
  for (const auto& [name, t] : registry_.entries()) {
    m_.push_back(Matd::Zero(t->value.rows(), t->value.cols()));
    v_.push_back(Matd::Zero(t->value.rows(), t->value.cols()));
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, t_);
  const double bc2 = 1.0 - std::pow(opts_.beta2, t_);
  const auto& entries = registry_.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    nn::Tensor* t = entries[i].second;
    if (!t->trainable) continue;
    m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * t->grad;
    v_[i] = opts_.beta2 * v_[i].array().matrix() +
            (1.0 - opts_.beta2) * t->grad.cwiseProduct(t->grad);
    const Matd m_hat = m_[i] / bc1;
    const Matd v_hat = v_[i] / bc2;
    t->value -= opts_.lr * opts_.weight_decay * t->value;  // decoupled decay
    t->value -=
        (opts_.lr * m_hat.array() / (v_hat.array().sqrt() + opts_.eps)).matrix();
  }
}

Trainer::Trainer(pipeline::Model& model, TrainOptions opts)
    : model_(model),
      opts_(opts),
      optimizer_(model.registry, opts.adamw),
      data_rng_(opts.seed ^ 0x9e3779b97f4a7c15ull),
      dropout_rng_(opts.seed ^ 0xc2b2ae3d27d4eb4full) {}

fusion::LossReport Trainer::train_step(const std::vector<pipeline::Example>& examples,
                                       const std::vector<std::size_t>& batch) {
  require(!batch.empty(), "empty batch");
  model_.registry.zero_grads();

  fusion::LossReport mean;
  std::vector<pipeline::Model::ForwardCaches> caches(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& ex = examples.at(batch[b]);
    // frozen base LM: teacher logits per example never change, compute once
    const Matd* teacher = nullptr;
    if (!model_.cfg.train_base_lm) {
      auto [it, inserted] = teacher_cache_.try_emplace(batch[b]);
      if (inserted) it->second = model_.teacher_logits(ex);
      teacher = &it->second;
    }
    const fusion::LossReport r = model_.forward_losses(ex, opts_.lambda_kl, opts_.kd_temperature,
                                                       &caches[b], &dropout_rng_, teacher);
    if (!std::isfinite(r.total))
      throw RuntimeFailure("non-finite loss at step " + std::to_string(steps_done_ + 1) +
                           " (ce=" + std::to_string(r.ce) + ", kl=" + std::to_string(r.kl) + ")");
    mean.ce += r.ce;
    mean.kl += r.kl;
    mean.total += r.total;
    mean.n_valid += r.n_valid;
    model_.backward(caches[b], opts_.lambda_kl, opts_.kd_temperature);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  mean.ce *= inv;
  mean.kl *= inv;
  mean.total *= inv;
  mean.temperature = opts_.kd_temperature;
  mean.lambda = opts_.lambda_kl;
  // average the accumulated gradients over the batch before clip/update
  for (auto& [name, t] : model_.registry.entries())
    if (t->trainable) t->grad *= inv;

  mean.grad_norm = model_.registry.clip_grad_norm(opts_.clip_norm);
  mean.grad_norm_clipped = std::min(mean.grad_norm, opts_.clip_norm);
  optimizer_.step();
  ++steps_done_;
  return mean;
}

void Trainer::run(const std::vector<pipeline::Example>& examples,
                  const std::function<void(const StepCallbackInfo&)>& on_step) {
  require(!examples.empty(), "no training examples");
  for (int s = 0; s < opts_.steps; ++s) {
    std::vector<std::size_t> batch;
    batch.reserve(static_cast<std::size_t>(opts_.batch_size));
    for (int b = 0; b < opts_.batch_size; ++b)
      batch.push_back(static_cast<std::size_t>(data_rng_.integer(examples.size())));
    const fusion::LossReport report = train_step(examples, batch);
    if (on_step) on_step({steps_done_, report});
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {
constexpr char kCkptMagic[8] = {'E', 'M', 'P', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kCkptVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const nn::ParamRegistry& registry,
                     const std::string& config_json, std::uint64_t seed, int step) {
  json header;
  header["version"] = kCkptVersion;
  header["seed"] = seed;
  header["step"] = step;
  header["config"] = config_json.empty() ? json::object() : json::parse(config_json);
  json tensors = json::array();
  for (const auto& [name, t] : registry.entries())
    tensors.push_back({{"name", name},
                       {"rows", t->value.rows()},
                       {"cols", t->value.cols()},
                       {"trainable", t->trainable}});
  header["tensors"] = std::move(tensors);
  const std::string header_str = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw RuntimeFailure("cannot write checkpoint: " + path);
  f.write(kCkptMagic, 8);
  const std::uint64_t hlen = header_str.size();
  f.write(reinterpret_cast<const char*>(&hlen), 8);
  f.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& [name, t] : registry.entries())
    for (Index r = 0; r < t->value.rows(); ++r)
      f.write(reinterpret_cast<const char*>(t->value.row(r).data()),
              static_cast<std::streamsize>(sizeof(double)) * t->value.cols());
}

namespace {

json read_header(std::ifstream& f, const std::string& path) {
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw RuntimeFailure("not a checkpoint file: " + path);
  std::uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 8);
  std::string header_str(hlen, '\0');
  f.read(header_str.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw RuntimeFailure("truncated checkpoint header: " + path);
  json header = json::parse(header_str);
  if (header.at("version").get<std::uint32_t>() != kCkptVersion)
    throw RuntimeFailure("unsupported checkpoint version in " + path);
  return header;
}

CheckpointInfo info_from_header(const json& header) {
  CheckpointInfo info;
  info.config_json = header.at("config").dump();
  info.seed = header.at("seed").get<std::uint64_t>();
  info.step = header.at("step").get<int>();
  return info;
}

}  // namespace

CheckpointInfo peek_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw RuntimeFailure("cannot open checkpoint: " + path);
  return info_from_header(read_header(f, path));
}

CheckpointInfo load_checkpoint(const std::string& path, nn::ParamRegistry& registry) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw RuntimeFailure("cannot open checkpoint: " + path);
  const json header = read_header(f, path);

  const auto& tensors = header.at("tensors");
  require(tensors.size() == registry.entries().size(),
          "checkpoint tensor count does not match the model");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& jt = tensors[i];
    const auto& [name, t] = registry.entries()[i];
    if (jt.at("name").get<std::string>() != name)
      throw RuntimeFailure("checkpoint tensor order mismatch at " + name);
    const Index rows = jt.at("rows").get<Index>();
    const Index cols = jt.at("cols").get<Index>();
    if (rows != t->value.rows() || cols != t->value.cols())
      throw RuntimeFailure("checkpoint shape mismatch for " + name);
    for (Index r = 0; r < rows; ++r)
      f.read(reinterpret_cast<char*>(t->value.row(r).data()),
             static_cast<std::streamsize>(sizeof(double)) * cols);
  }
  if (!f) throw RuntimeFailure("truncated checkpoint data: " + path);
  return info_from_header(header);
}

}  // namespace empath::train
