// SPDX-License-Identifier: Apache-2.0
#include "empath/synth.hpp"

#include "empath/wav.hpp"
#include "json.hpp"

namespace empath::synth {

using nlohmann::json;

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Comfort: return "comfort";
    case Strategy::Encourage: return "encourage";
    default: return "neutral";
  }
}

Strategy strategy_from_name(const std::string& name) {
  if (name == "comfort") return Strategy::Comfort;
  if (name == "encourage") return Strategy::Encourage;
  if (name == "neutral") return Strategy::Neutral;
  throw ValidationError("unknown strategy: " + name);
}

EnergyTrajectory energy_trajectory(const corpus::DialogueHistory& history,
                                   const features::MelConfig& mel, RoleFilter filter) {
  require(!history.turns.empty(), "dialogue history is empty");
  EnergyTrajectory traj;
  for (const auto& turn : history.turns) {
    if (filter == RoleFilter::SpeakerOnly && turn.role != corpus::Role::Speaker) continue;
    if (filter == RoleFilter::ListenerOnly && turn.role != corpus::Role::Listener) continue;
    features::FeatureMatrix feats;
    if (turn.features) {
      feats = *turn.features;
    } else if (turn.waveform) {
      feats = features::extract_features(*turn.waveform, mel);
    } else if (!turn.audio_path.empty()) {
      feats = features::extract_features(features::read_wav(turn.audio_path), mel);
    } else {
      throw ValidationError("turn " + std::to_string(turn.index) + " of dialogue " +
                            history.dialogue_id + " has neither audio nor features");
    }
    traj.energies.push_back(features::mean_energy(feats));
  }
  require(!traj.energies.empty(), "no history turns left after role filtering");
  return traj;
}

double energy_trend(const EnergyTrajectory& traj) {
  const std::size_t n = traj.energies.size();
  require(n >= 1, "empty energy trajectory");
  if (n == 1) return 0.0;  // no trend exists for a single turn
  return (traj.energies.back() - traj.energies.front()) / static_cast<double>(n - 1);
}

StrategyDecision select_strategy(double delta_e, double tol) {
  if (!std::isfinite(delta_e)) throw ValidationError("non-finite energy trend");
  require(tol >= 0.0, "trend tolerance must be >= 0");
  StrategyDecision d;
  d.delta_e = delta_e;
  if (delta_e < -tol) {
    d.strategy = Strategy::Comfort;
    d.alpha = 0.85;
    d.beta = 1.2;
  } else if (delta_e > tol) {
    d.strategy = Strategy::Encourage;
    d.alpha = 1.0;
    d.beta = 1.1;
  } else {
    d.strategy = Strategy::Neutral;
    d.alpha = 0.95;
    d.beta = 1.0;
  }
  return d;
}

std::vector<double> fusion_weights(const std::vector<double>& energies, double epsilon) {
  require(!energies.empty(), "fusion_weights: empty energy list");
  if (epsilon <= 0.0) throw ValidationError("epsilon must be > 0");
  double denom = 0.0;
  for (double e : energies) {
    require(e >= 0.0 && std::isfinite(e), "energies must be finite and >= 0");
    denom += 1.0 / (e + epsilon);
  }
  std::vector<double> w(energies.size());
  for (std::size_t k = 0; k < energies.size(); ++k)
    w[k] = (1.0 / (energies[k] + epsilon)) / denom;
  return w;
}

Vecd fuse_styles(const std::vector<Vecd>& styles, const std::vector<double>& weights) {
  require(!styles.empty(), "fuse_styles: no styles");
  require(styles.size() == weights.size(), "fuse_styles: styles/weights length mismatch");
  const Index dim = styles.front().size();
  Vecd fused = Vecd::Zero(dim);
  for (std::size_t k = 0; k < styles.size(); ++k) {
    require(styles[k].size() == dim, "fuse_styles: style dimension mismatch");
    fused += weights[k] * styles[k];
  }
  return fused;
}

StyleFusion fuse(const std::vector<Vecd>& styles, const std::vector<double>& energies,
                 double epsilon) {
  StyleFusion f;
  f.epsilon = epsilon;
  f.weights = fusion_weights(energies, epsilon);
  f.fused = fuse_styles(styles, f.weights);
  return f;
}

ControlRecord emit_control_record(const std::string& response_text,
                                  const StrategyDecision& decision, const StyleFusion& fusion,
                                  const std::vector<double>& energies,
                                  const std::vector<int>& turn_indices) {
  std::vector<std::string> missing;
  if (response_text.empty()) missing.push_back("text");
  if (fusion.fused.size() == 0) missing.push_back("fused_style");
  if (fusion.weights.empty()) missing.push_back("weights");
  if (energies.empty()) missing.push_back("energies");
  if (!missing.empty()) {
    std::string msg = "control record missing fields:";
    for (const auto& m : missing) msg += " " + m;
    throw ValidationError(msg);
  }
  require(energies.size() == fusion.weights.size() && turn_indices.size() == energies.size(),
          "control record: per-turn lists must align");

  ControlRecord r;
  r.text = response_text;
  r.strategy = decision.strategy;
  r.alpha = decision.alpha;
  r.beta = decision.beta;
  r.fused_style = fusion.fused;
  for (std::size_t k = 0; k < energies.size(); ++k)
    r.turns.push_back({turn_indices[k], energies[k], fusion.weights[k]});
  return r;
}

std::string serialize_control_record(const ControlRecord& r) {
  json j;
  j["version"] = r.version;
  j["text"] = r.text;
  j["strategy"] = strategy_name(r.strategy);
  j["alpha"] = r.alpha;
  j["beta"] = r.beta;
  j["fused_style"] = std::vector<double>(r.fused_style.data(),
                                         r.fused_style.data() + r.fused_style.size());
  json turns = json::array();
  for (const auto& t : r.turns)
    turns.push_back({{"index", t.index}, {"energy", t.energy}, {"weight", t.weight}});
  j["turns"] = std::move(turns);
  return j.dump(2);
}

ControlRecord parse_control_record(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw RuntimeFailure(std::string("control record is not valid JSON: ") + e.what());
  }
  static const char* required[] = {"version", "text", "strategy", "alpha",
                                   "beta",    "fused_style", "turns"};
  std::string missing;
  for (const char* key : required)
    if (!j.contains(key)) missing += std::string(" ") + key;
  if (!missing.empty())
    throw ValidationError("control record missing fields:" + missing);
  const int version = j.at("version").get<int>();
  if (version != kControlRecordVersion)
    throw ValidationError("control record version mismatch: got " + std::to_string(version) +
                          ", expected " + std::to_string(kControlRecordVersion));
  ControlRecord r;
  r.version = version;
  r.text = j.at("text").get<std::string>();
  r.strategy = strategy_from_name(j.at("strategy").get<std::string>());
  r.alpha = j.at("alpha").get<double>();
  r.beta = j.at("beta").get<double>();
  const auto style = j.at("fused_style").get<std::vector<double>>();
  r.fused_style = Eigen::Map<const Vecd>(style.data(), static_cast<Index>(style.size()));
  for (const auto& jt : j.at("turns"))
    r.turns.push_back({jt.at("index").get<int>(), jt.at("energy").get<double>(),
                       jt.at("weight").get<double>()});
  return r;
}

FeatureStyleEncoder::FeatureStyleEncoder(Index style_dim, Index n_mels, std::uint64_t seed) {
  Rng rng(seed);
  projection_.resize(style_dim, 2 * n_mels);
  scaled_uniform_fill(projection_, rng);
}

Vecd FeatureStyleEncoder::encode(const features::FeatureMatrix& turn_features) const {
  require(2 * turn_features.dim() == projection_.cols(),
          "style encoder: mel dimension mismatch");
  Vecd stats(projection_.cols());
  stats.head(turn_features.dim()) = turn_features.values.colwise().mean().transpose();
  stats.tail(turn_features.dim()) = turn_features.values.colwise().maxCoeff().transpose();
  return projection_ * stats;
}

}  // namespace empath::synth
