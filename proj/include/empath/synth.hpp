// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "empath/common.hpp"
#include "empath/corpus.hpp"
#include "empath/features.hpp"

namespace empath::synth {

inline constexpr int kControlRecordVersion = 1;

struct EnergyTrajectory {
  std::vector<double> energies;  // one per history turn, chronological

  std::size_t size() const { return energies.size(); }
};

enum class Strategy { Comfort, Encourage, Neutral };

std::string strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

/// Selected strategy with its prosody parameters. Only the three fixed
/// (strategy, alpha, beta) triples are ever produced.
struct StrategyDecision {
  Strategy strategy = Strategy::Neutral;
  double delta_e = 0.0;
  double alpha = 0.95;
  double beta = 1.0;
};

struct StyleFusion {
  std::vector<double> weights;  // positive, sum to 1
  double epsilon = 0.001;
  Vecd fused;                   // weighted combination of per-turn styles
};

/// TTS-agnostic boundary object handed to any downstream synthesizer.
struct ControlRecord {
  int version = kControlRecordVersion;
  std::string text;
  Strategy strategy = Strategy::Neutral;
  double alpha = 0.95;
  double beta = 1.0;
  Vecd fused_style;
  struct PerTurn {
    int index = 0;
    double energy = 0.0;
    double weight = 0.0;
  };
  std::vector<PerTurn> turns;
};

/// Restrict which history turns feed the trajectory and style fusion.
enum class RoleFilter { All, SpeakerOnly, ListenerOnly };

/// Per-turn mean energies over the dialogue history (chronological). Each turn
/// must carry audio or precomputed features; otherwise the error names the turn.
EnergyTrajectory energy_trajectory(const corpus::DialogueHistory& history,
                                   const features::MelConfig& mel = {},
                                   RoleFilter filter = RoleFilter::All);

/// Endpoint slope: (e_n - e_1) / (n - 1) for n >= 2 turns; 0 for a single turn.
double energy_trend(const EnergyTrajectory& traj);

/// Comfort when the trend falls below -tol, encourage above +tol, else neutral,
/// with the fixed prosody parameters per strategy.
StrategyDecision select_strategy(double delta_e, double tol = 1e-6);

/// Inverse-energy weights: w_k proportional to 1/(e_k + epsilon), normalized.
std::vector<double> fusion_weights(const std::vector<double>& energies, double epsilon = 0.001);

/// Convex combination of per-turn style vectors with the given weights.
Vecd fuse_styles(const std::vector<Vecd>& styles, const std::vector<double>& weights);

StyleFusion fuse(const std::vector<Vecd>& styles, const std::vector<double>& energies,
                 double epsilon = 0.001);

ControlRecord emit_control_record(const std::string& response_text,
                                  const StrategyDecision& decision, const StyleFusion& fusion,
                                  const std::vector<double>& energies,
                                  const std::vector<int>& turn_indices);

/// Versioned JSON serialization; parse(serialize(r)) == r.
std::string serialize_control_record(const ControlRecord& r);
ControlRecord parse_control_record(const std::string& text);

/// Deterministic stand-in for an external style encoder: a seeded random
/// projection of per-turn mel statistics onto a fixed-dimension style space.
class FeatureStyleEncoder {
 public:
  FeatureStyleEncoder(Index style_dim, Index n_mels, std::uint64_t seed);
  Vecd encode(const features::FeatureMatrix& turn_features) const;
  Index style_dim() const { return projection_.rows(); }

 private:
  Matd projection_;  // style_dim x (2 * n_mels)
};

}  // namespace empath::synth
