// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "empath/common.hpp"
#include "empath/features.hpp"

namespace empath::corpus {

enum class Role { Speaker, Listener };

std::string role_name(Role r);
Role role_from_name(const std::string& name);

struct Turn {
  int index = 0;
  Role role = Role::Speaker;
  std::string text;
  std::string audio_path;  // empty when the turn has no audio file
  std::optional<features::Waveform> waveform;        // in-memory audio, if present
  std::optional<features::FeatureMatrix> features;   // precomputed features, if present

  bool has_audio() const { return waveform.has_value() || !audio_path.empty(); }
};

/// A dialogue: chronological history turns plus the final listener target.
/// Roles alternate starting with the speaker; indices are contiguous from 0.
struct DialogueHistory {
  std::string dialogue_id;
  std::vector<Turn> turns;  // history only
  Turn target;              // final listener turn
};

struct LoadError {
  std::string dialogue_id;
  std::string message;
};

struct LoadReport {
  std::vector<DialogueHistory> dialogues;
  std::vector<LoadError> errors;
};

/// Validates role alternation, index contiguity, and target role. Returns an
/// error message, or empty when valid.
std::string validate_dialogue(const DialogueHistory& d);

/// Loads a line-delimited JSON manifest (one dialogue object per line:
/// {dialogue_id, turns: [{index, role, text, audio}]}; the last turn is the
/// target). Malformed entries are reported, not dropped silently.
LoadReport load_corpus(const std::string& manifest_path);

void save_corpus(const std::string& manifest_path, const std::vector<DialogueHistory>& dialogues);

// ---------------------------------------------------------------------------
// Chat templates
// ---------------------------------------------------------------------------

enum class TemplateFormat { QwenStyle, LlamaStyle };

TemplateFormat template_format_from_name(const std::string& name);
std::string template_format_name(TemplateFormat f);

/// End-of-message marker of a format (used as the decoding stop string).
std::string template_stop_marker(TemplateFormat f);

struct RenderResult {
  std::string text;
  std::size_t target_begin = 0;  // first byte of the target response text
  std::size_t target_end = 0;    // one past the target block (includes the end marker)
  std::size_t history_end = 0;   // where the continuation-instruction block starts
};

/// Byte-exact rendering: system block, alternating user/assistant history
/// blocks, the fixed continuation instruction, then (optionally) the target
/// block. Rendering without the target is a strict prefix of rendering with it.
RenderResult render_template(const DialogueHistory& d, TemplateFormat format,
                             bool include_target);

// ---------------------------------------------------------------------------
// Byte-level tokenizer stand-in
// ---------------------------------------------------------------------------

std::vector<int> tokenize(const std::string& text);
std::string detokenize(const std::vector<int>& tokens);

// ---------------------------------------------------------------------------
// Seeded synthetic corpus
// ---------------------------------------------------------------------------

enum class EnergyProfile { Falling, Rising, Flat, Mixed };

EnergyProfile profile_from_name(const std::string& name);

struct SynthSpec {
  EnergyProfile profile = EnergyProfile::Mixed;
  int min_history_turns = 3;   // odd counts keep the speaker first and last
  int max_history_turns = 5;
  double turn_seconds = 0.5;
  int sample_rate = 16000;
};

/// Deterministic synthetic dialogues with audio on every turn. Turn waveforms
/// are tone+noise mixtures whose per-turn gain follows the energy profile, so
/// falling/rising/flat trajectories are guaranteed by construction.
std::vector<DialogueHistory> synth_corpus(int n_dialogues, std::uint64_t seed,
                                          const SynthSpec& spec = {});

/// Writes manifest + WAV files for a generated corpus under `dir`.
std::string write_corpus(const std::string& dir, const std::vector<DialogueHistory>& dialogues);

}  // namespace empath::corpus
