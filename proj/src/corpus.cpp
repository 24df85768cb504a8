// SPDX-License-Identifier: Apache-2.0
#include "empath/corpus.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "empath/wav.hpp"
#include "json.hpp"

namespace empath::corpus {

using nlohmann::json;

namespace {

constexpr const char* kSystemMessage =
    "You are a helpful assistant. Your response should fulfill requests with empathy toward "
    "user's emotion tone.";
constexpr const char* kContinuation =
    "Please continue the conversation naturally as the listener";

}  // namespace

std::string role_name(Role r) { return r == Role::Speaker ? "speaker" : "listener"; }

Role role_from_name(const std::string& name) {
  if (name == "speaker") return Role::Speaker;
  if (name == "listener") return Role::Listener;
  throw ValidationError("unknown role: " + name);
}

std::string validate_dialogue(const DialogueHistory& d) {
  if (d.turns.empty()) return "dialogue needs at least one history turn before the target";
  if (d.target.role != Role::Listener) return "target turn must have the listener role";
  for (std::size_t i = 0; i < d.turns.size(); ++i) {
    const Turn& t = d.turns[i];
    if (t.index != static_cast<int>(i))
      return "turn indices must be contiguous from 0 (turn " + std::to_string(i) + " has index " +
             std::to_string(t.index) + ")";
    const Role expected = (i % 2 == 0) ? Role::Speaker : Role::Listener;
    if (t.role != expected)
      return "roles must alternate starting with speaker (turn " + std::to_string(i) + " is " +
             role_name(t.role) + ")";
  }
  if (d.target.index != static_cast<int>(d.turns.size()))
    return "target index must follow the last history turn";
  return {};
}

LoadReport load_corpus(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw RuntimeFailure("cannot open corpus manifest: " + manifest_path);
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();

  LoadReport report;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::string id = "line " + std::to_string(line_no);
    try {
      const json j = json::parse(line);
      id = j.value("dialogue_id", id);
      DialogueHistory d;
      d.dialogue_id = j.at("dialogue_id").get<std::string>();
      std::vector<Turn> all;
      for (const auto& jt : j.at("turns")) {
        Turn t;
        t.index = jt.at("index").get<int>();
        t.role = role_from_name(jt.at("role").get<std::string>());
        t.text = jt.at("text").get<std::string>();
        if (jt.contains("audio") && !jt.at("audio").is_null()) {
          std::string rel = jt.at("audio").get<std::string>();
          t.audio_path = rel.empty() ? rel : (base / rel).string();
        }
        all.push_back(std::move(t));
      }
      if (all.size() < 2) throw ValidationError("dialogue needs history turns and a target");
      d.target = all.back();
      all.pop_back();
      d.turns = std::move(all);
      const std::string problem = validate_dialogue(d);
      if (!problem.empty()) throw ValidationError(problem);
      report.dialogues.push_back(std::move(d));
    } catch (const std::exception& e) {
      report.errors.push_back({id, e.what()});
    }
  }
  return report;
}

void save_corpus(const std::string& manifest_path,
                 const std::vector<DialogueHistory>& dialogues) {
  std::ofstream out(manifest_path);
  if (!out) throw RuntimeFailure("cannot write corpus manifest: " + manifest_path);
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  for (const auto& d : dialogues) {
    json turns = json::array();
    auto push = [&](const Turn& t) {
      json jt = {{"index", t.index}, {"role", role_name(t.role)}, {"text", t.text}};
      if (!t.audio_path.empty())
        jt["audio"] = std::filesystem::relative(t.audio_path, base).string();
      turns.push_back(std::move(jt));
    };
    for (const auto& t : d.turns) push(t);
    push(d.target);
    out << json{{"dialogue_id", d.dialogue_id}, {"turns", turns}}.dump() << "\n";
  }
}

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

TemplateFormat template_format_from_name(const std::string& name) {
  if (name == "qwen-style") return TemplateFormat::QwenStyle;
  if (name == "llama-style") return TemplateFormat::LlamaStyle;
  throw ValidationError("unknown template format: " + name);
}

std::string template_format_name(TemplateFormat f) {
  return f == TemplateFormat::QwenStyle ? "qwen-style" : "llama-style";
}

std::string template_stop_marker(TemplateFormat f) {
  return f == TemplateFormat::QwenStyle ? "<|im_end|>" : "<|eot_id|>";
}

RenderResult render_template(const DialogueHistory& d, TemplateFormat format,
                             bool include_target) {
  const std::string problem = validate_dialogue(d);
  require(problem.empty(), "cannot render invalid dialogue: " + problem);

  std::string s;
  auto block = [&](const std::string& role, const std::string& body) {
    if (format == TemplateFormat::QwenStyle) {
      s += "<|im_start|>" + role + "\n" + body + "<|im_end|>\n";
    } else {
      s += "<|start_header_id|>" + role + "<|end_header_id|>\n" + body + "<|eot_id|>\n";
    }
  };

  if (format == TemplateFormat::QwenStyle) {
    // The system block carries a second end marker on its own line.
    s += "<|im_start|>system\n";
    s += kSystemMessage;
    s += "<|im_end|>\n<|im_end|>\n";
  } else {
    s += "<|begin_of_text|><|start_header_id|>system<|end_header_id|>\n";
    s += kSystemMessage;
    s += "<|eot_id|>\n";
  }
  for (const auto& t : d.turns)
    block(t.role == Role::Speaker ? "user" : "assistant", t.text);

  RenderResult out;
  out.history_end = s.size();
  block("user", kContinuation);
  if (format == TemplateFormat::QwenStyle) {
    s += "<|im_start|>assistant\n";
  } else {
    s += "<|start_header_id|>assistant<|end_header_id|>\n";
  }
  out.target_begin = s.size();
  if (include_target) {
    s += d.target.text;
    s += template_stop_marker(format);
  }
  out.target_end = s.size();
  out.text = std::move(s);
  return out;
}

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

std::vector<int> tokenize(const std::string& text) {
  std::vector<int> tokens;
  tokens.reserve(text.size());
  for (unsigned char c : text) tokens.push_back(static_cast<int>(c));
  return tokens;
}

std::string detokenize(const std::vector<int>& tokens) {
  std::string s;
  s.reserve(tokens.size());
  for (int t : tokens) {
    require(t >= 0 && t < 256, "token out of byte range");
    s.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

EnergyProfile profile_from_name(const std::string& name) {
  if (name == "falling") return EnergyProfile::Falling;
  if (name == "rising") return EnergyProfile::Rising;
  if (name == "flat") return EnergyProfile::Flat;
  if (name == "mixed") return EnergyProfile::Mixed;
  throw ValidationError("unknown energy profile: " + name);
}

namespace {

const std::vector<std::string>& speaker_pool() {
  static const std::vector<std::string> pool = {
      "I feel stuck and tired lately.",
      "Nothing I try seems to work.",
      "Maybe small steps could help me.",
      "I am worried about my job.",
      "Today went better than I hoped.",
      "I keep doubting every choice I make.",
      "Talking about it helps a little.",
      "I want to feel in control again.",
  };
  return pool;
}

const std::vector<std::string>& listener_pool() {
  static const std::vector<std::string> pool = {
      "That sounds really hard to carry.",
      "It makes sense to feel that way.",
      "You are doing more than you think.",
      "Small steps still move you forward.",
      "I hear how much this weighs on you.",
      "Change can be slow and that is okay.",
      "Every bit of progress counts.",
      "You do not have to face it alone.",
  };
  return pool;
}

features::Waveform synth_turn_audio(Rng& rng, double gain, double seconds, int sample_rate) {
  const int n = static_cast<int>(seconds * sample_rate);
  const double freq = 180.0 + rng.uniform(0.0, 400.0);
  const double noise_amp = 0.1;
  features::Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double tone = 0.6 * std::sin(2.0 * std::numbers::pi * freq * i / sample_rate);
    const double noise = noise_amp * rng.uniform(-1.0, 1.0);
    w.samples[static_cast<std::size_t>(i)] = gain * (tone + noise);
  }
  return w;
}

}  // namespace

std::vector<DialogueHistory> synth_corpus(int n_dialogues, std::uint64_t seed,
                                          const SynthSpec& spec) {
  require(n_dialogues >= 1, "n_dialogues must be >= 1");
  require(spec.min_history_turns >= 1 && spec.max_history_turns >= spec.min_history_turns,
          "bad history turn bounds");
  Rng rng(seed);
  std::vector<DialogueHistory> out;
  out.reserve(static_cast<std::size_t>(n_dialogues));
  const auto& sp = speaker_pool();
  const auto& lp = listener_pool();

  for (int di = 0; di < n_dialogues; ++di) {
    EnergyProfile profile = spec.profile;
    if (profile == EnergyProfile::Mixed) {
      const EnergyProfile cycle[3] = {EnergyProfile::Falling, EnergyProfile::Rising,
                                      EnergyProfile::Flat};
      profile = cycle[di % 3];
    }
    // keep an odd history length so the speaker both opens and closes it
    int n_turns = spec.min_history_turns +
                  2 * static_cast<int>(rng.integer(
                          static_cast<std::uint64_t>(
                              (spec.max_history_turns - spec.min_history_turns) / 2 + 1)));

    DialogueHistory d;
    {
      std::ostringstream oss;
      oss << "dia" << std::setw(5) << std::setfill('0') << di;
      d.dialogue_id = oss.str();
    }

    // Flat dialogues reuse one waveform for every turn so the trajectory is
    // exactly constant; the other profiles draw fresh audio per turn.
    features::Waveform flat_audio;
    if (profile == EnergyProfile::Flat)
      flat_audio = synth_turn_audio(rng, 0.7, spec.turn_seconds, spec.sample_rate);

    for (int k = 0; k <= n_turns; ++k) {
      const bool is_target = k == n_turns;
      Turn t;
      t.index = k;
      t.role = (k % 2 == 0) ? Role::Speaker : Role::Listener;
      const auto& pool = t.role == Role::Speaker ? sp : lp;
      t.text = pool[rng.integer(pool.size())];
      if (!is_target || t.role == Role::Listener) {
        double gain = 0.7;
        const double frac = n_turns > 1 ? static_cast<double>(k) / (n_turns - 1) : 0.0;
        switch (profile) {
          case EnergyProfile::Falling: gain = 1.0 - 0.7 * frac; break;
          case EnergyProfile::Rising: gain = 0.3 + 0.7 * frac; break;
          default: gain = 0.7; break;
        }
        t.waveform = profile == EnergyProfile::Flat
                         ? flat_audio
                         : synth_turn_audio(rng, gain, spec.turn_seconds, spec.sample_rate);
      }
      if (is_target) {
        require(t.role == Role::Listener, "synth corpus target must be a listener turn");
        d.target = std::move(t);
      } else {
        d.turns.push_back(std::move(t));
      }
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::string write_corpus(const std::string& dir, const std::vector<DialogueHistory>& dialogues) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<DialogueHistory> with_paths = dialogues;
  for (auto& d : with_paths) {
    auto assign = [&](Turn& t) {
      if (!t.waveform) return;
      const std::string name = d.dialogue_id + "_utt" + std::to_string(t.index) + ".wav";
      const std::string path = (fs::path(dir) / name).string();
      features::write_wav(path, *t.waveform);
      t.audio_path = path;
    };
    for (auto& t : d.turns) assign(t);
    assign(d.target);
  }
  const std::string manifest = (fs::path(dir) / "manifest.jsonl").string();
  save_corpus(manifest, with_paths);
  return manifest;
}

}  // namespace empath::corpus
