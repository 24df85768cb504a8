// SPDX-License-Identifier: Apache-2.0
#include "empath/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "empath/config.hpp"
#include "empath/evalkit.hpp"
#include "empath/gradcheck.hpp"
#include "json.hpp"

namespace empath::cli {

using config::RunConfig;
using nlohmann::json;

namespace {

struct FlagOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> corpus, checkpoint, out, format, profile, style_roles;
  std::optional<int> steps, batch, epochs, n, max_new_tokens;
  std::optional<double> lr, lambda_kl, kd_temp, trend_tol, epsilon, lora_dropout;
};

void apply_overrides(RunConfig& cfg, const FlagOverrides& f) {
  if (f.seed) cfg.seed = *f.seed;
  if (f.corpus) cfg.corpus = *f.corpus;
  if (f.checkpoint) cfg.checkpoint = *f.checkpoint;
  if (f.out) cfg.out = *f.out;
  if (f.format) cfg.template_format = *f.format;
  if (f.style_roles) cfg.style_roles = *f.style_roles;
  if (f.steps) cfg.steps = *f.steps;
  if (f.batch) cfg.batch = *f.batch;
  if (f.epochs) cfg.epochs = *f.epochs;
  if (f.max_new_tokens) cfg.max_new_tokens = *f.max_new_tokens;
  if (f.lr) cfg.lr = *f.lr;
  if (f.lambda_kl) cfg.lambda_kl = *f.lambda_kl;
  if (f.kd_temp) cfg.kd_temp = *f.kd_temp;
  if (f.trend_tol) cfg.trend_tol = *f.trend_tol;
  if (f.epsilon) cfg.epsilon = *f.epsilon;
  if (f.lora_dropout) cfg.lora_dropout = *f.lora_dropout;
}

void require_valid(const RunConfig& cfg) {
  const auto problems = cfg.validate();
  if (problems.empty()) return;
  std::string msg = "configuration errors:";
  for (const auto& p : problems) msg += "\n  - " + p;
  throw ValidationError(msg);
}

/// "synth" or "synth:N" generates an in-memory corpus; otherwise load a manifest.
std::vector<corpus::DialogueHistory> resolve_corpus(const RunConfig& cfg, int default_n,
                                                    std::ostream& err,
                                                    const std::string& profile = "mixed") {
  if (cfg.corpus.empty()) throw ValidationError("no corpus given (--corpus)");
  if (cfg.corpus.rfind("synth", 0) == 0) {
    int n = default_n;
    const auto colon = cfg.corpus.find(':');
    if (colon != std::string::npos) n = std::stoi(cfg.corpus.substr(colon + 1));
    corpus::SynthSpec spec;
    spec.profile = corpus::profile_from_name(profile);
    return corpus::synth_corpus(n, cfg.seed, spec);
  }
  corpus::LoadReport report = corpus::load_corpus(cfg.corpus);
  for (const auto& e : report.errors)
    err << "corpus warning: dialogue " << e.dialogue_id << ": " << e.message << "\n";
  if (report.dialogues.empty()) throw ValidationError("corpus has no valid dialogues");
  return report.dialogues;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw RuntimeFailure("cannot write " + path);
  f << text;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw RuntimeFailure("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

int cmd_synth_corpus(const RunConfig& cfg, int n, const std::string& profile,
                     std::ostream& out) {
  if (cfg.out.empty()) throw ValidationError("synth-corpus needs --out <dir>");
  corpus::SynthSpec spec;
  spec.profile = corpus::profile_from_name(profile);
  const auto dialogues = corpus::synth_corpus(n, cfg.seed, spec);
  const std::string manifest = corpus::write_corpus(cfg.out, dialogues);
  write_text_file((std::filesystem::path(cfg.out) / "run_config.json").string(), cfg.to_json());
  out << "wrote " << dialogues.size() << " dialogues to " << manifest << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& profile, std::ostream& out,
              std::ostream& err) {
  require_valid(cfg);
  if (cfg.out.empty()) throw ValidationError("train needs --out <checkpoint path>");

  const auto dialogues = resolve_corpus(cfg, 64, err, profile);
  pipeline::Model model;
  model.init(cfg.model_config());

  std::vector<pipeline::Example> examples;
  examples.reserve(dialogues.size());
  for (const auto& d : dialogues) examples.push_back(pipeline::prepare_example(d, model.cfg));

  train::TrainOptions opts = cfg.train_options();
  if (opts.steps <= 0) {
    const int per_epoch =
        static_cast<int>((examples.size() + cfg.batch - 1) / static_cast<std::size_t>(cfg.batch));
    opts.steps = cfg.epochs * per_epoch;
  }

  std::ofstream log;
  const std::string log_path = cfg.out + ".log.jsonl";
  log.open(log_path);
  if (!log) throw RuntimeFailure("cannot write training log: " + log_path);
  log << json{{"config", json::parse(cfg.to_json())}}.dump() << "\n";

  train::Trainer trainer(model, opts);
  trainer.run(examples, [&](const train::StepCallbackInfo& info) {
    log << json{{"step", info.step},
                {"ce", info.report.ce},
                {"kl", info.report.kl},
                {"total", info.report.total},
                {"grad_norm", info.report.grad_norm}}
               .dump()
        << "\n";
    if (info.step % 50 == 0 || info.step == opts.steps)
      out << "step " << info.step << "  ce " << info.report.ce << "  kl " << info.report.kl
          << "  total " << info.report.total << "\n";
  });

  train::save_checkpoint(cfg.out, model.registry, cfg.to_json(), cfg.seed, trainer.steps_done());
  out << "checkpoint written to " << cfg.out << " (log: " << log_path << ")\n";
  return 0;
}

pipeline::Model load_model_from_checkpoint(const std::string& path, RunConfig& cfg_out) {
  if (path.empty()) throw ValidationError("missing checkpoint (--checkpoint)");
  if (!std::filesystem::exists(path)) throw ValidationError("missing checkpoint: " + path);
  const train::CheckpointInfo info = train::peek_checkpoint(path);
  cfg_out = RunConfig::from_json(info.config_json);
  pipeline::Model model;
  model.init(cfg_out.model_config());
  train::load_checkpoint(path, model.registry);
  return model;
}

corpus::DialogueHistory pick_dialogue(const std::string& dialogue_path, int index,
                                      std::ostream& err) {
  if (dialogue_path.empty()) throw ValidationError("missing dialogue manifest (--dialogue)");
  corpus::LoadReport report = corpus::load_corpus(dialogue_path);
  for (const auto& e : report.errors)
    err << "corpus warning: dialogue " << e.dialogue_id << ": " << e.message << "\n";
  if (report.dialogues.empty()) throw ValidationError("no valid dialogues in " + dialogue_path);
  if (index < 0 || index >= static_cast<int>(report.dialogues.size()))
    throw ValidationError("dialogue index out of range");
  return report.dialogues[static_cast<std::size_t>(index)];
}

int cmd_respond(RunConfig cli_cfg, const FlagOverrides& flags, const std::string& dialogue_path,
                int index, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  pipeline::Model model = load_model_from_checkpoint(cli_cfg.checkpoint, cfg);
  cfg.checkpoint = cli_cfg.checkpoint;
  apply_overrides(cfg, flags);  // stage-3 knobs may be overridden at respond time
  require_valid(cfg);

  const corpus::DialogueHistory dialogue = pick_dialogue(dialogue_path, index, err);
  const pipeline::Example ex = pipeline::prepare_example(dialogue, model.cfg, false);
  const std::string response = model.respond(ex, cfg.max_new_tokens);

  const synth::ControlRecord record =
      pipeline::stage3_control(dialogue, response, cfg.mel_config(), cfg.epsilon, cfg.trend_tol,
                               cfg.style_dim, cfg.seed, cfg.role_filter());

  json doc = json::parse(synth::serialize_control_record(record));
  doc["config"] = json::parse(cfg.to_json());
  const std::string payload = doc.dump(2);
  if (!cfg.out.empty())
    write_text_file(cfg.out, payload);
  else
    out << payload << "\n";
  out << "response: " << response << "\n";
  out << "strategy: " << synth::strategy_name(record.strategy) << " (alpha=" << record.alpha
      << ", beta=" << record.beta << ")\n";
  return 0;
}

int cmd_synth_control(const RunConfig& cfg, const std::string& dialogue_path, int index,
                      const std::string& text, std::ostream& out, std::ostream& err) {
  require_valid(cfg);
  if (text.empty()) throw ValidationError("synth-control needs --text <response text>");
  const corpus::DialogueHistory dialogue = pick_dialogue(dialogue_path, index, err);
  const synth::ControlRecord record =
      pipeline::stage3_control(dialogue, text, cfg.mel_config(), cfg.epsilon, cfg.trend_tol,
                               cfg.style_dim, cfg.seed, cfg.role_filter());
  json doc = json::parse(synth::serialize_control_record(record));
  doc["config"] = json::parse(cfg.to_json());
  const std::string payload = doc.dump(2);
  if (!cfg.out.empty())
    write_text_file(cfg.out, payload);
  else
    out << payload << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& predictions_path,
             const std::string& references_path, std::ostream& out, std::ostream& err) {
  const auto predictions = read_lines(predictions_path);
  const auto references = read_lines(references_path);
  if (predictions.empty()) throw ValidationError("prediction file is empty");
  if (predictions.size() != references.size())
    throw ValidationError("predictions and references differ in length");
  std::vector<std::string> warnings;
  const evalkit::MetricReport report = evalkit::evaluate_corpus(predictions, references,
                                                                &warnings);
  for (const auto& w : warnings) err << "warning: " << w << "\n";
  json doc = json::parse(evalkit::metric_report_to_json(report));
  doc["config"] = json::parse(cfg.to_json());
  if (!cfg.out.empty()) write_text_file(cfg.out, doc.dump(2));
  out << evalkit::metric_report_table(report);
  return 0;
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
  gradcheck::StandardSuite suite(cfg.seed);
  const gradcheck::Report report = gradcheck::run_all(suite.components());
  json doc = json::parse(gradcheck::report_to_json(report));
  doc["config"] = json::parse(cfg.to_json());
  const std::string payload = doc.dump(2);
  if (!cfg.out.empty()) write_text_file(cfg.out, payload);
  out << payload << "\n";
  return report.pass ? 0 : 2;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"empathetic speech dialogue pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  FlagOverrides flags;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--seed", flags.seed, "random seed");
  app.add_option("--corpus", flags.corpus, "corpus manifest path or synth[:n]");
  app.add_option("--checkpoint", flags.checkpoint, "checkpoint path");
  app.add_option("--out", flags.out, "output path");
  app.add_option("--steps", flags.steps, "training steps (overrides epochs)");
  app.add_option("--epochs", flags.epochs, "training epochs");
  app.add_option("--batch", flags.batch, "batch size");
  app.add_option("--lr", flags.lr, "learning rate");
  app.add_option("--lambda-kl", flags.lambda_kl, "distillation weight");
  app.add_option("--kd-temp", flags.kd_temp, "distillation temperature");
  app.add_option("--trend-tol", flags.trend_tol, "energy-trend tie tolerance");
  app.add_option("--epsilon", flags.epsilon, "inverse-energy smoothing epsilon");
  app.add_option("--lora-dropout", flags.lora_dropout, "low-rank adapter dropout");
  app.add_option("--format", flags.format, "template format: qwen-style | llama-style");
  app.add_option("--style-roles", flags.style_roles, "stage-3 role filter: all|speaker|listener");
  app.add_option("--max-new-tokens", flags.max_new_tokens, "decoding length cap");

  int n_dialogues = 64;
  std::string profile = "mixed";
  std::string dialogue_path, text, predictions_path, references_path;
  int dialogue_index = 0;

  auto* sc_train = app.add_subcommand("train", "train on a corpus and write a checkpoint");
  sc_train->add_option("--profile", profile, "synthetic corpus energy profile");

  auto* sc_respond = app.add_subcommand("respond", "generate a response and control record");
  sc_respond->add_option("--dialogue", dialogue_path, "dialogue manifest (jsonl)");
  sc_respond->add_option("--index", dialogue_index, "dialogue index in the manifest");

  auto* sc_synth = app.add_subcommand("synth-control", "stage-3 control record for given text");
  sc_synth->add_option("--dialogue", dialogue_path, "dialogue manifest (jsonl)");
  sc_synth->add_option("--index", dialogue_index, "dialogue index in the manifest");
  sc_synth->add_option("--text", text, "response text to wrap");

  auto* sc_eval = app.add_subcommand("eval", "text metrics for predictions vs references");
  sc_eval->add_option("--predictions", predictions_path, "one prediction per line");
  sc_eval->add_option("--references", references_path, "one reference per line");

  auto* sc_grad = app.add_subcommand("gradcheck", "finite-difference gradient verification");

  auto* sc_corpus = app.add_subcommand("synth-corpus", "write a synthetic corpus");
  sc_corpus->add_option("--n", n_dialogues, "number of dialogues");
  sc_corpus->add_option("--profile", profile, "energy profile: falling|rising|flat|mixed");

  // global flags may follow the subcommand name
  for (auto* sc : {sc_train, sc_respond, sc_synth, sc_eval, sc_grad, sc_corpus})
    sc->fallthrough();

  std::vector<const char*> argv;
  argv.push_back("empath");
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = RunConfig::load_file(config_path);
    apply_overrides(cfg, flags);

    if (sc_train->parsed()) return cmd_train(cfg, profile, out, err);
    if (sc_respond->parsed())
      return cmd_respond(cfg, flags, dialogue_path, dialogue_index, out, err);
    if (sc_synth->parsed())
      return cmd_synth_control(cfg, dialogue_path, dialogue_index, text, out, err);
    if (sc_eval->parsed()) return cmd_eval(cfg, predictions_path, references_path, out, err);
    if (sc_grad->parsed()) return cmd_gradcheck(cfg, out);
    if (sc_corpus->parsed()) return cmd_synth_corpus(cfg, n_dialogues, profile, out);
    err << "error: no subcommand\n";
    return 1;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace empath::cli
