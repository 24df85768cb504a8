// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "empath/cli.hpp"
#include "empath/config.hpp"
#include "json.hpp"

using namespace empath;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliResult r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Small everything: the CLI tests exercise wiring, not capacity.
std::string write_small_config(const std::string& dir) {
  config::RunConfig cfg;
  cfg.n_mels = 24;
  cfg.model_dim = 16;
  cfg.n_heads = 2;
  cfg.encoder_depth = 1;
  cfg.adapter_hidden_dim = 16;
  cfg.lm_model_dim = 16;
  cfg.lm_layers = 1;
  cfg.lm_heads = 2;
  cfg.max_len = 768;
  cfg.lora_rank = 4;
  cfg.lora_dropout = 0.0;
  cfg.style_dim = 8;
  const std::string path = (fs::path(dir) / "config.json").string();
  std::ofstream(path) << cfg.to_json();
  return path;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str(const std::string& child = "") const {
    return child.empty() ? path.string() : (path / child).string();
  }
};

}  // namespace

TEST_CASE("synth-corpus writes a loadable manifest with audio") {
  TempDir dir("empath_cli_corpus");
  const auto r = run_cli({"synth-corpus", "--out", dir.str("corpus"), "--n", "3", "--seed", "9",
                          "--profile", "falling"});
  CHECK(r.code == 0);
  const auto report = corpus::load_corpus(dir.str("corpus/manifest.jsonl"));
  CHECK(report.errors.empty());
  CHECK(report.dialogues.size() == 3);
  for (const auto& d : report.dialogues)
    for (const auto& t : d.turns) CHECK(fs::exists(t.audio_path));
  // config echo written alongside
  CHECK(fs::exists(dir.str("corpus/run_config.json")));
}

TEST_CASE("train writes a checkpoint and a step log; identical seeds match") {
  TempDir dir("empath_cli_train");
  const std::string cfg = write_small_config(dir.str());
  const std::vector<std::string> base = {"train",  "--config", cfg,       "--corpus", "synth:4",
                                         "--seed", "11",       "--steps", "4",        "--batch",
                                         "2",      "--lr",     "1e-3"};
  auto args1 = base;
  args1.push_back("--out");
  args1.push_back(dir.str("a.ckpt"));
  auto args2 = base;
  args2.push_back("--out");
  args2.push_back(dir.str("b.ckpt"));
  const auto r1 = run_cli(args1);
  REQUIRE(r1.code == 0);
  const auto r2 = run_cli(args2);
  REQUIRE(r2.code == 0);

  // logs: first line embeds the config, then one record per step
  const std::string log1 = read_file(dir.str("a.ckpt.log.jsonl"));
  std::istringstream lines(log1);
  std::string line;
  std::getline(lines, line);
  CHECK(nlohmann::json::parse(line).contains("config"));
  int steps = 0;
  double last_total = -1.0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("step"));
    CHECK(j.contains("ce"));
    CHECK(j.contains("kl"));
    CHECK(j.contains("total"));
    CHECK(j.contains("grad_norm"));
    last_total = j["total"].get<double>();
    ++steps;
  }
  CHECK(steps == 4);

  // byte-identical training trajectories for identical config + seed
  const std::string log2 = read_file(dir.str("b.ckpt.log.jsonl"));
  CHECK(log1 == log2);
  CHECK(last_total > 0.0);
}

TEST_CASE("train with lr 0 leaves parameters at their initial values") {
  TempDir dir("empath_cli_lr0");
  const std::string cfg = write_small_config(dir.str());
  REQUIRE(run_cli({"train", "--config", cfg, "--corpus", "synth:2", "--seed", "5", "--steps",
                   "3", "--batch", "1", "--lr", "0", "--out", dir.str("lr0.ckpt")})
              .code == 0);

  // rebuild the untouched initialization from the checkpoint's config echo
  const auto info = train::peek_checkpoint(dir.str("lr0.ckpt"));
  pipeline::Model fresh, trained;
  fresh.init(config::RunConfig::from_json(info.config_json).model_config());
  trained.init(config::RunConfig::from_json(info.config_json).model_config());
  train::load_checkpoint(dir.str("lr0.ckpt"), trained.registry);
  for (std::size_t i = 0; i < fresh.registry.entries().size(); ++i) {
    const Matd& x = fresh.registry.entries()[i].second->value;
    const Matd& y = trained.registry.entries()[i].second->value;
    INFO(fresh.registry.entries()[i].first);
    CHECK(x == y);
  }
}

TEST_CASE("respond requires a checkpoint and is deterministic per strategy fixture") {
  TempDir dir("empath_cli_respond");
  const std::string cfg = write_small_config(dir.str());

  const auto missing = run_cli({"respond", "--checkpoint", dir.str("absent.ckpt"), "--dialogue",
                                "whatever.jsonl"});
  CHECK(missing.code == 1);
  CHECK(missing.err.find("missing checkpoint") != std::string::npos);

  REQUIRE(run_cli({"train", "--config", cfg, "--corpus", "synth:2", "--seed", "3", "--steps",
                   "2", "--batch", "1", "--lr", "1e-3", "--out", dir.str("m.ckpt")})
              .code == 0);

  const std::map<std::string, std::string> expected = {
      {"falling", "comfort"}, {"rising", "encourage"}, {"flat", "neutral"}};
  for (const auto& [profile, strategy] : expected) {
    REQUIRE(run_cli({"synth-corpus", "--out", dir.str(profile), "--n", "1", "--seed", "21",
                     "--profile", profile})
                .code == 0);
    const std::string record_path = dir.str(profile + ".json");
    const auto r = run_cli({"respond", "--checkpoint", dir.str("m.ckpt"), "--dialogue",
                            dir.str(profile + "/manifest.jsonl"), "--out", record_path});
    REQUIRE(r.code == 0);
    const auto doc = nlohmann::json::parse(read_file(record_path));
    CHECK(doc["strategy"].get<std::string>() == strategy);
    CHECK(doc.contains("config"));  // artifacts embed the resolved run config

    const std::string again_path = dir.str(profile + "_again.json");
    const auto again = run_cli({"respond", "--checkpoint", dir.str("m.ckpt"), "--dialogue",
                                dir.str(profile + "/manifest.jsonl"), "--out", again_path});
    REQUIRE(again.code == 0);
    CHECK(read_file(record_path) == read_file(again_path));
  }
}

TEST_CASE("synth-control emits a parseable record for given text") {
  TempDir dir("empath_cli_sc");
  REQUIRE(run_cli({"synth-corpus", "--out", dir.str("c"), "--n", "1", "--seed", "4", "--profile",
                   "falling"})
              .code == 0);
  const auto r = run_cli({"synth-control", "--dialogue", dir.str("c/manifest.jsonl"), "--text",
                          "I hear you.", "--out", dir.str("rec.json")});
  REQUIRE(r.code == 0);
  const auto record = synth::parse_control_record(read_file(dir.str("rec.json")));
  CHECK(record.text == "I hear you.");
  CHECK(record.strategy == synth::Strategy::Comfort);
  CHECK(record.alpha == 0.85);
  CHECK(record.beta == 1.2);
  CHECK(record.fused_style.size() == 128);  // default style dimension

  const auto no_text = run_cli({"synth-control", "--dialogue", dir.str("c/manifest.jsonl")});
  CHECK(no_text.code == 1);
}

TEST_CASE("eval scores identity predictions at 1 and rejects empty files") {
  TempDir dir("empath_cli_eval");
  {
    std::ofstream p(dir.str("preds.txt")), q(dir.str("refs.txt"));
    p << "every small step counts\nthat sounds really hard\n";
    q << "every small step counts\nthat sounds really hard\n";
  }
  const auto r = run_cli({"eval", "--predictions", dir.str("preds.txt"), "--references",
                          dir.str("refs.txt"), "--out", dir.str("report.json")});
  REQUIRE(r.code == 0);
  const auto doc = nlohmann::json::parse(read_file(dir.str("report.json")));
  for (const auto& b : doc["bleu"]) CHECK(b.get<double>() == doctest::Approx(1.0));
  CHECK(doc["rouge"]["rl"].get<double>() == doctest::Approx(1.0));
  CHECK(doc.contains("config"));
  CHECK(r.out.find("BLEU-1") != std::string::npos);

  std::ofstream(dir.str("empty.txt")).close();
  const auto bad = run_cli({"eval", "--predictions", dir.str("empty.txt"), "--references",
                            dir.str("empty.txt")});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("empty") != std::string::npos);
}

TEST_CASE("gradcheck passes and reports per-component results") {
  TempDir dir("empath_cli_grad");
  const auto r = run_cli({"gradcheck", "--out", dir.str("report.json")});
  CHECK(r.code == 0);
  const auto doc = nlohmann::json::parse(read_file(dir.str("report.json")));
  CHECK(doc["pass"].get<bool>());
  CHECK(doc["components"].size() == 7);
  for (const auto& comp : doc["components"]) {
    CHECK(comp["pass"].get<bool>());
    CHECK(!comp["tensors"].empty());
  }
}

TEST_CASE("configuration problems are reported all at once") {
  TempDir dir("empath_cli_badcfg");
  const std::string path = dir.str("bad.json");
  std::ofstream(path) << R"({"stage1": {"model_dim": 10, "n_heads": 3},
                            "lora": {"rank": 0, "dropout": 1.5},
                            "train": {"clip": -1}})";
  const auto r = run_cli({"train", "--config", path, "--corpus", "synth:2", "--out",
                          dir.str("x.ckpt")});
  CHECK(r.code == 1);
  CHECK(r.err.find("stage1.model_dim") != std::string::npos);
  CHECK(r.err.find("lora.rank") != std::string::npos);
  CHECK(r.err.find("lora.dropout") != std::string::npos);
  CHECK(r.err.find("train.clip") != std::string::npos);
}

TEST_CASE("missing manifest is a runtime failure (exit 2)") {
  TempDir dir("empath_cli_missing");
  const std::string cfg = write_small_config(dir.str());
  const auto r = run_cli({"train", "--config", cfg, "--corpus", dir.str("nope.jsonl"), "--out",
                          dir.str("x.ckpt")});
  CHECK(r.code == 2);
}

TEST_CASE("help and unknown flags use conventional exit codes") {
  CHECK(run_cli({"--help"}).code == 0);
  CHECK(run_cli({"definitely-not-a-subcommand"}).code == 1);
}
