// cyclevc/tests/cli_test.cpp

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "cyclevc/audio.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string tool_path() {
  const char* env = std::getenv("CYCLEVC_BIN");
  REQUIRE_MESSAGE(env != nullptr, "CYCLEVC_BIN must point at the cyclevc binary");
  return env;
}

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_tool(const std::string& args) {
  std::string out_file = cyclevc::testutil::temp_dir("cli_out") + "/out.txt";
  std::string cmd = tool_path() + " " + args + " > " + out_file + " 2>&1";
  int rc = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  std::ifstream is(out_file);
  std::stringstream ss;
  ss << is.rdbuf();
  r.output = ss.str();
  fs::remove_all(fs::path(out_file).parent_path());
  return r;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

// Small synthetic-corpus spec shared by the pipeline tests.
std::string write_spec(const std::string& dir, int languages, uint64_t seed) {
  json spec;
  spec["languages"] = languages;
  spec["speakers_per_language"] = 2;
  spec["utterances_per_speaker"] = 4;
  spec["pitch_band"] = 6;
  spec["max_formant_shift"] = 2;
  spec["seed"] = seed;
  spec["audio"] = {{"mel_bins", 24}};
  json lp = {{"inventory_size", 4}, {"duration_mean", 4.0},
             {"sentence_len_min", 3}, {"sentence_len_max", 4}};
  spec["language_params"] = json::array();
  for (int i = 0; i < languages; ++i) {
    json l = lp;
    l["f0_base"] = 140.0 + 70.0 * i;
    spec["language_params"].push_back(l);
  }
  std::string path = dir + "/spec.json";
  std::ofstream os(path);
  os << spec.dump();
  return path;
}

std::string write_tiny_config(const std::string& dir) {
  json cfg;
  cfg["aux"] = {{"mel_bins", 24}, {"sv_hidden", 8}, {"asr_hidden", 8},
                {"asr_blocks", 1}, {"pitch_hidden", 8}};
  cfg["aux_train"] = {{"steps", 30}, {"batch", 2}, {"lr", 1e-3}, {"seed", 5}};
  cfg["net"] = {{"mel_bins", 24},    {"content_channels", 8},
                {"conformer_layers", 1}, {"conformer_heads", 2},
                {"conformer_ffn_mult", 2}, {"max_rel_pos", 8},
                {"encoder_hidden", 8},  {"content_layers", 2},
                {"content_hidden", 8},  {"decoder_blocks", 2},
                {"decoder_hidden", 8},  {"disc_channels", 4}};
  cfg["train"] = {{"batch_size", 1}, {"total_steps", 3}, {"seed", 5},
                  {"log_interval", 1}, {"checkpoint_interval", 100}};
  std::string path = dir + "/config.json";
  std::ofstream os(path);
  os << cfg.dump();
  return path;
}

}  // namespace

TEST_CASE("unknown flags are usage errors with exit code 1") {
  RunResult r = run_tool("synth-corpus --no-such-flag --out /tmp/x");
  CHECK(r.exit_code == 1);
  RunResult r2 = run_tool("definitely-not-a-command");
  CHECK(r2.exit_code == 1);
}

TEST_CASE("synth-corpus writes a deterministic corpus") {
  std::string dir = cyclevc::testutil::temp_dir("cli_synth");
  std::string spec = write_spec(dir, 2, 11);
  RunResult r1 = run_tool("synth-corpus --spec " + spec + " --out " + dir + "/a");
  CHECK(r1.exit_code == 0);
  std::string manifest = read_file(dir + "/a/manifest.jsonl");
  // 2 languages x 2 speakers x 4 utterances + the audio header line.
  CHECK(count_lines(manifest) == 17);
  CHECK(fs::exists(dir + "/a/factors.json"));
  CHECK(fs::exists(dir + "/a/config_echo.json"));

  RunResult r2 = run_tool("synth-corpus --spec " + spec + " --out " + dir + "/b");
  CHECK(r2.exit_code == 0);
  CHECK(read_file(dir + "/b/manifest.jsonl") == manifest);
  fs::remove_all(dir);
}

TEST_CASE("single-language corpora carry the warning flag in the manifest") {
  std::string dir = cyclevc::testutil::temp_dir("cli_warn");
  std::string spec = write_spec(dir, 1, 3);
  RunResult r = run_tool("synth-corpus --spec " + spec + " --out " + dir + "/c");
  CHECK(r.exit_code == 0);
  std::string manifest = read_file(dir + "/c/manifest.jsonl");
  CHECK(manifest.find("_warning") != std::string::npos);
  CHECK(manifest.find("2 languages") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("full pipeline: aux training, cycle training, convert, evaluate") {
  std::string dir = cyclevc::testutil::temp_dir("cli_pipe");
  std::string spec = write_spec(dir, 2, 21);
  std::string cfg = write_tiny_config(dir);
  REQUIRE(run_tool("synth-corpus --spec " + spec + " --out " + dir + "/corpus")
              .exit_code == 0);
  std::string manifest = dir + "/corpus/manifest.jsonl";

  for (std::string kind : {"sv", "asr", "pitch"}) {
    RunResult r = run_tool("train-aux --kind " + kind + " --manifest " + manifest +
                           " --config " + cfg + " --out " + dir + "/aux");
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(dir + "/aux/" + kind + ".ckpt"));
  }

  // Missing aux checkpoint must name the missing kind.
  RunResult missing =
      run_tool("train --manifest " + manifest + " --config " + cfg + " --sv " + dir +
               "/aux/sv.ckpt --asr " + dir + "/aux/asr.ckpt --out " + dir + "/t0");
  CHECK(missing.exit_code == 2);
  CHECK(missing.output.find("pitch") != std::string::npos);

  std::string aux_flags = " --sv " + dir + "/aux/sv.ckpt --asr " + dir +
                          "/aux/asr.ckpt --pitch " + dir + "/aux/pitch.ckpt";
  RunResult train = run_tool("train --manifest " + manifest + " --config " + cfg +
                             aux_flags + " --out " + dir + "/run");
  CHECK(train.exit_code == 0);
  CHECK(fs::exists(dir + "/run/generator.ckpt"));
  CHECK(fs::exists(dir + "/run/trainer.ckpt"));
  CHECK(fs::exists(dir + "/run/config_echo.json"));

  // The ablated training log contains only substep-1 records.
  RunResult abl = run_tool("train --manifest " + manifest + " --config " + cfg +
                           aux_flags + " --ablation wo_step23 --steps 2 --out " +
                           dir + "/abl");
  CHECK(abl.exit_code == 0);
  std::string log = read_file(dir + "/abl/train_log.jsonl");
  CHECK(log.find("\"substep\":1") != std::string::npos);
  CHECK(log.find("\"substep\":2") == std::string::npos);
  CHECK(log.find("\"substep\":3") == std::string::npos);

  // Mel-in/mel-out conversion preserves the source frame count. Manifest mel
  // paths are relative to the manifest directory.
  std::string src_mel, ref_mel;
  {
    std::ifstream is(manifest);
    std::string line;
    std::getline(is, line);  // audio header
    std::getline(is, line);
    src_mel = dir + "/corpus/" + json::parse(line)["mel"].get<std::string>();
    for (int i = 0; i < 5; ++i) std::getline(is, line);
    ref_mel = dir + "/corpus/" + json::parse(line)["mel"].get<std::string>();
  }
  RunResult conv = run_tool("convert --source " + src_mel + " --target " + ref_mel +
                            " --generator " + dir + "/run/generator.ckpt --out " +
                            dir + "/conv");
  CHECK(conv.exit_code == 0);
  cyclevc::MelSpec src = cyclevc::read_mel_cache(src_mel);
  cyclevc::MelSpec out = cyclevc::read_mel_cache(dir + "/conv/converted.mel");
  CHECK(out.frames == src.frames);
  CHECK(out.bins == src.bins);

  // Waveform export through phase reconstruction.
  RunResult convw =
      run_tool("convert --source " + src_mel + " --target " + ref_mel +
               " --generator " + dir + "/run/generator.ckpt --wav "
               "--phase-iterations 8 --out " + dir + "/convw");
  CHECK(convw.exit_code == 0);
  CHECK(fs::exists(dir + "/convw/converted.wav"));

  // Evaluation: zero pairs is a usage error; a real run writes a parsable
  // report whose means match the per-pair rows.
  RunResult zero = run_tool("evaluate --manifest " + manifest + " --generator " +
                            dir + "/run/generator.ckpt" + aux_flags +
                            " --pairs 0 --out " + dir + "/e0");
  CHECK(zero.exit_code == 1);
  RunResult eval = run_tool("evaluate --manifest " + manifest + " --generator " +
                            dir + "/run/generator.ckpt" + aux_flags +
                            " --pairs 6 --seed 3 --sim-matrix --out " + dir + "/eval");
  CHECK(eval.exit_code == 0);
  json report = json::parse(read_file(dir + "/eval/eval_report.json"));
  REQUIRE(report["pairs"].size() == 6);
  double mean = 0.0;
  for (const auto& p : report["pairs"]) mean += p["sim_target"].get<double>();
  mean /= 6.0;
  CHECK(report["mean_sim_target"].get<double>() == doctest::Approx(mean));
  CHECK(fs::exists(dir + "/eval/sim_matrix.csv"));

  fs::remove_all(dir);
}

TEST_CASE("train-aux distill mode without teacher files fails cleanly") {
  std::string dir = cyclevc::testutil::temp_dir("cli_distill");
  std::string spec = write_spec(dir, 2, 31);
  REQUIRE(run_tool("synth-corpus --spec " + spec + " --out " + dir + "/corpus")
              .exit_code == 0);
  json cfg;
  cfg["sv_mode"] = "distill";
  cfg["aux"] = {{"mel_bins", 24}, {"sv_hidden", 8}, {"asr_hidden", 8},
                {"asr_blocks", 1}, {"pitch_hidden", 8}};
  cfg["aux_train"] = {{"steps", 3}, {"batch", 2}};
  std::ofstream(dir + "/cfg.json") << cfg.dump();
  RunResult r = run_tool("train-aux --kind sv --manifest " + dir +
                         "/corpus/manifest.jsonl --config " + dir +
                         "/cfg.json --out " + dir + "/aux");
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("teacher") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("ablate emits a side-by-side report") {
  std::string dir = cyclevc::testutil::temp_dir("cli_ablate");
  std::string spec = write_spec(dir, 2, 41);
  std::string cfg = write_tiny_config(dir);
  REQUIRE(run_tool("synth-corpus --spec " + spec + " --out " + dir + "/corpus")
              .exit_code == 0);
  std::string manifest = dir + "/corpus/manifest.jsonl";
  for (std::string kind : {"sv", "asr", "pitch"})
    REQUIRE(run_tool("train-aux --kind " + kind + " --manifest " + manifest +
                     " --config " + cfg + " --out " + dir + "/aux")
                .exit_code == 0);
  RunResult r = run_tool(
      "ablate --manifest " + manifest + " --config " + cfg + " --sv " + dir +
      "/aux/sv.ckpt --asr " + dir + "/aux/asr.ckpt --pitch " + dir +
      "/aux/pitch.ckpt --settings wo_step23 --pairs 4 --holdout 1 --out " + dir +
      "/abl");
  CHECK(r.exit_code == 0);
  json report = json::parse(read_file(dir + "/abl/ablation.json"));
  REQUIRE(report.size() == 2);
  CHECK(report[0]["setting"] == "full");
  CHECK(report[1]["setting"] == "wo_step23");
  CHECK(fs::exists(dir + "/abl/ablation.csv"));
  fs::remove_all(dir);
}
