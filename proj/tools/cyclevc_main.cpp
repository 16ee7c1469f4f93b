// cyclevc/tools/cyclevc_main.cpp

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

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "cyclevc/aux_models.hpp"
#include "cyclevc/audio.hpp"
#include "cyclevc/corpus.hpp"
#include "cyclevc/eval.hpp"
#include "cyclevc/nets.hpp"
#include "cyclevc/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cyclevc;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  if (!is.good()) throw std::runtime_error("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(is),
                     std::istreambuf_iterator<char>());
}

json load_config_json(const std::string& path) {
  if (path.empty()) return json::object();
  return json::parse(read_file(path));
}

void write_config_echo(const std::string& out_dir, const std::string& command,
                       const json& resolved) {
  json echo;
  echo["command"] = command;
  echo["config"] = resolved;
  std::ofstream os(out_dir + "/config_echo.json");
  if (!os.good()) throw std::runtime_error("cannot write config echo in " + out_dir);
  os << echo.dump(2) << "\n";
}

AudioConfig audio_from_config(const json& cfg) {
  if (cfg.contains("audio")) return audio_config_from_json(cfg["audio"].dump());
  return AudioConfig{};
}

Corpus load_corpus_auto(const std::string& manifest, const json& cfg,
                        LoadReport* report = nullptr) {
  auto header = manifest_audio_header(manifest);
  AudioConfig audio = header ? *header : audio_from_config(cfg);
  return load_manifest(manifest, audio, report);
}

MelSpec load_source_features(const std::string& path, const AudioConfig& audio) {
  if (path.size() > 4 && path.substr(path.size() - 4) == ".wav")
    return extract_mel(read_wav(path, audio.sample_rate), audio);
  return read_mel_cache(path);
}

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs* args) {
  cmd->add_option("--config", args->config_path, "JSON configuration file");
  cmd->add_option("--out", args->out_dir, "output directory")->required();
  cmd->add_option("--seed", args->seed, "seed override");
}

// ---------------------------------------------------------------- commands

int cmd_synth_corpus(const CommonArgs& common, const std::string& spec_path) {
  SyntheticSpec spec;
  if (!spec_path.empty()) spec = synthetic_spec_from_json(read_file(spec_path));
  if (common.seed) spec.seed = *common.seed;
  fs::create_directories(common.out_dir);
  fs::create_directories(common.out_dir + "/mels");

  SyntheticCorpus synth = generate_synthetic_corpus(spec);
  for (const auto& u : synth.corpus.utterances())
    write_mel_cache(common.out_dir + "/mels/" + u.utterance_id + ".mel", u.mel);

  std::vector<std::string> warnings;
  if (spec.languages < 2)
    warnings.push_back("single-language corpus: cycle training needs >= 2 languages");
  // Relative mel paths keep regenerated manifests byte-identical and the
  // corpus directory relocatable.
  write_manifest(common.out_dir + "/manifest.jsonl", synth.corpus, "mels", warnings);

  json factors;
  for (const auto& [spk, f] : synth.factors)
    factors[spk] = {{"formant_shift", f.formant_shift},
                    {"spectral_tilt", f.spectral_tilt}};
  std::ofstream fo(common.out_dir + "/factors.json");
  fo << factors.dump(2) << "\n";

  write_config_echo(common.out_dir, "synth-corpus",
                    json::parse(synthetic_spec_to_json(spec)));
  std::cout << "wrote " << synth.corpus.size() << " utterances, "
            << synth.corpus.speakers().size() << " speakers to " << common.out_dir
            << "\n";
  return 0;
}

int cmd_train_aux(const CommonArgs& common, const std::string& kind,
                  const std::string& manifest) {
  json cfg = load_config_json(common.config_path);
  fs::create_directories(common.out_dir);
  LoadReport report;
  Corpus corpus = load_corpus_auto(manifest, cfg, &report);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";

  AuxConfig aux_cfg = AuxConfig::desk();
  if (cfg.contains("aux")) aux_cfg = aux_config_from_json(cfg["aux"].dump());
  aux_cfg.mel_bins = corpus.audio().mel_bins;
  AuxTrainConfig tc;
  if (cfg.contains("aux_train")) {
    const auto& t = cfg["aux_train"];
    if (t.contains("steps")) tc.steps = t["steps"].get<int>();
    if (t.contains("batch")) tc.batch = t["batch"].get<int>();
    if (t.contains("lr")) tc.lr = t["lr"].get<double>();
    if (t.contains("seed")) tc.seed = t["seed"].get<uint64_t>();
    if (t.contains("sv_margin")) tc.sv_margin = t["sv_margin"].get<double>();
    if (t.contains("sv_scale")) tc.sv_scale = t["sv_scale"].get<double>();
    if (t.contains("aug_max_shift")) tc.aug_max_shift = t["aug_max_shift"].get<int>();
    if (t.contains("aug_max_tilt")) tc.aug_max_tilt = t["aug_max_tilt"].get<double>();
  }
  if (common.seed) tc.seed = *common.seed;

  std::vector<double> curve;
  std::string ckpt = common.out_dir + "/" + kind + ".ckpt";
  if (kind == "sv") {
    SvTrainMode mode = SvTrainMode::kSupervised;
    if (cfg.contains("sv_mode") && cfg["sv_mode"] == "distill")
      mode = SvTrainMode::kDistill;
    SvModel model = train_sv(corpus, mode, aux_cfg, tc, &curve);
    save_sv(ckpt, model);
  } else if (kind == "asr") {
    AsrModel model = train_asr(corpus, aux_cfg, tc, &curve);
    save_asr(ckpt, model);
  } else if (kind == "pitch") {
    PitchModel model = train_pitch(corpus, aux_cfg, tc, &curve);
    save_pitch(ckpt, model);
  } else {
    throw std::runtime_error("train-aux: unknown kind '" + kind + "'");
  }
  std::ofstream losses(common.out_dir + "/" + kind + "_loss.jsonl");
  for (size_t i = 0; i < curve.size(); ++i)
    losses << json{{"step", i}, {"loss", curve[i]}}.dump() << "\n";

  json resolved;
  resolved["kind"] = kind;
  resolved["aux"] = json::parse(aux_config_to_json(aux_cfg));
  resolved["aux_train"] = {{"steps", tc.steps}, {"batch", tc.batch},
                           {"lr", tc.lr}, {"seed", tc.seed}};
  write_config_echo(common.out_dir, "train-aux", resolved);
  std::cout << "wrote " << ckpt << " (final loss "
            << (curve.empty() ? 0.0 : curve.back()) << ")\n";
  return 0;
}

AuxModels load_aux_models(const std::string& sv_path, const std::string& asr_path,
                          const std::string& pitch_path) {
  auto must_exist = [](const std::string& path, const char* kind) {
    if (path.empty() || !fs::exists(path))
      throw std::runtime_error(std::string("missing aux checkpoint: ") + kind +
                               " (" + (path.empty() ? "not given" : path) + ")");
  };
  must_exist(sv_path, "sv");
  must_exist(asr_path, "asr");
  must_exist(pitch_path, "pitch");
  AuxModels aux;
  aux.sv = load_sv(sv_path);
  aux.asr = load_asr(asr_path);
  aux.pitch = load_pitch(pitch_path);
  return aux;
}

int cmd_train(const CommonArgs& common, const std::string& manifest,
              const std::string& sv_path, const std::string& asr_path,
              const std::string& pitch_path, const std::string& ablation,
              int steps_override, const std::string& resume) {
  json cfg = load_config_json(common.config_path);
  fs::create_directories(common.out_dir);
  LoadReport report;
  Corpus corpus = load_corpus_auto(manifest, cfg, &report);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";

  AuxModels aux = load_aux_models(sv_path, asr_path, pitch_path);

  NetConfig net = NetConfig::desk();
  if (cfg.contains("net")) net = net_config_from_json(cfg["net"].dump());
  net.mel_bins = corpus.audio().mel_bins;
  TrainConfig train_cfg;
  if (cfg.contains("train")) train_cfg = train_config_from_json(cfg["train"].dump());
  if (!ablation.empty()) train_cfg.ablation = ablation;
  if (steps_override >= 0) train_cfg.total_steps = steps_override;
  if (common.seed) train_cfg.seed = *common.seed;

  CycleTrainer trainer =
      resume.empty() ? CycleTrainer(net, train_cfg, &aux)
                     : CycleTrainer::load_checkpoint(resume, &aux);
  auto result = trainer.train(corpus, common.out_dir + "/train_log.jsonl",
                              common.out_dir + "/trainer.ckpt");
  save_generator(common.out_dir + "/generator.ckpt", trainer.generator());

  json resolved;
  resolved["net"] = json::parse(net_config_to_json(trainer.net_config()));
  resolved["train"] = json::parse(train_config_to_json(trainer.train_config()));
  write_config_echo(common.out_dir, "train", resolved);
  std::cout << "ran " << result.steps_run << " steps; wrote "
            << common.out_dir + "/generator.ckpt" << "\n";
  return 0;
}

int cmd_convert(const CommonArgs& common, const std::string& source,
                const std::string& target, const std::string& gen_path,
                bool write_audio, int gl_iterations) {
  json cfg = load_config_json(common.config_path);
  fs::create_directories(common.out_dir);
  Generator gen = load_generator(gen_path);
  AudioConfig audio = audio_from_config(cfg);
  audio.mel_bins = gen.config().mel_bins;

  MelSpec src = load_source_features(source, audio);
  MelSpec ref = load_source_features(target, audio);
  MelSpec converted = gen.convert(src, ref, audio);
  write_mel_cache(common.out_dir + "/converted.mel", converted);
  if (write_audio) {
    auto wav = mel_to_waveform(converted, audio, gl_iterations);
    write_wav(common.out_dir + "/converted.wav", wav, audio.sample_rate);
  }

  json resolved;
  resolved["source"] = source;
  resolved["target"] = target;
  resolved["generator"] = gen_path;
  resolved["audio"] = json::parse(audio_config_to_json(audio));
  resolved["phase_reconstruction_iterations"] = write_audio ? gl_iterations : 0;
  write_config_echo(common.out_dir, "convert", resolved);
  std::cout << "wrote " << common.out_dir << "/converted.mel (" << converted.frames
            << " frames)\n";
  return 0;
}

int cmd_evaluate(const CommonArgs& common, const std::string& manifest,
                 const std::string& gen_path, const std::string& sv_path,
                 const std::string& asr_path, const std::string& pitch_path,
                 int pairs, const std::string& mode, bool emit_sim_matrix,
                 bool emit_embeddings) {
  json cfg = load_config_json(common.config_path);
  fs::create_directories(common.out_dir);
  Corpus corpus = load_corpus_auto(manifest, cfg);
  AuxModels aux = load_aux_models(sv_path, asr_path, pitch_path);
  Generator gen = load_generator(gen_path);

  uint64_t seed = common.seed.value_or(1);
  PairSpec spec;
  spec.num_pairs = pairs;
  spec.cross_language = mode != "same";
  EvalReport report = evaluate_conversion(gen, aux, corpus, spec, seed);
  json resolved;
  resolved["pairs"] = pairs;
  resolved["mode"] = mode;
  resolved["seed"] = seed;
  report.config_echo = resolved.dump();
  report.write_json(common.out_dir + "/eval_report.json");

  if (emit_sim_matrix) {
    SimMatrix m = sim_matrix(corpus, aux.sv, 0, seed);
    m.write_csv(common.out_dir + "/sim_matrix.csv");
  }
  if (emit_embeddings) {
    LabeledEmbeddings emb;
    for (const auto& u : corpus.utterances()) {
      emb.vectors.push_back(aux.sv.embed(u.mel));
      emb.labels.push_back(u.utterance_id + "|" + u.speaker_id + "|" + u.language_id);
    }
    export_embeddings(emb, common.out_dir + "/embeddings", true);
  }
  write_config_echo(common.out_dir, "evaluate", resolved);
  std::cout << "mean SIM to target " << report.mean_sim_target << ", mean PER "
            << report.mean_per << " over " << report.pairs.size() << " pairs\n";
  return 0;
}

int cmd_ablate(const CommonArgs& common, const std::string& manifest,
               const std::string& sv_path, const std::string& asr_path,
               const std::string& pitch_path, const std::string& settings_csv,
               int pairs, int holdout) {
  json cfg = load_config_json(common.config_path);
  fs::create_directories(common.out_dir);
  Corpus corpus = load_corpus_auto(manifest, cfg);
  AuxModels aux = load_aux_models(sv_path, asr_path, pitch_path);

  NetConfig net = NetConfig::desk();
  if (cfg.contains("net")) net = net_config_from_json(cfg["net"].dump());
  net.mel_bins = corpus.audio().mel_bins;
  TrainConfig train_cfg;
  if (cfg.contains("train")) train_cfg = train_config_from_json(cfg["train"].dump());
  if (common.seed) train_cfg.seed = *common.seed;

  std::vector<std::string> settings;
  std::stringstream ss(settings_csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) settings.push_back(item);

  auto [train_corpus, eval_corpus] = split_corpus(corpus, holdout);
  AblationReport report =
      run_ablation(settings, net, train_cfg, train_corpus, eval_corpus, aux, pairs,
                   train_cfg.seed);
  report.write_json(common.out_dir + "/ablation.json");
  report.write_csv(common.out_dir + "/ablation.csv");

  json resolved;
  resolved["settings"] = settings;
  resolved["pairs"] = pairs;
  resolved["holdout"] = holdout;
  resolved["net"] = json::parse(net_config_to_json(net));
  resolved["train"] = json::parse(train_config_to_json(train_cfg));
  write_config_echo(common.out_dir, "ablate", resolved);
  for (const auto& r : report.rows)
    std::cout << r.setting << ": SIM " << r.mean_sim_target << ", PER "
              << r.mean_per << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-lingual voice conversion toolkit"};
  app.require_subcommand(1);

  CommonArgs synth_args, aux_args, train_args, convert_args, eval_args, ablate_args;

  auto* synth = app.add_subcommand("synth-corpus", "generate a synthetic corpus");
  std::string synth_spec;
  synth->add_option("--spec", synth_spec, "synthetic corpus spec (JSON)");
  add_common(synth, &synth_args);

  auto* taux = app.add_subcommand("train-aux", "train an auxiliary model");
  std::string aux_kind, aux_manifest;
  taux->add_option("--kind", aux_kind, "sv | asr | pitch")
      ->required()
      ->check(CLI::IsMember({"sv", "asr", "pitch"}));
  taux->add_option("--manifest", aux_manifest, "corpus manifest")->required();
  add_common(taux, &aux_args);

  auto* train = app.add_subcommand("train", "run cycle training");
  std::string train_manifest, train_sv, train_asr, train_pitch, train_ablation,
      train_resume;
  int train_steps = -1;
  train->add_option("--manifest", train_manifest, "corpus manifest")->required();
  train->add_option("--sv", train_sv, "sv checkpoint");
  train->add_option("--asr", train_asr, "asr checkpoint");
  train->add_option("--pitch", train_pitch, "pitch checkpoint");
  train->add_option("--ablation", train_ablation,
                    "full | wo_step3 | wo_step23 | wo_asr | wo_conformer");
  train->add_option("--steps", train_steps, "override total steps");
  train->add_option("--resume", train_resume, "trainer checkpoint to resume");
  add_common(train, &train_args);

  auto* convert = app.add_subcommand("convert", "convert one utterance");
  std::string conv_source, conv_target, conv_gen;
  bool conv_wav = false;
  int conv_gl = 60;
  convert->add_option("--source", conv_source, "source wav or mel")->required();
  convert->add_option("--target", conv_target, "target reference wav or mel")
      ->required();
  convert->add_option("--generator", conv_gen, "generator checkpoint")->required();
  convert->add_flag("--wav", conv_wav, "also write a waveform");
  convert->add_option("--phase-iterations", conv_gl,
                      "iterative phase reconstruction steps");
  add_common(convert, &convert_args);

  auto* eval = app.add_subcommand("evaluate", "run the evaluation protocol");
  std::string eval_manifest, eval_gen, eval_sv, eval_asr, eval_pitch,
      eval_mode = "cross";
  int eval_pairs = 100;
  bool eval_simmat = false, eval_emb = false;
  eval->add_option("--manifest", eval_manifest, "corpus manifest")->required();
  eval->add_option("--generator", eval_gen, "generator checkpoint")->required();
  eval->add_option("--sv", eval_sv, "sv checkpoint");
  eval->add_option("--asr", eval_asr, "asr checkpoint");
  eval->add_option("--pitch", eval_pitch, "pitch checkpoint");
  eval->add_option("--pairs", eval_pairs, "sampled conversion pairs")
      ->check(CLI::PositiveNumber);
  eval->add_option("--mode", eval_mode, "cross | same")
      ->check(CLI::IsMember({"cross", "same"}));
  eval->add_flag("--sim-matrix", eval_simmat, "emit the (speaker,language) SIM grid");
  eval->add_flag("--export-embeddings", eval_emb,
                 "export SV embeddings with a 2-D projection");
  add_common(eval, &eval_args);

  auto* ablate = app.add_subcommand("ablate", "train and compare ablation variants");
  std::string abl_manifest, abl_sv, abl_asr, abl_pitch, abl_settings;
  int abl_pairs = 50, abl_holdout = 2;
  ablate->add_option("--manifest", abl_manifest, "corpus manifest")->required();
  ablate->add_option("--sv", abl_sv, "sv checkpoint");
  ablate->add_option("--asr", abl_asr, "asr checkpoint");
  ablate->add_option("--pitch", abl_pitch, "pitch checkpoint");
  ablate->add_option("--settings", abl_settings,
                     "comma list of wo_step3, wo_step23, wo_asr, wo_conformer");
  ablate->add_option("--pairs", abl_pairs, "evaluation pairs per variant")
      ->check(CLI::PositiveNumber);
  ablate->add_option("--holdout", abl_holdout, "held-out utterances per speaker");
  add_common(ablate, &ablate_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return cmd_synth_corpus(synth_args, synth_spec);
    if (taux->parsed()) return cmd_train_aux(aux_args, aux_kind, aux_manifest);
    if (train->parsed())
      return cmd_train(train_args, train_manifest, train_sv, train_asr, train_pitch,
                       train_ablation, train_steps, train_resume);
    if (convert->parsed())
      return cmd_convert(convert_args, conv_source, conv_target, conv_gen, conv_wav,
                         conv_gl);
    if (eval->parsed())
      return cmd_evaluate(eval_args, eval_manifest, eval_gen, eval_sv, eval_asr,
                          eval_pitch, eval_pairs, eval_mode, eval_simmat, eval_emb);
    if (ablate->parsed())
      return cmd_ablate(ablate_args, abl_manifest, abl_sv, abl_asr, abl_pitch,
                        abl_settings, abl_pairs, abl_holdout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
