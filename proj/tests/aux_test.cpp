// cyclevc/tests/aux_test.cpp

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

#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "cyclevc/aux_models.hpp"
#include "cyclevc/checkpoint.hpp"
#include "test_util.hpp"

using namespace cyclevc;
using namespace cyclevc::testutil;

namespace {

AuxConfig tiny_aux() {
  AuxConfig cfg = AuxConfig::desk();
  cfg.mel_bins = 12;
  cfg.sv_hidden = 8;
  cfg.asr_hidden = 10;
  cfg.asr_blocks = 1;
  cfg.pitch_hidden = 8;
  return cfg;
}

SyntheticSpec tiny_corpus_spec(uint64_t seed = 21) {
  SyntheticSpec spec;
  spec.languages = 2;
  spec.speakers_per_language = 2;
  spec.utterances_per_speaker = 4;
  spec.audio.mel_bins = 32;
  spec.seed = seed;
  for (int i = 0; i < 2; ++i) {
    LanguageParams lp = spec.params_for(i);
    lp.inventory_size = 5;
    lp.duration_mean = 7.0;
    lp.duration_jitter = 1.0;
    lp.sentence_len_min = 3;
    lp.sentence_len_max = 5;
    spec.language_params.push_back(lp);
  }
  return spec;
}

}  // namespace

TEST_CASE("sv embeddings are 256-dim and deterministic") {
  AuxConfig cfg = tiny_aux();
  SvModel sv(cfg, 3);
  std::mt19937_64 rng(4);
  Tensor mel_a = random_tensor(rng, 9, cfg.mel_bins, -6.0, -1.0);
  Tensor mel_b = random_tensor(rng, 17, cfg.mel_bins, -6.0, -1.0);
  Tensor ea = sv.forward(mel_a);
  CHECK(ea.cols() == 256);
  CHECK(sv.forward(mel_b).cols() == 256);
  CHECK(vectors_equal(ea.values(), sv.forward(mel_a).values()));
}

TEST_CASE("sv distillation regresses a constant teacher") {
  SyntheticSpec spec = tiny_corpus_spec();
  SyntheticCorpus sc = generate_synthetic_corpus(spec);
  std::string dir = temp_dir("svdistill");
  std::vector<double> teacher(256);
  for (int i = 0; i < 256; ++i) teacher[i] = 0.05 * std::sin(0.1 * i);
  write_teacher_embedding(dir + "/teacher.emb", teacher);
  std::vector<Utterance> utts;
  for (const auto& u : sc.corpus.utterances()) {
    Utterance copy = u;
    copy.teacher_embedding_path = dir + "/teacher.emb";
    utts.push_back(copy);
  }
  Corpus corpus(std::move(utts), spec.audio);
  AuxConfig cfg = tiny_aux();
  cfg.mel_bins = spec.audio.mel_bins;
  AuxTrainConfig tc;
  tc.steps = 250;
  tc.batch = 4;
  tc.lr = 3e-3;
  SvModel sv = train_sv(corpus, SvTrainMode::kDistill, cfg, tc);
  double worst = 0.0;
  for (const auto& u : corpus.utterances()) {
    auto e = sv.embed(u.mel);
    double se = 0.0;
    for (int i = 0; i < 256; ++i) se += (e[i] - teacher[i]) * (e[i] - teacher[i]);
    worst = std::max(worst, se / 256.0);
  }
  CHECK(worst < 1e-3);
  std::filesystem::remove_all(dir);
}

TEST_CASE("sv distillation requires teacher files") {
  SyntheticCorpus sc = generate_synthetic_corpus(tiny_corpus_spec());
  AuxTrainConfig tc;
  tc.steps = 1;
  CHECK_THROWS_WITH_AS(
      train_sv(sc.corpus, SvTrainMode::kDistill, tiny_aux(), tc),
      doctest::Contains("teacher"), std::runtime_error);
}

TEST_CASE("supervised sv training needs two speakers") {
  SyntheticSpec spec = tiny_corpus_spec();
  spec.languages = 1;
  spec.speakers_per_language = 1;
  SyntheticCorpus sc = generate_synthetic_corpus(spec);
  AuxTrainConfig tc;
  tc.steps = 1;
  CHECK_THROWS_WITH_AS(
      train_sv(sc.corpus, SvTrainMode::kSupervised, tiny_aux(), tc),
      doctest::Contains("2 speakers"), std::runtime_error);
}

TEST_CASE("sv training loss trends downward") {
  SyntheticSpec spec = tiny_corpus_spec();
  SyntheticCorpus sc = generate_synthetic_corpus(spec);
  AuxConfig cfg = tiny_aux();
  cfg.mel_bins = spec.audio.mel_bins;
  AuxTrainConfig tc;
  tc.steps = 120;
  tc.batch = 4;
  std::vector<double> curve;
  train_sv(sc.corpus, SvTrainMode::kSupervised, cfg, tc, &curve);
  REQUIRE(curve.size() == 120);
  auto avg = [&](int from) {
    double s = 0.0;
    for (int i = from; i < from + 10; ++i) s += curve[i];
    return s / 10.0;
  };
  CHECK(avg(110) < avg(0));
}

TEST_CASE("asr time reduction is exactly four") {
  AuxConfig cfg = tiny_aux();
  AsrModel asr(cfg, {"a", "b"}, 5);
  std::mt19937_64 rng(6);
  for (int frames : {100, 101, 102, 103, 104, 1, 4, 7}) {
    Tensor mel = random_tensor(rng, frames, cfg.mel_bins, -6.0, -1.0);
    AsrOutputs out = asr.forward(mel);
    CHECK(out.logits.rows() == (frames + 3) / 4);
    CHECK(out.last_hidden.rows() == (frames + 3) / 4);
    CHECK(out.logits.cols() == 3);
    CHECK(out.last_hidden.cols() == cfg.asr_hidden);
  }
  Tensor mel = random_tensor(rng, 10, cfg.mel_bins, -6.0, -1.0);
  CHECK(vectors_equal(asr.forward(mel).logits.values(),
                      asr.forward(mel).logits.values()));
}

TEST_CASE("asr last-hidden gradient matches finite differences") {
  AuxConfig cfg = tiny_aux();
  AsrModel asr(cfg, {"a", "b"}, 7);
  std::mt19937_64 rng(8);
  Tensor mel = Tensor::from(random_vec(rng, 8 * cfg.mel_bins, -3.0, -1.0), 8,
                            cfg.mel_bins, true);
  auto fn = [&] { return mean_all(asr.forward(mel).last_hidden); };
  CHECK(grad_check_param(fn, mel, 60).max_rel_err < 1e-3);
}

TEST_CASE("ctc greedy decode collapses repeats and drops blanks") {
  // Vocabulary {a, b}, blank = index 2. Argmax path: a a blank b.
  Tensor logits = Tensor::from({5, 0, 0,
                                5, 0, 0,
                                0, 0, 5,
                                0, 5, 0},
                               4, 3);
  AsrModel asr(tiny_aux(), {"a", "b"}, 9);
  CHECK(ctc_decode(asr, logits) == std::vector<std::string>{"a", "b"});
  Tensor blanks = Tensor::from({0, 0, 5, 0, 0, 5}, 2, 3);
  CHECK(ctc_decode_ids(blanks).empty());
}

TEST_CASE("asr training learns the synthetic phonemes") {
  SyntheticSpec spec = tiny_corpus_spec();
  SyntheticCorpus sc = generate_synthetic_corpus(spec);
  AuxConfig cfg = tiny_aux();
  cfg.mel_bins = spec.audio.mel_bins;
  cfg.asr_hidden = 24;
  AuxTrainConfig tc;
  tc.steps = 300;
  tc.batch = 4;
  tc.lr = 2e-3;
  std::vector<double> curve;
  AsrModel asr = train_asr(sc.corpus, cfg, tc, &curve);
  CHECK(curve.back() < curve.front());
  int exact = 0;
  for (const auto& u : sc.corpus.utterances()) {
    auto hyp = ctc_decode(asr, asr.forward(mel_to_tensor(u.mel)).logits);
    if (hyp == u.phone_tokens()) ++exact;
  }
  CHECK(exact > static_cast<int>(sc.corpus.size()) / 2);
}

TEST_CASE("pitch outputs keep the frame count and capture the first layer") {
  AuxConfig cfg = tiny_aux();
  PitchModel pitch(cfg, 10);
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> len(1, 60);
  for (int i = 0; i < 50; ++i) {
    int frames = len(rng);
    Tensor mel = random_tensor(rng, frames, cfg.mel_bins, -6.0, -1.0);
    PitchOutputs out = pitch.forward(mel);
    CHECK(out.first_hidden.rows() == frames);
    CHECK(out.f0_pred.rows() == frames);
    CHECK(out.f0_pred.cols() == 1);
  }
  Tensor mel = random_tensor(rng, 13, cfg.mel_bins, -6.0, -1.0);
  CHECK(vectors_equal(pitch.forward(mel).first_hidden.values(),
                      pitch.forward(mel).first_hidden.values()));
}

TEST_CASE("trained pitch predictor beats the constant-mean baseline") {
  SyntheticSpec spec = tiny_corpus_spec();
  SyntheticCorpus sc = generate_synthetic_corpus(spec);
  AuxConfig cfg = tiny_aux();
  cfg.mel_bins = spec.audio.mel_bins;
  cfg.pitch_hidden = 16;
  AuxTrainConfig tc;
  tc.steps = 1600;
  tc.batch = 4;
  tc.lr = 3e-3;
  PitchModel pitch = train_pitch(sc.corpus, cfg, tc);

  double model_se = 0.0, mean_se = 0.0;
  int voiced = 0;
  double log_mean = 0.0;
  for (const auto& u : sc.corpus.utterances())
    for (double v : u.f0)
      if (v > 0) {
        log_mean += std::log(v);
        ++voiced;
      }
  log_mean /= voiced;
  for (const auto& u : sc.corpus.utterances()) {
    Tensor pred = pitch.forward(mel_to_tensor(u.mel)).f0_pred;
    for (int t = 0; t < static_cast<int>(u.f0.size()); ++t) {
      if (u.f0[t] <= 0) continue;
      double target = std::log(u.f0[t]);
      model_se += (pred(t, 0) - target) * (pred(t, 0) - target);
      mean_se += (log_mean - target) * (log_mean - target);
    }
  }
  CHECK(model_se < mean_se);
}

TEST_CASE("frozen aux models pass input gradients but hold none themselves") {
  AuxConfig cfg = tiny_aux();
  SvModel sv(cfg, 12);
  sv.freeze();
  std::mt19937_64 rng(13);
  Tensor mel = Tensor::from(random_vec(rng, 6 * cfg.mel_bins, -4.0, -1.0), 6,
                            cfg.mel_bins, true);
  auto params = sv.params();
  params.zero_grad();
  Tensor loss = mean_all(sv.forward(mel));
  loss.backward();
  for (const auto& [name, p] : params.items)
    for (double g : p.grad()) CHECK(g == 0.0);
  bool any_input_grad = false;
  for (double g : mel.grad())
    if (g != 0.0) any_input_grad = true;
  CHECK(any_input_grad);
}

TEST_CASE("aux checkpoints round-trip with kind tags") {
  std::string dir = temp_dir("auxckpt");
  AuxConfig cfg = tiny_aux();
  std::mt19937_64 rng(14);
  Tensor mel = random_tensor(rng, 9, cfg.mel_bins, -5.0, -1.0);

  SvModel sv(cfg, 15);
  save_sv(dir + "/sv.ckpt", sv);
  CHECK(Checkpoint::load(dir + "/sv.ckpt").kind == "sv");
  SvModel sv2 = load_sv(dir + "/sv.ckpt");
  auto ea = sv.forward(mel).values();
  auto eb = sv2.forward(mel).values();
  for (size_t i = 0; i < ea.size(); ++i)
    CHECK(ea[i] == doctest::Approx(eb[i]).epsilon(1e-5));

  AsrModel asr(cfg, {"x", "y", "z"}, 16);
  save_asr(dir + "/asr.ckpt", asr);
  AsrModel asr2 = load_asr(dir + "/asr.ckpt");
  CHECK(asr2.vocab() == std::vector<std::string>{"x", "y", "z"});

  PitchModel pitch(cfg, 17);
  save_pitch(dir + "/pitch.ckpt", pitch);
  PitchModel pitch2 = load_pitch(dir + "/pitch.ckpt");
  CHECK(pitch2.forward(mel).f0_pred.rows() == 9);

  CHECK_THROWS_WITH_AS(load_sv(dir + "/asr.ckpt"), doctest::Contains("kind"),
                       std::runtime_error);
  std::filesystem::remove_all(dir);
}
