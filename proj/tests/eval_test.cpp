// cyclevc/tests/eval_test.cpp

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
#include "cyclevc/eval.hpp"
#include "test_util.hpp"

using namespace cyclevc;
using namespace cyclevc::testutil;

namespace {

SyntheticSpec eval_spec(uint64_t seed = 70, bool bilingual = false) {
  SyntheticSpec spec;
  spec.languages = 2;
  spec.speakers_per_language = 2;
  spec.utterances_per_speaker = 4;
  spec.audio.mel_bins = 24;
  spec.pitch_band = 6;
  spec.max_formant_shift = 2;
  spec.bilingual_speakers = bilingual;
  spec.seed = seed;
  for (int i = 0; i < 2; ++i) {
    LanguageParams lp = spec.params_for(i);
    lp.inventory_size = 4;
    lp.duration_mean = 4.0;
    lp.sentence_len_min = 3;
    lp.sentence_len_max = 4;
    spec.language_params.push_back(lp);
  }
  return spec;
}

AuxModels untrained_aux(const Corpus& corpus) {
  AuxConfig cfg = AuxConfig::desk();
  cfg.mel_bins = corpus.audio().mel_bins;
  cfg.sv_hidden = 8;
  cfg.asr_hidden = 8;
  cfg.asr_blocks = 1;
  cfg.pitch_hidden = 8;
  AuxModels aux;
  aux.sv = SvModel(cfg, 71);
  aux.asr = AsrModel(cfg, corpus.phoneme_inventory(), 72);
  aux.pitch = PitchModel(cfg, 73);
  aux.sv.freeze();
  aux.asr.freeze();
  aux.pitch.freeze();
  return aux;
}

}  // namespace

TEST_CASE("cosine similarity boundary values") {
  std::vector<double> e = {1, 2, 3};
  std::vector<double> neg = {-1, -2, -3};
  std::vector<double> orth = {-2, 1, 0};
  CHECK(cosine_sim(e, e) == doctest::Approx(1.0));
  CHECK(cosine_sim(e, neg) == doctest::Approx(-1.0));
  CHECK(cosine_sim(e, orth) == doctest::Approx(0.0));
  CHECK_THROWS(cosine_sim({0, 0, 0}, e));
}

TEST_CASE("phoneme error rate cases") {
  using V = std::vector<std::string>;
  CHECK(phoneme_error_rate(V{"a", "b"}, V{"a", "b"}) == 0.0);
  CHECK(phoneme_error_rate(V{}, V{"a", "b", "c", "d"}) == doctest::Approx(1.0));
  CHECK(phoneme_error_rate(V{"a", "c", "d"}, V{"a", "b", "c", "d"}) ==
        doctest::Approx(0.25));
  CHECK_THROWS(phoneme_error_rate(V{"a"}, V{}));
}

TEST_CASE("sim matrix: one-pair cells stay within the cosine range") {
  SyntheticCorpus sc = generate_synthetic_corpus(eval_spec());
  AuxModels aux = untrained_aux(sc.corpus);
  SimMatrix m = sim_matrix(sc.corpus, aux.sv, 1, 5);
  CHECK(m.row_labels.size() == 4);
  CHECK(m.col_labels.size() == 4);
  for (double v : m.cells) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("exhaustive symmetric sim matrix is symmetric") {
  SyntheticCorpus sc = generate_synthetic_corpus(eval_spec());
  AuxModels aux = untrained_aux(sc.corpus);
  SimMatrix m = sim_matrix(sc.corpus, aux.sv, 0, 1);
  REQUIRE(m.row_labels == m.col_labels);
  for (size_t r = 0; r < m.row_labels.size(); ++r)
    for (size_t c = 0; c < m.col_labels.size(); ++c)
      CHECK(m.at(static_cast<int>(r), static_cast<int>(c)) ==
            doctest::Approx(m.at(static_cast<int>(c), static_cast<int>(r)))
                .epsilon(1e-9));
}

TEST_CASE("sim matrix language filters pick the cross-language grid") {
  SyntheticCorpus sc = generate_synthetic_corpus(eval_spec(70, true));
  AuxModels aux = untrained_aux(sc.corpus);
  SimMatrix m = sim_matrix(sc.corpus, aux.sv, 0, 1, "lang0", "lang1");
  CHECK(m.row_labels.size() == 2);
  CHECK(m.col_labels.size() == 2);
  for (const auto& [spk, lang] : m.row_labels) CHECK(lang == "lang0");
  for (const auto& [spk, lang] : m.col_labels) CHECK(lang == "lang1");
  std::string dir = temp_dir("simcsv");
  m.write_csv(dir + "/m.csv");
  CHECK(std::filesystem::exists(dir + "/m.csv"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("sim matrix errors on an exhausted cell") {
  SyntheticSpec spec = eval_spec();
  spec.utterances_per_speaker = 1;
  SyntheticCorpus sc = generate_synthetic_corpus(spec);
  AuxModels aux = untrained_aux(sc.corpus);
  CHECK_THROWS_WITH_AS(sim_matrix(sc.corpus, aux.sv, 0, 1),
                       doctest::Contains("empty cell"), std::runtime_error);
}

TEST_CASE("identity conversion stub calibrates the protocol") {
  SyntheticCorpus sc = generate_synthetic_corpus(eval_spec());
  AuxModels aux = untrained_aux(sc.corpus);
  PairSpec spec;
  spec.num_pairs = 24;
  spec.cross_language = true;
  EvalReport report = evaluate_conversion_with(
      [&](const Utterance& src, const Utterance&) { return mel_to_tensor(src.mel); },
      aux, sc.corpus, spec, 3);
  // The identity stub keeps the source speaker, so converted speech matches
  // the source embedding exactly.
  for (const auto& p : report.pairs)
    CHECK(p.sim_source == doctest::Approx(1.0).epsilon(1e-9));
  // PER of the stub equals the ground-truth PER of the recognizer itself.
  std::mt19937_64 rng(3);
  for (const auto& p : report.pairs) {
    const Utterance* src = nullptr;
    for (const auto& u : sc.corpus.utterances())
      if (u.utterance_id == p.source_utt) src = &u;
    REQUIRE(src != nullptr);
    auto hyp = ctc_decode(aux.asr, aux.asr.forward(mel_to_tensor(src->mel)).logits);
    CHECK(p.per == doctest::Approx(phoneme_error_rate(hyp, src->phone_tokens())));
  }
}

TEST_CASE("report aggregates equal recomputation from the pair table") {
  SyntheticCorpus sc = generate_synthetic_corpus(eval_spec());
  AuxModels aux = untrained_aux(sc.corpus);
  NetConfig cfg = NetConfig::desk();
  cfg.mel_bins = 24;
  cfg.content_channels = 8;
  cfg.conformer_layers = 1;
  cfg.encoder_hidden = 8;
  cfg.content_layers = 2;
  cfg.content_hidden = 8;
  cfg.decoder_blocks = 2;
  cfg.decoder_hidden = 8;
  Generator gen2(cfg, 4);
  PairSpec spec;
  spec.num_pairs = 10;
  EvalReport report = evaluate_conversion(gen2, aux, sc.corpus, spec, 9);
  double st = 0, ss = 0, pe = 0;
  int closer = 0;
  for (const auto& p : report.pairs) {
    st += p.sim_target;
    ss += p.sim_source;
    pe += p.per;
    if (p.sim_target > p.sim_source) ++closer;
  }
  CHECK(report.mean_sim_target == doctest::Approx(st / 10).epsilon(1e-12));
  CHECK(report.mean_sim_source == doctest::Approx(ss / 10).epsilon(1e-12));
  CHECK(report.mean_per == doctest::Approx(pe / 10).epsilon(1e-12));
  CHECK(report.closer_to_target_fraction == doctest::Approx(closer / 10.0));

  // Deterministic given the seed.
  EvalReport again = evaluate_conversion(gen2, aux, sc.corpus, spec, 9);
  CHECK(again.mean_sim_target == report.mean_sim_target);
  CHECK(again.mean_per == report.mean_per);

  std::string dir = temp_dir("evaljson");
  report.write_json(dir + "/r.json");
  CHECK(std::filesystem::exists(dir + "/r.json"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("embedding export round-trips and projects identical points together") {
  LabeledEmbeddings data;
  std::mt19937_64 rng(5);
  for (int i = 0; i < 6; ++i) {
    data.vectors.push_back(random_vec(rng, 16, -1.0, 1.0));
    data.labels.push_back("item" + std::to_string(i));
  }
  // Two identical embeddings.
  data.vectors[3] = data.vectors[1];
  std::string dir = temp_dir("emb");
  export_embeddings(data, dir + "/e", true);
  LabeledEmbeddings back = load_embeddings(dir + "/e");
  REQUIRE(back.vectors.size() == 6);
  CHECK(back.labels == data.labels);
  for (size_t i = 0; i < 6; ++i)
    for (size_t j = 0; j < 16; ++j)
      CHECK(back.vectors[i][j] == doctest::Approx(data.vectors[i][j]).epsilon(1e-6));

  auto proj = pca_2d(data.vectors);
  CHECK(proj[1][0] == doctest::Approx(proj[3][0]).epsilon(1e-9));
  CHECK(proj[1][1] == doctest::Approx(proj[3][1]).epsilon(1e-9));
  // Deterministic given input order.
  auto proj2 = pca_2d(data.vectors);
  for (size_t i = 0; i < proj.size(); ++i) {
    CHECK(proj[i][0] == proj2[i][0]);
    CHECK(proj[i][1] == proj2[i][1]);
  }
  CHECK(std::filesystem::exists(dir + "/e.pca.csv"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("empty ablation settings produce the full row only") {
  SyntheticCorpus sc = generate_synthetic_corpus(eval_spec());
  AuxModels aux = untrained_aux(sc.corpus);
  NetConfig net = NetConfig::desk();
  net.mel_bins = 24;
  net.content_channels = 8;
  net.conformer_layers = 1;
  net.encoder_hidden = 8;
  net.content_layers = 2;
  net.content_hidden = 8;
  net.decoder_blocks = 1;
  net.decoder_hidden = 8;
  net.disc_channels = 4;
  TrainConfig tc;
  tc.total_steps = 2;
  tc.batch_size = 1;
  auto [train_c, eval_c] = split_corpus(sc.corpus, 1);
  AblationReport report = run_ablation({}, net, tc, train_c, eval_c, aux, 5, 11);
  REQUIRE(report.rows.size() == 1);
  CHECK(report.rows[0].setting == "full");
  std::string dir = temp_dir("ablrep");
  report.write_json(dir + "/a.json");
  report.write_csv(dir + "/a.csv");
  CHECK(std::filesystem::exists(dir + "/a.json"));
  std::filesystem::remove_all(dir);
}
