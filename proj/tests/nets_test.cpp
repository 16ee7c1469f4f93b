// cyclevc/tests/nets_test.cpp

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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "doctest.h"
#include "cyclevc/checkpoint.hpp"
#include "cyclevc/nets.hpp"
#include "test_util.hpp"

using namespace cyclevc;
using namespace cyclevc::testutil;

namespace {

NetConfig mini_config() {
  NetConfig cfg = NetConfig::desk();
  cfg.mel_bins = 12;
  cfg.content_channels = 8;
  cfg.conformer_layers = 2;
  cfg.conformer_heads = 2;
  cfg.conformer_ffn_mult = 2;
  cfg.max_rel_pos = 8;
  cfg.encoder_hidden = 8;
  cfg.content_layers = 3;
  cfg.content_hidden = 8;
  cfg.decoder_blocks = 2;
  cfg.decoder_hidden = 8;
  cfg.disc_channels = 4;
  return cfg;
}

Tensor random_mel(std::mt19937_64& rng, int frames, int bins) {
  return random_tensor(rng, frames, bins, -8.0, -1.0);
}

}  // namespace

TEST_CASE("encode_content length contract and silence behavior") {
  NetConfig cfg = mini_config();
  Generator gen(cfg, 1);
  std::mt19937_64 rng(2);
  Tensor mel = random_mel(rng, 100, cfg.mel_bins);
  CHECK(gen.encode_content(mel).rows() == 100);
  CHECK(gen.encode_content(mel).cols() == cfg.content_channels);

  // Constant input -> interior rows equal (translation-invariant convs).
  Tensor silence = Tensor::full(40, cfg.mel_bins, std::log(1e-5));
  Tensor z = gen.encode_content(silence);
  const int margin = cfg.content_layers * (cfg.content_kernel - 1) / 2 + 1;
  for (int t = margin + 1; t < z.rows() - margin; ++t)
    for (int c = 0; c < z.cols(); ++c)
      CHECK(z(t, c) == doctest::Approx(z(margin, c)).epsilon(1e-12));
}

TEST_CASE("frozen content encoder receives zero gradient") {
  NetConfig cfg = mini_config();
  Generator gen(cfg, 1);
  gen.set_content_frozen(true);
  std::mt19937_64 rng(3);
  Tensor content = random_mel(rng, 12, cfg.mel_bins);
  Tensor ref = random_mel(rng, 10, cfg.mel_bins);
  Tensor loss = mean_all(gen.convert(content, ref));
  auto params = gen.params();
  params.zero_grad();
  loss.backward();
  int content_params = 0;
  for (const auto& [name, p] : params.items) {
    if (name.rfind("content", 0) != 0) continue;
    ++content_params;
    for (double g : p.grad()) CHECK(g == 0.0);
  }
  CHECK(content_params > 0);
}

TEST_CASE("external content features: length check and resampling") {
  NetConfig cfg = mini_config();
  Generator gen(cfg, 1);
  MelSpec mel = MelSpec::filled(20, cfg.mel_bins, -4.0);

  int calls = 0;
  gen.set_external_content(
      [&](const MelSpec& m) {
        ++calls;
        ExternalContentFeatures f;
        f.length = m.frames;  // rate 1
        f.channels = cfg.content_channels;
        f.values.assign(static_cast<size_t>(f.length) * f.channels, 0.25);
        return f;
      },
      1.0);
  Tensor z = gen.encode_content(mel);
  CHECK(z.rows() == 20);
  CHECK(calls == 1);
  CHECK_FALSE(z.requires_grad());

  Generator gen2(cfg, 1);
  gen2.set_external_content(
      [&](const MelSpec& m) {
        ExternalContentFeatures f;
        f.length = m.frames + 5;  // disagrees beyond +-1
        f.channels = cfg.content_channels;
        f.values.assign(static_cast<size_t>(f.length) * f.channels, 0.0);
        return f;
      },
      1.0);
  CHECK_THROWS_WITH_AS(gen2.encode_content(mel), doctest::Contains("disagrees"),
                       std::runtime_error);
}

TEST_CASE("encode_timbre is exactly frame-permutation invariant") {
  NetConfig cfg = mini_config();
  Generator gen(cfg, 4);
  std::mt19937_64 rng(5);
  Tensor mel = random_mel(rng, 9, cfg.mel_bins);
  Tensor s = gen.encode_timbre(mel);
  CHECK(s.rows() == 1);
  CHECK(s.cols() == cfg.content_channels);

  // Frame reversal.
  std::vector<double> rev(mel.values().size());
  for (int t = 0; t < 9; ++t)
    std::copy(mel.values().begin() + t * cfg.mel_bins,
              mel.values().begin() + (t + 1) * cfg.mel_bins,
              rev.begin() + (8 - t) * cfg.mel_bins);
  Tensor s_rev = gen.encode_timbre(Tensor::from(rev, 9, cfg.mel_bins));
  for (int c = 0; c < s.cols(); ++c)
    CHECK(s(0, c) == doctest::Approx(s_rev(0, c)).epsilon(1e-13));

  // Arbitrary permutation.
  std::vector<int> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> shuffled(mel.values().size());
  for (int t = 0; t < 9; ++t)
    std::copy(mel.values().begin() + perm[t] * cfg.mel_bins,
              mel.values().begin() + (perm[t] + 1) * cfg.mel_bins,
              shuffled.begin() + t * cfg.mel_bins);
  Tensor s_perm = gen.encode_timbre(Tensor::from(shuffled, 9, cfg.mel_bins));
  for (int c = 0; c < s.cols(); ++c)
    CHECK(s(0, c) == doctest::Approx(s_perm(0, c)).epsilon(1e-13));

  // Degenerate single-frame reference.
  Tensor one = random_mel(rng, 1, cfg.mel_bins);
  CHECK(gen.encode_timbre(one).cols() == cfg.content_channels);
}

TEST_CASE("fuse_fine_grained shape algebra") {
  NetConfig cfg = mini_config();
  cfg.content_channels = 64;
  cfg.conformer_heads = 4;
  cfg.ref_compress_factor = 4;
  Generator gen(cfg, 6);
  std::mt19937_64 rng(7);
  Tensor z_c = random_tensor(rng, 10, 64, -0.5, 0.5);
  Tensor s = random_tensor(rng, 1, 64, -0.5, 0.5);
  Tensor ref = random_mel(rng, 20, cfg.mel_bins);
  Tensor fused = gen.fuse_fine_grained(z_c, s, ref);
  CHECK(fused.rows() == 10);
  CHECK(fused.cols() == 128);

  // ceil(3/4) = 1 reference token.
  Tensor ref3 = random_mel(rng, 3, cfg.mel_bins);
  CHECK(stack_rows(ref3, 4).rows() == 1);
  Tensor fused3 = gen.fuse_fine_grained(z_c, s, ref3);
  CHECK(fused3.rows() == 10);
}

TEST_CASE("conformer attends to the reference tokens") {
  NetConfig cfg = mini_config();
  Generator gen(cfg, 8);
  std::mt19937_64 rng(9);
  Tensor z_c = random_tensor(rng, 8, cfg.content_channels, -0.5, 0.5);
  Tensor s = random_tensor(rng, 1, cfg.content_channels, -0.5, 0.5);
  Tensor ref = random_mel(rng, 12, cfg.mel_bins);
  Tensor with_ref = gen.fuse_fine_grained(z_c, s, ref, false);
  Tensor zero_ref = gen.fuse_fine_grained(z_c, s, ref, true);
  double max_diff = 0.0;
  for (size_t i = 0; i < with_ref.values().size(); ++i)
    max_diff = std::max(max_diff,
                        std::abs(with_ref.values()[i] - zero_ref.values()[i]));
  CHECK(max_diff > 0.0);
}

TEST_CASE("decode_mel length contract and zero map") {
  NetConfig cfg = mini_config();
  Generator gen(cfg, 10);
  std::mt19937_64 rng(11);
  Tensor h = random_tensor(rng, 100, 2 * cfg.content_channels, -0.5, 0.5);
  Tensor mel = gen.decode_mel(h, 100);
  CHECK(mel.rows() == 100);
  CHECK(mel.cols() == cfg.mel_bins);
  CHECK_THROWS_WITH_AS(gen.decode_mel(h, 90), doctest::Contains("length"),
                       std::runtime_error);

  auto params = gen.params();
  for (auto& [name, p] : params.items)
    if (name.rfind("dec.", 0) == 0)
      std::fill(p.values().begin(), p.values().end(), 0.0);
  Tensor zero_mel = gen.decode_mel(h, 100);
  for (double v : zero_mel.values()) CHECK(v == 0.0);
}

TEST_CASE("decoder gradient matches finite differences") {
  NetConfig cfg = mini_config();
  Generator gen(cfg, 12);
  std::mt19937_64 rng(13);
  Tensor h = Tensor::from(random_vec(rng, 6 * 2 * cfg.content_channels, -0.4, 0.4),
                          6, 2 * cfg.content_channels, true);
  auto fn = [&] { return mean_all(gen.decode_mel(h, 6)); };
  auto r = grad_check_param(fn, h, 96);
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("convert honors the content length over random shapes") {
  NetConfig cfg = mini_config();
  Generator gen(cfg, 14);
  std::mt19937_64 rng(15);
  std::uniform_int_distribution<int> len(2, 30);
  for (int i = 0; i < 100; ++i) {
    int tc = len(rng), tr = len(rng);
    Tensor out = gen.convert(random_mel(rng, tc, cfg.mel_bins),
                             random_mel(rng, tr, cfg.mel_bins));
    CHECK(out.rows() == tc);
    CHECK(out.cols() == cfg.mel_bins);
  }
}

TEST_CASE("convert is deterministic") {
  NetConfig cfg = mini_config();
  Generator gen(cfg, 16);
  std::mt19937_64 rng(17);
  Tensor content = random_mel(rng, 14, cfg.mel_bins);
  Tensor ref = random_mel(rng, 11, cfg.mel_bins);
  Tensor a = gen.convert(content, ref);
  Tensor b = gen.convert(content, ref);
  CHECK(vectors_equal(a.values(), b.values()));
}

TEST_CASE("discriminator grid shape is a pure function of input shape") {
  NetConfig cfg = mini_config();
  PatchDiscriminator disc(cfg, 18);
  std::mt19937_64 rng(19);
  Tensor a = random_mel(rng, 100, cfg.mel_bins);
  Tensor b = random_mel(rng, 100, cfg.mel_bins);
  Tensor sa = disc.forward(a);
  Tensor sb = disc.forward(b);
  CHECK(sa.shape() == sb.shape());
  auto [h, w] = PatchDiscriminator::grid_shape(100, cfg.mel_bins, cfg.disc_layers);
  CHECK(sa.shape()[1] == h);
  CHECK(sa.shape()[2] == w);
  CHECK(h == 7);  // ceil(100/16)
  CHECK(w == 1);  // ceil(12/16)
  for (double v : sa.values()) CHECK(std::isfinite(v));
}

TEST_CASE("discriminator gradient on an 8x16 mel") {
  NetConfig cfg = mini_config();
  cfg.mel_bins = 16;
  PatchDiscriminator disc(cfg, 20);
  std::mt19937_64 rng(21);
  Tensor mel = Tensor::from(random_vec(rng, 8 * 16, -2.0, 0.0), 8, 16, true);
  auto fn = [&] { return mse_const(disc.forward(mel), 1.0); };
  auto r = grad_check_param(fn, mel, 128);
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("generator checkpoints round-trip with shape verification") {
  NetConfig cfg = mini_config();
  Generator gen(cfg, 22);
  std::string dir = temp_dir("genckpt");
  save_generator(dir + "/g.ckpt", gen);
  Generator back = load_generator(dir + "/g.ckpt");
  std::mt19937_64 rng(23);
  Tensor content = random_mel(rng, 9, cfg.mel_bins);
  Tensor ref = random_mel(rng, 7, cfg.mel_bins);
  Tensor a = gen.convert(content, ref);
  Tensor b = back.convert(content, ref);
  // Stored as f32.
  for (size_t i = 0; i < a.values().size(); ++i)
    CHECK(a.values()[i] == doctest::Approx(b.values()[i]).epsilon(1e-4));

  // Loading into a mismatched architecture must fail by shape.
  NetConfig other = cfg;
  other.content_channels = 16;
  Generator wrong(other, 1);
  auto reg = wrong.params();
  Checkpoint ck = Checkpoint::load(dir + "/g.ckpt");
  CHECK_THROWS_WITH_AS(ck.load_into("", &reg), doctest::Contains("shape"),
                       std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("bypass fusion replaces the conformer when disabled") {
  NetConfig cfg = mini_config();
  cfg.use_conformer_fusion = false;
  Generator gen(cfg, 24);
  std::mt19937_64 rng(25);
  Tensor z_c = random_tensor(rng, 6, cfg.content_channels, -0.5, 0.5);
  Tensor s = random_tensor(rng, 1, cfg.content_channels, -0.5, 0.5);
  Tensor ref_a = random_mel(rng, 9, cfg.mel_bins);
  Tensor ref_b = random_mel(rng, 9, cfg.mel_bins);
  // The bypass ignores the fine-grained reference entirely.
  Tensor fa = gen.fuse_fine_grained(z_c, s, ref_a);
  Tensor fb = gen.fuse_fine_grained(z_c, s, ref_b);
  CHECK(vectors_equal(fa.values(), fb.values()));
  CHECK(fa.cols() == 2 * cfg.content_channels);
  auto params = gen.params();
  bool has_bypass = false, has_conformer = false;
  for (const auto& [name, p] : params.items) {
    if (name.rfind("bypass", 0) == 0) has_bypass = true;
    if (name.rfind("conformer", 0) == 0) has_conformer = true;
  }
  CHECK(has_bypass);
  CHECK_FALSE(has_conformer);
}
