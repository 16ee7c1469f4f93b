// cyclevc/tests/losses_test.cpp

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
#include <random>

#include "doctest.h"
#include "cyclevc/losses.hpp"
#include "test_util.hpp"

using namespace cyclevc;
using namespace cyclevc::testutil;

namespace {

AuxConfig tiny_aux() {
  AuxConfig cfg = AuxConfig::desk();
  cfg.mel_bins = 10;
  cfg.sv_hidden = 8;
  cfg.asr_hidden = 8;
  cfg.asr_blocks = 1;
  cfg.pitch_hidden = 8;
  return cfg;
}

}  // namespace

TEST_CASE("reconstruction loss basics and a scalar-loop oracle") {
  std::mt19937_64 rng(31);
  Tensor m = random_tensor(rng, 3, 4, -2.0, 2.0);
  CHECK(recon_loss(m, m).item() == 0.0);
  CHECK(recon_loss(m, add_scalar(m, 1.0)).item() == doctest::Approx(1.0));
  Tensor m2 = random_tensor(rng, 3, 4, -2.0, 2.0);
  double oracle = 0.0;
  for (int t = 0; t < 3; ++t)
    for (int b = 0; b < 4; ++b) {
      double d = m(t, b) - m2(t, b);
      oracle += d * d;
    }
  oracle /= 12.0;
  CHECK(recon_loss(m, m2).item() == doctest::Approx(oracle).epsilon(1e-12));
  CHECK_THROWS(recon_loss(m, random_tensor(rng, 4, 3, -1.0, 1.0)));
}

TEST_CASE("timbre loss boundary values") {
  Tensor e = Tensor::from({1, 2, 3, 4}, 1, 4);
  Tensor neg = scale(e, -1.0);
  Tensor orth = Tensor::from({-2, 1, 0, 0}, 1, 4);
  CHECK(timbre_loss(e, e).item() == doctest::Approx(0.0));
  CHECK(timbre_loss(e, neg).item() == doctest::Approx(2.0));
  CHECK(timbre_loss(e, orth).item() == doctest::Approx(1.0));
  CHECK_THROWS(timbre_loss(Tensor::zeros(1, 4), e));
}

TEST_CASE("timbre loss range and scale invariance over random pairs") {
  std::mt19937_64 rng(32);
  std::uniform_real_distribution<double> pos(0.1, 5.0);
  for (int i = 0; i < 10000; ++i) {
    Tensor a = random_tensor(rng, 1, 8, -1.0, 1.0);
    Tensor b = random_tensor(rng, 1, 8, -1.0, 1.0);
    double na = 0, nb = 0;
    for (double v : a.values()) na += v * v;
    for (double v : b.values()) nb += v * v;
    if (na < 1e-12 || nb < 1e-12) continue;
    double v = timbre_loss(a, b).item();
    CHECK(v >= -1e-12);
    CHECK(v <= 2.0 + 1e-12);
    double scaled = timbre_loss(scale(a, pos(rng)), scale(b, pos(rng))).item();
    CHECK(scaled == doctest::Approx(v).epsilon(1e-9));
  }
}

TEST_CASE("perceptual losses vanish on identical inputs") {
  AuxConfig cfg = tiny_aux();
  PitchModel pitch(cfg, 2);
  AsrModel asr(cfg, {"a", "b"}, 3);
  std::mt19937_64 rng(33);
  Tensor m = random_tensor(rng, 8, cfg.mel_bins, -5.0, -1.0);
  CHECK(pitch_perceptual_loss(m, m, pitch).item() == doctest::Approx(0.0));
  CHECK(asr_perceptual_loss(m, m, asr).item() == doctest::Approx(0.0));
  Tensor other = random_tensor(rng, 8, cfg.mel_bins, -5.0, -1.0);
  CHECK(pitch_perceptual_loss(m, other, pitch).item() > 0.0);
  CHECK(asr_perceptual_loss(m, other, asr).item() > 0.0);
  CHECK_THROWS(pitch_perceptual_loss(m, random_tensor(rng, 5, cfg.mel_bins, -5.0, -1.0),
                                     pitch));
}

TEST_CASE("perceptual losses equal a two-pass recomputation") {
  AuxConfig cfg = tiny_aux();
  PitchModel pitch(cfg, 4);
  AsrModel asr(cfg, {"a", "b"}, 5);
  std::mt19937_64 rng(34);
  Tensor m = random_tensor(rng, 9, cfg.mel_bins, -5.0, -1.0);
  Tensor mhat = random_tensor(rng, 9, cfg.mel_bins, -5.0, -1.0);

  Tensor p_ref = pitch.forward(m).first_hidden;
  Tensor p_hat = pitch.forward(mhat).first_hidden;
  CHECK(pitch_perceptual_loss(m, mhat, pitch).item() ==
        doctest::Approx(mse(p_ref, p_hat).item()).epsilon(1e-12));

  Tensor a_ref = asr.forward(m).last_hidden;
  Tensor a_hat = asr.forward(mhat).last_hidden;
  CHECK(asr_perceptual_loss(m, mhat, asr).item() ==
        doctest::Approx(mse(a_ref, a_hat).item()).epsilon(1e-12));
}

TEST_CASE("quadratic scaling of embedding discrepancies") {
  std::mt19937_64 rng(35);
  Tensor ref = random_tensor(rng, 4, 6, -1.0, 1.0);
  Tensor delta = random_tensor(rng, 4, 6, -0.3, 0.3);
  double once = mse(add(ref, delta), ref).item();
  double twice = mse(add(ref, scale(delta, 2.0)), ref).item();
  CHECK(twice == doctest::Approx(4.0 * once).epsilon(1e-12));
}

TEST_CASE("perceptual loss gradients reach only the generated side") {
  AuxConfig cfg = tiny_aux();
  PitchModel pitch(cfg, 6);
  pitch.freeze();
  std::mt19937_64 rng(36);
  Tensor m = Tensor::from(random_vec(rng, 6 * cfg.mel_bins, -4.0, -1.0), 6,
                          cfg.mel_bins, true);
  Tensor mhat = Tensor::from(random_vec(rng, 6 * cfg.mel_bins, -4.0, -1.0), 6,
                             cfg.mel_bins, true);
  Tensor loss = pitch_perceptual_loss(m, mhat, pitch);
  loss.backward();
  CHECK(m.grad().empty());  // reference side is detached
  bool any = false;
  for (double g : mhat.grad())
    if (g != 0.0) any = true;
  CHECK(any);

  auto fn = [&] { return pitch_perceptual_loss(m, mhat, pitch); };
  CHECK(grad_check_param(fn, mhat, 60).max_rel_err < 1e-3);
}

TEST_CASE("asr perceptual gradient matches finite differences") {
  AuxConfig cfg = tiny_aux();
  AsrModel asr(cfg, {"a", "b"}, 7);
  asr.freeze();
  std::mt19937_64 rng(37);
  Tensor m = random_tensor(rng, 7, cfg.mel_bins, -4.0, -1.0);
  Tensor mhat = Tensor::from(random_vec(rng, 7 * cfg.mel_bins, -4.0, -1.0), 7,
                             cfg.mel_bins, true);
  auto fn = [&] { return asr_perceptual_loss(m, mhat, asr); };
  CHECK(grad_check_param(fn, mhat, 60).max_rel_err < 1e-3);
}

TEST_CASE("lsgan target values") {
  Tensor ones = Tensor::full(2, 3, 1.0);
  Tensor zeros = Tensor::zeros(2, 3);
  auto [g1, d1] = lsgan_losses(ones, zeros);
  CHECK(d1.item() == doctest::Approx(0.0));
  CHECK(g1.item() == doctest::Approx(1.0));
  auto [g2, d2] = lsgan_losses(ones, ones);
  CHECK(g2.item() == doctest::Approx(0.0));
  Tensor half = Tensor::full(1, 1, 0.5);
  auto [g3, d3] = lsgan_losses(half, half);
  CHECK(d3.item() == doctest::Approx(0.5));
  CHECK(g3.item() == doctest::Approx(0.25));
}

TEST_CASE("step composition follows the published weights") {
  LossWeights w;
  auto s = [](double v) { return Tensor::scalar(v); };
  LossBreakdown bd;
  Tensor c1 = compose_step_loss(
      1, {{"adv", s(0.4)}, {"rec", s(0.9)}, {"timbre", s(0.5)}, {"pitch", s(0.2)}},
      w, &bd);
  CHECK(c1.item() == doctest::Approx(1.17).epsilon(1e-12));
  CHECK(bd.substep == 1);
  CHECK(bd.composite == doctest::Approx(1.17));

  Tensor c2 = compose_step_loss(
      2, {{"adv", s(0.4)}, {"timbre", s(0.5)}, {"asr", s(0.6)}}, w, &bd);
  CHECK(c2.item() == doctest::Approx(0.37).epsilon(1e-12));

  // Step 3 follows the step-1 formula.
  Tensor c3 = compose_step_loss(
      3, {{"adv", s(0.4)}, {"rec", s(0.9)}, {"timbre", s(0.5)}, {"pitch", s(0.2)}},
      w, &bd);
  CHECK(c3.item() == doctest::Approx(1.17).epsilon(1e-12));

  CHECK_THROWS_WITH_AS(
      compose_step_loss(2,
                        {{"adv", s(0.1)}, {"timbre", s(0.1)}, {"asr", s(0.1)},
                         {"rec", s(0.1)}},
                        w),
      doctest::Contains("exactly"), std::runtime_error);
  CHECK_THROWS_WITH_AS(
      compose_step_loss(2, {{"adv", s(0.1)}, {"timbre", s(0.1)}, {"rec", s(0.1)}}, w),
      doctest::Contains("rec"), std::runtime_error);
  CHECK_THROWS(compose_step_loss(2, {{"adv", s(0.1)}, {"timbre", s(0.1)}}, w));
}

TEST_CASE("composition is linear in each component") {
  std::mt19937_64 rng(38);
  LossWeights w;
  std::uniform_real_distribution<double> d(0.0, 2.0);
  for (int i = 0; i < 200; ++i) {
    double adv = d(rng), rec = d(rng), timbre = d(rng), pitch = d(rng);
    auto s = [](double v) { return Tensor::scalar(v); };
    auto make = [&](double rec_v) {
      return compose_step_loss(1,
                               {{"adv", s(adv)}, {"rec", s(rec_v)},
                                {"timbre", s(timbre)}, {"pitch", s(pitch)}},
                               w)
          .item();
    };
    double base = make(rec);
    double bumped = make(rec + 1.0);
    CHECK(bumped - base == doctest::Approx(w.rec).epsilon(1e-9));
  }
}

TEST_CASE("required component sets per substep") {
  CHECK(required_components(1) ==
        std::vector<std::string>{"adv", "rec", "timbre", "pitch"});
  CHECK(required_components(2) == std::vector<std::string>{"adv", "timbre", "asr"});
  CHECK(required_components(3) ==
        std::vector<std::string>{"adv", "rec", "timbre", "pitch"});
  CHECK_THROWS(required_components(4));
}

TEST_CASE("timbre loss gradient matches finite differences") {
  std::mt19937_64 rng(39);
  Tensor e = random_tensor(rng, 1, 16, -1.0, 1.0);
  Tensor ehat = Tensor::from(random_vec(rng, 16, -1.0, 1.0), 1, 16, true);
  auto fn = [&] { return timbre_loss(e, ehat); };
  CHECK(grad_check_param(fn, ehat, 32).max_rel_err < 1e-3);
}
