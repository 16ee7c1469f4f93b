// cyclevc/tests/audio_test.cpp

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
#include <numbers>
#include <random>

#include "doctest.h"
#include "cyclevc/audio.hpp"
#include "test_util.hpp"

using namespace cyclevc;
using namespace cyclevc::testutil;

namespace {

std::vector<double> sinusoid(double hz, double seconds, int rate, double amp = 0.4) {
  std::vector<double> w(static_cast<size_t>(seconds * rate));
  for (size_t i = 0; i < w.size(); ++i)
    w[i] = amp * std::sin(2.0 * std::numbers::pi * hz * i / rate);
  return w;
}

// Independent mel-scale oracle for filter center frequencies.
double oracle_center_hz(const AudioConfig& cfg, int bin) {
  auto mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
  auto inv = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  double lo = mel(cfg.fmin), hi = mel(cfg.fmax);
  return inv(lo + (hi - lo) * (bin + 1) / (cfg.mel_bins + 1));
}

}  // namespace

TEST_CASE("silence hits the log floor with ceil frame count") {
  AudioConfig cfg;
  std::vector<double> w(1600, 0.0);
  MelSpec mel = extract_mel(w, cfg);
  CHECK(mel.frames == 10);
  CHECK(mel.bins == 80);
  for (double v : mel.values) CHECK(v == doctest::Approx(std::log(1e-5)));
}

TEST_CASE("frame count arithmetic") {
  AudioConfig cfg;
  CHECK(extract_mel(std::vector<double>(16000, 0.1), cfg).frames == 100);
  CHECK(mel_frame_count(1601, cfg) == 11);
  CHECK_THROWS(extract_mel({}, cfg));
}

TEST_CASE("frame count equals ceil(samples/hop) for random lengths") {
  AudioConfig cfg;
  cfg.frame_length = 256;
  cfg.hop_length = 64;
  cfg.fmax = 8000;
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> len_d(1, 4000);
  for (int i = 0; i < 1000; ++i) {
    int len = len_d(rng);
    MelSpec mel = extract_mel(std::vector<double>(len, 0.01), cfg);
    CHECK(mel.frames == (len + cfg.hop_length - 1) / cfg.hop_length);
  }
}

TEST_CASE("440 Hz sinusoid peaks at the right mel bin") {
  AudioConfig cfg;
  MelSpec mel = extract_mel(sinusoid(440.0, 0.5, cfg.sample_rate), cfg);
  // The filter whose oracle center frequency is nearest 440 Hz.
  int expect = 0;
  for (int b = 1; b < cfg.mel_bins; ++b)
    if (std::abs(oracle_center_hz(cfg, b) - 440.0) <
        std::abs(oracle_center_hz(cfg, expect) - 440.0))
      expect = b;
  for (int t = 2; t < mel.frames - 2; ++t) {
    int arg = 0;
    for (int b = 1; b < mel.bins; ++b)
      if (mel.at(t, b) > mel.at(t, arg)) arg = b;
    CHECK(std::abs(arg - expect) <= 1);
  }
}

TEST_CASE("pitch tracking on a sinusoid") {
  AudioConfig cfg;
  auto f0 = estimate_f0(sinusoid(220.0, 1.0, cfg.sample_rate), cfg);
  CHECK(f0.size() == static_cast<size_t>(mel_frame_count(16000, cfg)));
  int voiced = 0;
  for (size_t t = 4; t + 4 < f0.size(); ++t) {
    if (f0[t] > 0) {
      ++voiced;
      CHECK(f0[t] == doctest::Approx(220.0).epsilon(5.0 / 220.0));
    }
  }
  CHECK(voiced > static_cast<int>(f0.size()) / 2);
}

TEST_CASE("white noise is mostly unvoiced, silence fully") {
  AudioConfig cfg;
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> d(-0.5, 0.5);
  std::vector<double> noise(16000);
  for (auto& x : noise) x = d(rng);
  auto f0 = estimate_f0(noise, cfg);
  int unvoiced = 0;
  for (double v : f0)
    if (v == 0.0) ++unvoiced;
  CHECK(unvoiced >= static_cast<int>(0.9 * f0.size()));

  auto silent = estimate_f0(std::vector<double>(8000, 0.0), cfg);
  for (double v : silent) CHECK(v == 0.0);
}

TEST_CASE("f0 length always equals the mel frame count") {
  AudioConfig cfg;
  cfg.frame_length = 512;
  cfg.hop_length = 128;
  std::mt19937_64 rng(404);
  std::uniform_int_distribution<int> len_d(100, 9000);
  for (int i = 0; i < 30; ++i) {
    int len = len_d(rng);
    std::vector<double> w(len);
    for (auto& x : w) x = std::sin(0.05 * i);
    CHECK(estimate_f0(w, cfg).size() == extract_mel(w, cfg).values.size() / cfg.mel_bins);
  }
}

TEST_CASE("mel cache round trip") {
  AudioConfig cfg;
  cfg.mel_bins = 6;
  MelSpec mel = MelSpec::filled(4, 6, std::log(1e-5));
  mel.at(1, 2) = -3.25;
  mel.at(3, 5) = -0.5;
  std::string dir = temp_dir("melcache");
  write_mel_cache(dir + "/a.mel", mel);
  MelSpec back = read_mel_cache(dir + "/a.mel");
  CHECK(back.frames == 4);
  CHECK(back.bins == 6);
  CHECK(back.at(1, 2) == doctest::Approx(-3.25));
  CHECK(back.at(3, 5) == doctest::Approx(-0.5));
  std::filesystem::remove_all(dir);
}

TEST_CASE("wav io round trip and rate check") {
  std::string dir = temp_dir("wav");
  auto w = sinusoid(100.0, 0.05, 16000);
  write_wav(dir + "/a.wav", w, 16000);
  auto back = read_wav(dir + "/a.wav", 16000);
  CHECK(back.size() == w.size());
  for (size_t i = 0; i < w.size(); i += 97)
    CHECK(back[i] == doctest::Approx(w[i]).epsilon(1e-3));
  CHECK_THROWS_WITH_AS(read_wav(dir + "/a.wav", 22050),
                       doctest::Contains("does not match"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("phase reconstruction roughly preserves the mel envelope") {
  AudioConfig cfg;
  cfg.mel_bins = 40;
  cfg.frame_length = 512;
  cfg.hop_length = 128;
  auto w = sinusoid(500.0, 0.3, cfg.sample_rate);
  MelSpec mel = extract_mel(w, cfg);
  auto rec = mel_to_waveform(mel, cfg, 30);
  CHECK(rec.size() == static_cast<size_t>(mel.frames * cfg.hop_length));
  MelSpec mel2 = extract_mel(rec, cfg);
  // Peak bin should survive the round trip on interior frames.
  int matches = 0, total = 0;
  for (int t = 4; t < std::min(mel.frames, mel2.frames) - 4; ++t) {
    int a = 0, b = 0;
    for (int k = 1; k < cfg.mel_bins; ++k) {
      if (mel.at(t, k) > mel.at(t, a)) a = k;
      if (mel2.at(t, k) > mel2.at(t, b)) b = k;
    }
    total++;
    if (std::abs(a - b) <= 1) matches++;
  }
  CHECK(matches >= total * 3 / 4);
}
