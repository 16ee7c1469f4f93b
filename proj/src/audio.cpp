// cyclevc/audio.cpp

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

#include "cyclevc/audio.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace cyclevc {

namespace {

constexpr double kPi = std::numbers::pi;

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 FFT; falls back to a naive DFT for non
// power-of-two sizes (only hit with unusual frame lengths).
void fft(std::vector<std::complex<double>>& a) {
  const int n = static_cast<int>(a.size());
  if (!is_power_of_two(n)) {
    std::vector<std::complex<double>> out(n);
    for (int k = 0; k < n; ++k) {
      std::complex<double> s(0.0, 0.0);
      for (int t = 0; t < n; ++t)
        s += a[t] * std::polar(1.0, -2.0 * kPi * k * t / n);
      out[k] = s;
    }
    a = std::move(out);
    return;
  }
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * kPi / len;
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (int k = 0; k < len / 2; ++k) {
        auto u = a[i + k];
        auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

void ifft(std::vector<std::complex<double>>& a) {
  for (auto& x : a) x = std::conj(x);
  fft(a);
  const double inv = 1.0 / a.size();
  for (auto& x : a) x = std::conj(x) * inv;
}

// Reflect-padded sample lookup.
double sample_at(const std::vector<double>& w, long long i) {
  const long long n = static_cast<long long>(w.size());
  if (n == 1) return w[0];
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return w[static_cast<size_t>(i)];
}

// Triangular mel filterbank, rows = mel bins, cols = nfft/2+1.
std::vector<double> mel_filterbank(const AudioConfig& cfg, int n_bins) {
  const int n_freq = cfg.frame_length / 2 + 1;
  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(n_bins + 2);
  for (int i = 0; i < n_bins + 2; ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_bins + 1));
  std::vector<double> fb(static_cast<size_t>(n_bins) * n_freq, 0.0);
  for (int b = 0; b < n_bins; ++b) {
    double lo = edges[b], mid = edges[b + 1], hi = edges[b + 2];
    for (int f = 0; f < n_freq; ++f) {
      double hz = static_cast<double>(f) * cfg.sample_rate / cfg.frame_length;
      double w = 0.0;
      if (hz > lo && hz < hi)
        w = hz <= mid ? (hz - lo) / (mid - lo) : (hi - hz) / (hi - mid);
      fb[static_cast<size_t>(b) * n_freq + f] = w;
    }
  }
  return fb;
}

}  // namespace

void AudioConfig::validate() const {
  check(sample_rate > 0, "AudioConfig: sample_rate must be positive");
  check(mel_bins > 0, "AudioConfig: mel_bins must be positive");
  check(hop_length > 0 && frame_length >= hop_length,
        "AudioConfig: hop_length must be in (0, frame_length]");
  check(log_floor > 0.0, "AudioConfig: log_floor must be positive");
  check(fmax > fmin && fmax <= sample_rate / 2.0 + 1e-9,
        "AudioConfig: mel band must satisfy fmin < fmax <= Nyquist");
  check(f0_min > 0 && f0_max > f0_min, "AudioConfig: bad f0 search band");
}

MelSpec MelSpec::filled(int frames, int bins, double value) {
  MelSpec m;
  m.frames = frames;
  m.bins = bins;
  m.values.assign(static_cast<size_t>(frames) * bins, value);
  return m;
}

void MelSpec::validate(const AudioConfig& cfg) const {
  check(frames >= 1, "MelSpec: frames must be >= 1");
  check(bins == cfg.mel_bins, "MelSpec: bin count differs from AudioConfig");
  check(values.size() == static_cast<size_t>(frames) * bins,
        "MelSpec: value count mismatch");
  const double floor = std::log(cfg.log_floor) - 1e-9;
  for (double v : values)
    check(v >= floor, "MelSpec: value below log floor");
}

int mel_frame_count(int samples, const AudioConfig& cfg) {
  return (samples + cfg.hop_length - 1) / cfg.hop_length;
}

MelSpec extract_mel(const std::vector<double>& waveform, const AudioConfig& cfg) {
  cfg.validate();
  check(!waveform.empty(), "extract_mel: empty waveform");
  const int frames = mel_frame_count(static_cast<int>(waveform.size()), cfg);
  const int n = cfg.frame_length;
  const int n_freq = n / 2 + 1;
  std::vector<double> window(n);
  for (int i = 0; i < n; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / n);
  const auto fb = mel_filterbank(cfg, cfg.mel_bins);

  MelSpec mel;
  mel.frames = frames;
  mel.bins = cfg.mel_bins;
  mel.values.resize(static_cast<size_t>(frames) * cfg.mel_bins);

  std::vector<std::complex<double>> buf(n);
  std::vector<double> power(n_freq);
  const double floor_log = std::log(cfg.log_floor);
  for (int t = 0; t < frames; ++t) {
    const long long center = static_cast<long long>(t) * cfg.hop_length;
    for (int i = 0; i < n; ++i)
      buf[i] = sample_at(waveform, center - n / 2 + i) * window[i];
    fft(buf);
    for (int f = 0; f < n_freq; ++f) power[f] = std::norm(buf[f]);
    for (int b = 0; b < cfg.mel_bins; ++b) {
      const double* frow = &fb[static_cast<size_t>(b) * n_freq];
      double e = 0.0;
      for (int f = 0; f < n_freq; ++f) e += frow[f] * power[f];
      mel.at(t, b) = e > cfg.log_floor ? std::log(e) : floor_log;
    }
  }
  return mel;
}

std::vector<double> mel_center_frequencies(const AudioConfig& cfg) {
  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.fmax);
  std::vector<double> centers(cfg.mel_bins);
  for (int b = 0; b < cfg.mel_bins; ++b)
    centers[b] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * (b + 1) / (cfg.mel_bins + 1));
  return centers;
}

std::vector<double> estimate_f0(const std::vector<double>& waveform,
                                const AudioConfig& cfg) {
  cfg.validate();
  check(!waveform.empty(), "estimate_f0: empty waveform");
  const int frames = mel_frame_count(static_cast<int>(waveform.size()), cfg);
  const int lag_min = std::max(2, static_cast<int>(cfg.sample_rate / cfg.f0_max));
  const int lag_max = static_cast<int>(cfg.sample_rate / cfg.f0_min);
  const int win = std::max(cfg.frame_length, 2 * lag_max);
  std::vector<double> f0(frames, 0.0);
  std::vector<double> seg(win + lag_max);
  for (int t = 0; t < frames; ++t) {
    const long long center = static_cast<long long>(t) * cfg.hop_length;
    for (int i = 0; i < win + lag_max; ++i) {
      long long idx = center - win / 2 + i;
      seg[i] = (idx < 0 || idx >= static_cast<long long>(waveform.size()))
                   ? 0.0
                   : waveform[static_cast<size_t>(idx)];
    }
    double energy = 0.0;
    for (int i = 0; i < win; ++i) energy += seg[i] * seg[i];
    if (energy < 1e-10) continue;  // silence
    double best_r = 0.0;
    std::vector<double> corr(lag_max + 1, 0.0);
    for (int lag = lag_min; lag <= lag_max; ++lag) {
      double num = 0.0, e2 = 0.0;
      for (int i = 0; i < win; ++i) {
        num += seg[i] * seg[i + lag];
        e2 += seg[i + lag] * seg[i + lag];
      }
      double r = (e2 > 1e-10) ? num / std::sqrt(energy * e2) : 0.0;
      corr[lag] = r;
      best_r = std::max(best_r, r);
    }
    if (best_r < cfg.f0_voicing_threshold) continue;
    // Smallest local peak near the global maximum; avoids period multiples.
    int best_lag = 0;
    for (int lag = lag_min; lag <= lag_max; ++lag) {
      double left = lag > lag_min ? corr[lag - 1] : -1.0;
      double right = lag < lag_max ? corr[lag + 1] : -1.0;
      if (corr[lag] >= left && corr[lag] >= right && corr[lag] >= 0.98 * best_r) {
        best_lag = lag;
        break;
      }
    }
    if (best_lag == 0) continue;
    // Parabolic refinement around the peak.
    double lag = best_lag;
    if (best_lag > lag_min && best_lag < lag_max) {
      double a = corr[best_lag - 1], b = corr[best_lag], c = corr[best_lag + 1];
      double denom = a - 2.0 * b + c;
      if (std::abs(denom) > 1e-12) {
        double shift = 0.5 * (a - c) / denom;
        if (std::abs(shift) <= 1.0) lag += shift;
      }
    }
    double hz = cfg.sample_rate / lag;
    if (hz >= cfg.f0_min && hz <= cfg.f0_max) f0[t] = hz;
  }
  return f0;
}

std::vector<double> mel_to_waveform(const MelSpec& mel, const AudioConfig& cfg,
                                    int iterations) {
  cfg.validate();
  check(mel.bins == cfg.mel_bins, "mel_to_waveform: bin count mismatch");
  const int n = cfg.frame_length;
  const int n_freq = n / 2 + 1;
  const int hop = cfg.hop_length;
  const int frames = mel.frames;
  const auto fb = mel_filterbank(cfg, cfg.mel_bins);

  // Approximate mel inversion: transpose weighting normalized per column.
  std::vector<double> colsum(n_freq, 0.0);
  for (int b = 0; b < cfg.mel_bins; ++b)
    for (int f = 0; f < n_freq; ++f) colsum[f] += fb[static_cast<size_t>(b) * n_freq + f];
  std::vector<double> mag(static_cast<size_t>(frames) * n_freq, 0.0);
  for (int t = 0; t < frames; ++t)
    for (int f = 0; f < n_freq; ++f) {
      double e = 0.0;
      for (int b = 0; b < cfg.mel_bins; ++b)
        e += fb[static_cast<size_t>(b) * n_freq + f] * std::exp(mel.at(t, b));
      mag[static_cast<size_t>(t) * n_freq + f] =
          std::sqrt(std::max(0.0, e / std::max(colsum[f], 1e-8)));
    }

  std::vector<double> window(n);
  for (int i = 0; i < n; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / n);

  const int out_len = frames * hop;
  std::vector<double> phase(static_cast<size_t>(frames) * n_freq, 0.0);
  std::vector<double> wav(out_len, 0.0);
  std::vector<std::complex<double>> buf(n);

  for (int it = 0; it < iterations; ++it) {
    // ISTFT with overlap-add.
    std::fill(wav.begin(), wav.end(), 0.0);
    std::vector<double> wsum(out_len, 0.0);
    for (int t = 0; t < frames; ++t) {
      for (int f = 0; f < n_freq; ++f)
        buf[f] = std::polar(mag[static_cast<size_t>(t) * n_freq + f],
                            phase[static_cast<size_t>(t) * n_freq + f]);
      for (int f = n_freq; f < n; ++f) buf[f] = std::conj(buf[n - f]);
      ifft(buf);
      const long long center = static_cast<long long>(t) * hop;
      for (int i = 0; i < n; ++i) {
        long long idx = center - n / 2 + i;
        if (idx < 0 || idx >= out_len) continue;
        wav[static_cast<size_t>(idx)] += buf[i].real() * window[i];
        wsum[static_cast<size_t>(idx)] += window[i] * window[i];
      }
    }
    for (int i = 0; i < out_len; ++i)
      if (wsum[i] > 1e-8) wav[i] /= wsum[i];
    if (it + 1 == iterations) break;
    // Re-analyze, keep the phase.
    for (int t = 0; t < frames; ++t) {
      const long long center = static_cast<long long>(t) * hop;
      for (int i = 0; i < n; ++i) {
        long long idx = center - n / 2 + i;
        double s = (idx < 0 || idx >= out_len) ? 0.0 : wav[static_cast<size_t>(idx)];
        buf[i] = s * window[i];
      }
      fft(buf);
      for (int f = 0; f < n_freq; ++f)
        phase[static_cast<size_t>(t) * n_freq + f] = std::arg(buf[f]);
    }
  }
  double peak = 1e-9;
  for (double s : wav) peak = std::max(peak, std::abs(s));
  if (peak > 1.0)
    for (double& s : wav) s /= peak;
  return wav;
}

// ---------------------------------------------------------------- files

namespace {

template <typename T>
void write_raw(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("unexpected end of file");
  return v;
}

}  // namespace

void write_mel_cache(const std::string& path, const MelSpec& mel) {
  std::ofstream os(path, std::ios::binary);
  check(os.good(), "write_mel_cache: cannot open " + path);
  write_raw<uint32_t>(os, static_cast<uint32_t>(mel.frames));
  write_raw<uint32_t>(os, static_cast<uint32_t>(mel.bins));
  for (double v : mel.values) write_raw<float>(os, static_cast<float>(v));
  check(os.good(), "write_mel_cache: write failed for " + path);
}

MelSpec read_mel_cache(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), "read_mel_cache: cannot open " + path);
  MelSpec mel;
  mel.frames = static_cast<int>(read_raw<uint32_t>(is));
  mel.bins = static_cast<int>(read_raw<uint32_t>(is));
  check(mel.frames >= 1 && mel.bins >= 1 && mel.frames < (1 << 24) &&
            mel.bins < (1 << 16),
        "read_mel_cache: implausible header in " + path);
  mel.values.resize(static_cast<size_t>(mel.frames) * mel.bins);
  for (auto& v : mel.values) v = read_raw<float>(is);
  return mel;
}

std::vector<double> read_wav(const std::string& path, int expected_rate) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), "read_wav: cannot open " + path);
  char riff[4], wave[4];
  is.read(riff, 4);
  read_raw<uint32_t>(is);
  is.read(wave, 4);
  check(std::memcmp(riff, "RIFF", 4) == 0 && std::memcmp(wave, "WAVE", 4) == 0,
        "read_wav: not a RIFF/WAVE file: " + path);
  uint16_t channels = 0, bits = 0;
  uint32_t rate = 0;
  std::vector<double> samples;
  while (is) {
    char id[4];
    is.read(id, 4);
    if (!is) break;
    uint32_t size = read_raw<uint32_t>(is);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      uint16_t fmt = read_raw<uint16_t>(is);
      channels = read_raw<uint16_t>(is);
      rate = read_raw<uint32_t>(is);
      read_raw<uint32_t>(is);
      read_raw<uint16_t>(is);
      bits = read_raw<uint16_t>(is);
      check(fmt == 1, "read_wav: only PCM supported");
      check(channels == 1, "read_wav: only mono supported");
      check(bits == 16, "read_wav: only 16-bit supported");
      if (size > 16) is.seekg(size - 16, std::ios::cur);
    } else if (std::memcmp(id, "data", 4) == 0) {
      size_t count = size / 2;
      samples.resize(count);
      for (size_t i = 0; i < count; ++i)
        samples[i] = read_raw<int16_t>(is) / 32768.0;
      break;
    } else {
      is.seekg(size + (size & 1), std::ios::cur);
    }
  }
  check(!samples.empty(), "read_wav: no data chunk in " + path);
  check(static_cast<int>(rate) == expected_rate,
        "read_wav: sample rate " + std::to_string(rate) + " does not match configured " +
            std::to_string(expected_rate));
  return samples;
}

void write_wav(const std::string& path, const std::vector<double>& samples,
               int sample_rate) {
  std::ofstream os(path, std::ios::binary);
  check(os.good(), "write_wav: cannot open " + path);
  const uint32_t data_size = static_cast<uint32_t>(samples.size() * 2);
  os.write("RIFF", 4);
  write_raw<uint32_t>(os, 36 + data_size);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  write_raw<uint32_t>(os, 16);
  write_raw<uint16_t>(os, 1);
  write_raw<uint16_t>(os, 1);
  write_raw<uint32_t>(os, static_cast<uint32_t>(sample_rate));
  write_raw<uint32_t>(os, static_cast<uint32_t>(sample_rate * 2));
  write_raw<uint16_t>(os, 2);
  write_raw<uint16_t>(os, 16);
  os.write("data", 4);
  write_raw<uint32_t>(os, data_size);
  for (double s : samples) {
    double clipped = std::clamp(s, -1.0, 1.0);
    write_raw<int16_t>(os, static_cast<int16_t>(std::lround(clipped * 32767.0)));
  }
  check(os.good(), "write_wav: write failed for " + path);
}

}  // namespace cyclevc
