// cyclevc/audio.hpp

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

#ifndef CYCLEVC_AUDIO_HPP
#define CYCLEVC_AUDIO_HPP

#include <string>
#include <vector>

namespace cyclevc {

struct AudioConfig {
  int sample_rate = 16000;
  int frame_length = 1024;  // STFT window, samples
  int hop_length = 160;     // samples
  int mel_bins = 80;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = 1e-5;  // amplitude floor before the log

  // Autocorrelation pitch tracker settings.
  double f0_min = 60.0;
  double f0_max = 500.0;
  double f0_voicing_threshold = 0.3;

  void validate() const;
};

// Log-amplitude mel spectrogram, row-major frames x bins.
struct MelSpec {
  int frames = 0;
  int bins = 0;
  std::vector<double> values;

  double at(int t, int b) const { return values[static_cast<size_t>(t) * bins + b]; }
  double& at(int t, int b) { return values[static_cast<size_t>(t) * bins + b]; }
  static MelSpec filled(int frames, int bins, double value);
  void validate(const AudioConfig& cfg) const;
};

// Number of frames produced by extract_mel for a waveform of `samples`.
int mel_frame_count(int samples, const AudioConfig& cfg);

// Center-padded STFT -> mel filterbank -> log(max(energy, log_floor)).
MelSpec extract_mel(const std::vector<double>& waveform, const AudioConfig& cfg);

// Normalized-autocorrelation pitch tracking. One value per mel frame,
// 0 for unvoiced frames, otherwise Hz within [f0_min, f0_max].
std::vector<double> estimate_f0(const std::vector<double>& waveform,
                                const AudioConfig& cfg);

// Center frequencies (Hz) of the mel filterbank; oracle-friendly export.
std::vector<double> mel_center_frequencies(const AudioConfig& cfg);

// Iterative phase reconstruction from a log-mel spectrogram.
std::vector<double> mel_to_waveform(const MelSpec& mel, const AudioConfig& cfg,
                                    int iterations = 60);

// ---- file formats ----

// Flat binary: two u32 LE counts (frames, bins), then frames*bins f32 LE
// values, row-major.
void write_mel_cache(const std::string& path, const MelSpec& mel);
MelSpec read_mel_cache(const std::string& path);

// Minimal mono PCM16 WAV support.
std::vector<double> read_wav(const std::string& path, int expected_rate);
void write_wav(const std::string& path, const std::vector<double>& samples,
               int sample_rate);

}  // namespace cyclevc

#endif  // CYCLEVC_AUDIO_HPP
