// cyclevc/corpus.hpp

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

#ifndef CYCLEVC_CORPUS_HPP
#define CYCLEVC_CORPUS_HPP

#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "cyclevc/audio.hpp"

namespace cyclevc {

struct PhoneSpan {
  std::string token;
  int start = 0;  // inclusive frame
  int end = 0;    // exclusive frame
};

struct Utterance {
  std::string speaker_id;
  std::string language_id;
  std::string utterance_id;
  MelSpec mel;
  std::vector<PhoneSpan> phones;
  std::vector<double> f0;  // per mel frame, 0 when unvoiced
  std::string teacher_embedding_path;  // optional, SV distillation

  std::vector<std::string> phone_tokens() const;
  void validate(const AudioConfig& cfg) const;
};

// Immutable after construction; safe for concurrent readers.
class Corpus {
 public:
  Corpus() = default;
  Corpus(std::vector<Utterance> utterances, AudioConfig audio);

  const AudioConfig& audio() const { return audio_; }
  const std::vector<Utterance>& utterances() const { return utterances_; }
  size_t size() const { return utterances_.size(); }
  const Utterance& utt(int idx) const { return utterances_[idx]; }

  std::vector<std::string> speakers() const;
  std::vector<std::string> languages() const;
  const std::vector<int>& speaker_utts(const std::string& speaker) const;
  std::vector<std::string> speakers_of_language(const std::string& lang) const;
  std::vector<std::string> languages_of_speaker(const std::string& speaker) const;
  // Utterance indices for one (speaker, language) subset, sorted by utt id.
  const std::vector<int>& group(const std::string& speaker,
                                const std::string& lang) const;
  bool has_group(const std::string& speaker, const std::string& lang) const;

  // Sorted list of all phoneme tokens present in the corpus.
  std::vector<std::string> phoneme_inventory() const;

  bool is_monolingual() const;
  // Throws a corpus-consistency error when a speaker spans two languages.
  void require_monolingual() const;

 private:
  AudioConfig audio_;
  std::vector<Utterance> utterances_;
  std::map<std::string, std::vector<int>> by_speaker_;
  std::map<std::string, std::set<std::string>> speakers_by_language_;
  std::map<std::pair<std::string, std::string>, std::vector<int>> groups_;
};

struct LoadReport {
  std::vector<std::string> warnings;
};

// Newline-delimited JSON records. Fields: speaker, language, utt_id,
// audio or mel, phones = [[token, start_frame, end_frame], ...],
// optional f0 (per-frame array), optional teacher_emb (path). Records whose
// keys all start with '_' are headers: "_warning" entries are collected into
// the report, "_audio" echoes the feature configuration.
Corpus load_manifest(const std::string& path, const AudioConfig& cfg,
                     LoadReport* report = nullptr);
void write_manifest(const std::string& path, const Corpus& corpus,
                    const std::string& mel_dir,
                    const std::vector<std::string>& header_warnings = {});
// Reads the "_audio" header without loading the corpus.
std::optional<AudioConfig> manifest_audio_header(const std::string& path);

std::string audio_config_to_json(const AudioConfig& cfg);
AudioConfig audio_config_from_json(const std::string& text);

// ---- synthetic corpus ----

struct LanguageParams {
  int inventory_size = 8;
  double duration_mean = 6.0;   // frames per phoneme
  double duration_jitter = 2.0;
  double f0_base = 150.0;       // Hz
  double contour_depth = 0.08;  // relative F0 swing
  double contour_rate = 1.5;    // cycles per utterance
  int sentence_len_min = 5;
  int sentence_len_max = 9;
};

struct SpeakerFactors {
  int formant_shift = 0;      // mel bins, applied above the pitch band
  double spectral_tilt = 0.0;  // log-amplitude ramp across all bins
};

struct SyntheticSpec {
  int languages = 2;
  int speakers_per_language = 2;
  int utterances_per_speaker = 8;
  std::vector<LanguageParams> language_params;  // sized to `languages`
  int max_formant_shift = 3;
  double max_spectral_tilt = 2.0;
  int pitch_band = 8;  // low mel bins reserved for the pitch bump
  bool bilingual_speakers = false;
  uint64_t seed = 1;
  AudioConfig audio;

  void validate() const;
  LanguageParams params_for(int lang_index) const;
};

struct SyntheticCorpus {
  Corpus corpus;
  std::map<std::string, SpeakerFactors> factors;
};

std::string synthetic_spec_to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const std::string& text);

// Deterministic for a fixed seed. Each mel is a speaker-independent base
// (phoneme spectral templates + pitch-contour bump) passed through the
// speaker's timbre transform; alignments and F0 are stored exactly.
SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec);

// The documented per-frame timbre transform: roll bins above the pitch band
// by formant_shift (vacated bins filled with the log floor), then add
// spectral_tilt * bin/(bins-1) to every bin.
MelSpec apply_timbre_transform(const MelSpec& mel, const SpeakerFactors& f,
                               const SyntheticSpec& spec);
MelSpec invert_timbre_transform(const MelSpec& mel, const SpeakerFactors& f,
                                const SyntheticSpec& spec);

// Deterministic split: the last `holdout` utterances (by id) of every
// (speaker, language) group go to the second corpus.
std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus, int holdout);

// ---- cycle batches ----

struct CycleItem {
  int step1_content = -1;  // speech#1, speaker 1, language A
  int step1_timbre = -1;   // speech#2, same speaker
  int step2_content = -1;  // speech#3, speaker 2, language B
  int step2_timbre = -1;   // same utterance as step1_timbre
  int step3_content = -1;  // speech#4, speaker 1, language A
  std::string language_a;
  std::string language_b;
};

struct CycleBatch {
  std::vector<CycleItem> items;
};

struct SampleOptions {
  // Pins which language plays role A (disables the per-sextuple random
  // switch); used by tests and the ablation harness.
  std::optional<std::string> force_language_a;
};

// Throws when the corpus cannot support cycle sampling, naming the violated
// constraint. Role-A language is drawn uniformly per sextuple.
CycleBatch sample_cycle_batch(const Corpus& corpus, int batch_size,
                              std::mt19937_64& rng,
                              const SampleOptions& options = {});

// Validates every CycleBatch invariant; throws on violation.
void check_cycle_batch(const Corpus& corpus, const CycleBatch& batch);

}  // namespace cyclevc

#endif  // CYCLEVC_CORPUS_HPP
