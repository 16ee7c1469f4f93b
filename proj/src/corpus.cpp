// cyclevc/corpus.cpp

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

#include "cyclevc/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace cyclevc {

using nlohmann::json;

namespace {

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

// splitmix64-style mixing for order-independent derived seeds.
uint64_t mix(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL + b * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t mix3(uint64_t a, uint64_t b, uint64_t c) { return mix(mix(a, b), c); }

}  // namespace

std::vector<std::string> Utterance::phone_tokens() const {
  std::vector<std::string> out;
  out.reserve(phones.size());
  for (const auto& p : phones) out.push_back(p.token);
  return out;
}

void Utterance::validate(const AudioConfig& cfg) const {
  mel.validate(cfg);
  check(f0.size() == static_cast<size_t>(mel.frames),
        "utterance " + utterance_id + ": f0 length differs from mel frames");
  for (double v : f0)
    check(v == 0.0 || (v >= cfg.f0_min - 1e-9 && v <= cfg.f0_max + 1e-9),
          "utterance " + utterance_id + ": f0 value outside [f0_min, f0_max]");
  int prev_end = 0;
  for (size_t i = 0; i < phones.size(); ++i) {
    const auto& p = phones[i];
    check(p.start >= prev_end, "utterance " + utterance_id +
                                   ": phoneme spans overlap or are unsorted");
    check(p.start < p.end && p.end <= mel.frames,
          "utterance " + utterance_id + ": phoneme span out of range");
    prev_end = p.end;
  }
}

Corpus::Corpus(std::vector<Utterance> utterances, AudioConfig audio)
    : audio_(audio), utterances_(std::move(utterances)) {
  for (const auto& u : utterances_) u.validate(audio_);
  std::vector<int> order(utterances_.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return utterances_[a].utterance_id < utterances_[b].utterance_id;
  });
  for (size_t i = 1; i < order.size(); ++i)
    check(utterances_[order[i - 1]].utterance_id !=
              utterances_[order[i]].utterance_id,
          "corpus: duplicate utterance id " + utterances_[order[i]].utterance_id);
  for (int idx : order) {
    const auto& u = utterances_[idx];
    by_speaker_[u.speaker_id].push_back(idx);
    speakers_by_language_[u.language_id].insert(u.speaker_id);
    groups_[{u.speaker_id, u.language_id}].push_back(idx);
  }
}

std::vector<std::string> Corpus::speakers() const {
  std::vector<std::string> out;
  for (const auto& [s, _] : by_speaker_) out.push_back(s);
  return out;
}

std::vector<std::string> Corpus::languages() const {
  std::vector<std::string> out;
  for (const auto& [l, _] : speakers_by_language_) out.push_back(l);
  return out;
}

const std::vector<int>& Corpus::speaker_utts(const std::string& speaker) const {
  auto it = by_speaker_.find(speaker);
  check(it != by_speaker_.end(), "corpus: unknown speaker " + speaker);
  return it->second;
}

std::vector<std::string> Corpus::speakers_of_language(const std::string& lang) const {
  auto it = speakers_by_language_.find(lang);
  check(it != speakers_by_language_.end(), "corpus: unknown language " + lang);
  return {it->second.begin(), it->second.end()};
}

std::vector<std::string> Corpus::languages_of_speaker(const std::string& speaker) const {
  std::vector<std::string> out;
  for (const auto& [pair, _] : groups_)
    if (pair.first == speaker) out.push_back(pair.second);
  check(!out.empty(), "corpus: unknown speaker " + speaker);
  return out;
}

const std::vector<int>& Corpus::group(const std::string& speaker,
                                      const std::string& lang) const {
  auto it = groups_.find({speaker, lang});
  check(it != groups_.end(),
        "corpus: no utterances for speaker " + speaker + " in language " + lang);
  return it->second;
}

bool Corpus::has_group(const std::string& speaker, const std::string& lang) const {
  return groups_.count({speaker, lang}) > 0;
}

std::vector<std::string> Corpus::phoneme_inventory() const {
  std::set<std::string> tokens;
  for (const auto& u : utterances_)
    for (const auto& p : u.phones) tokens.insert(p.token);
  return {tokens.begin(), tokens.end()};
}

bool Corpus::is_monolingual() const {
  for (const auto& [speaker, _] : by_speaker_)
    if (languages_of_speaker(speaker).size() > 1) return false;
  return true;
}

void Corpus::require_monolingual() const {
  for (const auto& [speaker, _] : by_speaker_) {
    auto langs = languages_of_speaker(speaker);
    check(langs.size() == 1, "corpus-consistency error: speaker " + speaker +
                                 " appears under " + std::to_string(langs.size()) +
                                 " languages");
  }
}

// ---------------------------------------------------------------- manifest

Corpus load_manifest(const std::string& path, const AudioConfig& cfg,
                     LoadReport* report) {
  cfg.validate();
  std::ifstream is(path);
  check(is.good(), "load_manifest: cannot open " + path);
  const auto base = std::filesystem::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp.string() : (base / fp).string();
  };
  std::vector<Utterance> utts;
  std::string line;
  int line_no = 0;
  LoadReport local;
  LoadReport& rep = report ? *report : local;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("manifest line " + std::to_string(line_no) +
                               ": parse error: " + e.what());
    }
    bool header = !rec.empty();
    for (const auto& [key, _] : rec.items())
      if (key.empty() || key[0] != '_') header = false;
    if (header) {
      if (rec.contains("_warning"))
        rep.warnings.push_back(rec["_warning"].get<std::string>());
      continue;
    }
    auto field = [&](const char* name) -> std::string {
      if (!rec.contains(name) || !rec[name].is_string())
        throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                 ": missing required field '" + name + "'");
      return rec[name].get<std::string>();
    };
    Utterance u;
    u.speaker_id = field("speaker");
    u.language_id = field("language");
    u.utterance_id = field("utt_id");
    if (!rec.contains("phones"))
      throw std::runtime_error("manifest line " + std::to_string(line_no) +
                               ": missing required field 'phones'");
    try {
      for (const auto& span : rec["phones"]) {
        PhoneSpan p;
        p.token = span.at(0).get<std::string>();
        p.start = span.at(1).get<int>();
        p.end = span.at(2).get<int>();
        u.phones.push_back(p);
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("manifest line " + std::to_string(line_no) +
                               ": bad 'phones' entry: " + e.what());
    }
    std::vector<double> waveform;
    if (rec.contains("mel")) {
      u.mel = read_mel_cache(resolve(rec["mel"].get<std::string>()));
    } else if (rec.contains("audio")) {
      waveform = read_wav(resolve(rec["audio"].get<std::string>()), cfg.sample_rate);
      u.mel = extract_mel(waveform, cfg);
    } else {
      throw std::runtime_error("manifest line " + std::to_string(line_no) +
                               ": record needs either 'mel' or 'audio'");
    }
    if (rec.contains("f0")) {
      u.f0 = rec["f0"].get<std::vector<double>>();
    } else if (!waveform.empty()) {
      u.f0 = estimate_f0(waveform, cfg);
    } else {
      u.f0.assign(u.mel.frames, 0.0);
    }
    if (rec.contains("teacher_emb"))
      u.teacher_embedding_path = resolve(rec["teacher_emb"].get<std::string>());
    utts.push_back(std::move(u));
  }
  Corpus corpus(std::move(utts), cfg);
  corpus.require_monolingual();
  for (const auto& speaker : corpus.speakers())
    if (corpus.speaker_utts(speaker).size() < 3)
      rep.warnings.push_back("speaker " + speaker + " has only " +
                             std::to_string(corpus.speaker_utts(speaker).size()) +
                             " utterances; cycle sampling needs 3");
  return corpus;
}

void write_manifest(const std::string& path, const Corpus& corpus,
                    const std::string& mel_dir,
                    const std::vector<std::string>& header_warnings) {
  std::ofstream os(path);
  check(os.good(), "write_manifest: cannot open " + path);
  {
    json rec;
    rec["_audio"] = json::parse(audio_config_to_json(corpus.audio()));
    os << rec.dump() << "\n";
  }
  for (const auto& w : header_warnings) {
    json rec;
    rec["_warning"] = w;
    os << rec.dump() << "\n";
  }
  for (const auto& u : corpus.utterances()) {
    json rec;
    rec["speaker"] = u.speaker_id;
    rec["language"] = u.language_id;
    rec["utt_id"] = u.utterance_id;
    rec["mel"] = mel_dir + "/" + u.utterance_id + ".mel";
    json phones = json::array();
    for (const auto& p : u.phones) phones.push_back({p.token, p.start, p.end});
    rec["phones"] = phones;
    rec["f0"] = u.f0;
    if (!u.teacher_embedding_path.empty())
      rec["teacher_emb"] = u.teacher_embedding_path;
    os << rec.dump() << "\n";
  }
  check(os.good(), "write_manifest: write failed for " + path);
}

std::optional<AudioConfig> manifest_audio_header(const std::string& path) {
  std::ifstream is(path);
  check(is.good(), "manifest_audio_header: cannot open " + path);
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec = json::parse(line);
    if (rec.contains("_audio")) return audio_config_from_json(rec["_audio"].dump());
    bool header = !rec.empty();
    for (const auto& [key, _] : rec.items())
      if (key.empty() || key[0] != '_') header = false;
    if (!header) break;  // first real record; no audio header present
  }
  return std::nullopt;
}

std::string audio_config_to_json(const AudioConfig& c) {
  json j;
  j["sample_rate"] = c.sample_rate;
  j["frame_length"] = c.frame_length;
  j["hop_length"] = c.hop_length;
  j["mel_bins"] = c.mel_bins;
  j["fmin"] = c.fmin;
  j["fmax"] = c.fmax;
  j["log_floor"] = c.log_floor;
  j["f0_min"] = c.f0_min;
  j["f0_max"] = c.f0_max;
  j["f0_voicing_threshold"] = c.f0_voicing_threshold;
  return j.dump();
}

AudioConfig audio_config_from_json(const std::string& text) {
  json j = json::parse(text);
  AudioConfig c;
  auto get = [&](const char* k, auto& field) {
    if (j.contains(k)) field = j[k].get<std::decay_t<decltype(field)>>();
  };
  get("sample_rate", c.sample_rate);
  get("frame_length", c.frame_length);
  get("hop_length", c.hop_length);
  get("mel_bins", c.mel_bins);
  get("fmin", c.fmin);
  get("fmax", c.fmax);
  get("log_floor", c.log_floor);
  get("f0_min", c.f0_min);
  get("f0_max", c.f0_max);
  get("f0_voicing_threshold", c.f0_voicing_threshold);
  c.validate();
  return c;
}

std::string synthetic_spec_to_json(const SyntheticSpec& s) {
  json j;
  j["languages"] = s.languages;
  j["speakers_per_language"] = s.speakers_per_language;
  j["utterances_per_speaker"] = s.utterances_per_speaker;
  j["max_formant_shift"] = s.max_formant_shift;
  j["max_spectral_tilt"] = s.max_spectral_tilt;
  j["pitch_band"] = s.pitch_band;
  j["bilingual_speakers"] = s.bilingual_speakers;
  j["seed"] = s.seed;
  j["audio"] = json::parse(audio_config_to_json(s.audio));
  json lps = json::array();
  for (const auto& lp : s.language_params)
    lps.push_back({{"inventory_size", lp.inventory_size},
                   {"duration_mean", lp.duration_mean},
                   {"duration_jitter", lp.duration_jitter},
                   {"f0_base", lp.f0_base},
                   {"contour_depth", lp.contour_depth},
                   {"contour_rate", lp.contour_rate},
                   {"sentence_len_min", lp.sentence_len_min},
                   {"sentence_len_max", lp.sentence_len_max}});
  j["language_params"] = lps;
  return j.dump();
}

SyntheticSpec synthetic_spec_from_json(const std::string& text) {
  json j = json::parse(text);
  SyntheticSpec s;
  auto get = [&](const char* k, auto& field) {
    if (j.contains(k)) field = j[k].get<std::decay_t<decltype(field)>>();
  };
  get("languages", s.languages);
  get("speakers_per_language", s.speakers_per_language);
  get("utterances_per_speaker", s.utterances_per_speaker);
  get("max_formant_shift", s.max_formant_shift);
  get("max_spectral_tilt", s.max_spectral_tilt);
  get("pitch_band", s.pitch_band);
  get("bilingual_speakers", s.bilingual_speakers);
  get("seed", s.seed);
  if (j.contains("audio")) s.audio = audio_config_from_json(j["audio"].dump());
  if (j.contains("language_params")) {
    for (const auto& e : j["language_params"]) {
      LanguageParams lp;
      auto lget = [&](const char* k, auto& field) {
        if (e.contains(k)) field = e[k].get<std::decay_t<decltype(field)>>();
      };
      lget("inventory_size", lp.inventory_size);
      lget("duration_mean", lp.duration_mean);
      lget("duration_jitter", lp.duration_jitter);
      lget("f0_base", lp.f0_base);
      lget("contour_depth", lp.contour_depth);
      lget("contour_rate", lp.contour_rate);
      lget("sentence_len_min", lp.sentence_len_min);
      lget("sentence_len_max", lp.sentence_len_max);
      s.language_params.push_back(lp);
    }
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------- synthetic

void SyntheticSpec::validate() const {
  check(languages >= 1, "SyntheticSpec: languages must be >= 1");
  check(speakers_per_language >= 1, "SyntheticSpec: speakers_per_language >= 1");
  check(utterances_per_speaker >= 1, "SyntheticSpec: utterances_per_speaker >= 1");
  check(max_formant_shift >= 0, "SyntheticSpec: max_formant_shift >= 0");
  check(max_spectral_tilt >= 0.0, "SyntheticSpec: max_spectral_tilt >= 0");
  check(pitch_band >= 4, "SyntheticSpec: pitch_band must be >= 4");
  audio.validate();
  check(audio.mel_bins >= pitch_band + 2 * max_formant_shift + 4,
        "SyntheticSpec: mel_bins too small for pitch band + shift margins");
  for (const auto& lp : language_params) {
    check(lp.inventory_size >= 1, "SyntheticSpec: inventory_size >= 1");
    check(lp.sentence_len_min >= 1 && lp.sentence_len_max >= lp.sentence_len_min,
          "SyntheticSpec: bad sentence length range");
    check(lp.f0_base >= audio.f0_min && lp.f0_base <= audio.f0_max,
          "SyntheticSpec: f0_base outside tracker band");
  }
}

LanguageParams SyntheticSpec::params_for(int lang_index) const {
  if (lang_index < static_cast<int>(language_params.size()))
    return language_params[lang_index];
  // Per-index defaults: languages differ in inventory, tempo and register.
  LanguageParams lp;
  lp.inventory_size = 8;
  lp.duration_mean = 5.0 + 2.0 * (lang_index % 3);
  lp.duration_jitter = 1.5;
  lp.f0_base = 140.0 + 70.0 * (lang_index % 4);
  lp.contour_rate = 1.0 + 0.7 * (lang_index % 3);
  return lp;
}

MelSpec apply_timbre_transform(const MelSpec& mel, const SpeakerFactors& f,
                               const SyntheticSpec& spec) {
  const int bins = mel.bins;
  const double floor_log = std::log(spec.audio.log_floor);
  MelSpec out = MelSpec::filled(mel.frames, bins, floor_log);
  for (int t = 0; t < mel.frames; ++t) {
    for (int b = 0; b < spec.pitch_band; ++b) out.at(t, b) = mel.at(t, b);
    for (int b = spec.pitch_band; b < bins; ++b) {
      int src = b - f.formant_shift;
      if (src >= spec.pitch_band && src < bins) out.at(t, b) = mel.at(t, src);
    }
    for (int b = 0; b < bins; ++b)
      out.at(t, b) += f.spectral_tilt * b / (bins - 1);
  }
  return out;
}

MelSpec invert_timbre_transform(const MelSpec& mel, const SpeakerFactors& f,
                                const SyntheticSpec& spec) {
  const int bins = mel.bins;
  const double floor_log = std::log(spec.audio.log_floor);
  MelSpec untilted = mel;
  for (int t = 0; t < mel.frames; ++t)
    for (int b = 0; b < bins; ++b)
      untilted.at(t, b) -= f.spectral_tilt * b / (bins - 1);
  MelSpec out = MelSpec::filled(mel.frames, bins, floor_log);
  for (int t = 0; t < mel.frames; ++t) {
    for (int b = 0; b < spec.pitch_band; ++b) out.at(t, b) = untilted.at(t, b);
    for (int b = spec.pitch_band; b < bins; ++b) {
      int src = b + f.formant_shift;
      if (src >= spec.pitch_band && src < bins) out.at(t, b) = untilted.at(t, src);
    }
  }
  return out;
}

namespace {

struct Sentence {
  std::vector<int> tokens;      // indices into the language inventory
  std::vector<int> durations;   // frames per token
  double contour_phase = 0.0;
};

// Fixed spectral envelope per phoneme token, over the template band.
std::vector<double> phoneme_template(const SyntheticSpec& spec, int lang, int token) {
  const int bins = spec.audio.mel_bins;
  const int lo = spec.pitch_band + spec.max_formant_shift;
  const int hi = bins - spec.max_formant_shift;  // exclusive
  std::mt19937_64 rng(mix3(spec.seed, 0xA11CEULL + lang, token));
  std::uniform_real_distribution<double> amp(2.0, 5.5);
  std::uniform_real_distribution<double> width(0.8, 2.5);
  std::uniform_int_distribution<int> n_peaks(2, 3);
  std::uniform_real_distribution<double> pos(lo + 0.5, hi - 1.5);
  const double base = std::log(spec.audio.log_floor) + 2.0;
  std::vector<double> env(bins, std::log(spec.audio.log_floor));
  int peaks = n_peaks(rng);
  std::vector<double> centers(peaks), amps(peaks), widths(peaks);
  for (int p = 0; p < peaks; ++p) {
    centers[p] = pos(rng);
    amps[p] = amp(rng);
    widths[p] = width(rng);
  }
  for (int b = lo; b < hi; ++b) {
    double v = base;
    for (int p = 0; p < peaks; ++p) {
      double d = (b - centers[p]) / widths[p];
      v += amps[p] * std::exp(-0.5 * d * d);
    }
    env[b] = v;
  }
  return env;
}

Sentence make_sentence(const SyntheticSpec& spec, const LanguageParams& lp,
                       int lang, int sent_idx) {
  std::mt19937_64 rng(mix3(spec.seed, 0x5E27ULL + lang, sent_idx));
  std::uniform_int_distribution<int> len_d(lp.sentence_len_min, lp.sentence_len_max);
  std::uniform_int_distribution<int> tok_d(0, lp.inventory_size - 1);
  std::uniform_real_distribution<double> jit(-lp.duration_jitter, lp.duration_jitter);
  std::uniform_real_distribution<double> phase_d(0.0, 2.0 * 3.14159265358979);
  Sentence s;
  int len = len_d(rng);
  int prev = -1;
  for (int i = 0; i < len; ++i) {
    int tok = tok_d(rng);
    if (lp.inventory_size > 1)
      while (tok == prev) tok = tok_d(rng);
    s.tokens.push_back(tok);
    prev = tok;
    int dur = std::max(2, static_cast<int>(std::lround(lp.duration_mean + jit(rng))));
    s.durations.push_back(dur);
  }
  s.contour_phase = phase_d(rng);
  return s;
}

// Voicing is a fixed property of the token.
bool token_voiced(int token) { return token % 3 != 2; }

// Speaker-independent base mel + exact F0 for one sentence.
void render_base(const SyntheticSpec& spec, const LanguageParams& lp, int lang,
                 int sent_idx, const Sentence& s, MelSpec* mel,
                 std::vector<double>* f0, std::vector<PhoneSpan>* phones) {
  const int bins = spec.audio.mel_bins;
  const double floor_log = std::log(spec.audio.log_floor);
  int frames = 0;
  for (int d : s.durations) frames += d;
  *mel = MelSpec::filled(frames, bins, floor_log);
  f0->assign(frames, 0.0);
  phones->clear();
  std::mt19937_64 wobble_rng(mix3(spec.seed, 0xF00DULL + lang, sent_idx));
  std::uniform_real_distribution<double> wobble(-0.15, 0.15);
  const int lo = spec.pitch_band + spec.max_formant_shift;
  const int hi = bins - spec.max_formant_shift;
  int t = 0;
  for (size_t i = 0; i < s.tokens.size(); ++i) {
    const auto env = phoneme_template(spec, lang, s.tokens[i]);
    PhoneSpan span;
    span.token = "l" + std::to_string(lang) + "p" + std::to_string(s.tokens[i]);
    span.start = t;
    span.end = t + s.durations[i];
    phones->push_back(span);
    for (int d = 0; d < s.durations[i]; ++d, ++t) {
      for (int b = lo; b < hi; ++b) mel->at(t, b) = env[b] + wobble(wobble_rng);
      if (token_voiced(s.tokens[i])) {
        double hz = lp.f0_base *
                    (1.0 + lp.contour_depth *
                               std::sin(2.0 * 3.14159265358979 * lp.contour_rate *
                                            t / std::max(1, frames) +
                                        s.contour_phase));
        hz = std::clamp(hz, spec.audio.f0_min, spec.audio.f0_max);
        (*f0)[t] = hz;
        // Pitch bump position: log-frequency position inside the pitch band.
        double rel = (std::log(hz) - std::log(80.0)) / (std::log(400.0) - std::log(80.0));
        double center = 1.0 + rel * (spec.pitch_band - 3);
        center = std::clamp(center, 1.0, spec.pitch_band - 2.0);
        for (int b = 0; b < spec.pitch_band; ++b) {
          double d2 = (b - center) / 0.8;
          mel->at(t, b) = floor_log + 4.0 * std::exp(-0.5 * d2 * d2);
        }
      }
    }
  }
}

SpeakerFactors speaker_factors_for(const SyntheticSpec& spec, int global_idx) {
  // Unique, well-separated (shift, tilt) lattice with a little seeded jitter
  // on the tilt so factor tables differ across seeds.
  std::vector<int> shifts;
  if (spec.max_formant_shift == 0) {
    shifts = {0};
  } else {
    int n = std::min(4, 2 * spec.max_formant_shift + 1);
    for (int i = 0; i < n; ++i) {
      double s = -spec.max_formant_shift +
                 i * (2.0 * spec.max_formant_shift) / std::max(1, n - 1);
      shifts.push_back(static_cast<int>(std::lround(s)));
    }
  }
  SpeakerFactors f;
  f.formant_shift = shifts[global_idx % shifts.size()];
  int tier = global_idx / static_cast<int>(shifts.size());
  std::mt19937_64 rng(mix3(spec.seed, 0x7E4AULL, global_idx));
  std::uniform_real_distribution<double> jitter(-0.03, 0.03);
  double base = 0.15 + 0.3 * (tier % 3);
  f.spectral_tilt =
      std::clamp(base + jitter(rng), 0.0, 1.0) * spec.max_spectral_tilt;
  return f;
}

}  // namespace

SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<Utterance> utts;
  std::map<std::string, SpeakerFactors> factors;

  auto speaker_name = [&](int lang, int s) {
    return spec.bilingual_speakers ? "s" + std::to_string(s)
                                   : "l" + std::to_string(lang) + "s" + std::to_string(s);
  };

  for (int lang = 0; lang < spec.languages; ++lang) {
    const LanguageParams lp = spec.params_for(lang);
    for (int s = 0; s < spec.speakers_per_language; ++s) {
      const std::string spk = speaker_name(lang, s);
      const int global_idx = spec.bilingual_speakers
                                 ? s
                                 : lang * spec.speakers_per_language + s;
      const SpeakerFactors f = speaker_factors_for(spec, global_idx);
      factors[spk] = f;
      for (int ui = 0; ui < spec.utterances_per_speaker; ++ui) {
        const Sentence sent = make_sentence(spec, lp, lang, ui);
        Utterance u;
        u.speaker_id = spk;
        u.language_id = "lang" + std::to_string(lang);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "_lang%d_u%03d", lang, ui);
        u.utterance_id = spk + buf;
        MelSpec base;
        render_base(spec, lp, lang, ui, sent, &base, &u.f0, &u.phones);
        u.mel = apply_timbre_transform(base, f, spec);
        utts.push_back(std::move(u));
      }
    }
  }
  SyntheticCorpus out{Corpus(std::move(utts), spec.audio), std::move(factors)};
  return out;
}

std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus, int holdout) {
  check(holdout >= 0, "split_corpus: holdout must be >= 0");
  std::set<int> held;
  for (const auto& speaker : corpus.speakers())
    for (const auto& lang : corpus.languages_of_speaker(speaker)) {
      const auto& idxs = corpus.group(speaker, lang);
      int take = std::min<int>(holdout, std::max(0, static_cast<int>(idxs.size()) - 3));
      for (int i = static_cast<int>(idxs.size()) - take;
           i < static_cast<int>(idxs.size()); ++i)
        held.insert(idxs[i]);
    }
  std::vector<Utterance> train, eval;
  for (size_t i = 0; i < corpus.size(); ++i) {
    if (held.count(static_cast<int>(i)))
      eval.push_back(corpus.utt(static_cast<int>(i)));
    else
      train.push_back(corpus.utt(static_cast<int>(i)));
  }
  return {Corpus(std::move(train), corpus.audio()),
          Corpus(std::move(eval), corpus.audio())};
}

// ---------------------------------------------------------------- sampling

namespace {

std::vector<std::string> role1_eligible(const Corpus& corpus, const std::string& lang) {
  std::vector<std::string> out;
  for (const auto& spk : corpus.speakers_of_language(lang))
    if (corpus.group(spk, lang).size() >= 3) out.push_back(spk);
  return out;
}

}  // namespace

CycleBatch sample_cycle_batch(const Corpus& corpus, int batch_size,
                              std::mt19937_64& rng, const SampleOptions& options) {
  check(batch_size >= 1, "sample_cycle_batch: batch_size must be >= 1");
  auto languages = corpus.languages();
  check(languages.size() >= 2,
        "cycle sampling infeasible: corpus has " + std::to_string(languages.size()) +
            " language(s); need >= 2");
  if (options.force_language_a) {
    check(std::find(languages.begin(), languages.end(), *options.force_language_a) !=
              languages.end(),
          "sample_cycle_batch: forced language " + *options.force_language_a +
              " not in corpus");
  }
  // Speaker-1 eligibility (three distinct utterances) is needed in every
  // language that can play role A: all of them under the random switch, only
  // the pinned one otherwise.
  for (const auto& lang : languages) {
    if (options.force_language_a && lang != *options.force_language_a) continue;
    check(!role1_eligible(corpus, lang).empty(),
          "cycle sampling infeasible: language " + lang +
              " has no speaker with >= 3 utterances");
  }

  CycleBatch batch;
  for (int i = 0; i < batch_size; ++i) {
    CycleItem item;
    if (options.force_language_a) {
      item.language_a = *options.force_language_a;
    } else {
      std::uniform_int_distribution<size_t> lang_d(0, languages.size() - 1);
      item.language_a = languages[lang_d(rng)];
    }
    std::vector<std::string> others;
    for (const auto& l : languages)
      if (l != item.language_a) others.push_back(l);
    std::uniform_int_distribution<size_t> other_d(0, others.size() - 1);
    item.language_b = others[other_d(rng)];

    const auto spk1_pool = role1_eligible(corpus, item.language_a);
    std::uniform_int_distribution<size_t> spk1_d(0, spk1_pool.size() - 1);
    const std::string spk1 = spk1_pool[spk1_d(rng)];

    // Draw three distinct utterances of speaker 1, then assign the roles in
    // utterance-id order: content#1, timbre#2, content#4.
    const auto& g1 = corpus.group(spk1, item.language_a);
    std::vector<int> pick(g1.begin(), g1.end());
    for (int k = 0; k < 3; ++k) {
      std::uniform_int_distribution<size_t> d(k, pick.size() - 1);
      std::swap(pick[k], pick[d(rng)]);
    }
    pick.resize(3);
    std::sort(pick.begin(), pick.end(), [&](int a, int b) {
      return corpus.utt(a).utterance_id < corpus.utt(b).utterance_id;
    });
    item.step1_content = pick[0];
    item.step1_timbre = pick[1];
    item.step2_timbre = pick[1];
    item.step3_content = pick[2];

    std::vector<std::string> spk2_pool;
    for (const auto& spk : corpus.speakers_of_language(item.language_b))
      if (spk != spk1) spk2_pool.push_back(spk);
    check(!spk2_pool.empty(),
          "cycle sampling infeasible: language " + item.language_b +
              " has no speaker distinct from " + spk1);
    std::uniform_int_distribution<size_t> spk2_d(0, spk2_pool.size() - 1);
    const std::string spk2 = spk2_pool[spk2_d(rng)];
    const auto& g2 = corpus.group(spk2, item.language_b);
    std::uniform_int_distribution<size_t> utt2_d(0, g2.size() - 1);
    item.step2_content = g2[utt2_d(rng)];

    batch.items.push_back(item);
  }
  check_cycle_batch(corpus, batch);
  return batch;
}

void check_cycle_batch(const Corpus& corpus, const CycleBatch& batch) {
  for (const auto& it : batch.items) {
    const auto& c1 = corpus.utt(it.step1_content);
    const auto& t1 = corpus.utt(it.step1_timbre);
    const auto& c2 = corpus.utt(it.step2_content);
    const auto& t2 = corpus.utt(it.step2_timbre);
    const auto& c3 = corpus.utt(it.step3_content);
    check(c1.speaker_id == t1.speaker_id && t1.speaker_id == c3.speaker_id,
          "cycle batch: speaker-1 roles disagree");
    check(c2.speaker_id != c1.speaker_id, "cycle batch: speaker 2 equals speaker 1");
    check(c2.language_id != c1.language_id,
          "cycle batch: speaker 2 shares the language of speaker 1");
    check(t2.utterance_id == t1.utterance_id,
          "cycle batch: step-2 timbre is not the step-1 timbre utterance");
    check(c1.language_id == it.language_a && c2.language_id == it.language_b,
          "cycle batch: role languages mislabeled");
    check(c1.utterance_id != t1.utterance_id && c1.utterance_id != c3.utterance_id &&
              t1.utterance_id != c3.utterance_id &&
              c2.utterance_id != c1.utterance_id &&
              c2.utterance_id != t1.utterance_id &&
              c2.utterance_id != c3.utterance_id,
          "cycle batch: utterance ids are not pairwise distinct");
  }
}

}  // namespace cyclevc
