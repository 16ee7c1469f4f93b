// cyclevc/aux_models.hpp

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

#ifndef CYCLEVC_AUX_MODELS_HPP
#define CYCLEVC_AUX_MODELS_HPP

#include <string>
#include <vector>

#include "cyclevc/corpus.hpp"
#include "cyclevc/nets.hpp"
#include "cyclevc/tensor.hpp"

namespace cyclevc {

inline constexpr int kSvEmbeddingDim = 256;
inline constexpr int kAsrTimeReduction = 4;

struct AuxConfig {
  int mel_bins = 80;
  int sv_layers = 5;     // same stack as the generator's timbre encoder
  int sv_hidden = 512;
  int sv_kernel = 5;
  int asr_hidden = 256;  // H of the perceptual-loss embeddings
  int asr_blocks = 3;    // residual conv blocks after the two downsamplers
  int asr_kernel = 5;
  int pitch_hidden = 256;
  int pitch_kernel = 5;

  static AuxConfig desk();
  void validate() const;
};

std::string aux_config_to_json(const AuxConfig& cfg);
AuxConfig aux_config_from_json(const std::string& text);

// ---- speaker verification ----

class SvModel {
 public:
  SvModel() = default;
  SvModel(const AuxConfig& cfg, uint64_t seed);
  // 1 x 256 embedding; deterministic.
  Tensor forward(const Tensor& mel) const;
  std::vector<double> embed(const MelSpec& mel) const;
  ParamRegistry params() const;
  void freeze();
  const AuxConfig& config() const { return cfg_; }

 private:
  AuxConfig cfg_;
  FrameSpectrumEncoder stack_;
  LinearLayer head_;  // hidden -> 256
};

// ---- CTC phoneme recognizer ----

struct AsrOutputs {
  Tensor last_hidden;  // ceil(T/4) x H
  Tensor logits;       // ceil(T/4) x (vocab+1), blank last
};

class AsrModel {
 public:
  AsrModel() = default;
  AsrModel(const AuxConfig& cfg, std::vector<std::string> vocab, uint64_t seed);
  AsrOutputs forward(const Tensor& mel) const;
  const std::vector<std::string>& vocab() const { return vocab_; }
  int token_id(const std::string& token) const;  // -1 when unknown
  std::vector<int> label_ids(const std::vector<std::string>& tokens) const;
  ParamRegistry params() const;
  void freeze();
  const AuxConfig& config() const { return cfg_; }

 private:
  AuxConfig cfg_;
  std::vector<std::string> vocab_;
  Conv1dLayer down1_, down2_;
  std::vector<Conv1dLayer> blocks_;
  std::vector<LayerNormLayer> block_norms_;
  LinearLayer logit_head_;
};

// Best-path decode: argmax per frame, collapse repeats, drop blanks.
std::vector<int> ctc_decode_ids(const Tensor& logits);
std::vector<std::string> ctc_decode(const AsrModel& model, const Tensor& logits);

// ---- pitch predictor ----

struct PitchOutputs {
  Tensor first_hidden;  // T x H, input of the pitch perceptual loss
  Tensor f0_pred;       // T x 1, log-Hz (0 for unvoiced targets)
};

class PitchModel {
 public:
  PitchModel() = default;
  PitchModel(const AuxConfig& cfg, uint64_t seed);
  PitchOutputs forward(const Tensor& mel) const;
  ParamRegistry params() const;
  void freeze();
  const AuxConfig& config() const { return cfg_; }

 private:
  AuxConfig cfg_;
  Conv1dLayer conv1_, conv2_;
  LayerNormLayer ln1_, ln2_;
  LinearLayer out_;
};

// ---- training ----

enum class SvTrainMode { kSupervised, kDistill };

struct AuxTrainConfig {
  int steps = 2000;
  int batch = 8;
  double lr = 1e-3;
  uint64_t seed = 7;
  double sv_margin = 0.2;
  double sv_scale = 10.0;
  // Vocal-tract-style spectral augmentation for recognizer training: random
  // mel-bin rolls up to +-aug_max_shift and random spectral tilts up to
  // +-aug_max_tilt. Decorrelates the recognizer embedding from timbre.
  int aug_max_shift = 0;
  double aug_max_tilt = 0.0;
};

// Supervised mode uses additive-margin speaker classification; distill mode
// regresses teacher embeddings (MSE) read from each utterance's
// teacher_embedding_path. Returned models are frozen.
SvModel train_sv(const Corpus& corpus, SvTrainMode mode, const AuxConfig& cfg,
                 const AuxTrainConfig& tc,
                 std::vector<double>* loss_curve = nullptr);
AsrModel train_asr(const Corpus& corpus, const AuxConfig& cfg,
                   const AuxTrainConfig& tc,
                   std::vector<double>* loss_curve = nullptr);
PitchModel train_pitch(const Corpus& corpus, const AuxConfig& cfg,
                       const AuxTrainConfig& tc,
                       std::vector<double>* loss_curve = nullptr);

// Aux checkpoints share the generator checkpoint container with a model-kind
// tag (sv | asr | pitch).
void save_sv(const std::string& path, const SvModel& model);
SvModel load_sv(const std::string& path);
void save_asr(const std::string& path, const AsrModel& model);
AsrModel load_asr(const std::string& path);
void save_pitch(const std::string& path, const PitchModel& model);
PitchModel load_pitch(const std::string& path);

// Teacher embedding files: flat binary of 256 f32 values.
std::vector<double> read_teacher_embedding(const std::string& path);
void write_teacher_embedding(const std::string& path,
                             const std::vector<double>& embedding);

}  // namespace cyclevc

#endif  // CYCLEVC_AUX_MODELS_HPP
