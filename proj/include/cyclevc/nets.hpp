// cyclevc/nets.hpp

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

#ifndef CYCLEVC_NETS_HPP
#define CYCLEVC_NETS_HPP

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cyclevc/audio.hpp"
#include "cyclevc/tensor.hpp"

namespace cyclevc {

struct NetConfig {
  int mel_bins = 80;          // D
  int content_channels = 256;  // C
  int conformer_layers = 6;
  int conformer_heads = 4;
  int conformer_kernel = 7;   // depthwise conv kernel inside the block
  int conformer_ffn_mult = 4;
  int max_rel_pos = 32;       // attention relative-position clamp radius
  int encoder_layers = 5;     // timbre encoder
  int encoder_hidden = 512;
  int encoder_kernel = 5;
  int decoder_blocks = 5;
  int decoder_hidden = 512;
  int decoder_kernel = 5;
  int ref_compress_factor = 4;  // d
  double content_upsample = 1.0;
  int content_layers = 4;     // built-in trainable content encoder
  int content_hidden = 256;
  int content_kernel = 5;
  int disc_layers = 4;
  int disc_channels = 32;
  int disc_kernel = 3;
  bool use_conformer_fusion = true;  // false: linear 2C->2C bypass

  // Small configuration for CPU-scale experiments and tests.
  static NetConfig desk();
  void validate() const;
};

std::string net_config_to_json(const NetConfig& cfg);
NetConfig net_config_from_json(const std::string& text);

// Fixed affine rescaling of log-mel network inputs. Raw log-amplitudes sit
// around [-12, -1]; every encoder and discriminator sees this normalized
// range while generator outputs stay in raw mel units.
inline constexpr double kMelInputShift = 6.0;
inline constexpr double kMelInputScale = 1.0 / 3.0;
inline Tensor mel_input_norm(const Tensor& x) {
  return scale(add_scalar(x, kMelInputShift), kMelInputScale);
}

// ---- building blocks ----

struct LinearLayer {
  Tensor w, b;  // w: in x out
  LinearLayer() = default;
  LinearLayer(std::mt19937_64& rng, int in, int out);
  Tensor forward(const Tensor& x) const { return linear(x, w, b); }
  void register_params(const std::string& prefix, ParamRegistry* reg) const;
};

struct Conv1dLayer {
  Tensor w, b;  // w: cout x (cin*k)
  int cin = 0, cout = 0, kernel = 1, stride = 1;
  Conv1dLayer() = default;
  Conv1dLayer(std::mt19937_64& rng, int cin, int cout, int kernel, int stride = 1);
  Tensor forward(const Tensor& x) const {
    return conv1d(x, w, b, cin, kernel, stride);
  }
  void register_params(const std::string& prefix, ParamRegistry* reg) const;
};

struct LayerNormLayer {
  Tensor gamma, beta;
  LayerNormLayer() = default;
  explicit LayerNormLayer(int dim);
  Tensor forward(const Tensor& x) const {
    return layer_norm_rows(x, gamma, beta);
  }
  void register_params(const std::string& prefix, ParamRegistry* reg) const;
};

// Per-frame convolutions along the frequency axis followed by temporal mean
// pooling: exactly invariant to any permutation of input frames.
struct FrameSpectrumEncoder {
  std::vector<Tensor> ws, bs;
  std::vector<int> strides, positions;  // positions[i] = input positions of layer i
  int layers = 0, hidden = 0, kernel = 0, out_dim = 0, final_positions = 0;
  LinearLayer out_proj;
  FrameSpectrumEncoder() = default;
  FrameSpectrumEncoder(std::mt19937_64& rng, int mel_bins, int layers, int hidden,
                       int kernel, int out_dim);
  // mel: T x D -> pooled 1 x out_dim.
  Tensor forward(const Tensor& mel) const;
  // Per-frame features before pooling: T x (final_positions*hidden).
  Tensor frame_features(const Tensor& mel) const;
  void register_params(const std::string& prefix, ParamRegistry* reg) const;
};

struct ConformerBlock {
  LayerNormLayer ln_ff1, ln_att, ln_conv, ln_ff2, ln_out;
  LinearLayer ff1_in, ff1_out, ff2_in, ff2_out;
  LinearLayer att_q, att_k, att_v, att_o;
  Tensor relpos_table;  // heads x (2*max_rel_pos+1)
  LinearLayer conv_pw1;  // d -> 2d, GLU
  Tensor conv_dw_w;      // depthwise, d x kernel
  LayerNormLayer conv_ln;
  LinearLayer conv_pw2;  // d -> d
  int d_model = 0, heads = 0, head_dim = 0, kernel = 0, ffn_mult = 0, max_rel = 0;
  ConformerBlock() = default;
  ConformerBlock(std::mt19937_64& rng, int d_model, int heads, int kernel,
                 int ffn_mult, int max_rel);
  Tensor forward(const Tensor& x) const;
  void register_params(const std::string& prefix, ParamRegistry* reg) const;
};

// ---- content encoder ----

struct ExternalContentFeatures {
  int length = 0;
  int channels = 0;
  std::vector<double> values;  // row-major length x channels
};
using ExternalContentProvider =
    std::function<ExternalContentFeatures(const MelSpec&)>;

// Trainable convolutional content encoder with an instance-normalization
// step over time to suppress per-channel speaker statistics.
struct ContentEncoder {
  std::vector<Conv1dLayer> convs;
  bool frozen = false;
  ContentEncoder() = default;
  ContentEncoder(std::mt19937_64& rng, const NetConfig& cfg);
  Tensor forward(const Tensor& mel) const;
  void register_params(const std::string& prefix, ParamRegistry* reg) const;
};

// ---- generator ----

class Generator {
 public:
  Generator() = default;
  Generator(const NetConfig& cfg, uint64_t seed);

  const NetConfig& config() const { return cfg_; }

  // When set, content encoding uses the frozen external features instead of
  // the built-in encoder. `rate` is features per mel frame.
  void set_external_content(ExternalContentProvider provider, double rate);
  bool has_external_content() const { return external_ != nullptr; }

  // T x C; external features are length-checked (+-1 after rate scaling)
  // and nearest-neighbor resampled.
  Tensor encode_content(const MelSpec& mel) const;
  Tensor encode_content(const Tensor& mel) const;  // built-in encoder only
  // 1 x C global timbre vector, exactly frame-permutation invariant.
  Tensor encode_timbre(const Tensor& ref_mel) const;
  // Fine-grained fusion; returns first T conformer outputs, T x 2C.
  Tensor fuse_fine_grained(const Tensor& z_c, const Tensor& s,
                           const Tensor& ref_mel, bool zero_reference = false) const;
  Tensor decode_mel(const Tensor& h, int target_frames) const;
  // Full composition; output frames equal content frames.
  Tensor convert(const Tensor& content_mel, const Tensor& ref_mel) const;
  MelSpec convert(const MelSpec& content, const MelSpec& ref,
                  const AudioConfig& audio) const;

  int expected_content_length(int mel_frames) const;

  ParamRegistry params() const;
  void set_content_frozen(bool frozen);
  bool content_frozen() const { return content_enc_.frozen; }

 private:
  NetConfig cfg_;
  ContentEncoder content_enc_;
  FrameSpectrumEncoder timbre_enc_;
  LinearLayer ref_proj_;   // (d*D) -> 2C
  std::vector<ConformerBlock> blocks_;
  LinearLayer bypass_;     // 2C -> 2C when conformer fusion is disabled
  std::vector<Conv1dLayer> dec_convs_;
  LinearLayer dec_out_;
  std::shared_ptr<ExternalContentProvider> external_;
  double external_rate_ = 1.0;
};

// ---- discriminator ----

class PatchDiscriminator {
 public:
  PatchDiscriminator() = default;
  PatchDiscriminator(const NetConfig& cfg, uint64_t seed);
  // mel: T x D tensor; returns the patch score grid {1, H, W}.
  Tensor forward(const Tensor& mel) const;
  // Grid dimensions: ceil(n / 2^layers) per axis.
  static std::pair<int, int> grid_shape(int frames, int bins, int layers);
  ParamRegistry params() const;
  const NetConfig& config() const { return cfg_; }

 private:
  NetConfig cfg_;
  std::vector<Tensor> ws_, bs_;
  std::vector<int> cins_, couts_;
};

// Mel <-> tensor bridging.
Tensor mel_to_tensor(const MelSpec& mel);
MelSpec tensor_to_mel(const Tensor& t, const AudioConfig& audio);

// Standalone generator checkpoints (kind "generator").
void save_generator(const std::string& path, const Generator& gen);
Generator load_generator(const std::string& path);

}  // namespace cyclevc

#endif  // CYCLEVC_NETS_HPP
