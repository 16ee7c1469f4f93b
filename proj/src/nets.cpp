// cyclevc/nets.cpp

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

#include "cyclevc/nets.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cyclevc/checkpoint.hpp"
#include "json.hpp"

namespace cyclevc {

using nlohmann::json;

namespace {

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

std::vector<double> uniform_init(std::mt19937_64& rng, int64_t count, int fan_in) {
  double bound = std::sqrt(1.0 / std::max(1, fan_in));
  std::uniform_real_distribution<double> d(-bound, bound);
  std::vector<double> v(count);
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace

NetConfig NetConfig::desk() {
  NetConfig c;
  c.mel_bins = 32;
  c.content_channels = 16;
  c.conformer_layers = 2;
  c.conformer_heads = 2;
  c.conformer_kernel = 7;
  c.conformer_ffn_mult = 2;
  c.max_rel_pos = 16;
  c.encoder_layers = 5;
  c.encoder_hidden = 16;
  c.encoder_kernel = 5;
  c.decoder_blocks = 3;
  c.decoder_hidden = 32;
  c.decoder_kernel = 5;
  c.ref_compress_factor = 4;
  c.content_layers = 3;
  c.content_hidden = 24;
  c.content_kernel = 5;
  c.disc_layers = 4;
  c.disc_channels = 8;
  c.disc_kernel = 3;
  return c;
}

void NetConfig::validate() const {
  check(mel_bins > 0, "NetConfig: mel_bins must be positive");
  check(content_channels > 0, "NetConfig: content_channels must be positive");
  check(conformer_layers >= 1 && conformer_heads >= 1, "NetConfig: conformer dims");
  check((2 * content_channels) % conformer_heads == 0,
        "NetConfig: heads must divide 2*content_channels");
  check(conformer_kernel % 2 == 1 && conformer_kernel >= 1,
        "NetConfig: conformer_kernel must be odd");
  check(encoder_layers >= 1 && encoder_hidden >= 1 && encoder_kernel % 2 == 1,
        "NetConfig: timbre encoder dims");
  check(decoder_blocks >= 1 && decoder_hidden >= 1 && decoder_kernel % 2 == 1,
        "NetConfig: decoder dims");
  check(ref_compress_factor >= 1, "NetConfig: ref_compress_factor must be >= 1");
  check(content_upsample > 0.0, "NetConfig: content_upsample must be positive");
  check(content_layers >= 1 && content_hidden >= 1 && content_kernel % 2 == 1,
        "NetConfig: content encoder dims");
  check(disc_layers >= 1 && disc_channels >= 1 && disc_kernel % 2 == 1,
        "NetConfig: discriminator dims");
}

std::string net_config_to_json(const NetConfig& c) {
  json j;
  j["mel_bins"] = c.mel_bins;
  j["content_channels"] = c.content_channels;
  j["conformer_layers"] = c.conformer_layers;
  j["conformer_heads"] = c.conformer_heads;
  j["conformer_kernel"] = c.conformer_kernel;
  j["conformer_ffn_mult"] = c.conformer_ffn_mult;
  j["max_rel_pos"] = c.max_rel_pos;
  j["encoder_layers"] = c.encoder_layers;
  j["encoder_hidden"] = c.encoder_hidden;
  j["encoder_kernel"] = c.encoder_kernel;
  j["decoder_blocks"] = c.decoder_blocks;
  j["decoder_hidden"] = c.decoder_hidden;
  j["decoder_kernel"] = c.decoder_kernel;
  j["ref_compress_factor"] = c.ref_compress_factor;
  j["content_upsample"] = c.content_upsample;
  j["content_layers"] = c.content_layers;
  j["content_hidden"] = c.content_hidden;
  j["content_kernel"] = c.content_kernel;
  j["disc_layers"] = c.disc_layers;
  j["disc_channels"] = c.disc_channels;
  j["disc_kernel"] = c.disc_kernel;
  j["use_conformer_fusion"] = c.use_conformer_fusion;
  return j.dump();
}

NetConfig net_config_from_json(const std::string& text) {
  json j = json::parse(text);
  NetConfig c;
  auto get = [&](const char* k, auto& field) {
    if (j.contains(k)) field = j[k].get<std::decay_t<decltype(field)>>();
  };
  get("mel_bins", c.mel_bins);
  get("content_channels", c.content_channels);
  get("conformer_layers", c.conformer_layers);
  get("conformer_heads", c.conformer_heads);
  get("conformer_kernel", c.conformer_kernel);
  get("conformer_ffn_mult", c.conformer_ffn_mult);
  get("max_rel_pos", c.max_rel_pos);
  get("encoder_layers", c.encoder_layers);
  get("encoder_hidden", c.encoder_hidden);
  get("encoder_kernel", c.encoder_kernel);
  get("decoder_blocks", c.decoder_blocks);
  get("decoder_hidden", c.decoder_hidden);
  get("decoder_kernel", c.decoder_kernel);
  get("ref_compress_factor", c.ref_compress_factor);
  get("content_upsample", c.content_upsample);
  get("content_layers", c.content_layers);
  get("content_hidden", c.content_hidden);
  get("content_kernel", c.content_kernel);
  get("disc_layers", c.disc_layers);
  get("disc_channels", c.disc_channels);
  get("disc_kernel", c.disc_kernel);
  get("use_conformer_fusion", c.use_conformer_fusion);
  c.validate();
  return c;
}

// ---------------------------------------------------------------- layers

LinearLayer::LinearLayer(std::mt19937_64& rng, int in, int out)
    : w(Tensor::param(uniform_init(rng, int64_t(in) * out, in), in, out)),
      b(Tensor::param(std::vector<double>(out, 0.0), 1, out)) {}

void LinearLayer::register_params(const std::string& prefix,
                                  ParamRegistry* reg) const {
  reg->add(prefix + ".w", w);
  reg->add(prefix + ".b", b);
}

Conv1dLayer::Conv1dLayer(std::mt19937_64& rng, int cin_, int cout_, int kernel_,
                         int stride_)
    : w(Tensor::param(uniform_init(rng, int64_t(cout_) * cin_ * kernel_, cin_ * kernel_),
                      cout_, cin_ * kernel_)),
      b(Tensor::param(std::vector<double>(cout_, 0.0), 1, cout_)),
      cin(cin_), cout(cout_), kernel(kernel_), stride(stride_) {}

void Conv1dLayer::register_params(const std::string& prefix,
                                  ParamRegistry* reg) const {
  reg->add(prefix + ".w", w);
  reg->add(prefix + ".b", b);
}

LayerNormLayer::LayerNormLayer(int dim)
    : gamma(Tensor::param(std::vector<double>(dim, 1.0), 1, dim)),
      beta(Tensor::param(std::vector<double>(dim, 0.0), 1, dim)) {}

void LayerNormLayer::register_params(const std::string& prefix,
                                     ParamRegistry* reg) const {
  reg->add(prefix + ".g", gamma);
  reg->add(prefix + ".b", beta);
}

FrameSpectrumEncoder::FrameSpectrumEncoder(std::mt19937_64& rng, int mel_bins,
                                           int layers_, int hidden_, int kernel_,
                                           int out_dim_)
    : layers(layers_), hidden(hidden_), kernel(kernel_), out_dim(out_dim_) {
  int pos = mel_bins;
  int cin = 1;
  for (int i = 0; i < layers; ++i) {
    positions.push_back(pos);
    int stride = pos > 4 ? 2 : 1;
    strides.push_back(stride);
    ws.push_back(Tensor::param(
        uniform_init(rng, int64_t(hidden) * cin * kernel, cin * kernel), hidden,
        cin * kernel));
    bs.push_back(Tensor::param(std::vector<double>(hidden, 0.0), 1, hidden));
    pos = (pos + (kernel - 1) - kernel) / stride + 1;
    cin = hidden;
  }
  final_positions = pos;
  out_proj = LinearLayer(rng, final_positions * hidden, out_dim);
}

Tensor FrameSpectrumEncoder::frame_features(const Tensor& mel) const {
  Tensor x = mel_input_norm(mel);  // T x D, one channel per position
  int cin = 1;
  for (int i = 0; i < layers; ++i) {
    x = silu(freq_conv1d(x, ws[i], bs[i], positions[i], cin, kernel, strides[i]));
    cin = hidden;
  }
  return x;
}

Tensor FrameSpectrumEncoder::forward(const Tensor& mel) const {
  return out_proj.forward(mean_rows(frame_features(mel)));
}

void FrameSpectrumEncoder::register_params(const std::string& prefix,
                                           ParamRegistry* reg) const {
  for (int i = 0; i < layers; ++i) {
    reg->add(prefix + ".conv" + std::to_string(i) + ".w", ws[i]);
    reg->add(prefix + ".conv" + std::to_string(i) + ".b", bs[i]);
  }
  out_proj.register_params(prefix + ".proj", reg);
}

ConformerBlock::ConformerBlock(std::mt19937_64& rng, int d, int heads_, int kernel_,
                               int ffn_mult_, int max_rel_)
    : ln_ff1(d), ln_att(d), ln_conv(d), ln_ff2(d), ln_out(d),
      ff1_in(rng, d, d * ffn_mult_), ff1_out(rng, d * ffn_mult_, d),
      ff2_in(rng, d, d * ffn_mult_), ff2_out(rng, d * ffn_mult_, d),
      att_q(rng, d, d), att_k(rng, d, d), att_v(rng, d, d), att_o(rng, d, d),
      relpos_table(Tensor::param(
          uniform_init(rng, int64_t(heads_) * (2 * max_rel_ + 1), max_rel_ + 1),
          heads_, 2 * max_rel_ + 1)),
      conv_pw1(rng, d, 2 * d),
      conv_dw_w(Tensor::param(uniform_init(rng, int64_t(d) * kernel_, kernel_), d,
                              kernel_)),
      conv_ln(d), conv_pw2(rng, d, d),
      d_model(d), heads(heads_), head_dim(d / heads_), kernel(kernel_),
      ffn_mult(ffn_mult_), max_rel(max_rel_) {}

Tensor ConformerBlock::forward(const Tensor& x) const {
  const int t = x.rows();
  // Half-step feed-forward.
  Tensor h = add(x, scale(ff1_out.forward(silu(ff1_in.forward(ln_ff1.forward(x)))), 0.5));
  // Self-attention with relative-position bias.
  {
    Tensor a_in = ln_att.forward(h);
    Tensor q = att_q.forward(a_in);
    Tensor k = att_k.forward(a_in);
    Tensor v = att_v.forward(a_in);
    Tensor heads_out;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
    for (int hd = 0; hd < heads; ++hd) {
      Tensor qh = slice_cols(q, hd * head_dim, head_dim);
      Tensor kh = slice_cols(k, hd * head_dim, head_dim);
      Tensor vh = slice_cols(v, hd * head_dim, head_dim);
      Tensor scores = add(scale(matmul_nt(qh, kh), inv_sqrt),
                          relpos_bias(relpos_table, hd, t, t));
      Tensor oh = matmul(softmax_rows(scores), vh);
      heads_out = hd == 0 ? oh : concat_cols(heads_out, oh);
    }
    h = add(h, att_o.forward(heads_out));
  }
  // Convolution module: pointwise + GLU, depthwise, norm, pointwise.
  {
    Tensor c = conv_pw1.forward(ln_conv.forward(h));
    Tensor ca = slice_cols(c, 0, d_model);
    Tensor cb = slice_cols(c, d_model, d_model);
    c = mul(ca, sigmoid(cb));
    c = depthwise_conv1d(c, conv_dw_w, kernel);
    c = conv_pw2.forward(silu(conv_ln.forward(c)));
    h = add(h, c);
  }
  h = add(h, scale(ff2_out.forward(silu(ff2_in.forward(ln_ff2.forward(h)))), 0.5));
  return ln_out.forward(h);
}

void ConformerBlock::register_params(const std::string& prefix,
                                     ParamRegistry* reg) const {
  ln_ff1.register_params(prefix + ".ln_ff1", reg);
  ff1_in.register_params(prefix + ".ff1_in", reg);
  ff1_out.register_params(prefix + ".ff1_out", reg);
  ln_att.register_params(prefix + ".ln_att", reg);
  att_q.register_params(prefix + ".q", reg);
  att_k.register_params(prefix + ".k", reg);
  att_v.register_params(prefix + ".v", reg);
  att_o.register_params(prefix + ".o", reg);
  reg->add(prefix + ".relpos", relpos_table);
  ln_conv.register_params(prefix + ".ln_conv", reg);
  conv_pw1.register_params(prefix + ".pw1", reg);
  reg->add(prefix + ".dw", conv_dw_w);
  conv_ln.register_params(prefix + ".conv_ln", reg);
  conv_pw2.register_params(prefix + ".pw2", reg);
  ln_ff2.register_params(prefix + ".ln_ff2", reg);
  ff2_in.register_params(prefix + ".ff2_in", reg);
  ff2_out.register_params(prefix + ".ff2_out", reg);
  ln_out.register_params(prefix + ".ln_out", reg);
}

// ---------------------------------------------------------------- content

ContentEncoder::ContentEncoder(std::mt19937_64& rng, const NetConfig& cfg) {
  int cin = cfg.mel_bins;
  for (int i = 0; i < cfg.content_layers; ++i) {
    int cout = (i + 1 == cfg.content_layers) ? cfg.content_channels
                                             : cfg.content_hidden;
    convs.emplace_back(rng, cin, cout, cfg.content_kernel, 1);
    cin = cout;
  }
}

Tensor ContentEncoder::forward(const Tensor& mel) const {
  Tensor x = mel_input_norm(mel);
  for (size_t i = 0; i < convs.size(); ++i) {
    x = convs[i].forward(x);
    if (i + 1 < convs.size()) x = silu(x);
  }
  return instance_norm_cols(x);
}

void ContentEncoder::register_params(const std::string& prefix,
                                     ParamRegistry* reg) const {
  for (size_t i = 0; i < convs.size(); ++i)
    convs[i].register_params(prefix + ".conv" + std::to_string(i), reg);
}

// ---------------------------------------------------------------- generator

Generator::Generator(const NetConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  content_enc_ = ContentEncoder(rng, cfg_);
  timbre_enc_ = FrameSpectrumEncoder(rng, cfg_.mel_bins, cfg_.encoder_layers,
                                     cfg_.encoder_hidden, cfg_.encoder_kernel,
                                     cfg_.content_channels);
  const int d2 = 2 * cfg_.content_channels;
  if (cfg_.use_conformer_fusion) {
    ref_proj_ = LinearLayer(rng, cfg_.ref_compress_factor * cfg_.mel_bins, d2);
    for (int i = 0; i < cfg_.conformer_layers; ++i)
      blocks_.emplace_back(rng, d2, cfg_.conformer_heads, cfg_.conformer_kernel,
                           cfg_.conformer_ffn_mult, cfg_.max_rel_pos);
  } else {
    bypass_ = LinearLayer(rng, d2, d2);
  }
  int cin = d2;
  for (int i = 0; i < cfg_.decoder_blocks; ++i) {
    dec_convs_.emplace_back(rng, cin, cfg_.decoder_hidden, cfg_.decoder_kernel, 1);
    cin = cfg_.decoder_hidden;
  }
  dec_out_ = LinearLayer(rng, cfg_.decoder_hidden, cfg_.mel_bins);
}

void Generator::set_external_content(ExternalContentProvider provider, double rate) {
  check(rate > 0.0, "set_external_content: rate must be positive");
  external_ = std::make_shared<ExternalContentProvider>(std::move(provider));
  external_rate_ = rate;
}

int Generator::expected_content_length(int mel_frames) const {
  return std::max(1, static_cast<int>(std::lround(mel_frames * cfg_.content_upsample)));
}

Tensor Generator::encode_content(const MelSpec& mel) const {
  if (!external_) return encode_content(mel_to_tensor(mel));
  ExternalContentFeatures feats = (*external_)(mel);
  check(feats.channels == cfg_.content_channels,
        "encode_content: external features have " + std::to_string(feats.channels) +
            " channels; expected " + std::to_string(cfg_.content_channels));
  const int expected = std::max(
      1, static_cast<int>(std::lround(mel.frames * external_rate_)));
  if (std::abs(feats.length - expected) > 1)
    throw std::runtime_error(
        "encode_content: external feature length " + std::to_string(feats.length) +
        " disagrees with expected " + std::to_string(expected) + " (+-1)");
  Tensor x = Tensor::from(std::move(feats.values), feats.length, feats.channels);
  return resample_rows(x, expected_content_length(mel.frames));
}

Tensor Generator::encode_content(const Tensor& mel) const {
  Tensor z = content_enc_.forward(mel);
  if (cfg_.content_upsample != 1.0)
    z = resample_rows(z, expected_content_length(mel.rows()));
  return z;
}

Tensor Generator::encode_timbre(const Tensor& ref_mel) const {
  return timbre_enc_.forward(ref_mel);
}

Tensor Generator::fuse_fine_grained(const Tensor& z_c, const Tensor& s,
                                    const Tensor& ref_mel,
                                    bool zero_reference) const {
  const int t = z_c.rows();
  const int c = cfg_.content_channels;
  check(z_c.cols() == c, "fuse_fine_grained: content channel mismatch");
  check(s.rows() == 1 && s.cols() == c, "fuse_fine_grained: timbre shape mismatch");
  Tensor z_s = repeat_rows(s, t);
  Tensor z_u = concat_cols(z_c, z_s);
  check(z_u.cols() == 2 * c, "fuse_fine_grained: z_u channel algebra violated");
  if (!cfg_.use_conformer_fusion) return bypass_.forward(z_u);

  const int d = cfg_.ref_compress_factor;
  const int ref_groups = (ref_mel.rows() + d - 1) / d;
  Tensor ref_tokens;
  if (zero_reference) {
    ref_tokens = Tensor::zeros(ref_groups, 2 * c);
  } else {
    check(ref_mel.cols() == cfg_.mel_bins, "fuse_fine_grained: ref bin mismatch");
    ref_tokens = ref_proj_.forward(stack_rows(mel_input_norm(ref_mel), d));
  }
  Tensor seq = concat_rows(z_u, ref_tokens);
  check(seq.rows() == t + ref_groups && seq.cols() == 2 * c,
        "fuse_fine_grained: conformer input shape violated");
  for (const auto& blk : blocks_) seq = blk.forward(seq);
  return slice_rows(seq, 0, t);
}

Tensor Generator::decode_mel(const Tensor& h, int target_frames) const {
  check(h.cols() == 2 * cfg_.content_channels, "decode_mel: channel mismatch");
  check(h.rows() == expected_content_length(target_frames),
        "decode_mel: input length " + std::to_string(h.rows()) +
            " does not map to " + std::to_string(target_frames) +
            " frames under content_upsample");
  Tensor x = h;
  for (const auto& conv : dec_convs_) x = silu(conv.forward(x));
  x = dec_out_.forward(x);
  if (x.rows() != target_frames) x = resample_rows(x, target_frames);
  return x;
}

Tensor Generator::convert(const Tensor& content_mel, const Tensor& ref_mel) const {
  Tensor z_c = encode_content(content_mel);
  Tensor s = encode_timbre(ref_mel);
  Tensor h = fuse_fine_grained(z_c, s, ref_mel);
  return decode_mel(h, content_mel.rows());
}

MelSpec Generator::convert(const MelSpec& content, const MelSpec& ref,
                           const AudioConfig& audio) const {
  Tensor z_c = encode_content(content);  // honors the external encoder
  Tensor ref_t = mel_to_tensor(ref);
  Tensor s = encode_timbre(ref_t);
  Tensor h = fuse_fine_grained(z_c, s, ref_t);
  Tensor out = decode_mel(h, content.frames);
  return tensor_to_mel(out, audio);
}

ParamRegistry Generator::params() const {
  ParamRegistry reg;
  content_enc_.register_params("content", &reg);
  timbre_enc_.register_params("timbre", &reg);
  if (cfg_.use_conformer_fusion) {
    ref_proj_.register_params("ref_proj", &reg);
    for (size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].register_params("conformer" + std::to_string(i), &reg);
  } else {
    bypass_.register_params("bypass", &reg);
  }
  for (size_t i = 0; i < dec_convs_.size(); ++i)
    dec_convs_[i].register_params("dec.conv" + std::to_string(i), &reg);
  dec_out_.register_params("dec.out", &reg);
  return reg;
}

void Generator::set_content_frozen(bool frozen) {
  content_enc_.frozen = frozen;
  ParamRegistry reg;
  content_enc_.register_params("content", &reg);
  reg.set_requires_grad(!frozen);
}

// ---------------------------------------------------------------- disc

PatchDiscriminator::PatchDiscriminator(const NetConfig& cfg, uint64_t seed)
    : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  int cin = 1;
  for (int i = 0; i < cfg_.disc_layers; ++i) {
    int cout = (i + 1 == cfg_.disc_layers) ? 1 : cfg_.disc_channels << std::min(i, 3);
    cins_.push_back(cin);
    couts_.push_back(cout);
    int k = cfg_.disc_kernel;
    ws_.push_back(Tensor::param(
        uniform_init(rng, int64_t(cout) * cin * k * k, cin * k * k), cout,
        cin * k * k));
    bs_.push_back(Tensor::param(std::vector<double>(cout, 0.0), 1, cout));
    cin = cout;
  }
}

Tensor PatchDiscriminator::forward(const Tensor& mel) const {
  Tensor x = reshape(mel_input_norm(mel), {1, mel.rows(), mel.cols()});
  for (int i = 0; i < cfg_.disc_layers; ++i) {
    x = conv2d(x, ws_[i], bs_[i], cfg_.disc_kernel, 2, (cfg_.disc_kernel - 1) / 2);
    if (i + 1 < cfg_.disc_layers) x = silu(x);
  }
  return x;
}

std::pair<int, int> PatchDiscriminator::grid_shape(int frames, int bins, int layers) {
  int h = frames, w = bins;
  for (int i = 0; i < layers; ++i) {
    h = (h + 1) / 2;
    w = (w + 1) / 2;
  }
  return {h, w};
}

ParamRegistry PatchDiscriminator::params() const {
  ParamRegistry reg;
  for (size_t i = 0; i < ws_.size(); ++i) {
    reg.add("disc.conv" + std::to_string(i) + ".w", ws_[i]);
    reg.add("disc.conv" + std::to_string(i) + ".b", bs_[i]);
  }
  return reg;
}

// ---------------------------------------------------------------- bridging

Tensor mel_to_tensor(const MelSpec& mel) {
  return Tensor::from(mel.values, mel.frames, mel.bins);
}

MelSpec tensor_to_mel(const Tensor& t, const AudioConfig& audio) {
  MelSpec mel;
  mel.frames = t.rows();
  mel.bins = t.cols();
  mel.values = t.values();
  const double floor_log = std::log(audio.log_floor);
  for (double& v : mel.values) v = std::max(v, floor_log);
  return mel;
}

void save_generator(const std::string& path, const Generator& gen) {
  Checkpoint ck;
  ck.kind = "generator";
  json hdr;
  hdr["net"] = json::parse(net_config_to_json(gen.config()));
  ck.config_json = hdr.dump();
  ck.add_registry("", gen.params());
  ck.save(path);
}

Generator load_generator(const std::string& path) {
  Checkpoint ck = Checkpoint::load(path);
  if (ck.kind != "generator")
    throw std::runtime_error("load_generator: checkpoint kind is '" + ck.kind + "'");
  json hdr = json::parse(ck.config_json);
  Generator gen(net_config_from_json(hdr.at("net").dump()), 0);
  auto reg = gen.params();
  ck.load_into("", &reg);
  return gen;
}

}  // namespace cyclevc
