// cyclevc/aux_models.cpp

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

#include "cyclevc/aux_models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "cyclevc/checkpoint.hpp"
#include "cyclevc/optim.hpp"
#include "json.hpp"

namespace cyclevc {

using nlohmann::json;

namespace {

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

}  // namespace

AuxConfig AuxConfig::desk() {
  AuxConfig c;
  c.mel_bins = 32;
  c.sv_layers = 5;
  c.sv_hidden = 16;
  c.sv_kernel = 5;
  c.asr_hidden = 32;
  c.asr_blocks = 2;
  c.asr_kernel = 5;
  c.pitch_hidden = 24;
  c.pitch_kernel = 5;
  return c;
}

void AuxConfig::validate() const {
  check(mel_bins > 0, "AuxConfig: mel_bins must be positive");
  check(sv_layers >= 1 && sv_hidden >= 1 && sv_kernel % 2 == 1, "AuxConfig: sv dims");
  check(asr_hidden >= 1 && asr_blocks >= 0 && asr_kernel % 2 == 1,
        "AuxConfig: asr dims");
  check(pitch_hidden >= 1 && pitch_kernel % 2 == 1, "AuxConfig: pitch dims");
}

std::string aux_config_to_json(const AuxConfig& c) {
  json j;
  j["mel_bins"] = c.mel_bins;
  j["sv_layers"] = c.sv_layers;
  j["sv_hidden"] = c.sv_hidden;
  j["sv_kernel"] = c.sv_kernel;
  j["asr_hidden"] = c.asr_hidden;
  j["asr_blocks"] = c.asr_blocks;
  j["asr_kernel"] = c.asr_kernel;
  j["pitch_hidden"] = c.pitch_hidden;
  j["pitch_kernel"] = c.pitch_kernel;
  return j.dump();
}

AuxConfig aux_config_from_json(const std::string& text) {
  json j = json::parse(text);
  AuxConfig c;
  auto get = [&](const char* k, auto& field) {
    if (j.contains(k)) field = j[k].get<std::decay_t<decltype(field)>>();
  };
  get("mel_bins", c.mel_bins);
  get("sv_layers", c.sv_layers);
  get("sv_hidden", c.sv_hidden);
  get("sv_kernel", c.sv_kernel);
  get("asr_hidden", c.asr_hidden);
  get("asr_blocks", c.asr_blocks);
  get("asr_kernel", c.asr_kernel);
  get("pitch_hidden", c.pitch_hidden);
  get("pitch_kernel", c.pitch_kernel);
  c.validate();
  return c;
}

// ---------------------------------------------------------------- SV

SvModel::SvModel(const AuxConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  stack_ = FrameSpectrumEncoder(rng, cfg_.mel_bins, cfg_.sv_layers, cfg_.sv_hidden,
                                cfg_.sv_kernel, cfg_.sv_hidden);
  head_ = LinearLayer(rng, cfg_.sv_hidden, kSvEmbeddingDim);
}

Tensor SvModel::forward(const Tensor& mel) const {
  return head_.forward(stack_.forward(mel));
}

std::vector<double> SvModel::embed(const MelSpec& mel) const {
  return forward(mel_to_tensor(mel)).values();
}

ParamRegistry SvModel::params() const {
  ParamRegistry reg;
  stack_.register_params("sv.stack", &reg);
  head_.register_params("sv.head", &reg);
  return reg;
}

void SvModel::freeze() {
  auto reg = params();
  reg.set_requires_grad(false);
}

// ---------------------------------------------------------------- ASR

AsrModel::AsrModel(const AuxConfig& cfg, std::vector<std::string> vocab,
                   uint64_t seed)
    : cfg_(cfg), vocab_(std::move(vocab)) {
  cfg_.validate();
  check(!vocab_.empty(), "AsrModel: empty vocabulary");
  std::mt19937_64 rng(seed);
  down1_ = Conv1dLayer(rng, cfg_.mel_bins, cfg_.asr_hidden, cfg_.asr_kernel, 2);
  down2_ = Conv1dLayer(rng, cfg_.asr_hidden, cfg_.asr_hidden, cfg_.asr_kernel, 2);
  for (int i = 0; i < cfg_.asr_blocks; ++i) {
    blocks_.emplace_back(rng, cfg_.asr_hidden, cfg_.asr_hidden, cfg_.asr_kernel, 1);
    block_norms_.emplace_back(cfg_.asr_hidden);
  }
  logit_head_ = LinearLayer(rng, cfg_.asr_hidden,
                            static_cast<int>(vocab_.size()) + 1);
}

AsrOutputs AsrModel::forward(const Tensor& mel) const {
  Tensor x = silu(down1_.forward(mel_input_norm(mel)));
  x = silu(down2_.forward(x));
  for (size_t i = 0; i < blocks_.size(); ++i)
    x = block_norms_[i].forward(add(x, silu(blocks_[i].forward(x))));
  AsrOutputs out;
  out.last_hidden = x;
  out.logits = logit_head_.forward(x);
  return out;
}

int AsrModel::token_id(const std::string& token) const {
  auto it = std::find(vocab_.begin(), vocab_.end(), token);
  return it == vocab_.end() ? -1 : static_cast<int>(it - vocab_.begin());
}

std::vector<int> AsrModel::label_ids(const std::vector<std::string>& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) {
    int id = token_id(t);
    check(id >= 0, "AsrModel: token '" + t + "' not in vocabulary");
    ids.push_back(id);
  }
  return ids;
}

ParamRegistry AsrModel::params() const {
  ParamRegistry reg;
  down1_.register_params("asr.down1", &reg);
  down2_.register_params("asr.down2", &reg);
  for (size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].register_params("asr.block" + std::to_string(i), &reg);
    block_norms_[i].register_params("asr.norm" + std::to_string(i), &reg);
  }
  logit_head_.register_params("asr.logits", &reg);
  return reg;
}

void AsrModel::freeze() {
  auto reg = params();
  reg.set_requires_grad(false);
}

std::vector<int> ctc_decode_ids(const Tensor& logits) {
  const int rows = logits.rows(), cols = logits.cols();
  const int blank = cols - 1;
  std::vector<int> out;
  int prev = -1;
  for (int r = 0; r < rows; ++r) {
    int best = 0;
    for (int c = 1; c < cols; ++c)
      if (logits(r, c) > logits(r, best)) best = c;
    if (best != prev && best != blank) out.push_back(best);
    prev = best;
  }
  return out;
}

std::vector<std::string> ctc_decode(const AsrModel& model, const Tensor& logits) {
  std::vector<std::string> out;
  for (int id : ctc_decode_ids(logits)) out.push_back(model.vocab()[id]);
  return out;
}

// ---------------------------------------------------------------- pitch

PitchModel::PitchModel(const AuxConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  conv1_ = Conv1dLayer(rng, cfg_.mel_bins, cfg_.pitch_hidden, cfg_.pitch_kernel, 1);
  ln1_ = LayerNormLayer(cfg_.pitch_hidden);
  conv2_ = Conv1dLayer(rng, cfg_.pitch_hidden, cfg_.pitch_hidden, cfg_.pitch_kernel, 1);
  ln2_ = LayerNormLayer(cfg_.pitch_hidden);
  out_ = LinearLayer(rng, cfg_.pitch_hidden, 1);
}

PitchOutputs PitchModel::forward(const Tensor& mel) const {
  PitchOutputs out;
  out.first_hidden = ln1_.forward(silu(conv1_.forward(mel_input_norm(mel))));
  Tensor x = ln2_.forward(silu(conv2_.forward(out.first_hidden)));
  out.f0_pred = out_.forward(x);
  return out;
}

ParamRegistry PitchModel::params() const {
  ParamRegistry reg;
  conv1_.register_params("pitch.conv1", &reg);
  ln1_.register_params("pitch.ln1", &reg);
  conv2_.register_params("pitch.conv2", &reg);
  ln2_.register_params("pitch.ln2", &reg);
  out_.register_params("pitch.out", &reg);
  return reg;
}

void PitchModel::freeze() {
  auto reg = params();
  reg.set_requires_grad(false);
}

// ---------------------------------------------------------------- training

namespace {

std::vector<int> draw_indices(std::mt19937_64& rng, size_t pool, int count) {
  std::uniform_int_distribution<size_t> d(0, pool - 1);
  std::vector<int> out(count);
  for (auto& i : out) i = static_cast<int>(d(rng));
  return out;
}

}  // namespace

SvModel train_sv(const Corpus& corpus, SvTrainMode mode, const AuxConfig& cfg,
                 const AuxTrainConfig& tc, std::vector<double>* loss_curve) {
  check(corpus.size() > 0, "train_sv: empty corpus");
  auto speakers = corpus.speakers();
  if (mode == SvTrainMode::kSupervised)
    check(speakers.size() >= 2,
          "train_sv: supervised mode needs >= 2 speakers, got " +
              std::to_string(speakers.size()));
  if (mode == SvTrainMode::kDistill)
    for (const auto& u : corpus.utterances())
      check(!u.teacher_embedding_path.empty(),
            "train_sv: distill mode needs a teacher embedding per utterance; "
            "missing for " + u.utterance_id);

  SvModel model(cfg, tc.seed);
  std::mt19937_64 rng(tc.seed ^ 0x5555aaaaULL);

  // Class anchors for the additive-margin objective.
  Tensor class_w;
  std::map<std::string, int> spk_index;
  if (mode == SvTrainMode::kSupervised) {
    for (size_t i = 0; i < speakers.size(); ++i)
      spk_index[speakers[i]] = static_cast<int>(i);
    std::uniform_real_distribution<double> d(-0.1, 0.1);
    std::vector<double> init(speakers.size() * kSvEmbeddingDim);
    for (auto& v : init) v = d(rng);
    class_w = Tensor::param(std::move(init), static_cast<int>(speakers.size()),
                            kSvEmbeddingDim);
  }

  ParamRegistry params = model.params();
  if (mode == SvTrainMode::kSupervised) params.add("sv.classes", class_w);
  AdamOptimizer opt(tc.lr, 0.9, 0.999, 1e-8);

  // Teacher vectors are loaded once.
  std::vector<std::vector<double>> teachers;
  if (mode == SvTrainMode::kDistill) {
    teachers.reserve(corpus.size());
    for (const auto& u : corpus.utterances())
      teachers.push_back(read_teacher_embedding(u.teacher_embedding_path));
  }

  for (int step = 0; step < tc.steps; ++step) {
    auto idxs = draw_indices(rng, corpus.size(), tc.batch);
    std::vector<Tensor> losses;
    for (int idx : idxs) {
      const Utterance& u = corpus.utt(idx);
      Tensor e = model.forward(mel_to_tensor(u.mel));
      if (mode == SvTrainMode::kDistill) {
        losses.push_back(
            mse(e, Tensor::from(teachers[idx], 1, kSvEmbeddingDim)));
      } else {
        Tensor cosines = matmul_nt(l2_normalize_rows(e), l2_normalize_rows(class_w));
        int target = spk_index[u.speaker_id];
        std::vector<double> margin(speakers.size(), 0.0);
        margin[target] = tc.sv_margin;
        Tensor adjusted = scale(
            sub(cosines, Tensor::from(std::move(margin), 1,
                                      static_cast<int>(speakers.size()))),
            tc.sv_scale);
        losses.push_back(cross_entropy_rows(adjusted, {target}));
      }
    }
    Tensor loss = weighted_sum(
        std::vector<double>(losses.size(), 1.0 / losses.size()), losses);
    if (loss_curve) loss_curve->push_back(loss.item());
    params.zero_grad();
    loss.backward();
    opt.step(params);
  }
  model.freeze();
  return model;
}

namespace {

// Random mel-bin roll plus additive spectral tilt; the log floor fills the
// vacated band edge.
Tensor augment_spectrum(const MelSpec& mel, int max_shift, double max_tilt,
                        std::mt19937_64& rng) {
  std::uniform_int_distribution<int> shift_d(-max_shift, max_shift);
  std::uniform_real_distribution<double> tilt_d(-max_tilt, max_tilt);
  const int shift = max_shift > 0 ? shift_d(rng) : 0;
  const double tilt = max_tilt > 0 ? tilt_d(rng) : 0.0;
  const int bins = mel.bins;
  double floor_log = mel.values[0];
  for (double v : mel.values) floor_log = std::min(floor_log, v);
  std::vector<double> out(mel.values.size());
  for (int t = 0; t < mel.frames; ++t)
    for (int b = 0; b < bins; ++b) {
      int src = b - shift;
      double v = (src >= 0 && src < bins) ? mel.at(t, src) : floor_log;
      out[static_cast<size_t>(t) * bins + b] = v + tilt * b / (bins - 1);
    }
  return Tensor::from(std::move(out), mel.frames, bins);
}

}  // namespace

AsrModel train_asr(const Corpus& corpus, const AuxConfig& cfg,
                   const AuxTrainConfig& tc, std::vector<double>* loss_curve) {
  check(corpus.size() > 0, "train_asr: empty corpus");
  auto vocab = corpus.phoneme_inventory();
  check(!vocab.empty(), "train_asr: corpus has no phoneme labels");
  AsrModel model(cfg, vocab, tc.seed);
  std::mt19937_64 rng(tc.seed ^ 0x1234abcdULL);
  ParamRegistry params = model.params();
  AdamOptimizer opt(tc.lr, 0.9, 0.999, 1e-8);
  for (int step = 0; step < tc.steps; ++step) {
    auto idxs = draw_indices(rng, corpus.size(), tc.batch);
    std::vector<Tensor> losses;
    for (int idx : idxs) {
      const Utterance& u = corpus.utt(idx);
      Tensor input = (tc.aug_max_shift > 0 || tc.aug_max_tilt > 0)
                         ? augment_spectrum(u.mel, tc.aug_max_shift,
                                            tc.aug_max_tilt, rng)
                         : mel_to_tensor(u.mel);
      AsrOutputs out = model.forward(input);
      losses.push_back(ctc_loss(out.logits, model.label_ids(u.phone_tokens())));
    }
    Tensor loss = weighted_sum(
        std::vector<double>(losses.size(), 1.0 / losses.size()), losses);
    if (loss_curve) loss_curve->push_back(loss.item());
    params.zero_grad();
    loss.backward();
    opt.step(params);
  }
  model.freeze();
  return model;
}

PitchModel train_pitch(const Corpus& corpus, const AuxConfig& cfg,
                       const AuxTrainConfig& tc, std::vector<double>* loss_curve) {
  check(corpus.size() > 0, "train_pitch: empty corpus");
  PitchModel model(cfg, tc.seed);
  std::mt19937_64 rng(tc.seed ^ 0x9876fedcULL);
  ParamRegistry params = model.params();
  AdamOptimizer opt(tc.lr, 0.9, 0.999, 1e-8);
  for (int step = 0; step < tc.steps; ++step) {
    auto idxs = draw_indices(rng, corpus.size(), tc.batch);
    std::vector<Tensor> losses;
    for (int idx : idxs) {
      const Utterance& u = corpus.utt(idx);
      PitchOutputs out = model.forward(mel_to_tensor(u.mel));
      std::vector<double> target(u.f0.size());
      for (size_t i = 0; i < u.f0.size(); ++i)
        target[i] = u.f0[i] > 0.0 ? std::log(u.f0[i]) : 0.0;
      losses.push_back(mse(out.f0_pred,
                           Tensor::from(std::move(target),
                                        static_cast<int>(u.f0.size()), 1)));
    }
    Tensor loss = weighted_sum(
        std::vector<double>(losses.size(), 1.0 / losses.size()), losses);
    if (loss_curve) loss_curve->push_back(loss.item());
    params.zero_grad();
    loss.backward();
    opt.step(params);
  }
  model.freeze();
  return model;
}

// ---------------------------------------------------------------- files

namespace {

json aux_header(const AuxConfig& cfg) {
  return json{{"aux", json::parse(aux_config_to_json(cfg))}};
}

AuxConfig parse_aux_header(const std::string& text) {
  json j = json::parse(text);
  return aux_config_from_json(j.at("aux").dump());
}

}  // namespace

void save_sv(const std::string& path, const SvModel& model) {
  Checkpoint ck;
  ck.kind = "sv";
  ck.config_json = aux_header(model.config()).dump();
  ck.add_registry("", model.params());
  ck.save(path);
}

SvModel load_sv(const std::string& path) {
  Checkpoint ck = Checkpoint::load(path);
  check(ck.kind == "sv", "load_sv: checkpoint kind is '" + ck.kind + "'");
  SvModel model(parse_aux_header(ck.config_json), 0);
  auto reg = model.params();
  ck.load_into("", &reg);
  model.freeze();
  return model;
}

void save_asr(const std::string& path, const AsrModel& model) {
  Checkpoint ck;
  ck.kind = "asr";
  json hdr = aux_header(model.config());
  hdr["vocab"] = model.vocab();
  ck.config_json = hdr.dump();
  ck.add_registry("", model.params());
  ck.save(path);
}

AsrModel load_asr(const std::string& path) {
  Checkpoint ck = Checkpoint::load(path);
  check(ck.kind == "asr", "load_asr: checkpoint kind is '" + ck.kind + "'");
  json hdr = json::parse(ck.config_json);
  AsrModel model(parse_aux_header(ck.config_json),
                 hdr.at("vocab").get<std::vector<std::string>>(), 0);
  auto reg = model.params();
  ck.load_into("", &reg);
  model.freeze();
  return model;
}

void save_pitch(const std::string& path, const PitchModel& model) {
  Checkpoint ck;
  ck.kind = "pitch";
  ck.config_json = aux_header(model.config()).dump();
  ck.add_registry("", model.params());
  ck.save(path);
}

PitchModel load_pitch(const std::string& path) {
  Checkpoint ck = Checkpoint::load(path);
  check(ck.kind == "pitch", "load_pitch: checkpoint kind is '" + ck.kind + "'");
  PitchModel model(parse_aux_header(ck.config_json), 0);
  auto reg = model.params();
  ck.load_into("", &reg);
  model.freeze();
  return model;
}

std::vector<double> read_teacher_embedding(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), "read_teacher_embedding: cannot open " + path);
  std::vector<double> out(kSvEmbeddingDim);
  for (auto& v : out) {
    float f = 0.0f;
    is.read(reinterpret_cast<char*>(&f), 4);
    check(static_cast<bool>(is), "read_teacher_embedding: short file " + path);
    v = f;
  }
  return out;
}

void write_teacher_embedding(const std::string& path,
                             const std::vector<double>& embedding) {
  check(embedding.size() == kSvEmbeddingDim,
        "write_teacher_embedding: embedding must have 256 values");
  std::ofstream os(path, std::ios::binary);
  check(os.good(), "write_teacher_embedding: cannot open " + path);
  for (double v : embedding) {
    float f = static_cast<float>(v);
    os.write(reinterpret_cast<const char*>(&f), 4);
  }
}

}  // namespace cyclevc
