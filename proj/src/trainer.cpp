// cyclevc/trainer.cpp

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

#include "cyclevc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cyclevc/checkpoint.hpp"
#include "json.hpp"

namespace cyclevc {

using nlohmann::json;

namespace {

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

const std::vector<std::string> kAblations = {"full", "wo_step3", "wo_step23",
                                             "wo_asr", "wo_conformer"};

}  // namespace

std::vector<int> TrainConfig::active_substeps() const {
  if (ablation == "wo_step23") return {1};
  if (ablation == "wo_step3") return {1, 2};
  return {1, 2, 3};
}

void TrainConfig::validate() const {
  check(lr > 0.0 && eps > 0.0, "TrainConfig: lr and eps must be positive");
  check(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
        "TrainConfig: betas must be in [0, 1)");
  check(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
  check(total_steps >= 0, "TrainConfig: total_steps must be >= 0");
  check(std::find(kAblations.begin(), kAblations.end(), ablation) != kAblations.end(),
        "TrainConfig: unknown ablation '" + ablation + "'");
  check(weights.adv >= 0 && weights.rec >= 0 && weights.timbre >= 0 &&
            weights.pitch >= 0 && weights.asr >= 0,
        "TrainConfig: loss weights must be non-negative");
}

std::string train_config_to_json(const TrainConfig& c) {
  json j;
  j["lr"] = c.lr;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["eps"] = c.eps;
  j["batch_size"] = c.batch_size;
  j["total_steps"] = c.total_steps;
  j["seed"] = c.seed;
  j["detach_cycle"] = c.detach_cycle;
  j["checkpoint_interval"] = c.checkpoint_interval;
  j["log_interval"] = c.log_interval;
  j["ablation"] = c.ablation;
  j["weights"] = {{"adv", c.weights.adv},
                  {"rec", c.weights.rec},
                  {"timbre", c.weights.timbre},
                  {"pitch", c.weights.pitch},
                  {"asr", c.weights.asr}};
  if (c.force_language_a) j["force_language_a"] = *c.force_language_a;
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& text) {
  json j = json::parse(text);
  TrainConfig c;
  auto get = [&](const char* k, auto& field) {
    if (j.contains(k)) field = j[k].get<std::decay_t<decltype(field)>>();
  };
  get("lr", c.lr);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  get("eps", c.eps);
  get("batch_size", c.batch_size);
  get("total_steps", c.total_steps);
  get("seed", c.seed);
  get("detach_cycle", c.detach_cycle);
  get("checkpoint_interval", c.checkpoint_interval);
  get("log_interval", c.log_interval);
  get("ablation", c.ablation);
  if (j.contains("weights")) {
    const auto& w = j["weights"];
    if (w.contains("adv")) c.weights.adv = w["adv"].get<double>();
    if (w.contains("rec")) c.weights.rec = w["rec"].get<double>();
    if (w.contains("timbre")) c.weights.timbre = w["timbre"].get<double>();
    if (w.contains("pitch")) c.weights.pitch = w["pitch"].get<double>();
    if (w.contains("asr")) c.weights.asr = w["asr"].get<double>();
  }
  if (j.contains("force_language_a"))
    c.force_language_a = j["force_language_a"].get<std::string>();
  c.validate();
  return c;
}

void apply_ablation(const std::string& ablation, NetConfig* net, TrainConfig* train) {
  check(std::find(kAblations.begin(), kAblations.end(), ablation) != kAblations.end(),
        "apply_ablation: unknown ablation '" + ablation + "'");
  train->ablation = ablation;
  if (ablation == "wo_asr") train->weights.asr = 0.0;
  if (ablation == "wo_conformer") net->use_conformer_fusion = false;
}

void check_cycle_feasible(const Corpus& corpus) {
  auto languages = corpus.languages();
  check(languages.size() >= 2,
        "cycle training infeasible: corpus has " + std::to_string(languages.size()) +
            " language(s); need >= 2");
  for (const auto& lang : languages) {
    bool ok = false;
    for (const auto& spk : corpus.speakers_of_language(lang))
      if (corpus.group(spk, lang).size() >= 3) ok = true;
    check(ok, "cycle training infeasible: language " + lang +
                  " has no speaker with >= 3 utterances");
  }
}

// ---------------------------------------------------------------- trainer

CycleTrainer::CycleTrainer(NetConfig net_cfg, TrainConfig train_cfg,
                           const AuxModels* aux)
    : net_cfg_(net_cfg), cfg_(train_cfg), aux_(aux) {
  cfg_.validate();
  apply_ablation(cfg_.ablation, &net_cfg_, &cfg_);
  net_cfg_.validate();
  check(aux_ != nullptr, "CycleTrainer: aux models are required");
  gen_ = Generator(net_cfg_, cfg_.seed);
  disc_ = PatchDiscriminator(net_cfg_, cfg_.seed ^ 0xD15CULL);
  gen_params_ = gen_.params();
  disc_params_ = disc_.params();
  opt_g_ = AdamOptimizer(cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.eps);
  opt_d_ = AdamOptimizer(cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.eps);
  rng_.seed(cfg_.seed ^ 0x5A5A5A5AULL);
}

Tensor CycleTrainer::crop_tensor(const MelSpec& mel, int len) const {
  check(len >= 1 && len <= mel.frames, "crop_tensor: bad crop length");
  std::vector<double> v(mel.values.begin(),
                        mel.values.begin() + static_cast<size_t>(len) * mel.bins);
  return Tensor::from(std::move(v), len, mel.bins);
}

SubstepOutput CycleTrainer::run_substep_impl(int substep, const Tensor& content_mel,
                                             const Tensor& timbre_ref,
                                             const Tensor* override_mhat) {
  Tensor m_hat = override_mhat ? *override_mhat : gen_.convert(content_mel, timbre_ref);
  std::vector<std::pair<std::string, Tensor>> components;

  Tensor fake_scores = disc_.forward(m_hat);
  components.emplace_back("adv", mse_const(fake_scores, 1.0));

  // Substep 3 has real speaker-1 data as ground truth; substeps 1 and 2 take
  // the timbre reference itself as the SV target.
  const Tensor& sv_target = substep == 3 ? content_mel : timbre_ref;
  Tensor e_ref = detach(aux_->sv.forward(detach(sv_target)));
  Tensor e_hat = aux_->sv.forward(m_hat);
  components.emplace_back("timbre", timbre_loss(e_ref, e_hat));

  if (substep == 2) {
    components.emplace_back("asr", asr_perceptual_loss(content_mel, m_hat, aux_->asr));
  } else {
    components.emplace_back("rec", recon_loss(content_mel, m_hat));
    components.emplace_back("pitch",
                            pitch_perceptual_loss(content_mel, m_hat, aux_->pitch));
  }

  SubstepOutput out;
  out.m_hat = m_hat;
  out.composite = compose_step_loss(substep, components, cfg_.weights, &out.breakdown);
  return out;
}

SubstepOutput CycleTrainer::run_substep1(const Tensor& content_mel,
                                         const Tensor& timbre_mel,
                                         const Tensor* override_mhat) {
  return run_substep_impl(1, content_mel, timbre_mel, override_mhat);
}

SubstepOutput CycleTrainer::run_substep2(const Tensor& content_mel,
                                         const Tensor& timbre_mel,
                                         const Tensor* override_mhat) {
  return run_substep_impl(2, content_mel, timbre_mel, override_mhat);
}

SubstepOutput CycleTrainer::run_substep3(const Tensor& content_mel,
                                         const Tensor& step2_output,
                                         const Tensor* override_mhat) {
  Tensor ref = cfg_.detach_cycle ? detach(step2_output) : step2_output;
  return run_substep_impl(3, content_mel, ref, override_mhat);
}

namespace {

struct BatchTensors {
  std::vector<Tensor> s1_content, s1_timbre, s2_content, s3_content;
};

int min_frames(const Corpus& corpus, const CycleBatch& batch,
               int CycleItem::*role) {
  int m = 1 << 30;
  for (const auto& item : batch.items)
    m = std::min(m, corpus.utt(item.*role).mel.frames);
  return m;
}

}  // namespace

StepArtifacts CycleTrainer::training_step(const Corpus& corpus,
                                          const CycleBatch& batch) {
  check(!batch.items.empty(), "training_step: empty batch");
  check_cycle_batch(corpus, batch);

  // Variable-length batching: per-role crop to the batch minimum.
  const int len_s1c = min_frames(corpus, batch, &CycleItem::step1_content);
  const int len_s1t = min_frames(corpus, batch, &CycleItem::step1_timbre);
  const int len_s2c = min_frames(corpus, batch, &CycleItem::step2_content);
  const int len_s3c = min_frames(corpus, batch, &CycleItem::step3_content);

  BatchTensors bt;
  for (const auto& item : batch.items) {
    bt.s1_content.push_back(crop_tensor(corpus.utt(item.step1_content).mel, len_s1c));
    bt.s1_timbre.push_back(crop_tensor(corpus.utt(item.step1_timbre).mel, len_s1t));
    bt.s2_content.push_back(crop_tensor(corpus.utt(item.step2_content).mel, len_s2c));
    bt.s3_content.push_back(crop_tensor(corpus.utt(item.step3_content).mel, len_s3c));
  }

  const auto substeps = cfg_.active_substeps();
  const int b = static_cast<int>(batch.items.size());

  StepArtifacts art;
  std::vector<Tensor> composites;
  std::vector<Tensor> mhat2_per_item(b);

  for (int substep : substeps) {
    std::vector<Tensor> mhats(b);
    std::vector<Tensor> step3_refs;
    for (int i = 0; i < b; ++i) {
      SubstepOutput so;
      if (substep == 1) {
        so = run_substep1(bt.s1_content[i], bt.s1_timbre[i]);
      } else if (substep == 2) {
        so = run_substep2(bt.s2_content[i], bt.s1_timbre[i]);
        mhat2_per_item[i] = so.m_hat;
      } else {
        Tensor ref = cfg_.detach_cycle ? detach(mhat2_per_item[i])
                                       : mhat2_per_item[i];
        step3_refs.push_back(ref);
        so = run_substep_impl(3, bt.s3_content[i], ref, nullptr);
      }
      mhats[i] = so.m_hat;
      composites.push_back(scale(so.composite, 1.0 / b));
      if (i == 0) {
        art.breakdowns.push_back(so.breakdown);
      } else {
        auto& agg = art.breakdowns.back();
        for (size_t c = 0; c < agg.components.size(); ++c)
          agg.components[c].second += so.breakdown.components[c].second;
        agg.composite += so.breakdown.composite;
      }
    }
    auto& agg = art.breakdowns.back();
    if (b > 1) {
      for (auto& [name, v] : agg.components) v /= b;
      agg.composite /= b;
    }
    for (const auto& [name, v] : agg.components)
      check(std::isfinite(v), "training_step: non-finite component '" + name +
                                  "' in substep " + std::to_string(substep));
    check(std::isfinite(agg.composite),
          "training_step: non-finite composite in substep " + std::to_string(substep));
    art.m_hats.push_back(mhats);
    if (substep == 3) art.step3_timbre_inputs.push_back(step3_refs);
  }

  Tensor summed = weighted_sum(std::vector<double>(composites.size(), 1.0), composites);
  art.summed_generator_loss = summed.item();
  check(std::isfinite(art.summed_generator_loss),
        "training_step: non-finite summed generator loss");

  gen_params_.zero_grad();
  disc_params_.zero_grad();
  summed.backward();
  opt_g_.step(gen_params_);

  // Discriminator update on detached fakes, after the generator update.
  std::vector<Tensor> d_terms;
  for (size_t si = 0; si < substeps.size(); ++si) {
    const std::vector<Tensor>* reals = nullptr;
    if (substeps[si] == 1) reals = &bt.s1_content;
    if (substeps[si] == 2) reals = &bt.s2_content;
    if (substeps[si] == 3) reals = &bt.s3_content;
    for (int i = 0; i < b; ++i) {
      Tensor real_scores = disc_.forward((*reals)[i]);
      Tensor fake_scores = disc_.forward(detach(art.m_hats[si][i]));
      auto [g_unused, d_loss] = lsgan_losses(real_scores, fake_scores);
      (void)g_unused;
      d_terms.push_back(d_loss);
    }
  }
  Tensor d_total = weighted_sum(
      std::vector<double>(d_terms.size(), 1.0 / d_terms.size()), d_terms);
  art.discriminator_loss = d_total.item();
  check(std::isfinite(art.discriminator_loss),
        "training_step: non-finite discriminator loss");
  disc_params_.zero_grad();
  gen_params_.zero_grad();
  d_total.backward();
  opt_d_.step(disc_params_);

  ++step_;
  return art;
}

double CycleTrainer::evaluate_batch_loss(const Corpus& corpus,
                                         const CycleBatch& batch) {
  const int len_s1c = min_frames(corpus, batch, &CycleItem::step1_content);
  const int len_s1t = min_frames(corpus, batch, &CycleItem::step1_timbre);
  const int len_s2c = min_frames(corpus, batch, &CycleItem::step2_content);
  const int len_s3c = min_frames(corpus, batch, &CycleItem::step3_content);
  const auto substeps = cfg_.active_substeps();
  const int b = static_cast<int>(batch.items.size());
  double total = 0.0;
  for (int i = 0; i < b; ++i) {
    const auto& item = batch.items[i];
    Tensor s1c = crop_tensor(corpus.utt(item.step1_content).mel, len_s1c);
    Tensor s1t = crop_tensor(corpus.utt(item.step1_timbre).mel, len_s1t);
    Tensor mhat2;
    for (int substep : substeps) {
      SubstepOutput so;
      if (substep == 1) {
        so = run_substep1(s1c, s1t);
      } else if (substep == 2) {
        so = run_substep2(crop_tensor(corpus.utt(item.step2_content).mel, len_s2c), s1t);
        mhat2 = so.m_hat;
      } else {
        so = run_substep3(crop_tensor(corpus.utt(item.step3_content).mel, len_s3c),
                          mhat2);
      }
      total += so.composite.item() / b;
    }
  }
  return total;
}

CycleTrainer::TrainResult CycleTrainer::train(const Corpus& corpus,
                                              const std::string& log_path,
                                              const std::string& checkpoint_path,
                                              StepCallback callback) {
  check_cycle_feasible(corpus);
  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, std::ios::app);
    check(log.good(), "train: cannot open log " + log_path);
  }
  TrainResult result;
  SampleOptions sopt;
  sopt.force_language_a = cfg_.force_language_a;
  const auto substeps = cfg_.active_substeps();
  for (int s = step_; s < cfg_.total_steps; ++s) {
    CycleBatch batch = sample_cycle_batch(corpus, cfg_.batch_size, rng_, sopt);
    StepArtifacts art = training_step(corpus, batch);
    if (log.is_open()) {
      for (size_t si = 0; si < substeps.size(); ++si) {
        json rec;
        rec["step"] = s;
        rec["substep"] = substeps[si];
        for (const auto& [name, v] : art.breakdowns[si].components) rec[name] = v;
        rec["composite"] = art.breakdowns[si].composite;
        log << rec.dump() << "\n";
      }
      json drec;
      drec["step"] = s;
      drec["d_loss"] = art.discriminator_loss;
      drec["g_loss_sum"] = art.summed_generator_loss;
      log << drec.dump() << "\n";
    }
    if (callback) callback(s, art);
    // Breakdown scalars are cheap; tensors are dropped.
    StepArtifacts thin;
    thin.breakdowns = art.breakdowns;
    thin.summed_generator_loss = art.summed_generator_loss;
    thin.discriminator_loss = art.discriminator_loss;
    result.artifacts.push_back(std::move(thin));
    ++result.steps_run;
    if (!checkpoint_path.empty() && cfg_.checkpoint_interval > 0 &&
        step_ % cfg_.checkpoint_interval == 0 && step_ < cfg_.total_steps)
      save_checkpoint(checkpoint_path);
  }
  if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path);
  return result;
}

// ---------------------------------------------------------------- persist

namespace {

void add_adam_state(Checkpoint* ck, const std::string& prefix,
                    const AdamOptimizer& opt) {
  for (const auto& [name, moments] : opt.state()) {
    ck->add_array(prefix + ".m." + name,
                  {static_cast<int>(moments.m.size())}, moments.m);
    ck->add_array(prefix + ".v." + name,
                  {static_cast<int>(moments.v.size())}, moments.v);
  }
}

void load_adam_state(const Checkpoint& ck, const std::string& prefix,
                     const ParamRegistry& params, int64_t t, AdamOptimizer* opt) {
  opt->set_steps_taken(t);
  for (const auto& [name, p] : params.items) {
    const NamedArray* m = ck.find(prefix + ".m." + name);
    const NamedArray* v = ck.find(prefix + ".v." + name);
    if (!m || !v) continue;  // optimizer had not touched this parameter yet
    check(m->data.size() == p.values().size() && v->data.size() == p.values().size(),
          "checkpoint: optimizer state size mismatch for " + name);
    auto& st = opt->state()[name];
    st.m = m->data;
    st.v = v->data;
  }
}

void quantize_adam(AdamOptimizer* opt) {
  for (auto& [name, moments] : opt->state()) {
    quantize_values(&moments.m);
    quantize_values(&moments.v);
  }
}

}  // namespace

void CycleTrainer::save_checkpoint(const std::string& path) {
  Checkpoint ck;
  ck.kind = "trainer";
  std::ostringstream rng_state;
  rng_state << rng_;
  json hdr;
  hdr["net"] = json::parse(net_config_to_json(net_cfg_));
  hdr["train"] = json::parse(train_config_to_json(cfg_));
  hdr["step"] = step_;
  hdr["adam_g_t"] = opt_g_.steps_taken();
  hdr["adam_d_t"] = opt_d_.steps_taken();
  hdr["rng"] = rng_state.str();
  ck.config_json = hdr.dump();
  ck.add_registry("gen.", gen_params_);
  ck.add_registry("disc.", disc_params_);
  add_adam_state(&ck, "adam_g", opt_g_);
  add_adam_state(&ck, "adam_d", opt_d_);
  ck.save(path);
  // Synchronize live state with what the file stores.
  quantize_registry(&gen_params_);
  quantize_registry(&disc_params_);
  quantize_adam(&opt_g_);
  quantize_adam(&opt_d_);
}

CycleTrainer CycleTrainer::load_checkpoint(const std::string& path,
                                           const AuxModels* aux) {
  Checkpoint ck = Checkpoint::load(path);
  check(ck.kind == "trainer", "load_checkpoint: kind is '" + ck.kind + "'");
  json hdr = json::parse(ck.config_json);
  NetConfig net = net_config_from_json(hdr.at("net").dump());
  TrainConfig train = train_config_from_json(hdr.at("train").dump());
  CycleTrainer t(net, train, aux);
  ck.load_into("gen.", &t.gen_params_);
  ck.load_into("disc.", &t.disc_params_);
  t.step_ = hdr.at("step").get<int>();
  load_adam_state(ck, "adam_g", t.gen_params_, hdr.at("adam_g_t").get<int64_t>(),
                  &t.opt_g_);
  load_adam_state(ck, "adam_d", t.disc_params_, hdr.at("adam_d_t").get<int64_t>(),
                  &t.opt_d_);
  std::istringstream rng_state(hdr.at("rng").get<std::string>());
  rng_state >> t.rng_;
  return t;
}

}  // namespace cyclevc
