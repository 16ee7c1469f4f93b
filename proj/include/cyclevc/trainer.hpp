// cyclevc/trainer.hpp

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

#ifndef CYCLEVC_TRAINER_HPP
#define CYCLEVC_TRAINER_HPP

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cyclevc/aux_models.hpp"
#include "cyclevc/corpus.hpp"
#include "cyclevc/losses.hpp"
#include "cyclevc/nets.hpp"
#include "cyclevc/optim.hpp"

namespace cyclevc {

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-9;
  int batch_size = 8;
  int total_steps = 1000;
  uint64_t seed = 1;
  bool detach_cycle = false;  // step-3 losses flow through step 2 by default
  int checkpoint_interval = 500;
  int log_interval = 10;
  LossWeights weights;
  // full | wo_step3 | wo_step23 | wo_asr | wo_conformer
  std::string ablation = "full";
  std::optional<std::string> force_language_a;  // disables the random switch

  std::vector<int> active_substeps() const;
  void validate() const;
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

struct AuxModels {
  SvModel sv;
  AsrModel asr;
  PitchModel pitch;
};

struct SubstepOutput {
  LossBreakdown breakdown;
  Tensor composite;
  Tensor m_hat;
};

struct StepArtifacts {
  std::vector<LossBreakdown> breakdowns;           // one per active substep
  std::vector<std::vector<Tensor>> m_hats;         // [substep][batch item]
  std::vector<std::vector<Tensor>> step3_timbre_inputs;  // [1][batch item]
  double summed_generator_loss = 0.0;
  double discriminator_loss = 0.0;
};

class CycleTrainer {
 public:
  CycleTrainer(NetConfig net_cfg, TrainConfig train_cfg, const AuxModels* aux);

  // Single-pair substeps; composition and loss wiring per substep.
  // `override_mhat` substitutes the generated mel (test hook).
  SubstepOutput run_substep1(const Tensor& content_mel, const Tensor& timbre_mel,
                             const Tensor* override_mhat = nullptr);
  SubstepOutput run_substep2(const Tensor& content_mel, const Tensor& timbre_mel,
                             const Tensor* override_mhat = nullptr);
  // timbre_mel must be the step-2 output; detached here iff detach_cycle.
  SubstepOutput run_substep3(const Tensor& content_mel, const Tensor& step2_output,
                             const Tensor* override_mhat = nullptr);

  // One generator update from the summed substep losses, then one
  // discriminator update on the detached fakes.
  StepArtifacts training_step(const Corpus& corpus, const CycleBatch& batch);

  // Computes the summed generator loss for a batch without updating
  // anything; used by descent checks and evaluation.
  double evaluate_batch_loss(const Corpus& corpus, const CycleBatch& batch);

  struct TrainResult {
    std::vector<StepArtifacts> artifacts;  // only breakdown scalars retained
    int steps_run = 0;
  };
  using StepCallback = std::function<void(int step, const StepArtifacts&)>;
  // Full loop: sample -> training_step -> log/checkpoint. `log_path` gets one
  // JSON record per substep per step. Empty paths disable the side effects.
  TrainResult train(const Corpus& corpus, const std::string& log_path = "",
                    const std::string& checkpoint_path = "",
                    StepCallback callback = nullptr);

  // Trainer checkpoints carry generator, discriminator, both optimizer
  // states and the sampler RNG. Live state is rounded through the stored
  // 32-bit precision on save so a resumed run continues this run's exact
  // trajectory.
  void save_checkpoint(const std::string& path);
  static CycleTrainer load_checkpoint(const std::string& path, const AuxModels* aux);

  Generator& generator() { return gen_; }
  const Generator& generator() const { return gen_; }
  PatchDiscriminator& discriminator() { return disc_; }
  const TrainConfig& train_config() const { return cfg_; }
  const NetConfig& net_config() const { return net_cfg_; }
  int step_count() const { return step_; }
  std::mt19937_64& sampler_rng() { return rng_; }

 private:
  Tensor crop_tensor(const MelSpec& mel, int len) const;
  SubstepOutput run_substep_impl(int substep, const Tensor& content_mel,
                                 const Tensor& timbre_ref, const Tensor* override_mhat);

  NetConfig net_cfg_;
  TrainConfig cfg_;
  const AuxModels* aux_ = nullptr;
  Generator gen_;
  PatchDiscriminator disc_;
  ParamRegistry gen_params_, disc_params_;
  AdamOptimizer opt_g_, opt_d_;
  std::mt19937_64 rng_;
  int step_ = 0;
};

// Applies an ablation name to the effective configuration.
void apply_ablation(const std::string& ablation, NetConfig* net, TrainConfig* train);

// Languages >= 2 and every language keeps an eligible speaker-1.
void check_cycle_feasible(const Corpus& corpus);

}  // namespace cyclevc

#endif  // CYCLEVC_TRAINER_HPP
