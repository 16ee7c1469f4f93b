// cyclevc/losses.hpp

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

#ifndef CYCLEVC_LOSSES_HPP
#define CYCLEVC_LOSSES_HPP

#include <string>
#include <utility>
#include <vector>

#include "cyclevc/aux_models.hpp"
#include "cyclevc/tensor.hpp"

namespace cyclevc {

struct LossWeights {
  double adv = 0.05;   // lambda_1
  double rec = 1.0;    // lambda_2
  double timbre = 0.1; // lambda_3
  double pitch = 1.0;  // lambda_4
  double asr = 0.5;    // lambda_5
};

struct LossBreakdown {
  int substep = 0;  // 1, 2 or 3
  std::vector<std::pair<std::string, double>> components;
  double composite = 0.0;
  double component(const std::string& name) const;
  bool has_component(const std::string& name) const;
};

// Element-mean squared difference; shapes must match.
Tensor recon_loss(const Tensor& m, const Tensor& m_hat);
// 1 - cosine similarity of two embeddings; range [0, 2].
Tensor timbre_loss(const Tensor& e, const Tensor& e_hat);
// Element-mean squared difference of first-layer pitch embeddings. The
// reference side is detached: gradient reaches m_hat only.
Tensor pitch_perceptual_loss(const Tensor& m_ref, const Tensor& m_hat,
                             const PitchModel& pitch);
// Same with last-layer recognizer embeddings.
Tensor asr_perceptual_loss(const Tensor& m_ref, const Tensor& m_hat,
                           const AsrModel& asr);
// LSGAN pair: g = mean((fake-1)^2); d = mean((real-1)^2) + mean(fake^2).
std::pair<Tensor, Tensor> lsgan_losses(const Tensor& real_scores,
                                       const Tensor& fake_scores);

// Component names mandated for the substep: {adv, rec, timbre, pitch} for
// substeps 1 and 3, {adv, timbre, asr} for substep 2.
std::vector<std::string> required_components(int substep);

// Weighted composition per substep. Missing or extra components are errors.
Tensor compose_step_loss(int substep,
                         const std::vector<std::pair<std::string, Tensor>>& components,
                         const LossWeights& weights,
                         LossBreakdown* breakdown = nullptr);

}  // namespace cyclevc

#endif  // CYCLEVC_LOSSES_HPP
