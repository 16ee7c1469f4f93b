// cyclevc/losses.cpp

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

#include "cyclevc/losses.hpp"

#include <algorithm>
#include <stdexcept>

namespace cyclevc {

namespace {

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

}  // namespace

double LossBreakdown::component(const std::string& name) const {
  for (const auto& [n, v] : components)
    if (n == name) return v;
  throw std::runtime_error("LossBreakdown: no component named " + name);
}

bool LossBreakdown::has_component(const std::string& name) const {
  for (const auto& [n, v] : components)
    if (n == name) return true;
  return false;
}

Tensor recon_loss(const Tensor& m, const Tensor& m_hat) {
  check(m.shape() == m_hat.shape(), "recon_loss: shape mismatch");
  return mse(m, m_hat);
}

Tensor timbre_loss(const Tensor& e, const Tensor& e_hat) {
  return add_scalar(scale(cosine(e, e_hat), -1.0), 1.0);
}

Tensor pitch_perceptual_loss(const Tensor& m_ref, const Tensor& m_hat,
                             const PitchModel& pitch) {
  check(m_ref.rows() == m_hat.rows() && m_ref.cols() == m_hat.cols(),
        "pitch_perceptual_loss: shape mismatch");
  Tensor ref_emb = detach(pitch.forward(detach(m_ref)).first_hidden);
  Tensor hat_emb = pitch.forward(m_hat).first_hidden;
  return mse(hat_emb, ref_emb);
}

Tensor asr_perceptual_loss(const Tensor& m_ref, const Tensor& m_hat,
                           const AsrModel& asr) {
  check(m_ref.rows() == m_hat.rows() && m_ref.cols() == m_hat.cols(),
        "asr_perceptual_loss: shape mismatch");
  Tensor ref_emb = detach(asr.forward(detach(m_ref)).last_hidden);
  Tensor hat_emb = asr.forward(m_hat).last_hidden;
  return mse(hat_emb, ref_emb);
}

std::pair<Tensor, Tensor> lsgan_losses(const Tensor& real_scores,
                                       const Tensor& fake_scores) {
  Tensor g = mse_const(fake_scores, 1.0);
  Tensor d = add(mse_const(real_scores, 1.0), mse_const(fake_scores, 0.0));
  return {g, d};
}

std::vector<std::string> required_components(int substep) {
  switch (substep) {
    case 1:
    case 3:
      return {"adv", "rec", "timbre", "pitch"};
    case 2:
      return {"adv", "timbre", "asr"};
    default:
      throw std::runtime_error("required_components: substep must be 1, 2 or 3");
  }
}

Tensor compose_step_loss(int substep,
                         const std::vector<std::pair<std::string, Tensor>>& components,
                         const LossWeights& weights, LossBreakdown* breakdown) {
  const auto required = required_components(substep);
  check(components.size() == required.size(),
        "compose_step_loss: substep " + std::to_string(substep) + " needs exactly " +
            std::to_string(required.size()) + " components, got " +
            std::to_string(components.size()));
  for (const auto& [name, t] : components) {
    check(std::find(required.begin(), required.end(), name) != required.end(),
          "compose_step_loss: component '" + name + "' is not part of substep " +
              std::to_string(substep));
    check(t.numel() == 1, "compose_step_loss: component '" + name + "' is not scalar");
  }
  auto weight_of = [&](const std::string& name) {
    if (name == "adv") return weights.adv;
    if (name == "rec") return weights.rec;
    if (name == "timbre") return weights.timbre;
    if (name == "pitch") return weights.pitch;
    return weights.asr;
  };
  std::vector<double> ws;
  std::vector<Tensor> terms;
  LossBreakdown bd;
  bd.substep = substep;
  for (const auto& name : required) {
    auto it = std::find_if(components.begin(), components.end(),
                           [&](const auto& p) { return p.first == name; });
    check(it != components.end(),
          "compose_step_loss: missing component '" + name + "' for substep " +
              std::to_string(substep));
    ws.push_back(weight_of(name));
    terms.push_back(it->second);
    bd.components.emplace_back(name, it->second.item());
  }
  Tensor composite = weighted_sum(ws, terms);
  bd.composite = composite.item();
  if (breakdown) *breakdown = bd;
  return composite;
}

}  // namespace cyclevc
