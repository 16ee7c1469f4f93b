// cyclevc/optim.hpp

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

#ifndef CYCLEVC_OPTIM_HPP
#define CYCLEVC_OPTIM_HPP

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "cyclevc/tensor.hpp"

namespace cyclevc {

// Adam with bias correction. Moment state is keyed by parameter name so it
// survives checkpoint round-trips.
class AdamOptimizer {
 public:
  AdamOptimizer() = default;
  AdamOptimizer(double lr, double beta1, double beta2, double eps)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamRegistry& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, p] : params.items) {
      if (!p.requires_grad()) continue;
      auto& vals = p.values();
      auto& st = state_[name];
      if (st.m.size() != vals.size()) {
        st.m.assign(vals.size(), 0.0);
        st.v.assign(vals.size(), 0.0);
      }
      const bool has_grad = p.grad().size() == vals.size();
      for (size_t i = 0; i < vals.size(); ++i) {
        double g = has_grad ? p.grad()[i] : 0.0;
        st.m[i] = beta1_ * st.m[i] + (1.0 - beta1_) * g;
        st.v[i] = beta2_ * st.v[i] + (1.0 - beta2_) * g * g;
        double mhat = st.m[i] / bc1;
        double vhat = st.v[i] / bc2;
        vals[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  int64_t steps_taken() const { return t_; }
  double learning_rate() const { return lr_; }

  struct Moments {
    std::vector<double> m, v;
  };
  std::map<std::string, Moments>& state() { return state_; }
  const std::map<std::string, Moments>& state() const { return state_; }
  void set_steps_taken(int64_t t) { t_ = t; }

 private:
  double lr_ = 1e-4;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-9;
  int64_t t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace cyclevc

#endif  // CYCLEVC_OPTIM_HPP
