// cyclevc/checkpoint.hpp

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

#ifndef CYCLEVC_CHECKPOINT_HPP
#define CYCLEVC_CHECKPOINT_HPP

#include <string>
#include <vector>

#include "cyclevc/tensor.hpp"

namespace cyclevc {

// Binary container: magic, format version, model-kind tag, config echo,
// then a named-parameter table of shape + 32-bit float data.
struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<double> data;  // stored as f32 on disk
};

struct Checkpoint {
  uint32_t version = 1;
  std::string kind;         // generator | discriminator | sv | asr | pitch | trainer
  std::string config_json;  // configuration echo
  std::vector<NamedArray> arrays;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  const NamedArray* find(const std::string& name) const;
  void add_registry(const std::string& prefix, const ParamRegistry& reg);
  void add_array(const std::string& name, std::vector<int> shape,
                 std::vector<double> data);
  // Copies arrays into the registry's tensors, verifying every shape.
  void load_into(const std::string& prefix, ParamRegistry* reg) const;
};

// Rounds every tensor through f32, matching what a save/load cycle stores.
// Saving live training state goes through this so a resumed run continues
// the exact trajectory of the run that wrote the checkpoint.
void quantize_registry(ParamRegistry* reg);
void quantize_values(std::vector<double>* values);

}  // namespace cyclevc

#endif  // CYCLEVC_CHECKPOINT_HPP
