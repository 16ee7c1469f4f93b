// cyclevc/checkpoint.cpp

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

#include "cyclevc/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace cyclevc {

namespace {

constexpr char kMagic[8] = {'C', 'V', 'C', 'C', 'K', 'P', 'T', '1'};

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

void write_u32(std::ofstream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t read_u32(std::ifstream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  check(static_cast<bool>(is), "checkpoint: unexpected end of file");
  return v;
}

void write_string(std::ofstream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& is) {
  uint32_t len = read_u32(is);
  check(len < (1u << 28), "checkpoint: implausible string length");
  std::string s(len, '\0');
  is.read(s.data(), len);
  check(static_cast<bool>(is), "checkpoint: unexpected end of file");
  return s;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  check(os.good(), "checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, 8);
  write_u32(os, version);
  write_string(os, kind);
  write_string(os, config_json);
  write_u32(os, static_cast<uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    write_string(os, a.name);
    write_u32(os, static_cast<uint32_t>(a.shape.size()));
    for (int d : a.shape) write_u32(os, static_cast<uint32_t>(d));
    for (double v : a.data) {
      float f = static_cast<float>(v);
      os.write(reinterpret_cast<const char*>(&f), 4);
    }
  }
  check(os.good(), "checkpoint: write failed for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), "checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  check(static_cast<bool>(is) && std::memcmp(magic, kMagic, 8) == 0,
        "checkpoint: bad magic in " + path);
  Checkpoint ck;
  ck.version = read_u32(is);
  check(ck.version == 1, "checkpoint: unsupported format version " +
                             std::to_string(ck.version));
  ck.kind = read_string(is);
  ck.config_json = read_string(is);
  uint32_t count = read_u32(is);
  check(count < (1u << 20), "checkpoint: implausible array count");
  for (uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = read_string(is);
    uint32_t ndim = read_u32(is);
    check(ndim <= 8, "checkpoint: implausible rank");
    int64_t n = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      int dim = static_cast<int>(read_u32(is));
      a.shape.push_back(dim);
      n *= dim;
    }
    check(n >= 0 && n < (1ll << 31), "checkpoint: implausible array size");
    a.data.resize(static_cast<size_t>(n));
    for (auto& v : a.data) {
      float f = 0.0f;
      is.read(reinterpret_cast<char*>(&f), 4);
      check(static_cast<bool>(is), "checkpoint: unexpected end of file");
      v = f;
    }
    ck.arrays.push_back(std::move(a));
  }
  return ck;
}

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

void Checkpoint::add_registry(const std::string& prefix, const ParamRegistry& reg) {
  for (const auto& [name, t] : reg.items) {
    NamedArray a;
    a.name = prefix + name;
    a.shape = t.shape();
    a.data = t.values();
    arrays.push_back(std::move(a));
  }
}

void Checkpoint::add_array(const std::string& name, std::vector<int> shape,
                           std::vector<double> data) {
  arrays.push_back(NamedArray{name, std::move(shape), std::move(data)});
}

void Checkpoint::load_into(const std::string& prefix, ParamRegistry* reg) const {
  for (auto& [name, t] : reg->items) {
    const NamedArray* a = find(prefix + name);
    check(a != nullptr, "checkpoint: missing parameter " + prefix + name);
    check(a->shape == t.shape(),
          "checkpoint: shape mismatch for parameter " + prefix + name);
    t.values() = a->data;
  }
}

void quantize_values(std::vector<double>* values) {
  for (double& v : *values) v = static_cast<double>(static_cast<float>(v));
}

void quantize_registry(ParamRegistry* reg) {
  for (auto& [name, t] : reg->items) quantize_values(&t.values());
}

}  // namespace cyclevc
