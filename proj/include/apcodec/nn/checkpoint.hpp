#pragma once

// Named-tensor container.
//
//   "APCK"  u32 version  u32 config_bytes  config (UTF-8 JSON)  u32 entry_count
//   entry:  u32 name_bytes  name  u32 rank  u32 dims[rank]  f32 data (row-major)
//
// All integers and floats are little-endian.

#include <filesystem>
#include <string>
#include <vector>

#include "apcodec/nn/autograd.hpp"

namespace apcodec::nn {

struct NamedTensor {
  std::string name;
  Matrix value;
};

struct Checkpoint {
  std::string config;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

class ParameterStore;

/// Appends every parameter of `store` as "<prefix><name>".
void export_parameters(const ParameterStore& store, const std::string& prefix, Checkpoint& ckpt);
/// Copies "<prefix><name>" tensors into `store`; every parameter must be
/// present with a matching shape.
void import_parameters(ParameterStore& store, const std::string& prefix, const Checkpoint& ckpt);

}  // namespace apcodec::nn
