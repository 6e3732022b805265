#pragma once

#include <map>
#include <string>

#include "create/tensor.hpp"

namespace create {

/// Named-tensor container written to a single binary file.
///
/// Layout (all integers little-endian):
///   magic   "CRTK"            4 bytes
///   version u32               currently 1
///   count   u64
///   per tensor:
///     name_len u32, name bytes
///     rank     u32, dims u64 each
///     values   f64 raw, row-major
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, Tensor> tensors;

  bool has(const std::string& name) const { return tensors.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  void put(const std::string& name, Tensor t) { tensors[name] = std::move(t); }

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace create
