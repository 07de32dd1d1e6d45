#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "l2e/tensor.hpp"

namespace l2e {

struct ParamEntry {
  std::string path;  // e.g. "block3.ssm.proj.weight"
  Tensor value;
  bool trainable = true;
};

using GradientMap = std::map<std::string, Tensor>;

// Named parameter tensors in insertion order. Paths are unique.
class ParamStore {
 public:
  void add(std::string path, Tensor value, bool trainable = true);
  bool contains(const std::string& path) const { return index_.count(path) != 0; }
  const Tensor& get(const std::string& path) const;
  void set(const std::string& path, Tensor value);  // shape must match

  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t trainable_scalars() const;

  // Copy whose trainable tensors are leaves on `tape`.
  ParamStore bind(Tape& tape) const;

  bool operator==(const ParamStore& other) const;

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Reverse sweep from a scalar loss. Every trainable entry of `bound` gets a
// slot; entries that did not reach the loss get zeros.
GradientMap backward(const Tensor& loss, const ParamStore& bound);

double global_norm(const GradientMap& grads);

// --- checkpoints -----------------------------------------------------------
// Binary layout (little-endian):
//   "L2ECKPT\0" | u32 version | u64 count |
//   count × { u32 path_len | path bytes | u8 trainable | u32 rank |
//             rank × u64 extent | numel × f64 }
// A text manifest "<file>.manifest" holds key=value metadata including
// config_hash.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& file, const ParamStore& store,
                     const std::map<std::string, std::string>& manifest);

struct Checkpoint {
  ParamStore params;
  std::map<std::string, std::string> manifest;
};

Checkpoint load_checkpoint(const std::filesystem::path& file);

std::uint64_t fnv1a(std::string_view text);

}  // namespace l2e
