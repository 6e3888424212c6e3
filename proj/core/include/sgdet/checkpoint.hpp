#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sgdet/tensor.hpp"

namespace sgdet {

/// Ordered collection of named trainable tensors. Names are slash paths such
/// as "block0/temporal/reduce_w".
class ParameterSet {
 public:
  /// Registers a parameter (marked requires_grad) and returns its handle.
  Tensor& add(std::string name, Tensor value);

  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t total_elements() const;
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad();
  std::vector<Tensor> tensors() const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

/// On-disk layout (all integers little-endian):
///   magic "SGDCKPT1" (8 bytes), u32 version, u32 metadata length, metadata bytes,
///   u32 entry count, then per entry:
///   u32 name length, name bytes, u32 rank, u64 dims[rank], f64 values[numel].
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Writes every parameter plus a free-form metadata string (the model config).
void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                     const std::string& metadata);

struct Checkpoint {
  std::string metadata;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Copies values from a checkpoint into existing parameters with the same names
/// and shapes. Missing names are errors unless listed in `optional_prefixes`.
void load_into(const Checkpoint& checkpoint, ParameterSet& params,
               const std::vector<std::string>& optional_prefixes = {});

}  // namespace sgdet
