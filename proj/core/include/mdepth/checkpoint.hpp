#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "mdepth/models.hpp"
#include "mdepth/tensor.hpp"

namespace mdepth {

/// "NDCK", u32 version, u32 entry count, per entry (u32 name length, name,
/// NDTF tensor), u64 training step, u64 config hash.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::vector<std::pair<std::string, Tensor<float>>> parameters;
  std::uint64_t step = 0;
  std::uint64_t config_hash = 0;

  /// Number of depth scales implied by the stored encoder stages.
  std::size_t n_scales() const;
};

void write_checkpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& is);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Snapshot of the model's parameters (values are copied).
template <typename T>
Checkpoint make_checkpoint(Model<T>& model, std::uint64_t step, std::uint64_t config_hash);

/// Copies stored values into the model. Names and shapes must match exactly.
template <typename T>
void restore_parameters(Model<T>& model, const Checkpoint& ckpt);

}  // namespace mdepth
