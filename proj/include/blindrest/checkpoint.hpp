#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "blindrest/nn.hpp"

namespace blindrest {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Versioned binary container: magic, kind, config block, iteration count,
/// then named little-endian f32 tensors.
struct Checkpoint {
  std::string kind;
  std::map<std::string, std::string> config;
  std::uint64_t iteration = 0;
  std::vector<NamedParam> tensors;

  const Tensor& tensor(const std::string& name) const;
};

// Writes to a sibling temp file and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace blindrest
