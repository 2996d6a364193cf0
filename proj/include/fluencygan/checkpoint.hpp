#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "fluencygan/rng.hpp"
#include "fluencygan/tensor.hpp"

namespace fluencygan {

inline constexpr std::uint32_t kCheckpointVersion = 1;

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Contents of a checkpoint file:
///   "FLGN", u32 version, u32 entry count,
///   per entry: u16 name length, name, u8 ndim, u32 dims, f32 values,
///   config block of key=value lines ending with the line "end=FLGN",
///   four u64 words of RNG state.
/// Integers and floats are little-endian.
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor<float>>> tensors;
  KeyValues config;
  Rng::State rng{};

  const Tensor<float>& tensor(const std::string& name) const;
  /// ConfigError when the key is absent.
  const std::string& value(const std::string& key) const;
  bool has_value(const std::string& key) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// FormatError on a wrong magic, unknown version or truncated/corrupt file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fluencygan
