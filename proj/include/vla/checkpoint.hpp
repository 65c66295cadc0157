#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "vla/train.hpp"

namespace vla::train {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { F64 = 0, Nf4 = 1, Text = 2 };

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes, const std::string& context = "checkpoint");

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace vla::train
