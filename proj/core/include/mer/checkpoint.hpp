#pragma once

// Plain-text model checkpoints. Layout is documented in docs/checkpoint-format.md.
// Values use shortest round-trip decimal formatting, so save/load is lossless
// at 64-bit precision.

#include <cstdint>
#include <filesystem>
#include <string>

#include "mer/classifier.hpp"

namespace mer {

struct Checkpoint {
  ModelParams params;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& text);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mer
