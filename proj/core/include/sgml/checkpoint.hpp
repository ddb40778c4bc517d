#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "sgml/network.hpp"

namespace sgml {

inline constexpr const char* kCheckpointFormat = "sgml-ckpt-v1";

/// Everything needed to resume or evaluate a model. `config_json` is the
/// resolved training config the parameters came from; `config_hash` is the
/// FNV-1a hash of that text.
struct Checkpoint {
  NetworkParams params;
  OptimizerState optimizer;
  std::string config_json = "{}";
  std::uint64_t config_hash = 0;
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view text);

std::string checkpoint_to_json(const Checkpoint& checkpoint);
Checkpoint checkpoint_from_json(const std::string& text);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sgml
