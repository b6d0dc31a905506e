#pragma once

// Self-describing weight container: "SMCK" magic, u32 version, u64 header
// length, JSON header (architecture, config hash, tensor directory), then raw
// little-endian float32 tensors in directory order.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "semcom/nn.hpp"

namespace semcom {

struct Checkpoint {
  nlohmann::json header = nlohmann::json::object();
  std::vector<std::pair<std::string, nn::Matrix>> tensors;

  const nn::Matrix& tensor(const std::string& name) const;
  bool has(const std::string& name) const noexcept;
};

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& header, const nn::ParamList& params);
/// Throws MissingCheckpoint when absent, IoError when malformed.
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Copy tensors into `params` by name; throws IoError on missing names or shape mismatches.
void assign_params(const Checkpoint& ckpt, const nn::ParamList& params);

}  // namespace semcom
