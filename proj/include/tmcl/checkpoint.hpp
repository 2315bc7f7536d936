#pragma once

// Binary checkpoint: "TMCLCKPT", u32 version, u64 manifest length, JSON
// manifest, u64 value count, little-endian f64 values. Per member the values
// are the normalizer statistics followed by the flat parameter vector.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "tmcl/dynamics.hpp"

namespace tmcl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointErrorCode { Io, Corrupt, VersionMismatch, ManifestInconsistent };
std::string to_string(CheckpointErrorCode code);

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorCode code, const std::string& what);
  CheckpointErrorCode code() const { return code_; }

 private:
  CheckpointErrorCode code_;
};

struct Checkpoint {
  std::vector<MultiHeadDynamicsModel> members;
  nlohmann::json metadata = nlohmann::json::object();
};

nlohmann::json model_manifest(const MultiHeadDynamicsModel& model);

std::string serialize_checkpoint(std::span<const MultiHeadDynamicsModel> members,
                                 const nlohmann::json& metadata = nlohmann::json::object());
/// Throws CheckpointError; never returns a partial model.
Checkpoint parse_checkpoint(const std::string& bytes);

/// Writes to a temporary sibling, then renames.
void save_checkpoint(const std::filesystem::path& path, std::span<const MultiHeadDynamicsModel> members,
                     const nlohmann::json& metadata = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tmcl
