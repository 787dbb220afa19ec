// Binary checkpoint container (see docs/checkpoint_format.md):
//   8 bytes   "DTTSCKPT"
//   uint32    format version
//   uint64    header length H
//   H bytes   JSON header: metadata plus a tensor index of
//             {name, rows, cols, offset} with offsets into the data block
//   ...       tensor data, little-endian float64, row-major
#pragma once

#include "dtts/autograd.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>

namespace dtts {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
  nlohmann::json meta;
  std::map<std::string, Matrix> tensors;
};

/// Atomic write: the previous file survives until the new one is complete.
void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                     const std::map<std::string, const Matrix*>& tensors);
CheckpointData load_checkpoint(const std::filesystem::path& path);

}  // namespace dtts
