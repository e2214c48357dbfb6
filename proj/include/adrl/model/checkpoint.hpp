#pragma once

#include "adrl/model/params.hpp"

#include <string>

namespace adrl {

// Layout (little-endian):
//   "ADRL" | u32 version | u32 n_fields | n_fields x (u16 len, name, i64 value)
//   | u32 n_tensors | n_tensors x (u16 len, name, u32 rows, u32 cols, rows*cols f64)
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  CheckpointError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

std::string serialize_checkpoint(const ModelParams& params);
ModelParams deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace adrl
