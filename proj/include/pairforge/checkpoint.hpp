#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "pairforge/encoders.hpp"

namespace pf {

/// Raised when a checkpoint cannot be used with the requesting model.
class CheckpointMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// On disk: "PFCK", u32 little-endian header length, a JSON header with
/// tensor names, shapes and metadata, then the tensors as PFTN records.
struct Checkpoint {
  std::string stage;     // e.g. "image-pretrain", "text-pretrain", "vlm"
  std::string modality;  // "image", "text" or "dual"
  std::uint64_t seed = 0;
  std::string config_json;
  std::string config_hash;
  ParamList tensors;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const std::string& stage, const std::string& modality, std::uint64_t seed,
                           const EncoderConfig& cfg, const ParamList& params);

/// Copies matching tensors from `ckpt` into `params`. Every parameter must be
/// present with the same shape and the config hash must agree with `cfg`.
void restore_params(const Checkpoint& ckpt, const EncoderConfig& cfg, ParamList& params);

}  // namespace pf
