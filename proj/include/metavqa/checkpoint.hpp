#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "metavqa/model.hpp"

namespace mvqa {

// Binary checkpoint, little-endian:
//   "MVQACKPT" | u32 version | u32 header_len | header JSON
//   | u64 n_params | n_params x (f32|f64) | u64 FNV-1a of everything before it
// The header carries the model config, the tensor list (name, rows, cols) in
// flat order, and free-form metadata (vocabulary fingerprint, modality mask).
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  AnyModel model;
  nlohmann::json metadata;
};

void save_checkpoint(const AnyModel& model, const std::filesystem::path& path,
                     const nlohmann::json& metadata = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <class T>
void save_checkpoint(const Transformer<T>& model, const std::filesystem::path& path,
                     const nlohmann::json& metadata = nlohmann::json::object()) {
  save_checkpoint(AnyModel(model), path, metadata);
}

const ModelConfig& config_of(const AnyModel& model);

}  // namespace mvqa
