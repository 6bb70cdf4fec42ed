#pragma once

// Single-file checkpoints: 8 magic bytes "SSDACKPT", u32 format version,
// u64 header length (both little-endian), a JSON header, then raw
// little-endian float32 payloads addressed by the header's tensor table.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "shanshui/trainer.hpp"

namespace shanshui::ckpt {

inline constexpr char kMagic[8] = {'S', 'S', 'D', 'A', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kFormatVersion = 1;

struct TensorRecord {
  std::string name;
  std::string section;  // "param", "adam_m", "adam_v", "pool_a", "pool_b"
  std::vector<int> shape;
  std::vector<float> values;
};

// Container level: header fields other than the tensor table, plus tensors.
struct CheckpointFile {
  std::uint32_t version = kFormatVersion;
  nlohmann::json header = nlohmann::json::object();
  std::vector<TensorRecord> tensors;
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file);
CheckpointFile decode_checkpoint(std::span<const std::uint8_t> bytes);

// Written to a sibling temporary and renamed into place.
void write_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& file);
CheckpointFile read_checkpoint_file(const std::filesystem::path& path);

void save_checkpoint(const train::TrainState& state, const std::filesystem::path& path);
train::TrainState load_checkpoint(const std::filesystem::path& path);

// What inference needs. kind "identity" is a stub that maps inputs to
// themselves and carries no tensors.
struct InferenceModel {
  std::string kind;
  nn::ParameterSet<float> params;
  int epoch = 0;
  std::uint64_t id = 0;
};

InferenceModel load_inference_model(const std::filesystem::path& path);
void save_identity_checkpoint(const std::filesystem::path& path);

// FNV-1a 64 over the file bytes.
std::uint64_t content_id(std::span<const std::uint8_t> bytes);

}  // namespace shanshui::ckpt
