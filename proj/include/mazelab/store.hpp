#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "mazelab/codec.hpp"
#include "mazelab/dataset.hpp"
#include "mazelab/gpt.hpp"
#include "mazelab/optim.hpp"

namespace mazelab {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kDatasetVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointShapeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointTruncatedError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

// Binary layout (all integers little-endian):
//   "MZLBCKPT" | u32 version | u64 header_len | u64 header_fnv | u64 payload_fnv
//   | header JSON | payload (float32 LE, directory order)
struct Checkpoint {
  ModelConfig config;
  std::int64_t step = 0;
  GptModel<float> model;
  std::optional<AdamWState<float>> optimizer;
  nlohmann::json meta = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, const GptModel<float>& model, std::int64_t step,
                     const AdamWState<float>* optimizer = nullptr, const nlohmann::json& meta = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Header only; does not read the payload.
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL);

// --- datasets -----------------------------------------------------------------

nlohmann::json to_json(const GenSpec& s);
GenSpec gen_spec_from_json(const nlohmann::json& j);

nlohmann::json record_to_json(const DatasetRecord& rec, const Vocabulary& vocab);
DatasetRecord record_from_json(const nlohmann::json& j, const Vocabulary& vocab);

// JSON-lines; one record per line. Output bytes are a pure function of the dataset.
void save_dataset(const std::filesystem::path& path, const Dataset& ds, const Vocabulary& vocab);
Dataset load_dataset(const std::filesystem::path& path, const Vocabulary& vocab);

// Smallest grid that fits every record of a dataset file (scans grid_n fields).
int dataset_max_grid(const std::filesystem::path& path);

}  // namespace mazelab
