#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mazelab/codec.hpp"
#include "mazelab/maze.hpp"

namespace mazelab {

struct DatasetRecord {
  SolvedMaze solved;
  GenSpec spec;              // spec.seed is the seed actually used
  std::uint64_t index = 0;   // position within the dataset
  std::uint64_t seed = 0;    // record seed, derived from (dataset seed, index)
  std::uint64_t shuffle_seed = 0;
  std::vector<TokenId> tokens;  // canonical encoding
};

struct Dataset {
  std::string tag;
  std::uint64_t seed = 0;
  int max_grid_n = 0;
  std::vector<DatasetRecord> records;

  std::size_t size() const noexcept { return records.size(); }
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Record i uses mix[i % mix.size()] with seeds derived from (seed, i), so any
// record can be regenerated independently of the others.
Dataset build_dataset(const std::vector<GenSpec>& mix, std::size_t size, std::uint64_t seed, const Vocabulary& vocab,
                      std::string tag = "");

DatasetRecord make_record(const GenSpec& spec, std::uint64_t dataset_seed, std::uint64_t index, const Vocabulary& vocab);

// Throws if two datasets were generated from the same seed stream.
void assert_disjoint(const Dataset& train, const Dataset& eval);

enum class LossMaskMode { full_sequence, path_only };

std::string to_string(LossMaskMode m);
LossMaskMode loss_mask_mode_from_string(const std::string& s);

// mask[t] != 0 when the prediction made at position t (of token t+1) enters
// the loss. Length is tokens.size() - 1.
std::vector<std::uint8_t> loss_mask(const std::vector<TokenId>& tokens, LossMaskMode mode);

// Longest encoded sequence possible for a grid of side n.
std::size_t max_sequence_length(int grid_n);

}  // namespace mazelab
