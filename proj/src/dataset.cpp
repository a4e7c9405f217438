#include "mazelab/dataset.hpp"

#include <algorithm>

#include "mazelab/rng.hpp"

namespace mazelab {

namespace {
constexpr int kMaxAttempts = 64;
}

DatasetRecord make_record(const GenSpec& spec, std::uint64_t dataset_seed, std::uint64_t index, const Vocabulary& vocab) {
  const std::uint64_t record_seed = derive_seed(dataset_seed, index);
  std::string last_error;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const auto a = static_cast<std::uint64_t>(attempt);
    GenSpec used = spec;
    used.seed = derive_seed(record_seed, 3 * a);
    try {
      Maze maze = generate(used);
      SolvedMaze solved = solve(maze, derive_seed(record_seed, 3 * a + 1));
      DatasetRecord rec;
      rec.shuffle_seed = derive_seed(record_seed, 3 * a + 2);
      rec.tokens = encode(solved, vocab, rec.shuffle_seed);
      rec.solved = std::move(solved);
      rec.spec = used;
      rec.index = index;
      rec.seed = record_seed;
      return rec;
    } catch (const DegenerateMazeError& e) {
      last_error = e.what();
    }
  }
  throw GenerationError("record " + std::to_string(index) + " with spec " + to_string(spec.algorithm) + " n=" +
                        std::to_string(spec.grid_n) + " failed after " + std::to_string(kMaxAttempts) +
                        " attempts: " + last_error);
}

Dataset build_dataset(const std::vector<GenSpec>& mix, std::size_t size, std::uint64_t seed, const Vocabulary& vocab,
                      std::string tag) {
  if (mix.empty()) throw std::invalid_argument("build_dataset: empty generator mix");
  for (const auto& s : mix) {
    if (s.grid_n > vocab.max_grid_n()) {
      throw std::invalid_argument("generator grid " + std::to_string(s.grid_n) + " exceeds vocabulary grid " +
                                  std::to_string(vocab.max_grid_n()));
    }
  }
  Dataset ds;
  ds.tag = std::move(tag);
  ds.seed = seed;
  ds.max_grid_n = vocab.max_grid_n();
  ds.records.reserve(size);
  for (std::size_t i = 0; i < size; ++i) ds.records.push_back(make_record(mix[i % mix.size()], seed, i, vocab));
  return ds;
}

void assert_disjoint(const Dataset& train, const Dataset& eval) {
  if (train.seed == eval.seed) {
    throw std::invalid_argument("training and evaluation datasets share seed " + std::to_string(train.seed));
  }
}

std::string to_string(LossMaskMode m) { return m == LossMaskMode::path_only ? "path_only" : "full_sequence"; }

LossMaskMode loss_mask_mode_from_string(const std::string& s) {
  if (s == "path_only") return LossMaskMode::path_only;
  if (s == "full_sequence") return LossMaskMode::full_sequence;
  throw std::invalid_argument("unknown loss mask mode '" + s + "'");
}

std::vector<std::uint8_t> loss_mask(const std::vector<TokenId>& tokens, LossMaskMode mode) {
  if (tokens.size() < 2) return {};
  std::vector<std::uint8_t> mask(tokens.size() - 1, mode == LossMaskMode::full_sequence ? 1 : 0);
  if (mode == LossMaskMode::path_only) {
    const auto start = std::find(tokens.begin(), tokens.end(), static_cast<TokenId>(Special::path_start));
    if (start == tokens.end()) return mask;
    const auto first = static_cast<std::size_t>(start - tokens.begin());
    for (std::size_t t = first; t + 1 < tokens.size(); ++t) {
      mask[t] = 1;
      if (tokens[t + 1] == static_cast<TokenId>(Special::path_end)) break;
    }
  }
  return mask;
}

std::size_t max_sequence_length(int grid_n) {
  const auto n = static_cast<std::size_t>(grid_n);
  const std::size_t edges = 2 * n * (n - 1);
  return 2 + 4 * edges + 6 + 1 + n * n + 1;
}

}  // namespace mazelab
