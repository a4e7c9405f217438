#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mazelab/codec.hpp"
#include "mazelab/dataset.hpp"
#include "mazelab/maze.hpp"

namespace mazelab {

enum class TaskId {
  path_start,
  origin_after_path_start,
  first_path_choice,
  rand_path_token,
  rand_path_token_nonend,
  final_before_path_end,
  path_end,
};

inline constexpr std::array<TaskId, 7> kAllTasks = {
    TaskId::path_start,          TaskId::origin_after_path_start, TaskId::first_path_choice,
    TaskId::rand_path_token,     TaskId::rand_path_token_nonend,  TaskId::final_before_path_end,
    TaskId::path_end,
};

std::string to_string(TaskId t);
TaskId task_from_string(const std::string& s);

class TaskInapplicableError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TaskPrompt {
  std::vector<TokenId> prompt;  // strict prefix of the full encoding
  TokenId answer = 0;
  std::size_t path_index = 0;   // index into the path of the answer (coordinate answers)
};

// Minimum path length (cells) a task needs.
std::size_t task_min_path_length(TaskId task);

TaskPrompt task_prompt(const SolvedMaze& solved, const Vocabulary& vocab, TaskId task, std::uint64_t seed,
                       std::uint64_t shuffle_seed = 0);
TaskPrompt task_prompt(const DatasetRecord& record, const Vocabulary& vocab, TaskId task, std::uint64_t seed);

// Maps a token prefix to next-token logits at its last position.
using NextTokenFn = std::function<std::vector<float>(std::span<const TokenId>)>;

struct TaskOutcome {
  std::size_t record = 0;
  bool correct = false;
  TokenId predicted = 0;
  TokenId answer = 0;
  std::size_t path_length = 0;
};

struct TaskEval {
  TaskId task{};
  double accuracy = 0.0;
  std::size_t n = 0;        // scored records
  std::size_t skipped = 0;  // records where the task does not apply
  std::vector<TaskOutcome> outcomes;
};

// Argmax (lowest id on ties) against the answer token for every applicable record.
TaskEval eval_single_token(const NextTokenFn& model, const Dataset& dataset, const Vocabulary& vocab, TaskId task,
                           std::uint64_t seed);

// --- rollouts ---------------------------------------------------------------

struct RolloutScore {
  bool exactly_correct = false;
  bool valid = false;
  bool target_reached = false;
  bool terminated = false;
  std::vector<Coord> path;  // coordinate tokens in generation order
  std::vector<std::string> annotations;
};

// generated: the tokens emitted after <PATH_START>, possibly malformed.
RolloutScore score_rollout(const SolvedMaze& solved, std::span<const TokenId> generated, const Vocabulary& vocab);

struct BaselineResult {
  std::vector<Coord> path;
  bool reached = false;
};

// Corridor follower: never reverses except at dead ends; uniform choice at forks.
BaselineResult baseline_rollout(const Maze& maze, Coord origin, Coord target, std::uint64_t seed,
                                std::optional<std::size_t> step_cap = std::nullopt);

struct RolloutOutcome {
  std::size_t path_length = 0;  // cells on the true shortest path
  bool exactly_correct = false;
  bool valid = false;
  bool target_reached = false;
};

struct PathLengthRow {
  std::size_t path_length = 0;
  std::size_t n = 0;
  double exact_rate = 0.0;
  double valid_rate = 0.0;
  double reached_rate = 0.0;
};

std::vector<PathLengthRow> accuracy_by_path_length(std::span<const RolloutOutcome> outcomes);

// Rollout step cap used by default: 4 * grid_n^2 tokens.
inline std::size_t rollout_cap(int grid_n) { return 4 * static_cast<std::size_t>(grid_n) * static_cast<std::size_t>(grid_n); }

}  // namespace mazelab
