#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mazelab/dataset.hpp"
#include "mazelab/gpt.hpp"
#include "mazelab/optim.hpp"
#include "mazelab/tasks.hpp"

namespace mazelab {

struct TrainConfig {
  std::vector<GenSpec> mix;
  std::size_t dataset_size = 1000;
  std::uint64_t data_seed = 1;
  std::size_t eval_size = 256;
  std::uint64_t eval_seed = 2;
  std::uint64_t task_seed = 3;     // random task positions during evaluation
  std::uint64_t shuffle_seed = 4;  // batch order
  int max_grid_n = 6;              // vocabulary grid

  ModelConfig model;
  AdamWConfig optim;
  std::size_t batch_size = 32;
  int epochs = 1;
  LossMaskMode mask_mode = LossMaskMode::path_only;

  std::vector<std::int64_t> checkpoint_steps;  // strictly increasing; empty = log-spaced default
  std::vector<TaskId> eval_tasks = {kAllTasks.begin(), kAllTasks.end()};
  std::int64_t log_every = 50;     // train-loss records
  std::filesystem::path out_dir;   // checkpoints and metrics.jsonl
  std::optional<std::int64_t> stop_after;  // end early after this step (for resumable runs)
  bool verbose = false;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// 0, 1, 2, 4, ... up to total, plus total itself.
std::vector<std::int64_t> log_spaced_steps(std::int64_t total);

std::int64_t steps_per_epoch(const TrainConfig& c);
std::int64_t total_steps(const TrainConfig& c);

struct TrainResult {
  GptModel<float> model;
  std::int64_t final_step = 0;
  std::vector<std::filesystem::path> checkpoints;
  std::vector<nlohmann::json> log;  // same records as metrics.jsonl
  double seconds = 0.0;
};

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::int64_t step);

// Runs (or resumes) training. When resume_from is given, the model and
// optimizer state are restored and training continues at the saved step with
// the same batch order.
TrainResult train(const TrainConfig& config, const std::optional<std::filesystem::path>& resume_from = std::nullopt);

// Token-weighted mean loss over a set of sequences (no gradients).
double mean_loss(const GptModel<float>& model, const std::vector<std::vector<TokenId>>& seqs, LossMaskMode mode);

// Adapter exposing a model as a next-token function for evaluation.
NextTokenFn next_token_fn(const GptModel<float>& model);

// Held-out single-token accuracies as metric-log records.
std::vector<nlohmann::json> evaluate_tasks(const GptModel<float>& model, const Dataset& ds, const Vocabulary& vocab,
                                           const std::vector<TaskId>& tasks, std::uint64_t task_seed, std::int64_t step);

// Single training step on a batch; returns the token-weighted mean loss.
double train_step(GptModel<float>& model, AdamWState<float>& state, const std::vector<const std::vector<TokenId>*>& batch,
                  LossMaskMode mode);

}  // namespace mazelab
