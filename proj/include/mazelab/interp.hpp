#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mazelab/codec.hpp"
#include "mazelab/dataset.hpp"
#include "mazelab/gpt.hpp"
#include "mazelab/maze.hpp"
#include "mazelab/stats.hpp"
#include "mazelab/tasks.hpp"
#include "mazelab/tensor.hpp"

// Analyses run on double-precision copies of a model (GptModel<float>::cast<double>()).
namespace mazelab {

using AnalysisModel = GptModel<double>;

// --- embedding geometry ------------------------------------------------------

struct EmbeddingPair {
  Coord a, b;
  int coord_distance = 0;        // Manhattan
  double embedding_distance = 0; // L1 norm of E(a) - E(b)
};

struct EmbeddingStats {
  int grid_n = 0;
  int cutoff = 3;
  std::vector<EmbeddingPair> pairs;      // unordered, a < b
  std::vector<BoxStats> by_distance;     // index = coordinate distance (0 unused)
  SpearmanResult spearman;               // over pairs with distance <= cutoff
};

EmbeddingStats embedding_distance_stats(const AnalysisModel& model, const Vocabulary& vocab, int grid_n, int cutoff = 3);

// Embedding distance from an anchor to every cell, row-major (anchor itself 0).
std::vector<double> anchor_grid(const AnalysisModel& model, const Vocabulary& vocab, int grid_n, Coord anchor);

// --- direct logit attribution ---------------------------------------------------

struct DlaMatrix {
  TaskId task = TaskId::rand_path_token;
  std::size_t samples = 0;
  std::size_t n_layers = 0, n_heads = 0;
  std::vector<double> values;  // [layer][head]

  double at(std::size_t l, std::size_t h) const { return values.at(l * n_heads + h); }
};

// Contributions of every residual component for one prompt, projected through
// the frozen final LayerNorm onto E(answer) - r(answer).
struct DlaBreakdown {
  double embed = 0;            // token + position embeddings
  std::vector<double> heads;   // [layer][head]
  std::vector<double> mlps;    // per layer
  double total = 0;            // projection of the full final residual

  double component_sum() const;
};

// E(c) - mean of all other token embeddings.
std::vector<double> answer_direction(const AnalysisModel& model, TokenId answer);

DlaBreakdown dla_breakdown(const AnalysisModel& model, std::span<const TokenId> prompt, TokenId answer);

// Throws std::invalid_argument when no record admits the task.
DlaMatrix dla(const AnalysisModel& model, const Dataset& ds, const Vocabulary& vocab, TaskId task, std::uint64_t seed);

// --- attention ----------------------------------------------------------------

struct AttentionSample {
  std::size_t record = 0;
  std::size_t key_position = 0;
  int manhattan = 0;
  int path_distance = -1;  // -1 when not connected to the current cell
  double weight = 0;
};

// Samples for one query row of attention weights over a prompt's keys.
std::vector<AttentionSample> attention_samples(std::span<const double> weights, std::span<const TokenId> tokens,
                                               const Maze& maze, Coord current, const Vocabulary& vocab,
                                               std::size_t record = 0);

// Most recent path coordinate in a prompt (after <PATH_START>), if any.
std::optional<Coord> current_cell(std::span<const TokenId> prompt, const Vocabulary& vocab);

struct AttentionByDistance {
  std::size_t layer = 0, head = 0;
  TaskId task = TaskId::rand_path_token_nonend;
  std::size_t prompts = 0, skipped = 0;
  std::vector<AttentionSample> samples;
  std::vector<BoxStats> by_manhattan;       // index = distance
  std::vector<BoxStats> by_path_distance;   // index = distance; unreachable keys omitted
  std::vector<double> mass_by_path_distance;  // mean attention mass per prompt
};

AttentionByDistance attention_by_distance(const AnalysisModel& model, const Dataset& ds, const Vocabulary& vocab,
                                          TaskId task, std::size_t layer, std::size_t head, std::uint64_t seed);

// Mean per-prompt attention mass on path-distance-1 coordinate keys.
double adjacency_mass(std::span<const AttentionSample> samples);

struct HeadScore {
  std::size_t layer = 0, head = 0;
  double score = 0;
};

// Sorted by descending score; ties by (layer, head).
std::vector<HeadScore> adjacency_head_score(const AnalysisModel& model, const Dataset& ds, const Vocabulary& vocab,
                                            TaskId task = TaskId::rand_path_token_nonend, std::uint64_t seed = 0);

// Spatial attention map for one prompt: total weight on each cell's tokens, row-major.
std::vector<double> spatial_attention(const AnalysisModel& model, std::span<const TokenId> prompt,
                                      const Vocabulary& vocab, int grid_n, std::size_t layer, std::size_t head);

// --- probes -------------------------------------------------------------------

struct ResidualSet {
  int grid_n = 0;
  std::size_t d_model = 0;
  std::vector<Tensor<double>> layers;  // n_layers + 1 matrices [records, d_model]
  std::vector<WallTensor> labels;
  std::vector<std::uint64_t> maze_keys;  // hash of the wall layout; equal mazes share a key
  std::vector<std::size_t> record_index;
  std::size_t skipped = 0;

  std::size_t size() const noexcept { return labels.size(); }
};

// Residual at the <PATH_START> position of every record, for every layer.
ResidualSet collect_residuals(const AnalysisModel& model, const Dataset& ds, const Vocabulary& vocab);

// Permutes wall labels across records (shuffle control).
void shuffle_labels(ResidualSet& rs, std::uint64_t seed);

struct Split {
  std::vector<std::size_t> train, validation;
};
// Splits by maze_keys so no maze appears on both sides.
Split split_by_maze(const ResidualSet& rs, double train_fraction, std::uint64_t seed);

struct ProbeSet {
  std::size_t n_layers = 0;
  int grid_n = 0;
  std::size_t d_model = 0;
  double reg = 0;
  // weights[layer] is [(d_model + 1), m*m*4]; last row is the bias.
  std::vector<Tensor<double>> weights;
  std::vector<std::uint8_t> constant_label;  // per (cell, dir): training labels all one class

  std::size_t probe_count() const noexcept { return n_layers * static_cast<std::size_t>(grid_n * grid_n) * 4; }
  static constexpr double threshold = 0.5;
};

// Ridge least squares on [residual, 1] -> {0,1}; probes for layers 0..n_layers-1.
ProbeSet train_probes(const ResidualSet& rs, std::span<const std::size_t> train_idx, double reg);

// Raw linear outputs of every probe at a layer for one residual row.
std::vector<double> probe_scores(const ProbeSet& probes, std::size_t layer, std::span<const double> residual);

struct ProbeAccuracy {
  std::vector<double> per_layer;                  // mean over positions and directions
  std::vector<std::vector<double>> per_probe;     // [layer][cell*4 + dir]
  std::vector<std::vector<double>> per_direction; // [layer][dir]
  std::vector<double> boundary;                   // per layer, outer-wall probes only
  std::vector<double> interior;                   // per layer, all other probes
  std::size_t best_layer = 0;
  std::size_t samples = 0;
};

ProbeAccuracy probe_accuracy(const ProbeSet& probes, const ResidualSet& rs, std::span<const std::size_t> idx);

// Accuracy of always predicting each probe's training-majority class, averaged over probes.
double majority_rate(const ResidualSet& rs, std::span<const std::size_t> train_idx,
                     std::span<const std::size_t> eval_idx);

bool is_boundary(int grid_n, Coord cell, Dir d);

struct DecodedWalls {
  WallTensor predicted;
  std::size_t correct = 0, omitted = 0, added = 0;
  std::vector<std::pair<Coord, Dir>> omitted_walls, added_walls;
};

DecodedWalls decode_maze_from_probes(const ProbeSet& probes, std::span<const double> residual, std::size_t layer,
                                     const WallTensor& truth);

// --- tuned lens ---------------------------------------------------------------

struct LensConfig {
  int steps = 300;
  double lr = 1e-2;
  std::size_t max_positions = 8192;
  bool mse = false;  // residual matching instead of output-distribution KL
  std::uint64_t seed = 0;
};

struct LensTranslators {
  std::size_t n_layers = 0;  // translators for layers 0..n_layers
  std::size_t d_model = 0;
  std::vector<Tensor<double>> A;  // [d, d]; x -> x A + b
  std::vector<Tensor<double>> b;  // [d]
  std::vector<double> initial_kl, final_kl;
  std::vector<std::uint8_t> diverged;
};

// Identity translators for layers 0..n_layers.
LensTranslators identity_lens(const ModelConfig& cfg);

LensTranslators train_tuned_lens(const AnalysisModel& model, const Dataset& ds, const LensConfig& cfg);

// Lens distribution [len, d_vocab] for a layer, from a cached forward pass.
Tensor<double> lens_distribution(const AnalysisModel& model, const LensTranslators& lens, const ActivationCache<double>& cache,
                                 std::size_t layer);

// Mean KL(model output || lens output) over all positions of the given sequences.
double lens_kl(const AnalysisModel& model, const LensTranslators& lens, const std::vector<std::vector<TokenId>>& seqs,
               std::size_t layer);

struct NeighborMassCurve {
  std::vector<double> connected_mean, connected_std;
  std::vector<double> unconnected_mean, unconnected_std;
  std::size_t positions = 0;
};

// Greedy rollouts from each record's prompt; at every generated coordinate the
// lens distribution of each layer is split into connected and merely adjacent neighbours.
NeighborMassCurve lens_neighbor_mass(const AnalysisModel& model, const LensTranslators& lens, const Dataset& ds,
                                     const Vocabulary& vocab);

// --- checkpoint sweep -----------------------------------------------------------

struct SweepRow {
  std::int64_t step = 0;
  std::vector<std::pair<TaskId, double>> accuracy;
  std::size_t best_layer = 0;
  double best_probe_accuracy = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // ordered by step
  std::vector<std::string> warnings;
};

struct SweepConfig {
  std::vector<TaskId> tasks = {kAllTasks.begin(), kAllTasks.end()};
  std::uint64_t task_seed = 3;
  std::uint64_t split_seed = 0;
  double reg = 1e-2;
};

SweepResult checkpoint_sweep(const std::vector<std::filesystem::path>& checkpoints, const Dataset& eval_ds,
                             const Dataset& probe_ds, const Vocabulary& vocab, const SweepConfig& cfg);

}  // namespace mazelab
