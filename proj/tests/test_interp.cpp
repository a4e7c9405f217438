#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mazelab/interp.hpp"
#include "mazelab/rng.hpp"
#include "mazelab/store.hpp"

using namespace mazelab;

namespace {

ModelConfig small_config(int grid) {
  ModelConfig c;
  c.d_model = 16;
  c.d_head = 8;
  c.n_layers = 2;
  c.d_vocab = static_cast<int>(Vocabulary(grid).size());
  c.n_ctx = static_cast<int>(max_sequence_length(grid));
  c.seed = 1;
  return c;
}

AnalysisModel random_model(const ModelConfig& cfg, std::uint64_t seed, double scale = 0.3) {
  AnalysisModel m = AnalysisModel::zeros(cfg);
  Rng rng(seed);
  m.weights.visit([&](const std::string& name, Tensor<double>& t) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double u = (rng.uniform() * 2 - 1) * scale;
      t[i] = is_gain_name(name) ? 1.0 + u : u;
    }
  });
  return m;
}

Dataset rdfs_dataset(int grid, std::size_t n, std::uint64_t seed) {
  GenSpec s;
  s.algorithm = Algorithm::rdfs;
  s.grid_n = grid;
  return build_dataset({s}, n, seed, Vocabulary(grid));
}

// Synthetic residuals: each row is the wall tensor of a random maze, optionally
// passed through a random linear map, for every layer.
ResidualSet synthetic_residuals(int grid, std::size_t n, std::size_t layers, bool informative, std::uint64_t seed) {
  ResidualSet rs;
  rs.grid_n = grid;
  const std::size_t P = static_cast<std::size_t>(grid * grid) * 4;
  rs.d_model = informative ? P : 6;
  std::vector<std::vector<double>> rows(layers + 1);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const Maze m = generate_rdfs(grid, derive_seed(seed, i));
    rs.labels.push_back(wall_tensor(m));
    rs.maze_keys.push_back(derive_seed(seed, i));
    rs.record_index.push_back(i);
    for (std::size_t l = 0; l <= layers; ++l) {
      for (std::size_t k = 0; k < rs.d_model; ++k) {
        const double noise = 0.01 * (rng.uniform() - 0.5);
        rows[l].push_back(informative ? (rs.labels.back()[k] ? 1.0 : 0.0) + noise : rng.uniform());
      }
    }
  }
  for (auto& r : rows) rs.layers.emplace_back(Shape{n, rs.d_model}, std::move(r));
  return rs;
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

// Dense Gauss-Jordan solve of A x = b.
std::vector<double> gauss_solve(std::vector<std::vector<double>> A, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
    std::swap(A[c], A[piv]);
    std::swap(b[c], b[piv]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = A[r][c] / A[c][c];
      for (std::size_t k = c; k < n; ++k) A[r][k] -= f * A[c][k];
      b[r] -= f * b[c];
    }
  }
  for (std::size_t i = 0; i < n; ++i) b[i] /= A[i][i];
  return b;
}

}  // namespace

// --- DLA ---------------------------------------------------------------------

TEST(Dla, AnswerDirectionByHand) {
  AnalysisModel m = AnalysisModel::zeros(small_config(3));
  const std::size_t v = m.weights.W_E.rows();
  for (std::size_t t = 0; t < v; ++t) m.weights.W_E.at(t, 0) = static_cast<double>(t);
  const auto dir = answer_direction(m, 4);
  const double others = (static_cast<double>(v * (v - 1) / 2) - 4.0) / static_cast<double>(v - 1);
  EXPECT_NEAR(dir[0], 4.0 - others, 1e-12);
  EXPECT_EQ(dir[1], 0.0);
  EXPECT_THROW(answer_direction(m, static_cast<TokenId>(v)), std::invalid_argument);
}

TEST(Dla, ComponentsSumToTotal) {
  const Vocabulary v(4);
  const AnalysisModel m = random_model(small_config(4), 3);
  const Dataset ds = rdfs_dataset(4, 20, 5);
  for (const auto& rec : ds.records) {
    const TaskPrompt tp = task_prompt(rec, v, TaskId::rand_path_token, 1);
    const DlaBreakdown b = dla_breakdown(m, tp.prompt, tp.answer);
    EXPECT_EQ(b.heads.size(), 4u);
    EXPECT_EQ(b.mlps.size(), 2u);
    EXPECT_NEAR(b.component_sum(), b.total, 1e-9 * std::max(1.0, std::abs(b.total)));
  }
}

TEST(Dla, TotalMatchesIndependentLayerNorm) {
  const Vocabulary v(4);
  const AnalysisModel m = random_model(small_config(4), 4);
  const Dataset ds = rdfs_dataset(4, 5, 6);
  for (const auto& rec : ds.records) {
    const TaskPrompt tp = task_prompt(rec, v, TaskId::first_path_choice, 1);
    ActivationCache<double> cache;
    forward(m, tp.prompt, &cache);
    const auto x = cache.resid.back().row(tp.prompt.size() - 1);
    double mu = 0, var = 0;
    for (double xi : x) mu += xi;
    mu /= 16;
    for (double xi : x) var += (xi - mu) * (xi - mu);
    var /= 16;
    const auto dir = answer_direction(m, tp.answer);
    double expect = 0;
    for (std::size_t k = 0; k < 16; ++k) expect += m.weights.lnf_w[k] * (x[k] - mu) / std::sqrt(var + 1e-5) * dir[k];
    EXPECT_NEAR(dla_breakdown(m, tp.prompt, tp.answer).total, expect, 1e-10);
  }
}

TEST(Dla, ZeroFinalGainZeroesEverything) {
  const Vocabulary v(4);
  AnalysisModel m = random_model(small_config(4), 7);
  m.weights.lnf_w.fill(0.0);
  const Dataset ds = rdfs_dataset(4, 1, 2);
  const TaskPrompt tp = task_prompt(ds.records[0], v, TaskId::path_end, 0);
  const DlaBreakdown b = dla_breakdown(m, tp.prompt, tp.answer);
  EXPECT_EQ(b.total, 0.0);
  EXPECT_EQ(b.embed, 0.0);
  for (double h : b.heads) EXPECT_EQ(h, 0.0);
}

TEST(Dla, ScalesWithFinalGain) {
  const Vocabulary v(4);
  AnalysisModel m = random_model(small_config(4), 8);
  const Dataset ds = rdfs_dataset(4, 1, 3);
  const TaskPrompt tp = task_prompt(ds.records[0], v, TaskId::rand_path_token, 0);
  const DlaBreakdown base = dla_breakdown(m, tp.prompt, tp.answer);
  for (std::size_t k = 0; k < 16; ++k) m.weights.lnf_w[k] *= 2.0;
  const DlaBreakdown twice = dla_breakdown(m, tp.prompt, tp.answer);
  for (std::size_t i = 0; i < base.heads.size(); ++i) EXPECT_NEAR(twice.heads[i], 2.0 * base.heads[i], 1e-10);
  EXPECT_NEAR(twice.total, 2.0 * base.total, 1e-10);
}

TEST(Dla, MatrixShapeAndInapplicableTask) {
  const Vocabulary v(4);
  const AnalysisModel m = random_model(small_config(4), 9);
  const DlaMatrix d = dla(m, rdfs_dataset(4, 10, 4), v, TaskId::path_end, 0);
  EXPECT_EQ(d.values.size(), 4u);
  EXPECT_EQ(d.samples, 10u);
  Maze tiny(4);
  tiny.connect({0, 0}, {0, 1});
  Dataset short_ds;
  DatasetRecord r;
  r.solved = SolvedMaze{tiny, {0, 0}, {0, 1}, {{0, 0}, {0, 1}}};
  r.tokens = encode(r.solved, v, 0);
  short_ds.records.push_back(r);
  EXPECT_THROW(dla(m, short_ds, v, TaskId::first_path_choice, 0), std::invalid_argument);
}

// --- attention -----------------------------------------------------------------

TEST(Attention, SamplesCarryDistances) {
  const Vocabulary v(3);
  Maze m(3);
  m.connect({0, 0}, {0, 1});
  m.connect({0, 1}, {1, 1});
  m.connect({1, 1}, {1, 0});
  const std::vector<TokenId> tokens{v.coord_id({0, 0}), v.special(Special::sep), v.coord_id({1, 0}), v.coord_id({2, 2})};
  const std::vector<double> w{0.5, 0.1, 0.3, 0.1};
  const auto s = attention_samples(w, tokens, m, {0, 0}, v, 7);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].manhattan, 0);
  EXPECT_EQ(s[0].path_distance, 0);
  EXPECT_EQ(s[1].key_position, 2u);
  EXPECT_EQ(s[1].manhattan, 1);
  EXPECT_EQ(s[1].path_distance, 3);
  EXPECT_EQ(s[2].path_distance, -1);
  EXPECT_EQ(s[2].record, 7u);
  EXPECT_DOUBLE_EQ(s[1].weight, 0.3);
}

TEST(Attention, AdjacencyMassAveragesPerRecord) {
  std::vector<AttentionSample> s;
  s.push_back({0, 1, 1, 1, 0.6});
  s.push_back({0, 2, 1, 1, 0.2});
  s.push_back({0, 3, 2, 2, 0.2});
  s.push_back({1, 1, 1, 3, 0.5});
  s.push_back({1, 2, 1, 1, 0.0});
  EXPECT_NEAR(adjacency_mass(s), (0.8 + 0.0) / 2, 1e-12);
}

TEST(Attention, CurrentCell) {
  const Vocabulary v(4);
  const Dataset ds = rdfs_dataset(4, 1, 1);
  const auto& rec = ds.records[0];
  EXPECT_FALSE(current_cell(encode_prompt(rec.solved, v, rec.shuffle_seed), v).has_value());
  const TaskPrompt tp = task_prompt(rec, v, TaskId::final_before_path_end, 0);
  EXPECT_EQ(current_cell(tp.prompt, v), rec.solved.path[rec.solved.path.size() - 2]);
}

TEST(Attention, HeadScoresSortedAndBounded) {
  const Vocabulary v(4);
  const AnalysisModel m = random_model(small_config(4), 10);
  const auto scores = adjacency_head_score(m, rdfs_dataset(4, 15, 8), v);
  ASSERT_EQ(scores.size(), 4u);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    EXPECT_GE(scores[i].score, 0.0);
    EXPECT_LE(scores[i].score, 1.0 + 1e-12);
    if (i > 0) {
      EXPECT_GE(scores[i - 1].score, scores[i].score);
    }
  }
}

TEST(Attention, SpatialMapIsAProbabilityMassOverCells) {
  const Vocabulary v(4);
  const AnalysisModel m = random_model(small_config(4), 11);
  const Dataset ds = rdfs_dataset(4, 1, 9);
  const auto prompt = encode_prompt(ds.records[0].solved, v, 0);
  const auto grid = spatial_attention(m, prompt, v, 4, 1, 0);
  ASSERT_EQ(grid.size(), 16u);
  double total = 0;
  for (double g : grid) {
    EXPECT_GE(g, 0.0);
    total += g;
  }
  EXPECT_LE(total, 1.0 + 1e-12);
  EXPECT_GT(total, 0.0);
}

// --- probes ----------------------------------------------------------------------

TEST(Probes, CountAndShapes) {
  const ResidualSet rs = synthetic_residuals(3, 40, 2, true, 1);
  const ProbeSet ps = train_probes(rs, iota(40), 1e-3);
  EXPECT_EQ(ps.probe_count(), 2u * 9u * 4u);
  ASSERT_EQ(ps.weights.size(), 2u);
  EXPECT_EQ(ps.weights[0].shape(), (Shape{rs.d_model + 1, 36}));
}

TEST(Probes, RidgeMatchesNormalEquations) {
  const ResidualSet rs = synthetic_residuals(3, 30, 1, false, 2);
  const auto idx = iota(30);
  const double reg = 0.05;
  const ProbeSet ps = train_probes(rs, idx, reg);
  const std::size_t d = rs.d_model;
  for (std::size_t p : {0u, 5u, 17u}) {
    std::vector<std::vector<double>> A(d + 1, std::vector<double>(d + 1, 0.0));
    std::vector<double> b(d + 1, 0.0);
    for (std::size_t i = 0; i < 30; ++i) {
      std::vector<double> x(rs.layers[0].row(i).begin(), rs.layers[0].row(i).end());
      x.push_back(1.0);
      const double y = rs.labels[i][p] ? 1.0 : 0.0;
      for (std::size_t a = 0; a <= d; ++a) {
        b[a] += x[a] * y;
        for (std::size_t c = 0; c <= d; ++c) A[a][c] += x[a] * x[c];
      }
    }
    for (std::size_t a = 0; a < d; ++a) A[a][a] += reg * 30;
    const auto w = gauss_solve(A, b);
    for (std::size_t a = 0; a <= d; ++a) EXPECT_NEAR(ps.weights[0].at(a, p), w[a], 1e-9);
  }
}

TEST(Probes, InformativeResidualsGivePerfectProbes) {
  const ResidualSet rs = synthetic_residuals(4, 300, 2, true, 3);
  const Split sp = split_by_maze(rs, 0.8, 0);
  const ProbeSet ps = train_probes(rs, sp.train, 1e-4);
  const ProbeAccuracy acc = probe_accuracy(ps, rs, sp.validation);
  for (double a : acc.per_layer) EXPECT_DOUBLE_EQ(a, 1.0);
  const auto row = rs.layers[1].row(sp.validation[0]);
  const DecodedWalls dw = decode_maze_from_probes(ps, row, 1, rs.labels[sp.validation[0]]);
  EXPECT_EQ(dw.predicted, rs.labels[sp.validation[0]]);
  EXPECT_EQ(dw.omitted + dw.added, 0u);
}

TEST(Probes, ZeroResidualsFallBackToMajority) {
  ResidualSet rs = synthetic_residuals(3, 200, 1, false, 4);
  for (auto& t : rs.layers) t.fill(0.0);
  const auto train_idx = iota(150);
  std::vector<std::size_t> eval_idx(50);
  std::iota(eval_idx.begin(), eval_idx.end(), std::size_t{150});
  const ProbeSet ps = train_probes(rs, train_idx, 1e-2);
  const ProbeAccuracy acc = probe_accuracy(ps, rs, eval_idx);
  EXPECT_NEAR(acc.per_layer[0], majority_rate(rs, train_idx, eval_idx), 1e-12);
}

TEST(Probes, ShuffleControlStaysNearMajority) {
  ResidualSet rs = synthetic_residuals(3, 800, 1, true, 5);
  shuffle_labels(rs, 9);
  const Split sp = split_by_maze(rs, 0.75, 1);
  const ProbeSet ps = train_probes(rs, sp.train, 1e-1);
  const double acc = probe_accuracy(ps, rs, sp.validation).per_layer[0];
  EXPECT_NEAR(acc, majority_rate(rs, sp.train, sp.validation), 0.03);
}

TEST(Probes, BoundaryProbesArePerfect) {
  const ResidualSet rs = synthetic_residuals(4, 100, 1, false, 6);
  const Split sp = split_by_maze(rs, 0.7, 2);
  const ProbeSet ps = train_probes(rs, sp.train, 1e-2);
  const ProbeAccuracy acc = probe_accuracy(ps, rs, sp.validation);
  EXPECT_DOUBLE_EQ(acc.boundary[0], 1.0);
  std::size_t constant = 0;
  for (std::size_t p = 0; p < 64; ++p) {
    const Coord c{static_cast<int>(p / 16), static_cast<int>((p / 4) % 4)};
    if (is_boundary(4, c, static_cast<Dir>(p % 4))) {
      EXPECT_TRUE(ps.constant_label[p]);
      ++constant;
    }
  }
  EXPECT_EQ(constant, 16u);
}

TEST(Probes, SplitKeepsMazesOnOneSide) {
  ResidualSet rs = synthetic_residuals(3, 60, 1, false, 7);
  for (std::size_t i = 0; i < rs.size(); ++i) rs.maze_keys[i] = i / 3;
  const Split sp = split_by_maze(rs, 0.5, 3);
  EXPECT_EQ(sp.train.size() + sp.validation.size(), 60u);
  std::set<std::uint64_t> a, b;
  for (auto i : sp.train) a.insert(rs.maze_keys[i]);
  for (auto i : sp.validation) b.insert(rs.maze_keys[i]);
  for (auto k : a) EXPECT_EQ(b.count(k), 0u);
  EXPECT_THROW(split_by_maze(rs, 1.0, 0), std::invalid_argument);
}

TEST(Probes, CollectResidualsAtPathStart) {
  const Vocabulary v(4);
  const AnalysisModel m = random_model(small_config(4), 12);
  const Dataset ds = rdfs_dataset(4, 6, 10);
  const ResidualSet rs = collect_residuals(m, ds, v);
  ASSERT_EQ(rs.size(), 6u);
  ASSERT_EQ(rs.layers.size(), 3u);
  const auto& tokens = ds.records[2].tokens;
  const auto at = static_cast<std::size_t>(std::find(tokens.begin(), tokens.end(), v.special(Special::path_start)) - tokens.begin());
  ActivationCache<double> cache;
  forward(m, std::span<const TokenId>(tokens.data(), at + 1), &cache);
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t k = 0; k < 16; ++k) EXPECT_EQ(rs.layers[l].at(2, k), cache.resid[l].at(at, k));
  EXPECT_EQ(rs.labels[2], wall_tensor(ds.records[2].solved.maze));
}

// --- tuned lens ---------------------------------------------------------------------

TEST(Lens, IdentityAtFinalLayerIsExact) {
  const AnalysisModel m = random_model(small_config(4), 13);
  const Dataset ds = rdfs_dataset(4, 3, 11);
  std::vector<std::vector<TokenId>> seqs;
  for (const auto& r : ds.records) seqs.push_back(r.tokens);
  const LensTranslators id = identity_lens(m.config);
  EXPECT_NEAR(lens_kl(m, id, seqs, 2), 0.0, 1e-12);
  EXPECT_GT(lens_kl(m, id, seqs, 0), 1e-6);
}

TEST(Lens, DistributionRowsSumToOne) {
  const AnalysisModel m = random_model(small_config(4), 14);
  const Dataset ds = rdfs_dataset(4, 1, 12);
  ActivationCache<double> cache;
  forward(m, ds.records[0].tokens, &cache);
  for (std::size_t l = 0; l <= 2; ++l) {
    const Tensor<double> p = lens_distribution(m, identity_lens(m.config), cache, l);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double s = 0;
      for (double x : p.row(r)) {
        EXPECT_GE(x, 0.0);
        s += x;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Lens, TrainingReducesKlAndFixesFinalLayer) {
  const AnalysisModel m = random_model(small_config(4), 15, 0.15);
  const Dataset ds = rdfs_dataset(4, 12, 13);
  LensConfig cfg;
  cfg.steps = 150;
  const LensTranslators lens = train_tuned_lens(m, ds, cfg);
  ASSERT_EQ(lens.final_kl.size(), 3u);
  for (std::size_t l = 0; l <= 2; ++l) {
    EXPECT_LE(lens.final_kl[l], lens.initial_kl[l] + 1e-12);
    EXPECT_FALSE(lens.diverged[l]);
  }
  EXPECT_LE(lens.final_kl[2], 1e-3);
}

TEST(Lens, NeighborMassIsBounded) {
  const Vocabulary v(4);
  const AnalysisModel m = random_model(small_config(4), 16);
  const NeighborMassCurve c = lens_neighbor_mass(m, identity_lens(m.config), rdfs_dataset(4, 5, 14), v);
  ASSERT_EQ(c.connected_mean.size(), 3u);
  for (std::size_t l = 0; l < 3; ++l) {
    EXPECT_GE(c.connected_mean[l], 0.0);
    EXPECT_GE(c.unconnected_mean[l], 0.0);
    EXPECT_LE(c.connected_mean[l] + c.unconnected_mean[l], 1.0 + 1e-12);
  }
}

// --- embeddings ------------------------------------------------------------------------

TEST(Embedding, LatticeEmbeddingCorrelatesPerfectly) {
  const Vocabulary v(5);
  ModelConfig cfg = small_config(5);
  AnalysisModel m = AnalysisModel::zeros(cfg);
  for (int r = 0; r < 5; ++r) {
    for (int c = 0; c < 5; ++c) {
      const auto id = static_cast<std::size_t>(v.coord_id({r, c}));
      m.weights.W_E.at(id, 0) = r;
      m.weights.W_E.at(id, 1) = c;
    }
  }
  const EmbeddingStats st = embedding_distance_stats(m, v, 5);
  EXPECT_EQ(st.pairs.size(), 25u * 24u / 2u);
  for (const auto& p : st.pairs) EXPECT_DOUBLE_EQ(p.embedding_distance, p.coord_distance);
  EXPECT_NEAR(st.spearman.rho, 1.0, 1e-12);
  EXPECT_LT(st.spearman.p_value, 1e-6);
  const auto grid = anchor_grid(m, v, 5, {2, 2});
  EXPECT_EQ(grid[12], 0.0);
  EXPECT_DOUBLE_EQ(grid[0], 4.0);
}

// --- checkpoint sweep --------------------------------------------------------------------

TEST(Sweep, RowsFollowStepOrder) {
  const Vocabulary v(4);
  const ModelConfig cfg = small_config(4);
  const auto dir = std::filesystem::temp_directory_path() / "mazelab_test_sweep";
  std::filesystem::create_directories(dir);
  const auto late = dir / "b.bin", early = dir / "a.bin";
  save_checkpoint(late, random_model(cfg, 17).cast<float>(), 20);
  save_checkpoint(early, random_model(cfg, 18).cast<float>(), 5);
  SweepConfig sc;
  sc.tasks = {TaskId::path_end};
  const SweepResult r = checkpoint_sweep({late, early}, rdfs_dataset(4, 8, 20), rdfs_dataset(4, 40, 21), v, sc);
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_EQ(r.rows[0].step, 5);
  EXPECT_EQ(r.rows[1].step, 20);
  EXPECT_EQ(r.rows[0].accuracy.size(), 1u);
  std::filesystem::remove_all(dir);
}
