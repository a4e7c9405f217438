#include <gtest/gtest.h>

#include "mazelab/dataset.hpp"
#include "mazelab/rng.hpp"
#include "mazelab/tasks.hpp"

using namespace mazelab;

namespace {

// Path (1,3) (0,3) (0,2) (1,2) (2,2) (2,3) on a 5x5 grid.
SolvedMaze corridor_maze() {
  Maze m(5);
  const std::vector<Coord> path{{1, 3}, {0, 3}, {0, 2}, {1, 2}, {2, 2}, {2, 3}};
  for (std::size_t i = 1; i < path.size(); ++i) m.connect(path[i - 1], path[i]);
  m.connect({0, 0}, {1, 0});
  return SolvedMaze{m, {1, 3}, {2, 3}, path};
}

std::vector<TokenId> ids(const Vocabulary& v, std::initializer_list<Coord> cells, bool end = true) {
  std::vector<TokenId> out;
  for (Coord c : cells) out.push_back(v.coord_id(c));
  if (end) out.push_back(v.special(Special::path_end));
  return out;
}

// Next-token function that reads the answer off the full encoding.
NextTokenFn oracle_model(const Dataset& ds, const Vocabulary& v) {
  return [&ds, &v](std::span<const TokenId> prefix) {
    std::vector<float> logits(v.size(), 0.0f);
    for (const auto& r : ds.records) {
      if (r.tokens.size() > prefix.size() && std::equal(prefix.begin(), prefix.end(), r.tokens.begin())) {
        logits[static_cast<std::size_t>(r.tokens[prefix.size()])] = 1.0f;
        break;
      }
    }
    return logits;
  };
}

}  // namespace

TEST(TaskPrompt, FixedAnswers) {
  const Vocabulary v(5);
  const SolvedMaze sm = corridor_maze();
  const auto full = encode(sm, v, 7);
  EXPECT_EQ(task_prompt(sm, v, TaskId::path_start, 0, 7).answer, v.special(Special::path_start));
  EXPECT_EQ(task_prompt(sm, v, TaskId::path_start, 0, 7).prompt.back(), v.special(Special::target_end));
  EXPECT_EQ(task_prompt(sm, v, TaskId::origin_after_path_start, 0, 7).answer, v.coord_id({1, 3}));
  EXPECT_EQ(task_prompt(sm, v, TaskId::first_path_choice, 0, 7).answer, v.coord_id({0, 3}));
  EXPECT_EQ(task_prompt(sm, v, TaskId::final_before_path_end, 0, 7).answer, v.coord_id({2, 3}));
  EXPECT_EQ(task_prompt(sm, v, TaskId::path_end, 0, 7).answer, v.special(Special::path_end));
  for (TaskId t : kAllTasks) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const TaskPrompt tp = task_prompt(sm, v, t, seed, 7);
      ASSERT_LT(tp.prompt.size(), full.size()) << to_string(t);
      EXPECT_TRUE(std::equal(tp.prompt.begin(), tp.prompt.end(), full.begin())) << to_string(t);
      EXPECT_EQ(full[tp.prompt.size()], tp.answer) << to_string(t);
    }
  }
}

TEST(TaskPrompt, RandomPositionsCoverTheirRange) {
  const Vocabulary v(5);
  const SolvedMaze sm = corridor_maze();
  std::set<std::size_t> any, nonend;
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    any.insert(task_prompt(sm, v, TaskId::rand_path_token, seed).path_index);
    nonend.insert(task_prompt(sm, v, TaskId::rand_path_token_nonend, seed).path_index);
  }
  EXPECT_EQ(any, (std::set<std::size_t>{0, 1, 2, 3, 4, 5}));
  EXPECT_EQ(nonend, (std::set<std::size_t>{1, 2, 3, 4}));
}

TEST(TaskPrompt, ShortPathsAreInapplicable) {
  const Vocabulary v(3);
  Maze m(3);
  m.connect({0, 0}, {0, 1});
  const SolvedMaze sm{m, {0, 0}, {0, 1}, {{0, 0}, {0, 1}}};
  EXPECT_THROW(task_prompt(sm, v, TaskId::first_path_choice, 0), TaskInapplicableError);
  EXPECT_THROW(task_prompt(sm, v, TaskId::rand_path_token_nonend, 0), TaskInapplicableError);
  EXPECT_NO_THROW(task_prompt(sm, v, TaskId::path_end, 0));
}

TEST(TaskNames, RoundTrip) {
  for (TaskId t : kAllTasks) EXPECT_EQ(task_from_string(to_string(t)), t);
  EXPECT_THROW(task_from_string("nope"), std::invalid_argument);
}

TEST(EvalSingleToken, OracleScoresPerfectly) {
  const Vocabulary v(4);
  GenSpec s;
  s.algorithm = Algorithm::forkless;
  s.grid_n = 4;
  const Dataset ds = build_dataset({s}, 60, 9, v);
  const auto model = oracle_model(ds, v);
  for (TaskId t : kAllTasks) {
    const TaskEval ev = eval_single_token(model, ds, v, t, 3);
    EXPECT_DOUBLE_EQ(ev.accuracy, 1.0) << to_string(t);
    EXPECT_EQ(ev.n + ev.skipped, ds.size());
  }
}

TEST(EvalSingleToken, ConstantModelPredictsLowestTiedId) {
  const Vocabulary v(4);
  GenSpec s;
  s.grid_n = 4;
  const Dataset ds = build_dataset({s}, 10, 9, v);
  const NextTokenFn flat = [&v](std::span<const TokenId>) { return std::vector<float>(v.size(), 0.0f); };
  const TaskEval ev = eval_single_token(flat, ds, v, TaskId::path_end, 0);
  EXPECT_EQ(ev.accuracy, 0.0);
  for (const auto& o : ev.outcomes) EXPECT_EQ(o.predicted, 0);
}

TEST(ScoreRollout, ExactPath) {
  const Vocabulary v(5);
  const SolvedMaze sm = corridor_maze();
  const auto s = score_rollout(sm, ids(v, {{1, 3}, {0, 3}, {0, 2}, {1, 2}, {2, 2}, {2, 3}}), v);
  EXPECT_TRUE(s.exactly_correct);
  EXPECT_TRUE(s.valid);
  EXPECT_TRUE(s.target_reached);
  EXPECT_TRUE(s.terminated);
  EXPECT_TRUE(s.annotations.empty());
}

TEST(ScoreRollout, WallJumpReachesTargetButIsInvalid) {
  const Vocabulary v(5);
  const auto s = score_rollout(corridor_maze(), ids(v, {{1, 3}, {2, 3}}), v);
  EXPECT_FALSE(s.valid);
  EXPECT_FALSE(s.exactly_correct);
  EXPECT_TRUE(s.target_reached);
  ASSERT_FALSE(s.annotations.empty());
  EXPECT_NE(s.annotations[0].find("wall jump"), std::string::npos);
}

TEST(ScoreRollout, ValidDetourIsNotExact) {
  const Vocabulary v(5);
  const auto s = score_rollout(corridor_maze(), ids(v, {{1, 3}, {0, 3}, {1, 3}, {0, 3}, {0, 2}, {1, 2}, {2, 2}, {2, 3}}), v);
  EXPECT_TRUE(s.valid);
  EXPECT_TRUE(s.target_reached);
  EXPECT_FALSE(s.exactly_correct);
}

TEST(ScoreRollout, MissingTerminatorAndStrayTokens) {
  const Vocabulary v(5);
  const SolvedMaze sm = corridor_maze();
  const auto open = score_rollout(sm, ids(v, {{1, 3}, {0, 3}}, false), v);
  EXPECT_FALSE(open.terminated);
  EXPECT_TRUE(open.valid);
  EXPECT_FALSE(open.target_reached);

  auto stray = ids(v, {{1, 3}, {0, 3}, {0, 2}, {1, 2}, {2, 2}, {2, 3}});
  stray.insert(stray.begin() + 2, v.special(Special::sep));
  const auto s = score_rollout(sm, stray, v);
  EXPECT_FALSE(s.valid);
  EXPECT_FALSE(s.exactly_correct);

  const auto wrong_start = score_rollout(sm, ids(v, {{0, 3}, {0, 2}}), v);
  EXPECT_FALSE(wrong_start.valid);
  EXPECT_TRUE(score_rollout(sm, std::vector<TokenId>{}, v).annotations.size() >= 2);
}

TEST(Baseline, SolvesForklessFromWalkEndpoint) {
  std::size_t runs = 0;
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const int n = 3 + static_cast<int>(seed % 5);
    const Maze m = generate_forkless(n, seed);
    std::vector<Coord> ends, cells;
    for (std::size_t i = 0; i < m.cell_count(); ++i) {
      const Coord c = m.coord(i);
      if (m.degree(c) == 1) ends.push_back(c);
      if (m.degree(c) > 0) cells.push_back(c);
    }
    ASSERT_EQ(ends.size(), 2u);
    Rng rng(seed);
    const Coord target = cells[rng.below(cells.size())];
    if (target == ends[0]) continue;
    const BaselineResult r = baseline_rollout(m, ends[0], target, seed);
    EXPECT_TRUE(r.reached) << "seed " << seed;
    EXPECT_EQ(r.path, shortest_path(m, ends[0], target));
    ++runs;
  }
  EXPECT_GT(runs, 250u);
}

TEST(Baseline, MidCorridorStartCanDetour) {
  std::size_t detours = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const Maze m = generate_forkless(5, seed, 10);
    const SolvedMaze sm = solve(m, seed);
    const BaselineResult r = baseline_rollout(m, sm.origin, sm.target, seed);
    EXPECT_TRUE(r.reached);
    if (r.path.size() > sm.path.size()) ++detours;
  }
  EXPECT_GT(detours, 0u);
}

TEST(Baseline, UnreachableTargetThrows) {
  Maze m(3);
  m.connect({0, 0}, {0, 1});
  EXPECT_THROW(baseline_rollout(m, {0, 0}, {2, 2}, 0), NoPathError);
}

TEST(AccuracyByPathLength, GroupsAndRates) {
  const std::vector<RolloutOutcome> outs{{3, true, true, true}, {3, false, true, false}, {5, false, false, true}};
  const auto rows = accuracy_by_path_length(outs);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].path_length, 3u);
  EXPECT_EQ(rows[0].n, 2u);
  EXPECT_DOUBLE_EQ(rows[0].exact_rate, 0.5);
  EXPECT_DOUBLE_EQ(rows[0].valid_rate, 1.0);
  EXPECT_DOUBLE_EQ(rows[1].reached_rate, 1.0);
}
