#include "mazelab/tasks.hpp"

#include <algorithm>
#include <map>

#include "mazelab/rng.hpp"

namespace mazelab {

std::string to_string(TaskId t) {
  switch (t) {
    case TaskId::path_start: return "path_start";
    case TaskId::origin_after_path_start: return "origin_after_path_start";
    case TaskId::first_path_choice: return "first_path_choice";
    case TaskId::rand_path_token: return "rand_path_token";
    case TaskId::rand_path_token_nonend: return "rand_path_token_nonend";
    case TaskId::final_before_path_end: return "final_before_path_end";
    case TaskId::path_end: return "path_end";
  }
  return "?";
}

TaskId task_from_string(const std::string& s) {
  for (TaskId t : kAllTasks) {
    if (to_string(t) == s) return t;
  }
  throw std::invalid_argument("unknown task '" + s + "'");
}

std::size_t task_min_path_length(TaskId task) {
  switch (task) {
    case TaskId::first_path_choice:
    case TaskId::rand_path_token_nonend:
      return 3;
    default:
      return 2;
  }
}

TaskPrompt task_prompt(const SolvedMaze& solved, const Vocabulary& vocab, TaskId task, std::uint64_t seed,
                       std::uint64_t shuffle_seed) {
  const auto& path = solved.path;
  if (path.size() < task_min_path_length(task)) {
    throw TaskInapplicableError(to_string(task) + " needs a path of at least " +
                                std::to_string(task_min_path_length(task)) + " cells, got " +
                                std::to_string(path.size()));
  }
  TaskPrompt tp;
  tp.prompt = encode_prompt(solved, vocab, shuffle_seed);
  // The prompt currently ends with <PATH_START>; `upto` path cells follow it.
  auto with_path = [&](std::size_t upto) {
    for (std::size_t i = 0; i < upto; ++i) tp.prompt.push_back(vocab.coord_id(path[i]));
  };
  Rng rng(seed);
  switch (task) {
    case TaskId::path_start:
      tp.prompt.pop_back();
      tp.answer = vocab.special(Special::path_start);
      break;
    case TaskId::origin_after_path_start:
      tp.answer = vocab.coord_id(path[0]);
      tp.path_index = 0;
      break;
    case TaskId::first_path_choice:
      with_path(1);
      tp.answer = vocab.coord_id(path[1]);
      tp.path_index = 1;
      break;
    case TaskId::rand_path_token: {
      const auto i = static_cast<std::size_t>(rng.below(path.size()));
      with_path(i);
      tp.answer = vocab.coord_id(path[i]);
      tp.path_index = i;
      break;
    }
    case TaskId::rand_path_token_nonend: {
      const auto i = 1 + static_cast<std::size_t>(rng.below(path.size() - 2));
      with_path(i);
      tp.answer = vocab.coord_id(path[i]);
      tp.path_index = i;
      break;
    }
    case TaskId::final_before_path_end:
      with_path(path.size() - 1);
      tp.answer = vocab.coord_id(path.back());
      tp.path_index = path.size() - 1;
      break;
    case TaskId::path_end:
      with_path(path.size());
      tp.answer = vocab.special(Special::path_end);
      tp.path_index = path.size();
      break;
  }
  return tp;
}

TaskPrompt task_prompt(const DatasetRecord& record, const Vocabulary& vocab, TaskId task, std::uint64_t seed) {
  return task_prompt(record.solved, vocab, task, derive_seed(seed, record.seed), record.shuffle_seed);
}

TaskEval eval_single_token(const NextTokenFn& model, const Dataset& dataset, const Vocabulary& vocab, TaskId task,
                           std::uint64_t seed) {
  TaskEval ev;
  ev.task = task;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    const auto& rec = dataset.records[i];
    if (rec.solved.path.size() < task_min_path_length(task)) {
      ++ev.skipped;
      continue;
    }
    const TaskPrompt tp = task_prompt(rec, vocab, task, seed);
    const std::vector<float> logits = model(tp.prompt);
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.size(); ++j)
      if (logits[j] > logits[best]) best = j;
    TaskOutcome out;
    out.record = i;
    out.predicted = static_cast<TokenId>(best);
    out.answer = tp.answer;
    out.correct = out.predicted == out.answer;
    out.path_length = rec.solved.path.size();
    correct += out.correct ? 1 : 0;
    ev.outcomes.push_back(out);
  }
  ev.n = ev.outcomes.size();
  ev.accuracy = ev.n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(ev.n);
  return ev;
}

RolloutScore score_rollout(const SolvedMaze& solved, std::span<const TokenId> generated, const Vocabulary& vocab) {
  RolloutScore s;
  const TokenId end_id = vocab.special(Special::path_end);
  bool stray_special = false;
  std::size_t stop = generated.size();
  for (std::size_t i = 0; i < generated.size(); ++i) {
    const TokenId id = generated[i];
    if (id == end_id) {
      s.terminated = true;
      stop = i;
      break;
    }
    if (id >= 0 && vocab.is_coord(id)) {
      s.path.push_back(vocab.coord_of(id));
    } else {
      stray_special = true;
    }
  }
  if (!s.terminated) s.annotations.emplace_back("no <PATH_END>");
  if (stray_special) s.annotations.emplace_back("non-coordinate token before terminator");

  const Maze& maze = solved.maze;
  bool valid = !s.path.empty() && !stray_special;
  if (s.path.empty()) {
    s.annotations.emplace_back("no coordinates generated");
  } else if (s.path.front() != solved.origin) {
    valid = false;
    s.annotations.emplace_back("does not start at origin");
  }
  for (std::size_t i = 0; i < s.path.size(); ++i) {
    if (!maze.in_bounds(s.path[i])) {
      valid = false;
      s.annotations.emplace_back("coordinate " + to_string(s.path[i]) + " outside maze");
    } else if (i > 0 && !maze.connected(s.path[i - 1], s.path[i])) {
      valid = false;
      s.annotations.emplace_back("wall jump " + to_string(s.path[i - 1]) + " -> " + to_string(s.path[i]));
    }
  }
  s.valid = valid;
  s.target_reached = !s.path.empty() && s.path.back() == solved.target;
  s.exactly_correct = s.terminated && !stray_special && stop == s.path.size() && s.path == solved.path;
  return s;
}

BaselineResult baseline_rollout(const Maze& maze, Coord origin, Coord target, std::uint64_t seed,
                                std::optional<std::size_t> step_cap) {
  if (!maze.in_bounds(origin) || !maze.in_bounds(target)) throw std::invalid_argument("baseline endpoints out of range");
  const auto dist = bfs_distances(maze, origin);
  if (dist[maze.index(target)] < 0) throw NoPathError("baseline: target unreachable from origin");
  const std::size_t cap = step_cap.value_or(rollout_cap(maze.grid_n()));
  Rng rng(seed);
  BaselineResult r;
  r.path.push_back(origin);
  std::optional<Coord> prev;
  Coord cur = origin;
  while (cur != target && r.path.size() <= cap) {
    const auto nbs = maze.neighbors(cur);
    std::vector<Coord> options;
    for (const Coord nb : nbs)
      if (!prev || nb != *prev) options.push_back(nb);
    if (options.empty()) options = nbs;  // dead end: turn back
    const Coord next = options.size() == 1 ? options.front() : options[rng.below(options.size())];
    prev = cur;
    cur = next;
    r.path.push_back(cur);
  }
  r.reached = cur == target;
  return r;
}

std::vector<PathLengthRow> accuracy_by_path_length(std::span<const RolloutOutcome> outcomes) {
  struct Acc {
    std::size_t n = 0, exact = 0, valid = 0, reached = 0;
  };
  std::map<std::size_t, Acc> buckets;
  for (const auto& o : outcomes) {
    auto& a = buckets[o.path_length];
    ++a.n;
    a.exact += o.exactly_correct ? 1 : 0;
    a.valid += o.valid ? 1 : 0;
    a.reached += o.target_reached ? 1 : 0;
  }
  std::vector<PathLengthRow> rows;
  for (const auto& [len, a] : buckets) {
    const auto n = static_cast<double>(a.n);
    rows.push_back({len, a.n, static_cast<double>(a.exact) / n, static_cast<double>(a.valid) / n,
                    static_cast<double>(a.reached) / n});
  }
  return rows;
}

}  // namespace mazelab
