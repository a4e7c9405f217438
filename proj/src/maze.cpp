#include "mazelab/maze.hpp"

#include <algorithm>
#include <bit>
#include <deque>
#include <numeric>

#include "mazelab/rng.hpp"

namespace mazelab {

std::string to_string(Coord c) {
  return "(" + std::to_string(c.row) + "," + std::to_string(c.col) + ")";
}

std::optional<Dir> direction_between(Coord a, Coord b) noexcept {
  for (Dir d : kDirs) {
    if (step(a, d) == b) return d;
  }
  return std::nullopt;
}

Maze::Maze(int grid_n) : grid_n_(grid_n) {
  if (grid_n < 2) throw std::invalid_argument("grid_n must be >= 2, got " + std::to_string(grid_n));
  mask_.assign(static_cast<std::size_t>(grid_n) * static_cast<std::size_t>(grid_n), 0);
}

Maze::Maze(int grid_n, const std::vector<Edge>& edges) : Maze(grid_n) {
  for (const auto& e : edges) connect(e.a, e.b);
}

void Maze::connect(Coord a, Coord b) {
  if (!in_bounds(a) || !in_bounds(b)) {
    throw std::invalid_argument("edge " + to_string(a) + "-" + to_string(b) + " outside " +
                                std::to_string(grid_n_) + "x" + std::to_string(grid_n_) + " grid");
  }
  const auto d = direction_between(a, b);
  if (!d) {
    throw std::invalid_argument("cells " + to_string(a) + " and " + to_string(b) +
                                " are not lattice-adjacent");
  }
  mask_[index(a)] |= static_cast<std::uint8_t>(1U << static_cast<int>(*d));
  mask_[index(b)] |= static_cast<std::uint8_t>(1U << static_cast<int>(opposite(*d)));
}

bool Maze::connected(Coord a, Coord b) const noexcept {
  if (!in_bounds(a) || !in_bounds(b)) return false;
  const auto d = direction_between(a, b);
  return d && open(a, *d);
}

int Maze::degree(Coord c) const noexcept {
  return std::popcount(static_cast<unsigned>(mask_[index(c)]));
}

std::vector<Coord> Maze::neighbors(Coord c) const {
  std::vector<Coord> out;
  for (Dir d : kDirs) {
    if (open(c, d)) out.push_back(step(c, d));
  }
  return out;
}

std::vector<Edge> Maze::edges() const {
  std::vector<Edge> out;
  for (std::size_t i = 0; i < mask_.size(); ++i) {
    const Coord c = coord(i);
    // Each edge is reported once, from its northern/western end.
    if (open(c, Dir::S)) out.emplace_back(c, step(c, Dir::S));
    if (open(c, Dir::E)) out.emplace_back(c, step(c, Dir::E));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t Maze::edge_count() const noexcept {
  std::size_t twice = 0;
  for (auto m : mask_) twice += static_cast<std::size_t>(std::popcount(static_cast<unsigned>(m)));
  return twice / 2;
}

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::rdfs: return "rdfs";
    case Algorithm::forkless: return "forkless";
    case Algorithm::percolation: return "percolation";
    case Algorithm::rdfs_percolation: return "rdfs_percolation";
  }
  return "?";
}

Algorithm algorithm_from_string(const std::string& name) {
  if (name == "rdfs") return Algorithm::rdfs;
  if (name == "forkless") return Algorithm::forkless;
  if (name == "percolation") return Algorithm::percolation;
  if (name == "rdfs_percolation" || name == "prdfs") return Algorithm::rdfs_percolation;
  throw std::invalid_argument("unknown maze algorithm '" + name + "'");
}

Maze generate_rdfs(int grid_n, std::uint64_t seed) {
  Maze maze(grid_n);
  Rng rng(seed);
  std::vector<std::uint8_t> visited(maze.cell_count(), 0);
  std::vector<Coord> stack;
  const Coord start = maze.coord(rng.below(maze.cell_count()));
  stack.push_back(start);
  visited[maze.index(start)] = 1;
  std::vector<Coord> options;
  options.reserve(4);
  while (!stack.empty()) {
    const Coord cur = stack.back();
    options.clear();
    for (Dir d : kDirs) {
      const Coord nb = step(cur, d);
      if (maze.in_bounds(nb) && !visited[maze.index(nb)]) options.push_back(nb);
    }
    if (options.empty()) {
      stack.pop_back();
      continue;
    }
    const Coord next = options[rng.below(options.size())];
    maze.connect(cur, next);
    visited[maze.index(next)] = 1;
    stack.push_back(next);
  }
  return maze;
}

Maze generate_forkless(int grid_n, std::uint64_t seed, std::optional<int> min_cells) {
  constexpr int kMaxAttempts = 1000;
  Maze probe(grid_n);  // validates grid_n
  const int required = std::max(2, min_cells.value_or(2));
  if (required > grid_n * grid_n) {
    throw std::invalid_argument("forkless walk cannot visit " + std::to_string(required) +
                                " cells of a " + std::to_string(grid_n) + "x" +
                                std::to_string(grid_n) + " grid");
  }
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    Maze maze(grid_n);
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    std::vector<std::uint8_t> visited(maze.cell_count(), 0);
    Coord cur = maze.coord(rng.below(maze.cell_count()));
    visited[maze.index(cur)] = 1;
    int cells = 1;
    std::vector<Coord> options;
    for (;;) {
      options.clear();
      for (Dir d : kDirs) {
        const Coord nb = step(cur, d);
        if (maze.in_bounds(nb) && !visited[maze.index(nb)]) options.push_back(nb);
      }
      if (options.empty()) break;
      const Coord next = options[rng.below(options.size())];
      maze.connect(cur, next);
      visited[maze.index(next)] = 1;
      cur = next;
      ++cells;
    }
    if (cells >= required) return maze;
  }
  throw DegenerateMazeError("forkless generation failed to reach " + std::to_string(required) +
                            " cells after " + std::to_string(kMaxAttempts) + " attempts");
}

Maze generate_percolation(int grid_n, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument("percolation probability must lie in [0,1], got " + std::to_string(p));
  }
  Maze maze(grid_n);
  Rng rng(seed);
  // Canonical order: row-major cells, east pair then south pair.
  for (int r = 0; r < grid_n; ++r) {
    for (int c = 0; c < grid_n; ++c) {
      if (c + 1 < grid_n && rng.uniform() < p) maze.connect({r, c}, {r, c + 1});
      if (r + 1 < grid_n && rng.uniform() < p) maze.connect({r, c}, {r + 1, c});
    }
  }
  return maze;
}

Maze union_mazes(const Maze& a, const Maze& b) {
  if (a.grid_n() != b.grid_n()) {
    throw std::invalid_argument("cannot union mazes of grid_n " + std::to_string(a.grid_n()) +
                                " and " + std::to_string(b.grid_n()));
  }
  Maze out = a;
  for (const auto& e : b.edges()) out.connect(e.a, e.b);
  return out;
}

Maze generate(const GenSpec& spec) {
  switch (spec.algorithm) {
    case Algorithm::rdfs:
      return generate_rdfs(spec.grid_n, spec.seed);
    case Algorithm::forkless:
      return generate_forkless(spec.grid_n, spec.seed, spec.min_path_len);
    case Algorithm::percolation:
      if (!spec.p) throw std::invalid_argument("percolation requires p");
      return generate_percolation(spec.grid_n, *spec.p, spec.seed);
    case Algorithm::rdfs_percolation:
      if (!spec.p) throw std::invalid_argument("rdfs_percolation requires p");
      return union_mazes(generate_rdfs(spec.grid_n, derive_seed(spec.seed, 0)),
                         generate_percolation(spec.grid_n, *spec.p, derive_seed(spec.seed, 1)));
  }
  throw std::invalid_argument("unknown algorithm");
}

std::vector<int> bfs_distances(const Maze& maze, Coord origin) {
  if (!maze.in_bounds(origin)) throw std::invalid_argument("origin " + to_string(origin) + " out of range");
  std::vector<int> dist(maze.cell_count(), -1);
  std::deque<Coord> queue{origin};
  dist[maze.index(origin)] = 0;
  while (!queue.empty()) {
    const Coord cur = queue.front();
    queue.pop_front();
    for (Dir d : kDirs) {
      if (!maze.open(cur, d)) continue;
      const Coord nb = step(cur, d);
      auto& slot = dist[maze.index(nb)];
      if (slot < 0) {
        slot = dist[maze.index(cur)] + 1;
        queue.push_back(nb);
      }
    }
  }
  return dist;
}

std::vector<Coord> shortest_path(const Maze& maze, Coord origin, Coord target) {
  if (!maze.in_bounds(origin) || !maze.in_bounds(target)) {
    throw std::invalid_argument("endpoints " + to_string(origin) + ", " + to_string(target) +
                                " outside grid of size " + std::to_string(maze.grid_n()));
  }
  std::vector<int> parent(maze.cell_count(), -1);
  std::vector<std::uint8_t> seen(maze.cell_count(), 0);
  std::deque<Coord> queue{origin};
  seen[maze.index(origin)] = 1;
  while (!queue.empty()) {
    const Coord cur = queue.front();
    queue.pop_front();
    if (cur == target) break;
    for (Dir d : kDirs) {
      if (!maze.open(cur, d)) continue;
      const Coord nb = step(cur, d);
      if (seen[maze.index(nb)]) continue;
      seen[maze.index(nb)] = 1;
      parent[maze.index(nb)] = static_cast<int>(maze.index(cur));
      queue.push_back(nb);
    }
  }
  if (!seen[maze.index(target)]) {
    throw NoPathError("no path from " + to_string(origin) + " to " + to_string(target));
  }
  std::vector<Coord> path{target};
  for (int at = parent[maze.index(target)]; at >= 0; at = parent[static_cast<std::size_t>(at)]) {
    path.push_back(maze.coord(static_cast<std::size_t>(at)));
  }
  std::reverse(path.begin(), path.end());
  return path;
}

std::vector<int> component_labels(const Maze& maze) {
  std::vector<int> label(maze.cell_count(), -1);
  int next = 0;
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (label[i] >= 0) continue;
    std::vector<Coord> stack{maze.coord(i)};
    label[i] = next;
    while (!stack.empty()) {
      const Coord cur = stack.back();
      stack.pop_back();
      for (const Coord nb : maze.neighbors(cur)) {
        auto& l = label[maze.index(nb)];
        if (l < 0) {
          l = next;
          stack.push_back(nb);
        }
      }
    }
    ++next;
  }
  return label;
}

std::pair<Coord, Coord> sample_endpoints(const Maze& maze, std::uint64_t seed) {
  const auto labels = component_labels(maze);
  // Group eligible cells by component, in row-major order.
  std::vector<std::vector<std::size_t>> groups;
  std::vector<int> group_of_label(maze.cell_count(), -1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (maze.degree(maze.coord(i)) == 0) continue;
    auto& g = group_of_label[static_cast<std::size_t>(labels[i])];
    if (g < 0) {
      g = static_cast<int>(groups.size());
      groups.emplace_back();
    }
    groups[static_cast<std::size_t>(g)].push_back(i);
  }
  std::uint64_t total = 0;
  for (const auto& g : groups) total += g.size() * (g.size() - 1);
  if (total == 0) throw DegenerateMazeError("maze has no connected pair of distinct cells");
  Rng rng(seed);
  std::uint64_t pick = rng.below(total);
  for (const auto& g : groups) {
    const std::uint64_t pairs = g.size() * (g.size() - 1);
    if (pick >= pairs) {
      pick -= pairs;
      continue;
    }
    const auto first = pick / (g.size() - 1);
    auto second = pick % (g.size() - 1);
    if (second >= first) ++second;
    return {maze.coord(g[first]), maze.coord(g[second])};
  }
  throw DegenerateMazeError("endpoint sampling fell through");  // unreachable
}

SolvedMaze solve(const Maze& maze, std::uint64_t endpoint_seed) {
  auto [origin, target] = sample_endpoints(maze, endpoint_seed);
  auto path = shortest_path(maze, origin, target);
  return {maze, origin, target, std::move(path)};
}

std::size_t WallTensor::wall_count() const noexcept {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

WallTensor wall_tensor(const Maze& maze) {
  WallTensor walls(maze.grid_n());
  for (int r = 0; r < maze.grid_n(); ++r) {
    for (int c = 0; c < maze.grid_n(); ++c) {
      for (Dir d : kDirs) walls.set(r, c, d, !maze.open({r, c}, d));
    }
  }
  return walls;
}

Maze maze_from_walls(const WallTensor& walls) {
  const int n = walls.grid_n();
  Maze maze(n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      for (Dir d : kDirs) {
        const Coord nb = step({r, c}, d);
        const bool open_here = !walls.at(r, c, d);
        if (!maze.in_bounds(nb)) {
          if (open_here) throw std::invalid_argument("wall tensor opens the grid boundary at " + to_string({r, c}));
          continue;
        }
        if (open_here != !walls.at(nb.row, nb.col, opposite(d))) {
          throw std::invalid_argument("wall tensor inconsistent between " + to_string({r, c}) +
                                      " and " + to_string(nb));
        }
        if (open_here) maze.connect({r, c}, nb);
      }
    }
  }
  return maze;
}

std::string render_text(const Maze& maze, const std::vector<Coord>* path) {
  const int n = maze.grid_n();
  const int w = 2 * n + 1;
  std::vector<std::string> rows(static_cast<std::size_t>(w), std::string(static_cast<std::size_t>(w), ' '));
  auto at = [&](int r, int c) -> char& { return rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]; };
  for (int r = 0; r <= n; ++r) {
    for (int c = 0; c <= n; ++c) at(2 * r, 2 * c) = '+';
  }
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      if (!maze.open({r, c}, Dir::N)) at(2 * r, 2 * c + 1) = '-';
      if (!maze.open({r, c}, Dir::W)) at(2 * r + 1, 2 * c) = '|';
      if (r == n - 1 && !maze.open({r, c}, Dir::S)) at(2 * r + 2, 2 * c + 1) = '-';
      if (c == n - 1 && !maze.open({r, c}, Dir::E)) at(2 * r + 1, 2 * c + 2) = '|';
    }
  }
  if (path != nullptr && !path->empty()) {
    const auto& p = *path;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!maze.in_bounds(p[i])) throw std::invalid_argument("path cell " + to_string(p[i]) + " outside maze");
      if (i > 0 && !maze.connected(p[i - 1], p[i])) {
        throw std::invalid_argument("path step " + to_string(p[i - 1]) + " -> " + to_string(p[i]) +
                                    " crosses a wall");
      }
    }
    for (std::size_t i = 1; i + 1 < p.size(); ++i) at(2 * p[i].row + 1, 2 * p[i].col + 1) = '*';
    at(2 * p.back().row + 1, 2 * p.back().col + 1) = 'x';
    at(2 * p.front().row + 1, 2 * p.front().col + 1) = 'o';
  }
  std::string out;
  for (const auto& row : rows) {
    out += row;
    out += '\n';
  }
  return out;
}

}  // namespace mazelab
