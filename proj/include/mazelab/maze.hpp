#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mazelab {

struct Coord {
  int row = 0;
  int col = 0;
  friend auto operator<=>(const Coord&, const Coord&) = default;
};

std::string to_string(Coord c);

// Direction indices are shared by walls, probes and renderers.
enum class Dir : std::uint8_t { N = 0, S = 1, E = 2, W = 3 };
inline constexpr std::array<Dir, 4> kDirs = {Dir::N, Dir::S, Dir::E, Dir::W};
inline constexpr std::array<int, 4> kDirRow = {-1, 1, 0, 0};
inline constexpr std::array<int, 4> kDirCol = {0, 0, 1, -1};

constexpr Dir opposite(Dir d) noexcept {
  switch (d) {
    case Dir::N: return Dir::S;
    case Dir::S: return Dir::N;
    case Dir::E: return Dir::W;
    case Dir::W: return Dir::E;
  }
  return Dir::N;
}

constexpr Coord step(Coord c, Dir d) noexcept {
  const auto i = static_cast<int>(d);
  return {c.row + kDirRow[i], c.col + kDirCol[i]};
}

inline int manhattan(Coord a, Coord b) noexcept {
  return (a.row > b.row ? a.row - b.row : b.row - a.row) +
         (a.col > b.col ? a.col - b.col : b.col - a.col);
}

// Direction leading from a to a lattice neighbour b, if they are adjacent.
std::optional<Dir> direction_between(Coord a, Coord b) noexcept;

// Unordered edge stored canonically with a < b.
struct Edge {
  Coord a;
  Coord b;
  Edge() = default;
  Edge(Coord x, Coord y) : a(x < y ? x : y), b(x < y ? y : x) {}
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

class NoPathError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateMazeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Square lattice maze. Connectivity is held as a 4-bit open-direction mask
// per cell, so edges are always lattice-adjacent and never duplicated.
class Maze {
 public:
  Maze() = default;
  explicit Maze(int grid_n);
  Maze(int grid_n, const std::vector<Edge>& edges);

  int grid_n() const noexcept { return grid_n_; }
  bool in_bounds(Coord c) const noexcept {
    return c.row >= 0 && c.col >= 0 && c.row < grid_n_ && c.col < grid_n_;
  }

  // Adds the edge a-b; throws if the cells are out of range or not adjacent.
  void connect(Coord a, Coord b);
  bool connected(Coord a, Coord b) const noexcept;
  bool open(Coord c, Dir d) const noexcept {
    return (mask_[index(c)] >> static_cast<int>(d)) & 1U;
  }
  int degree(Coord c) const noexcept;

  std::vector<Coord> neighbors(Coord c) const;  // in N, S, E, W order
  std::vector<Edge> edges() const;              // sorted canonical list
  std::size_t edge_count() const noexcept;

  std::size_t index(Coord c) const noexcept {
    return static_cast<std::size_t>(c.row) * static_cast<std::size_t>(grid_n_) +
           static_cast<std::size_t>(c.col);
  }
  Coord coord(std::size_t index) const noexcept {
    return {static_cast<int>(index / static_cast<std::size_t>(grid_n_)),
            static_cast<int>(index % static_cast<std::size_t>(grid_n_))};
  }
  std::size_t cell_count() const noexcept { return mask_.size(); }

  friend bool operator==(const Maze&, const Maze&) = default;

 private:
  int grid_n_ = 0;
  std::vector<std::uint8_t> mask_;
};

struct SolvedMaze {
  Maze maze;
  Coord origin;
  Coord target;
  std::vector<Coord> path;
  friend bool operator==(const SolvedMaze&, const SolvedMaze&) = default;
};

enum class Algorithm { rdfs, forkless, percolation, rdfs_percolation };

std::string to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& name);

struct GenSpec {
  Algorithm algorithm = Algorithm::rdfs;
  int grid_n = 6;
  std::optional<double> p;          // percolation probability
  std::optional<int> min_path_len;  // forkless walk length filter (cells)
  std::uint64_t seed = 0;
};

// --- generators -----------------------------------------------------------

Maze generate_rdfs(int grid_n, std::uint64_t seed);
Maze generate_forkless(int grid_n, std::uint64_t seed,
                       std::optional<int> min_cells = std::nullopt);
Maze generate_percolation(int grid_n, double p, std::uint64_t seed);
Maze union_mazes(const Maze& a, const Maze& b);
Maze generate(const GenSpec& spec);

// --- queries --------------------------------------------------------------

// BFS distances from origin; -1 for unreachable cells. Indexed by Maze::index.
std::vector<int> bfs_distances(const Maze& maze, Coord origin);

// Shortest path with N, S, E, W expansion order as tie-break.
std::vector<Coord> shortest_path(const Maze& maze, Coord origin, Coord target);

// Uniform over ordered pairs of distinct, same-component, nonzero-degree cells.
std::pair<Coord, Coord> sample_endpoints(const Maze& maze, std::uint64_t seed);

SolvedMaze solve(const Maze& maze, std::uint64_t endpoint_seed);

// Connected-component label per cell (isolated cells get their own label).
std::vector<int> component_labels(const Maze& maze);

// Row-major (row, col, dir) boolean walls; boundary counts as wall.
class WallTensor {
 public:
  WallTensor() = default;
  explicit WallTensor(int grid_n) : grid_n_(grid_n), data_(static_cast<std::size_t>(grid_n * grid_n * 4), 1) {}

  int grid_n() const noexcept { return grid_n_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool at(int row, int col, Dir d) const { return data_[flat(row, col, d)] != 0; }
  void set(int row, int col, Dir d, bool wall) { data_[flat(row, col, d)] = wall ? 1 : 0; }
  bool operator[](std::size_t i) const { return data_[i] != 0; }
  std::size_t flat(int row, int col, Dir d) const {
    return (static_cast<std::size_t>(row) * static_cast<std::size_t>(grid_n_) +
            static_cast<std::size_t>(col)) * 4 + static_cast<std::size_t>(d);
  }
  std::size_t wall_count() const noexcept;

  friend bool operator==(const WallTensor&, const WallTensor&) = default;

 private:
  int grid_n_ = 0;
  std::vector<std::uint8_t> data_;
};

WallTensor wall_tensor(const Maze& maze);
// Inverse of wall_tensor. Throws if the tensor is inconsistent across neighbours.
Maze maze_from_walls(const WallTensor& walls);

// Monospace rendering: (2n+1) x (2n+1) characters. '+' corners, '-'/'|'
// walls; path cells marked 'o' (origin), 'x' (target), '*' (interior).
std::string render_text(const Maze& maze, const std::vector<Coord>* path = nullptr);

}  // namespace mazelab
