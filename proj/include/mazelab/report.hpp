#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "mazelab/maze.hpp"
#include "mazelab/stats.hpp"

namespace mazelab {

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Cell = std::variant<std::string, double, std::int64_t>;

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> row);
};

// Shortest representation that round-trips; always '.' as decimal separator.
std::string format_number(double x);

// Throws ReportError naming the row and column of the first non-finite value.
std::string to_csv(const Table& t);

void write_file(const std::filesystem::path& path, const std::string& bytes);
void write_csv(const std::filesystem::path& path, const Table& t);

struct Heatmap {
  std::string title;
  std::vector<std::string> row_labels, col_labels;
  std::vector<double> values;  // row-major
  bool diverging = false;      // symmetric colour scale around zero
};
std::string heatmap_svg(const Heatmap& h);

struct Series {
  std::string name;
  std::vector<double> x, y;
  std::vector<double> lo, hi;  // optional band, same length as y
};
struct LineChart {
  std::string title, x_label, y_label;
  std::vector<Series> series;
  std::optional<std::pair<double, double>> y_range;
  bool log_x = false;
};
std::string line_chart_svg(const LineChart& c);

struct BoxPlot {
  std::string title, x_label, y_label;
  std::vector<std::string> labels;
  std::vector<BoxStats> boxes;
};
std::string box_plot_svg(const BoxPlot& b);

enum class WallMark { correct, omitted, added };
struct MarkedWall {
  Coord cell;
  Dir dir;
  WallMark mark;
};
struct MazeOverlay {
  std::string title;
  const Maze* maze = nullptr;
  std::vector<double> cell_weights;  // optional, one per cell, shaded in [0, max]
  std::vector<Coord> path;
  std::optional<Coord> current;
  std::vector<MarkedWall> walls;     // optional probe diff
};
std::string maze_svg(const MazeOverlay& m);

}  // namespace mazelab
