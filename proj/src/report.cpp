#include "mazelab/report.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace mazelab {

void Table::add(std::vector<Cell> row) {
  if (row.size() != columns.size()) {
    throw ReportError("table row has " + std::to_string(row.size()) + " cells, expected " +
                      std::to_string(columns.size()));
  }
  rows.push_back(std::move(row));
}

std::string format_number(double x) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  return std::string(buf.data(), res.ptr);
}

namespace {

std::string fixed(double x, int precision = 2) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x, std::chars_format::fixed, precision);
  return std::string(buf.data(), res.ptr);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Rgb {
  double r, g, b;
};

std::string hex(Rgb c) {
  auto byte = [](double v) { return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
  char buf[8];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", byte(c.r), byte(c.g), byte(c.b));
  return buf;
}

Rgb lerp(Rgb a, Rgb b, double t) { return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t}; }

// Sequential scale, t in [0, 1].
Rgb sequential(double t) {
  static const std::array<Rgb, 5> stops{{{0.267, 0.005, 0.329},
                                         {0.230, 0.322, 0.546},
                                         {0.128, 0.567, 0.551},
                                         {0.369, 0.789, 0.383},
                                         {0.993, 0.906, 0.144}}};
  t = std::clamp(t, 0.0, 1.0) * (stops.size() - 1);
  const auto i = std::min(static_cast<std::size_t>(t), stops.size() - 2);
  return lerp(stops[i], stops[i + 1], t - static_cast<double>(i));
}

// Diverging scale, t in [-1, 1].
Rgb diverging(double t) {
  t = std::clamp(t, -1.0, 1.0);
  const Rgb white{1, 1, 1}, red{0.79, 0.0, 0.13}, blue{0.02, 0.19, 0.38};
  return t >= 0 ? lerp(white, red, t) : lerp(white, blue, -t);
}

const std::array<std::string, 8> kPalette{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                          "#9467bd", "#8c564b", "#e377c2", "#17becf"};

class Svg {
 public:
  Svg(double w, double h) : w_(w), h_(h) {}
  void raw(const std::string& s) { body_ << s << '\n'; }
  void rect(double x, double y, double w, double h, const std::string& fill, const std::string& extra = "") {
    body_ << "<rect x=\"" << fixed(x) << "\" y=\"" << fixed(y) << "\" width=\"" << fixed(w) << "\" height=\""
          << fixed(h) << "\" fill=\"" << fill << "\"" << extra << "/>\n";
  }
  void line(double x1, double y1, double x2, double y2, const std::string& stroke, double width = 1.0) {
    body_ << "<line x1=\"" << fixed(x1) << "\" y1=\"" << fixed(y1) << "\" x2=\"" << fixed(x2) << "\" y2=\""
          << fixed(y2) << "\" stroke=\"" << stroke << "\" stroke-width=\"" << fixed(width) << "\"/>\n";
  }
  void text(double x, double y, const std::string& s, const std::string& anchor = "middle", int size = 11) {
    body_ << "<text x=\"" << fixed(x) << "\" y=\"" << fixed(y) << "\" font-size=\"" << size
          << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\">" << xml_escape(s) << "</text>\n";
  }
  std::string str() const {
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fixed(w_, 0) << "\" height=\"" << fixed(h_, 0)
        << "\" viewBox=\"0 0 " << fixed(w_, 0) << ' ' << fixed(h_, 0) << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n"
        << body_.str() << "</svg>\n";
    return out.str();
  }

 private:
  double w_, h_;
  std::ostringstream body_;
};

void require_finite(double v, const std::string& where) {
  if (!std::isfinite(v)) throw ReportError("non-finite value at " + where);
}

struct Axis {
  double lo, hi;
  double map(double v, double a, double b) const { return hi == lo ? (a + b) / 2 : a + (v - lo) / (hi - lo) * (b - a); }
};

Axis nice_range(double lo, double hi) {
  if (lo == hi) {
    const double pad = lo == 0 ? 1.0 : std::abs(lo) * 0.1;
    return {lo - pad, hi + pad};
  }
  const double pad = (hi - lo) * 0.05;
  return {lo - pad, hi + pad};
}

void axes(Svg& svg, double x0, double y0, double x1, double y1, const Axis& ax, const Axis& ay, const std::string& xl,
          const std::string& yl, bool log_x) {
  svg.line(x0, y1, x1, y1, "#000000");
  svg.line(x0, y0, x0, y1, "#000000");
  for (int i = 0; i <= 4; ++i) {
    const double fy = ay.lo + (ay.hi - ay.lo) * i / 4.0;
    const double py = ay.map(fy, y1, y0);
    svg.line(x0 - 4, py, x0, py, "#000000");
    svg.text(x0 - 6, py + 4, fixed(fy, 3), "end", 9);
    const double fx = ax.lo + (ax.hi - ax.lo) * i / 4.0;
    const double px = ax.map(fx, x0, x1);
    svg.line(px, y1, px, y1 + 4, "#000000");
    svg.text(px, y1 + 15, log_x ? fixed(std::pow(10.0, fx), 0) : fixed(fx, 2), "middle", 9);
  }
  svg.text((x0 + x1) / 2, y1 + 32, xl);
  svg.raw("<text x=\"14\" y=\"" + fixed((y0 + y1) / 2) + "\" font-size=\"11\" font-family=\"sans-serif\" "
          "text-anchor=\"middle\" transform=\"rotate(-90 14 " + fixed((y0 + y1) / 2) + ")\">" + xml_escape(yl) +
          "</text>");
}

}  // namespace

std::string to_csv(const Table& t) {
  std::string out;
  for (std::size_t c = 0; c < t.columns.size(); ++c) {
    if (c) out += ',';
    out += csv_field(t.columns[c]);
  }
  out += '\n';
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    if (row.size() != t.columns.size()) throw ReportError("row " + std::to_string(r) + " has the wrong number of cells");
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out += ',';
      if (const auto* s = std::get_if<std::string>(&row[c])) {
        out += csv_field(*s);
      } else if (const auto* d = std::get_if<double>(&row[c])) {
        require_finite(*d, "row " + std::to_string(r) + ", column '" + t.columns[c] + "'");
        out += format_number(*d);
      } else {
        out += std::to_string(std::get<std::int64_t>(row[c]));
      }
    }
    out += '\n';
  }
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ReportError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ReportError("write failed for " + path.string());
}

void write_csv(const std::filesystem::path& path, const Table& t) { write_file(path, to_csv(t)); }

std::string heatmap_svg(const Heatmap& h) {
  const std::size_t rows = h.row_labels.size(), cols = h.col_labels.size();
  if (h.values.size() != rows * cols) throw ReportError("heatmap: value count does not match labels");
  double lo = 0, hi = 0;
  for (std::size_t i = 0; i < h.values.size(); ++i) {
    require_finite(h.values[i], "heatmap cell (" + h.row_labels[i / cols] + ", " + h.col_labels[i % cols] + ")");
    lo = i ? std::min(lo, h.values[i]) : h.values[i];
    hi = i ? std::max(hi, h.values[i]) : h.values[i];
  }
  const double cell = 40, left = 90, top = 40;
  Svg svg(left + cols * cell + 110, top + rows * cell + 40);
  svg.text(left + cols * cell / 2, 22, h.title, "middle", 13);
  const double bound = std::max(std::abs(lo), std::abs(hi));
  for (std::size_t r = 0; r < rows; ++r) {
    svg.text(left - 6, top + r * cell + cell / 2 + 4, h.row_labels[r], "end");
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = h.values[r * cols + c];
      const Rgb colour = h.diverging ? diverging(bound == 0 ? 0 : v / bound) : sequential(hi == lo ? 0.5 : (v - lo) / (hi - lo));
      svg.rect(left + c * cell, top + r * cell, cell, cell, hex(colour), " stroke=\"#ffffff\"");
      svg.text(left + c * cell + cell / 2, top + r * cell + cell / 2 + 4, fixed(v, 2), "middle", 9);
    }
  }
  for (std::size_t c = 0; c < cols; ++c) svg.text(left + c * cell + cell / 2, top + rows * cell + 16, h.col_labels[c]);
  const double lx = left + cols * cell + 20;
  for (int i = 0; i < 20; ++i) {
    const double t = 1.0 - i / 19.0;
    const Rgb colour = h.diverging ? diverging(2 * t - 1) : sequential(t);
    svg.rect(lx, top + i * rows * cell / 20, 14, rows * cell / 20 + 0.5, hex(colour));
  }
  svg.text(lx + 18, top + 8, fixed(h.diverging ? bound : hi, 3), "start", 9);
  svg.text(lx + 18, top + rows * cell, fixed(h.diverging ? -bound : lo, 3), "start", 9);
  return svg.str();
}

std::string line_chart_svg(const LineChart& c) {
  const double x0 = 60, y0 = 40, x1 = 520, y1 = 300;
  double xlo = 0, xhi = 0, ylo = 0, yhi = 0;
  bool any = false;
  auto tx = [&](double x) { return c.log_x ? std::log10(std::max(x, 1.0)) : x; };
  for (const auto& s : c.series) {
    if (s.x.size() != s.y.size()) throw ReportError("series '" + s.name + "': x and y differ in length");
    const bool band = !s.lo.empty();
    if (band && (s.lo.size() != s.y.size() || s.hi.size() != s.y.size())) {
      throw ReportError("series '" + s.name + "': band length mismatch");
    }
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      const std::string where = "series '" + s.name + "' point " + std::to_string(i);
      require_finite(s.x[i], where + " (x)");
      require_finite(s.y[i], where + " (y)");
      double lo = s.y[i], hi = s.y[i];
      if (band) {
        require_finite(s.lo[i], where + " (band low)");
        require_finite(s.hi[i], where + " (band high)");
        lo = std::min(lo, s.lo[i]);
        hi = std::max(hi, s.hi[i]);
      }
      const double x = tx(s.x[i]);
      xlo = any ? std::min(xlo, x) : x;
      xhi = any ? std::max(xhi, x) : x;
      ylo = any ? std::min(ylo, lo) : lo;
      yhi = any ? std::max(yhi, hi) : hi;
      any = true;
    }
  }
  const Axis ax = nice_range(xlo, xhi);
  const Axis ay = c.y_range ? Axis{c.y_range->first, c.y_range->second} : nice_range(ylo, yhi);
  Svg svg(680, 350);
  svg.text((x0 + x1) / 2, 22, c.title, "middle", 13);
  axes(svg, x0, y0, x1, y1, ax, ay, c.x_label, c.y_label, c.log_x);
  for (std::size_t k = 0; k < c.series.size(); ++k) {
    const auto& s = c.series[k];
    const std::string& colour = kPalette[k % kPalette.size()];
    if (!s.lo.empty() && !s.x.empty()) {
      std::string pts;
      for (std::size_t i = 0; i < s.x.size(); ++i)
        pts += fixed(ax.map(tx(s.x[i]), x0, x1)) + "," + fixed(ay.map(s.hi[i], y1, y0)) + " ";
      for (std::size_t i = s.x.size(); i-- > 0;)
        pts += fixed(ax.map(tx(s.x[i]), x0, x1)) + "," + fixed(ay.map(s.lo[i], y1, y0)) + " ";
      svg.raw("<polygon points=\"" + pts + "\" fill=\"" + colour + "\" fill-opacity=\"0.2\" stroke=\"none\"/>");
    }
    std::string pts;
    for (std::size_t i = 0; i < s.x.size(); ++i)
      pts += fixed(ax.map(tx(s.x[i]), x0, x1)) + "," + fixed(ay.map(s.y[i], y1, y0)) + " ";
    svg.raw("<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + colour + "\" stroke-width=\"2\"/>");
    svg.rect(x1 + 15, y0 + k * 18, 10, 10, colour);
    svg.text(x1 + 30, y0 + k * 18 + 9, s.name, "start", 10);
  }
  return svg.str();
}

std::string box_plot_svg(const BoxPlot& b) {
  if (b.labels.size() != b.boxes.size()) throw ReportError("box plot: label count does not match boxes");
  double lo = 0, hi = 0;
  bool any = false;
  for (std::size_t i = 0; i < b.boxes.size(); ++i) {
    const auto& s = b.boxes[i];
    if (s.n == 0) continue;
    for (double v : {s.min, s.q1, s.median, s.q3, s.max, s.whisker_lo, s.whisker_hi})
      require_finite(v, "box '" + b.labels[i] + "'");
    lo = any ? std::min(lo, s.min) : s.min;
    hi = any ? std::max(hi, s.max) : s.max;
    any = true;
  }
  const double x0 = 60, y0 = 40, y1 = 300;
  const double slot = 50, x1 = x0 + std::max<std::size_t>(b.boxes.size(), 1) * slot;
  const Axis ay = nice_range(lo, hi);
  Svg svg(x1 + 40, 350);
  svg.text((x0 + x1) / 2, 22, b.title, "middle", 13);
  svg.line(x0, y1, x1, y1, "#000000");
  svg.line(x0, y0, x0, y1, "#000000");
  for (int i = 0; i <= 4; ++i) {
    const double fy = ay.lo + (ay.hi - ay.lo) * i / 4.0;
    const double py = ay.map(fy, y1, y0);
    svg.line(x0 - 4, py, x0, py, "#000000");
    svg.text(x0 - 6, py + 4, fixed(fy, 3), "end", 9);
  }
  svg.text((x0 + x1) / 2, y1 + 32, b.x_label);
  svg.raw("<text x=\"14\" y=\"" + fixed((y0 + y1) / 2) + "\" font-size=\"11\" font-family=\"sans-serif\" "
          "text-anchor=\"middle\" transform=\"rotate(-90 14 " + fixed((y0 + y1) / 2) + ")\">" + xml_escape(b.y_label) +
          "</text>");
  for (std::size_t i = 0; i < b.boxes.size(); ++i) {
    const auto& s = b.boxes[i];
    const double cx = x0 + slot * (i + 0.5);
    svg.text(cx, y1 + 15, b.labels[i], "middle", 9);
    if (s.n == 0) continue;
    auto py = [&](double v) { return ay.map(v, y1, y0); };
    svg.line(cx, py(s.whisker_lo), cx, py(s.q1), "#000000");
    svg.line(cx, py(s.q3), cx, py(s.whisker_hi), "#000000");
    svg.rect(cx - 15, py(s.q3), 30, std::max(py(s.q1) - py(s.q3), 0.5), "#9ecae1", " stroke=\"#000000\"");
    svg.line(cx - 15, py(s.median), cx + 15, py(s.median), "#d62728", 2);
  }
  return svg.str();
}

std::string maze_svg(const MazeOverlay& m) {
  if (m.maze == nullptr) throw ReportError("maze overlay without a maze");
  const Maze& maze = *m.maze;
  const int n = maze.grid_n();
  const double cell = 50, pad = 30, top = 40;
  Svg svg(2 * pad + n * cell, top + pad + n * cell);
  svg.text(pad + n * cell / 2, 22, m.title, "middle", 13);
  auto cx = [&](const Coord& c) { return pad + (c.col + 0.5) * cell; };
  auto cy = [&](const Coord& c) { return top + (c.row + 0.5) * cell; };
  if (!m.cell_weights.empty()) {
    if (m.cell_weights.size() != maze.cell_count()) throw ReportError("maze overlay: cell weight count mismatch");
    double hi = 0;
    for (std::size_t i = 0; i < m.cell_weights.size(); ++i) {
      require_finite(m.cell_weights[i], "cell " + to_string(maze.coord(i)));
      hi = std::max(hi, m.cell_weights[i]);
    }
    for (std::size_t i = 0; i < m.cell_weights.size(); ++i) {
      const Coord c = maze.coord(i);
      const double t = hi > 0 ? m.cell_weights[i] / hi : 0.0;
      svg.rect(pad + c.col * cell, top + c.row * cell, cell, cell, hex(lerp({1, 1, 1}, {0.99, 0.55, 0.24}, t)));
    }
  }
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const Coord here{r, c};
      const double x = pad + c * cell, y = top + r * cell;
      if (r == 0 || !maze.connected(here, {r - 1, c})) svg.line(x, y, x + cell, y, "#000000", 2);
      if (c == 0 || !maze.connected(here, {r, c - 1})) svg.line(x, y, x, y + cell, "#000000", 2);
      if (r == n - 1) svg.line(x, y + cell, x + cell, y + cell, "#000000", 2);
      if (c == n - 1) svg.line(x + cell, y, x + cell, y + cell, "#000000", 2);
    }
  }
  for (const auto& w : m.walls) {
    const double x = pad + w.cell.col * cell, y = top + w.cell.row * cell;
    const std::string colour = w.mark == WallMark::correct ? "#1f4e9c" : w.mark == WallMark::omitted ? "#ff7f0e" : "#e377c2";
    switch (w.dir) {
      case Dir::N: svg.line(x + 4, y + 4, x + cell - 4, y + 4, colour, 4); break;
      case Dir::S: svg.line(x + 4, y + cell - 4, x + cell - 4, y + cell - 4, colour, 4); break;
      case Dir::E: svg.line(x + cell - 4, y + 4, x + cell - 4, y + cell - 4, colour, 4); break;
      case Dir::W: svg.line(x + 4, y + 4, x + 4, y + cell - 4, colour, 4); break;
    }
  }
  for (std::size_t i = 1; i < m.path.size(); ++i)
    svg.line(cx(m.path[i - 1]), cy(m.path[i - 1]), cx(m.path[i]), cy(m.path[i]), "#2ca02c", 4);
  if (!m.path.empty()) {
    svg.raw("<circle cx=\"" + fixed(cx(m.path.front())) + "\" cy=\"" + fixed(cy(m.path.front())) +
            "\" r=\"7\" fill=\"#2ca02c\"/>");
    svg.raw("<circle cx=\"" + fixed(cx(m.path.back())) + "\" cy=\"" + fixed(cy(m.path.back())) +
            "\" r=\"7\" fill=\"#d62728\"/>");
  }
  if (m.current) {
    svg.raw("<circle cx=\"" + fixed(cx(*m.current)) + "\" cy=\"" + fixed(cy(*m.current)) +
            "\" r=\"9\" fill=\"none\" stroke=\"#000000\" stroke-width=\"2\"/>");
  }
  return svg.str();
}

}  // namespace mazelab
