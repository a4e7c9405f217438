#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "mazelab/maze.hpp"
#include "mazelab/report.hpp"
#include "mazelab/stats.hpp"

using namespace mazelab;

TEST(Stats, MeanAndPopulationStddev) {
  const std::vector<double> xs{2, 4, 4, 4, 5, 5, 7, 9};
  EXPECT_DOUBLE_EQ(mean(xs), 5.0);
  EXPECT_DOUBLE_EQ(stddev(xs), 2.0);
}

TEST(Stats, AverageRanks) {
  const std::vector<double> xs{10, 20, 10, 30, 20, 20};
  EXPECT_EQ(average_ranks(xs), (std::vector<double>{1.5, 4, 1.5, 6, 4, 4}));
}

TEST(Stats, QuantilesInterpolateLinearly) {
  const std::vector<double> xs{3, 1, 4, 1, 5, 9, 2, 6};
  EXPECT_DOUBLE_EQ(quantile(xs, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(quantile(xs, 0.5), 3.5);
  EXPECT_DOUBLE_EQ(quantile(xs, 0.75), 5.25);
  EXPECT_DOUBLE_EQ(quantile(xs, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(quantile(xs, 1.0), 9.0);
}

TEST(Stats, BoxWhiskersStopAtInnerFences) {
  const std::vector<double> xs{1, 2, 3, 4, 5, 6, 7, 8, 100};
  const BoxStats b = box_stats(xs);
  EXPECT_EQ(b.n, 9u);
  EXPECT_DOUBLE_EQ(b.q1, 3);
  EXPECT_DOUBLE_EQ(b.median, 5);
  EXPECT_DOUBLE_EQ(b.q3, 7);
  EXPECT_DOUBLE_EQ(b.max, 100);
  EXPECT_DOUBLE_EQ(b.whisker_lo, 1);
  EXPECT_DOUBLE_EQ(b.whisker_hi, 8);
}

// Reference values computed with an independent statistics package.
TEST(Stats, SpearmanReferenceValues) {
  const std::vector<double> x1{1, 2, 3, 4, 5}, y1{5, 6, 7, 8, 7};
  const auto r1 = spearman(x1, y1);
  EXPECT_TRUE(r1.defined);
  EXPECT_NEAR(r1.rho, 0.8207826816681233, 1e-12);
  EXPECT_NEAR(r1.p_value, 0.08858700531354381, 1e-9);

  const std::vector<double> x2{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, y2{2, 1, 4, 3, 6, 5, 8, 7, 10, 9};
  const auto r2 = spearman(x2, y2);
  EXPECT_NEAR(r2.rho, 0.9393939393939393, 1e-12);
  EXPECT_NEAR(r2.p_value, 5.484052998513666e-05, 1e-12);

  const std::vector<double> x3{1, 1, 2, 2, 3, 3, 4}, y3{3, 1, 2, 2, 4, 5, 4};
  const auto r3 = spearman(x3, y3);
  EXPECT_NEAR(r3.rho, 0.7570424080242599, 1e-12);
  EXPECT_NEAR(r3.p_value, 0.048784304051091874, 1e-9);
}

TEST(Stats, SpearmanNoTiesMatchesRankDifferenceFormula) {
  const std::vector<double> x{0.3, 1.7, -2.0, 4.4, 0.9, 3.1}, y{2.0, 1.0, 0.5, 3.5, -1.0, 2.5};
  const auto rx = average_ranks(x), ry = average_ranks(y);
  double d2 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  const double n = 6;
  EXPECT_NEAR(spearman(x, y).rho, 1 - 6 * d2 / (n * (n * n - 1)), 1e-12);
}

TEST(Stats, SpearmanDegenerateCases) {
  const std::vector<double> a{1, 2}, b{3, 4};
  EXPECT_FALSE(spearman(a, b).defined);
  const std::vector<double> c{1, 2, 3, 4}, d{5, 5, 5, 5};
  const auto r = spearman(c, d);
  EXPECT_FALSE(r.defined);
  EXPECT_EQ(r.p_value, 1.0);
  const std::vector<double> e{1, 2, 3, 4}, f{1, 2, 3, 4};
  const auto perfect = spearman(e, f);
  EXPECT_DOUBLE_EQ(perfect.rho, 1.0);
  EXPECT_EQ(perfect.p_value, 0.0);
}

TEST(Report, NumberFormatting) {
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(format_number(3.0), "3");
  EXPECT_EQ(format_number(-2.5), "-2.5");
}

TEST(Report, CsvQuotingAndLayout) {
  Table t;
  t.columns = {"name", "value", "count"};
  t.add({std::string("plain"), 0.5, std::int64_t{3}});
  t.add({std::string("needs, \"quotes\""), -1.25, std::int64_t{-7}});
  EXPECT_EQ(to_csv(t), "name,value,count\nplain,0.5,3\n\"needs, \"\"quotes\"\"\",-1.25,-7\n");
  EXPECT_THROW(t.add({std::string("short")}), ReportError);
}

TEST(Report, NonFiniteCellNamesItsLocation) {
  Table t;
  t.columns = {"a", "b"};
  t.add({1.0, 2.0});
  t.add({3.0, std::numeric_limits<double>::quiet_NaN()});
  try {
    to_csv(t);
    FAIL() << "expected ReportError";
  } catch (const ReportError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("'b'"), std::string::npos) << msg;
  }
}

TEST(Report, SvgOutputsAreDeterministic) {
  Heatmap h;
  h.title = "a & b";
  h.row_labels = {"r0", "r1"};
  h.col_labels = {"c0", "c1", "c2"};
  h.values = {0.1, 0.2, 0.3, -0.4, 0.5, 0.6};
  h.diverging = true;
  const std::string s1 = heatmap_svg(h);
  EXPECT_EQ(s1, heatmap_svg(h));
  EXPECT_EQ(s1.rfind("<svg", 0), 0u);
  EXPECT_NE(s1.find("a &amp; b"), std::string::npos);
  EXPECT_NE(s1.find("</svg>"), std::string::npos);

  LineChart c;
  c.title = "curve";
  c.series.push_back({"s", {1, 2, 4}, {0.1, 0.5, 0.9}, {}, {}});
  c.log_x = true;
  EXPECT_EQ(line_chart_svg(c), line_chart_svg(c));

  BoxPlot b;
  const std::vector<double> xs{1, 2, 3, 4, 10};
  b.labels = {"d1"};
  b.boxes = {box_stats(xs)};
  EXPECT_EQ(box_plot_svg(b), box_plot_svg(b));

  const Maze m = generate_rdfs(4, 1);
  MazeOverlay o;
  o.title = "maze";
  o.maze = &m;
  o.path = {{0, 0}, {0, 1}};
  const std::string ms = maze_svg(o);
  EXPECT_EQ(ms, maze_svg(o));
  EXPECT_NE(ms.find("<line"), std::string::npos);
}

TEST(Report, WriteCsvToDisk) {
  Table t;
  t.columns = {"x"};
  t.add({1.0});
  const auto p = std::filesystem::temp_directory_path() / "mazelab_test_report.csv";
  write_csv(p, t);
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "x");
  std::getline(in, line);
  EXPECT_EQ(line, "1");
}
