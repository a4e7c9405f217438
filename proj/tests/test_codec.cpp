#include <gtest/gtest.h>

#include <set>

#include "mazelab/codec.hpp"
#include "mazelab/rng.hpp"

using namespace mazelab;

namespace {

// Maze whose path begins (1,3) (0,3) (0,2) (1,2) and ends at (2,3).
SolvedMaze figure_maze() {
  Maze m(5);
  const std::vector<Coord> path{{1, 3}, {0, 3}, {0, 2}, {1, 2}, {2, 2}, {2, 3}};
  for (std::size_t i = 1; i < path.size(); ++i) m.connect(path[i - 1], path[i]);
  m.connect({0, 0}, {1, 0});
  m.connect({2, 0}, {3, 0});
  m.connect({4, 1}, {4, 0});
  return SolvedMaze{m, {1, 3}, {2, 3}, path};
}

std::vector<SolvedMaze> mixed_mazes(std::size_t count) {
  std::vector<SolvedMaze> out;
  const Algorithm algs[] = {Algorithm::rdfs, Algorithm::forkless, Algorithm::percolation, Algorithm::rdfs_percolation};
  for (std::size_t i = 0; i < count; ++i) {
    GenSpec s;
    s.algorithm = algs[i % 4];
    s.grid_n = 2 + static_cast<int>(i % 6);
    if (s.algorithm == Algorithm::percolation) s.p = 0.6;
    if (s.algorithm == Algorithm::rdfs_percolation) s.p = 0.1;
    s.seed = derive_seed(99, i);
    Maze m = generate(s);
    try {
      out.push_back(solve(m, derive_seed(100, i)));
    } catch (const DegenerateMazeError&) {
    }
  }
  return out;
}

}  // namespace

TEST(Vocab, Sizes) {
  EXPECT_EQ(build_vocab(6).size(), 47u);
  EXPECT_EQ(build_vocab(7).size(), 60u);
  EXPECT_EQ(build_vocab(4).size(), 27u);
}

TEST(Vocab, CanonicalOrder) {
  const Vocabulary v(3);
  EXPECT_EQ(v.token(0), "<ADJLIST_START>");
  EXPECT_EQ(v.token(2), "<-->");
  EXPECT_EQ(v.token(3), ";");
  EXPECT_EQ(v.token(8), "<PATH_START>");
  EXPECT_EQ(v.token(10), "<PAD>");
  EXPECT_EQ(v.token(11), "(0,0)");
  EXPECT_EQ(v.token(12), "(0,1)");
  EXPECT_EQ(v.token(14), "(1,0)");
  EXPECT_EQ(build_vocab(5), build_vocab(5));
}

TEST(Vocab, Bijection) {
  const Vocabulary v(6);
  std::set<std::string> seen;
  for (TokenId i = 0; i < static_cast<TokenId>(v.size()); ++i) {
    EXPECT_EQ(v.id(v.token(i)), i);
    seen.insert(v.token(i));
  }
  EXPECT_EQ(seen.size(), v.size());
  EXPECT_THROW(v.id("(9,9)"), std::invalid_argument);
  EXPECT_THROW(v.coord_id({6, 0}), std::invalid_argument);
}

TEST(TokenKind, Classification) {
  const Vocabulary v(4);
  EXPECT_EQ(std::get<Special>(token_kind(v.id("<PATH_START>"), v)), Special::path_start);
  EXPECT_EQ(std::get<Coord>(token_kind(v.id("(0,0)"), v)), (Coord{0, 0}));
  EXPECT_EQ(std::get<Coord>(token_kind(v.id("(2,3)"), v)), (Coord{2, 3}));
  EXPECT_TRUE(std::holds_alternative<PadToken>(token_kind(v.id("<PAD>"), v)));
  EXPECT_THROW(token_kind(-1, v), std::invalid_argument);
  EXPECT_THROW(token_kind(static_cast<TokenId>(v.size()), v), std::invalid_argument);
}

TEST(Encode, FigureSegments) {
  const Vocabulary v(5);
  const std::string text = to_text(encode(figure_maze(), v, 3), v);
  EXPECT_NE(text.find("<ORIGIN_START> (1,3) <ORIGIN_END> <TARGET_START> (2,3) <TARGET_END>"), std::string::npos);
  EXPECT_NE(text.find("<PATH_START> (1,3) (0,3) (0,2) (1,2)"), std::string::npos);
  EXPECT_EQ(text.substr(text.size() - 16), "(2,3) <PATH_END>");
}

TEST(Encode, AdjacencySectionLength) {
  const Vocabulary v(6);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const SolvedMaze sm = solve(generate_rdfs(5, s), s);
    const auto ids = encode(sm, v, s);
    std::size_t end = 0;
    while (ids[end] != v.special(Special::adjlist_end)) ++end;
    EXPECT_EQ(end + 1, 1 + 4 * sm.maze.edge_count() + 1);
    for (std::size_t i = 4; i <= end; i += 4) EXPECT_EQ(ids[i], v.special(Special::sep));
  }
}

TEST(Encode, ShuffleChangesOrderNotContent) {
  const Vocabulary v(6);
  const SolvedMaze sm = solve(generate_rdfs(6, 4), 4);
  const auto a = encode(sm, v, 1), b = encode(sm, v, 2);
  EXPECT_NE(a, b);
  EXPECT_EQ(decode(a, v), decode(b, v));
  EXPECT_EQ(encode(sm, v, 1), a);
}

TEST(Encode, WithinPairOrderIsShuffled) {
  const Vocabulary v(6);
  const SolvedMaze sm = solve(generate_rdfs(6, 4), 4);
  const auto ids = encode(sm, v, 11);
  std::size_t forward = 0, backward = 0;
  for (std::size_t i = 1; ids[i] != v.special(Special::adjlist_end); i += 4)
    (v.coord_of(ids[i]) < v.coord_of(ids[i + 2]) ? forward : backward) += 1;
  EXPECT_GT(forward, 0u);
  EXPECT_GT(backward, 0u);
}

TEST(Encode, GridTooLargeForVocab) {
  const Vocabulary v(4);
  EXPECT_THROW(encode(solve(generate_rdfs(5, 0), 0), v, 0), std::invalid_argument);
}

TEST(Encode, PromptIsPrefix) {
  const Vocabulary v(7);
  for (const auto& sm : mixed_mazes(40)) {
    const auto full = encode(sm, v, 5);
    const auto prompt = encode_prompt(sm, v, 5);
    ASSERT_LT(prompt.size(), full.size());
    EXPECT_TRUE(std::equal(prompt.begin(), prompt.end(), full.begin()));
    EXPECT_EQ(prompt.back(), v.special(Special::path_start));
  }
}

TEST(Decode, RoundTripMixed) {
  const Vocabulary v(7);
  const auto mazes = mixed_mazes(400);
  ASSERT_GT(mazes.size(), 350u);
  for (std::size_t i = 0; i < mazes.size(); ++i) {
    const auto ids = encode(mazes[i], v, i);
    EXPECT_EQ(decode(ids, v, mazes[i].maze.grid_n()), mazes[i]);
    EXPECT_EQ(from_text(to_text(ids, v), v), ids);
  }
}

TEST(Decode, InfersSmallestGrid) {
  const Vocabulary v(7);
  const SolvedMaze sm = solve(generate_rdfs(4, 2), 2);
  EXPECT_EQ(decode(encode(sm, v, 0), v).maze.grid_n(), 4);
}

TEST(Decode, MissingAdjlistEnd) {
  const Vocabulary v(5);
  auto ids = encode(figure_maze(), v, 0);
  std::size_t at = 0;
  while (ids[at] != v.special(Special::adjlist_end)) ++at;
  ids.erase(ids.begin() + static_cast<std::ptrdiff_t>(at));
  try {
    decode(ids, v);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.position(), at);
  }
}

TEST(Decode, NonAdjacentPair) {
  const Vocabulary v(5);
  const auto ids = from_text(
      "<ADJLIST_START> (0,0) <--> (2,0) ; <ADJLIST_END> <ORIGIN_START> (0,0) <ORIGIN_END> "
      "<TARGET_START> (2,0) <TARGET_END> <PATH_START> (0,0) (2,0) <PATH_END>",
      v);
  try {
    decode(ids, v);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.kind(), ParseErrorKind::non_adjacent_pair);
    EXPECT_EQ(e.position(), 1u);
  }
}

TEST(Decode, Truncated) {
  const Vocabulary v(5);
  auto ids = encode(figure_maze(), v, 0);
  ids.resize(ids.size() / 2);
  try {
    decode(ids, v);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.kind(), ParseErrorKind::truncated);
  }
}

TEST(Decode, CoordinateOutsideDeclaredGrid) {
  const Vocabulary v(6);
  const auto ids = encode(solve(generate_rdfs(5, 1), 1), v, 0);
  try {
    decode(ids, v, 3);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.kind(), ParseErrorKind::coord_out_of_range);
  }
}

TEST(Decode, TrailingTokens) {
  const Vocabulary v(5);
  auto ids = encode(figure_maze(), v, 0);
  ids.push_back(v.coord_id({0, 0}));
  try {
    decode(ids, v);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.kind(), ParseErrorKind::trailing_tokens);
    EXPECT_EQ(e.position(), ids.size() - 1);
  }
}

TEST(Decode, PartialToleratesBrokenPath) {
  const Vocabulary v(5);
  auto ids = encode_prompt(figure_maze(), v, 0);
  ids.push_back(v.coord_id({1, 3}));
  ids.push_back(v.special(Special::sep));
  EXPECT_THROW(decode(ids, v), ParseError);
  const DecodeResult r = decode_with(ids, v, DecodeOptions{std::nullopt, true});
  EXPECT_FALSE(r.path_complete);
  EXPECT_TRUE(r.path_issue.has_value());
  EXPECT_EQ(r.solved.origin, (Coord{1, 3}));
  EXPECT_EQ(r.solved.maze, figure_maze().maze);
}
