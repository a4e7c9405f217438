#include "mazelab/codec.hpp"

#include <algorithm>
#include <array>

#include "mazelab/rng.hpp"

namespace mazelab {

namespace {

constexpr std::array<std::string_view, kSpecialCount> kSpecialNames = {
    tok::kAdjlistStart, tok::kAdjlistEnd,  tok::kConnector, tok::kSep,
    tok::kOriginStart,  tok::kOriginEnd,   tok::kTargetStart, tok::kTargetEnd,
    tok::kPathStart,    tok::kPathEnd,     tok::kPad,
};

}  // namespace

Vocabulary::Vocabulary(int max_grid_n) : max_grid_n_(max_grid_n) {
  if (max_grid_n < 2) throw std::invalid_argument("max_grid_n must be >= 2");
  tokens_.reserve(static_cast<std::size_t>(kSpecialCount + max_grid_n * max_grid_n));
  for (auto name : kSpecialNames) tokens_.emplace_back(name);
  for (int r = 0; r < max_grid_n; ++r) {
    for (int c = 0; c < max_grid_n; ++c) tokens_.push_back(to_string(Coord{r, c}));
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<TokenId>(i));
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::invalid_argument("token id " + std::to_string(id) + " outside vocabulary of size " +
                                std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id(std::string_view token) const {
  if (auto found = find(token)) return *found;
  throw std::invalid_argument("unknown token '" + std::string(token) + "'");
}

TokenId Vocabulary::coord_id(Coord c) const {
  if (c.row < 0 || c.col < 0 || c.row >= max_grid_n_ || c.col >= max_grid_n_) {
    throw std::invalid_argument("coordinate " + to_string(c) + " outside vocabulary grid " +
                                std::to_string(max_grid_n_));
  }
  return kSpecialCount + c.row * max_grid_n_ + c.col;
}

Vocabulary build_vocab(int max_grid_n) { return Vocabulary(max_grid_n); }

TokenKind token_kind(TokenId id, const Vocabulary& vocab) {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) {
    throw std::invalid_argument("token id " + std::to_string(id) + " outside vocabulary");
  }
  if (vocab.is_coord(id)) return vocab.coord_of(id);
  if (id == static_cast<TokenId>(Special::pad)) return PadToken{};
  return static_cast<Special>(id);
}

namespace {

void append_prompt(std::vector<TokenId>& out, const SolvedMaze& solved, const Vocabulary& vocab,
                   std::uint64_t shuffle_seed) {
  if (solved.maze.grid_n() > vocab.max_grid_n()) {
    throw std::invalid_argument("maze grid " + std::to_string(solved.maze.grid_n()) +
                                " exceeds vocabulary grid " + std::to_string(vocab.max_grid_n()));
  }
  auto edges = solved.maze.edges();
  Rng rng(shuffle_seed);
  rng.shuffle(edges.begin(), edges.end());
  out.push_back(vocab.special(Special::adjlist_start));
  for (const auto& e : edges) {
    const bool flip = rng.below(2) == 1;
    out.push_back(vocab.coord_id(flip ? e.b : e.a));
    out.push_back(vocab.special(Special::connector));
    out.push_back(vocab.coord_id(flip ? e.a : e.b));
    out.push_back(vocab.special(Special::sep));
  }
  out.push_back(vocab.special(Special::adjlist_end));
  out.push_back(vocab.special(Special::origin_start));
  out.push_back(vocab.coord_id(solved.origin));
  out.push_back(vocab.special(Special::origin_end));
  out.push_back(vocab.special(Special::target_start));
  out.push_back(vocab.coord_id(solved.target));
  out.push_back(vocab.special(Special::target_end));
  out.push_back(vocab.special(Special::path_start));
}

}  // namespace

std::vector<TokenId> encode_prompt(const SolvedMaze& solved, const Vocabulary& vocab, std::uint64_t shuffle_seed) {
  std::vector<TokenId> out;
  out.reserve(solved.maze.edge_count() * 4 + 9);
  append_prompt(out, solved, vocab, shuffle_seed);
  return out;
}

std::vector<TokenId> encode(const SolvedMaze& solved, const Vocabulary& vocab, std::uint64_t shuffle_seed) {
  std::vector<TokenId> out;
  out.reserve(solved.maze.edge_count() * 4 + solved.path.size() + 10);
  append_prompt(out, solved, vocab, shuffle_seed);
  for (const Coord c : solved.path) out.push_back(vocab.coord_id(c));
  out.push_back(vocab.special(Special::path_end));
  return out;
}

std::string to_text(const std::vector<TokenId>& ids, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out += ' ';
    out += vocab.token(ids[i]);
  }
  return out;
}

std::vector<TokenId> from_text(std::string_view text, const Vocabulary& vocab) {
  std::vector<TokenId> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\n' || text[pos] == '\t')) ++pos;
    if (pos >= text.size()) break;
    const auto end = text.find_first_of(" \n\t", pos);
    const auto word = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
    out.push_back(vocab.id(word));
    pos = end == std::string_view::npos ? text.size() : end;
  }
  return out;
}

ParseError::ParseError(ParseErrorKind kind, std::size_t position, std::string expected, const std::string& detail)
    : std::runtime_error("parse error at token " + std::to_string(position) + ": expected " + expected +
                         (detail.empty() ? "" : " (" + detail + ")")),
      kind_(kind),
      position_(position),
      expected_(std::move(expected)) {}

namespace {

class Parser {
 public:
  Parser(const std::vector<TokenId>& ids, const Vocabulary& vocab) : ids_(ids), vocab_(vocab) {}

  std::size_t pos() const noexcept { return pos_; }
  bool at_end() const noexcept { return pos_ >= ids_.size(); }
  TokenId peek() const { return ids_[pos_]; }

  void expect(Special s) {
    const auto name = std::string(kSpecialNames[static_cast<std::size_t>(s)]);
    if (at_end()) throw ParseError(ParseErrorKind::truncated, pos_, name, "sequence ended");
    if (ids_[pos_] != static_cast<TokenId>(s)) {
      throw ParseError(ParseErrorKind::unexpected_token, pos_, name, "found " + describe(ids_[pos_]));
    }
    ++pos_;
  }

  Coord coord(const std::string& what) {
    if (at_end()) throw ParseError(ParseErrorKind::truncated, pos_, what, "sequence ended");
    const TokenId id = ids_[pos_];
    if (!vocab_.is_coord(id)) {
      throw ParseError(ParseErrorKind::unexpected_token, pos_, what, "found " + describe(id));
    }
    ++pos_;
    return vocab_.coord_of(id);
  }

  std::string describe(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) return "id " + std::to_string(id);
    return "'" + vocab_.token(id) + "'";
  }

 private:
  const std::vector<TokenId>& ids_;
  const Vocabulary& vocab_;
  std::size_t pos_ = 0;
};

struct Header {
  std::vector<std::pair<Edge, std::size_t>> edges;  // with token position
  Coord origin;
  std::size_t origin_pos = 0;
  Coord target;
  std::size_t target_pos = 0;
};

Header parse_header(Parser& p) {
  Header h;
  p.expect(Special::adjlist_start);
  for (;;) {
    if (p.at_end()) throw ParseError(ParseErrorKind::truncated, p.pos(), "coordinate or <ADJLIST_END>", "sequence ended");
    if (p.peek() == static_cast<TokenId>(Special::adjlist_end)) break;
    const std::size_t at = p.pos();
    const Coord a = p.coord("coordinate or <ADJLIST_END>");
    p.expect(Special::connector);
    const Coord b = p.coord("coordinate");
    if (!direction_between(a, b)) {
      throw ParseError(ParseErrorKind::non_adjacent_pair, at, "lattice-adjacent pair",
                       to_string(a) + " <--> " + to_string(b));
    }
    p.expect(Special::sep);
    h.edges.emplace_back(Edge(a, b), at);
  }
  p.expect(Special::adjlist_end);
  p.expect(Special::origin_start);
  h.origin_pos = p.pos();
  h.origin = p.coord("origin coordinate");
  p.expect(Special::origin_end);
  p.expect(Special::target_start);
  h.target_pos = p.pos();
  h.target = p.coord("target coordinate");
  p.expect(Special::target_end);
  return h;
}

}  // namespace

DecodeResult decode_with(const std::vector<TokenId>& ids, const Vocabulary& vocab, const DecodeOptions& options) {
  Parser p(ids, vocab);
  Header h = parse_header(p);

  int grid_n = 2;
  auto cover = [&](Coord c) { grid_n = std::max({grid_n, c.row + 1, c.col + 1}); };
  for (const auto& [e, at] : h.edges) {
    cover(e.a);
    cover(e.b);
  }
  cover(h.origin);
  cover(h.target);

  DecodeResult result;
  std::vector<std::pair<Coord, std::size_t>> path;
  std::optional<ParseError> path_error;
  try {
    p.expect(Special::path_start);
    for (;;) {
      if (p.at_end()) throw ParseError(ParseErrorKind::truncated, p.pos(), "coordinate or <PATH_END>", "sequence ended");
      if (p.peek() == static_cast<TokenId>(Special::path_end)) break;
      const std::size_t at = p.pos();
      path.emplace_back(p.coord("coordinate or <PATH_END>"), at);
    }
    p.expect(Special::path_end);
    if (!p.at_end()) {
      throw ParseError(ParseErrorKind::trailing_tokens, p.pos(), "end of sequence", "found " + p.describe(p.peek()));
    }
  } catch (const ParseError& e) {
    if (!options.partial) throw;
    path_error = e;
  }
  for (const auto& [c, at] : path) {
    if (!options.partial) cover(c);
  }

  if (options.grid_n) {
    const int given = *options.grid_n;
    auto check = [&](Coord c, std::size_t at) {
      if (c.row >= given || c.col >= given) {
        throw ParseError(ParseErrorKind::coord_out_of_range, at, "coordinate inside " + std::to_string(given) + "x" +
                         std::to_string(given) + " grid", to_string(c));
      }
    };
    for (const auto& [e, at] : h.edges) {
      check(e.a, at);
      check(e.b, at);
    }
    check(h.origin, h.origin_pos);
    check(h.target, h.target_pos);
    if (!options.partial) {
      for (const auto& [c, at] : path) check(c, at);
    }
    grid_n = given;
  }

  Maze maze(grid_n);
  for (const auto& [e, at] : h.edges) maze.connect(e.a, e.b);
  result.solved.maze = std::move(maze);
  result.solved.origin = h.origin;
  result.solved.target = h.target;

  for (const auto& [c, at] : path) result.solved.path.push_back(c);
  if (path_error) {
    result.path_issue = path_error->what();
    return result;
  }

  // Path must start at origin, end at target and follow edges.
  const auto& sp = result.solved.path;
  std::optional<std::string> issue;
  std::size_t issue_pos = 0;
  if (sp.empty()) {
    issue = "empty path";
  } else if (sp.front() != h.origin) {
    issue = "path does not start at origin";
    issue_pos = path.front().second;
  } else if (sp.back() != h.target) {
    issue = "path does not end at target";
    issue_pos = path.back().second;
  } else {
    for (std::size_t i = 1; i < sp.size(); ++i) {
      if (!result.solved.maze.connected(sp[i - 1], sp[i])) {
        issue = "step " + to_string(sp[i - 1]) + " -> " + to_string(sp[i]) + " is not an edge";
        issue_pos = path[i].second;
        break;
      }
    }
  }
  if (issue) {
    if (!options.partial) throw ParseError(ParseErrorKind::inconsistent_path, issue_pos, "valid path", *issue);
    result.path_issue = issue;
    return result;
  }
  result.path_complete = true;
  return result;
}

SolvedMaze decode(const std::vector<TokenId>& ids, const Vocabulary& vocab, std::optional<int> grid_n) {
  return decode_with(ids, vocab, DecodeOptions{grid_n, false}).solved;
}

}  // namespace mazelab
