#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "mazelab/maze.hpp"

namespace mazelab {

using TokenId = std::int32_t;

namespace tok {
inline constexpr std::string_view kAdjlistStart = "<ADJLIST_START>";
inline constexpr std::string_view kAdjlistEnd = "<ADJLIST_END>";
inline constexpr std::string_view kConnector = "<-->";
inline constexpr std::string_view kSep = ";";
inline constexpr std::string_view kOriginStart = "<ORIGIN_START>";
inline constexpr std::string_view kOriginEnd = "<ORIGIN_END>";
inline constexpr std::string_view kTargetStart = "<TARGET_START>";
inline constexpr std::string_view kTargetEnd = "<TARGET_END>";
inline constexpr std::string_view kPathStart = "<PATH_START>";
inline constexpr std::string_view kPathEnd = "<PATH_END>";
inline constexpr std::string_view kPad = "<PAD>";
}  // namespace tok

// Special tokens take ids 0..10 in this order; coordinates follow row-major.
enum class Special : TokenId {
  adjlist_start = 0,
  adjlist_end,
  connector,
  sep,
  origin_start,
  origin_end,
  target_start,
  target_end,
  path_start,
  path_end,
  pad,
};
inline constexpr TokenId kSpecialCount = 11;

class Vocabulary {
 public:
  explicit Vocabulary(int max_grid_n);

  int max_grid_n() const noexcept { return max_grid_n_; }
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  const std::string& token(TokenId id) const;
  TokenId id(std::string_view token) const;  // throws on unknown token
  std::optional<TokenId> find(std::string_view token) const;

  TokenId special(Special s) const noexcept { return static_cast<TokenId>(s); }
  TokenId coord_id(Coord c) const;
  bool is_coord(TokenId id) const noexcept {
    return id >= kSpecialCount && static_cast<std::size_t>(id) < tokens_.size();
  }
  // Precondition: is_coord(id).
  Coord coord_of(TokenId id) const noexcept {
    const int k = id - kSpecialCount;
    return {k / max_grid_n_, k % max_grid_n_};
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  int max_grid_n_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

Vocabulary build_vocab(int max_grid_n);

struct PadToken {};
using TokenKind = std::variant<Coord, Special, PadToken>;

// Coordinate, special (non-pad) or pad. Throws on out-of-range ids.
TokenKind token_kind(TokenId id, const Vocabulary& vocab);

// --- encoding --------------------------------------------------------------

std::vector<TokenId> encode(const SolvedMaze& solved, const Vocabulary& vocab, std::uint64_t shuffle_seed);

// Everything up to and including <PATH_START>.
std::vector<TokenId> encode_prompt(const SolvedMaze& solved, const Vocabulary& vocab,
                                   std::uint64_t shuffle_seed);

std::string to_text(const std::vector<TokenId>& ids, const Vocabulary& vocab);
std::vector<TokenId> from_text(std::string_view text, const Vocabulary& vocab);

// --- decoding --------------------------------------------------------------

enum class ParseErrorKind {
  unexpected_token,
  truncated,
  non_adjacent_pair,
  coord_out_of_range,
  trailing_tokens,
  inconsistent_path,
};

class ParseError : public std::runtime_error {
 public:
  ParseError(ParseErrorKind kind, std::size_t position, std::string expected, const std::string& detail);
  ParseErrorKind kind() const noexcept { return kind_; }
  std::size_t position() const noexcept { return position_; }
  const std::string& expected() const noexcept { return expected_; }

 private:
  ParseErrorKind kind_;
  std::size_t position_;
  std::string expected_;
};

struct DecodeOptions {
  std::optional<int> grid_n;  // inferred from coordinates when absent
  bool partial = false;       // tolerate missing or malformed path section
};

struct DecodeResult {
  SolvedMaze solved;  // path may be empty or invalid in partial mode
  bool path_complete = false;
  std::optional<std::string> path_issue;
};

// Strict parser for the full grammar. Throws ParseError with the offending position.
SolvedMaze decode(const std::vector<TokenId>& ids, const Vocabulary& vocab, std::optional<int> grid_n = std::nullopt);
DecodeResult decode_with(const std::vector<TokenId>& ids, const Vocabulary& vocab, const DecodeOptions& options);

}  // namespace mazelab
