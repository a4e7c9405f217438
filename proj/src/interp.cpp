#include "mazelab/interp.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include <Eigen/Dense>

#include "mazelab/rng.hpp"
#include "mazelab/store.hpp"
#include "mazelab/train.hpp"

namespace mazelab {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<BoxStats> boxes_by_key(const std::map<int, std::vector<double>>& groups) {
  std::vector<BoxStats> out;
  if (groups.empty()) return out;
  out.resize(static_cast<std::size_t>(groups.rbegin()->first) + 1);
  for (const auto& [k, xs] : groups) out[static_cast<std::size_t>(k)] = box_stats(xs);
  return out;
}

std::span<const double> embedding_row(const AnalysisModel& model, TokenId id) {
  return model.weights.W_E.row(static_cast<std::size_t>(id));
}

void require_vocab(const AnalysisModel& model, const Vocabulary& vocab) {
  if (static_cast<std::size_t>(model.config.d_vocab) != vocab.size()) {
    throw std::invalid_argument("model d_vocab " + std::to_string(model.config.d_vocab) + " does not match vocabulary of " +
                                std::to_string(vocab.size()) + " tokens");
  }
}

std::size_t find_token(std::span<const TokenId> tokens, TokenId id) {
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] == id) return i;
  return tokens.size();
}

void softmax_rows(const Tensor<double>& logits, Tensor<double>& out) {
  out = Tensor<double>(logits.shape());
  const std::size_t v = logits.cols();
  for (std::size_t r = 0; r < logits.rows(); ++r) Tape<double>::softmax_row(logits.data() + r * v, out.data() + r * v, v);
}

}  // namespace

// --- embedding geometry ------------------------------------------------------

EmbeddingStats embedding_distance_stats(const AnalysisModel& model, const Vocabulary& vocab, int grid_n, int cutoff) {
  require_vocab(model, vocab);
  EmbeddingStats st;
  st.grid_n = grid_n;
  st.cutoff = cutoff;
  std::vector<Coord> cells;
  for (int r = 0; r < grid_n; ++r)
    for (int c = 0; c < grid_n; ++c) cells.push_back({r, c});
  std::map<int, std::vector<double>> groups;
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto ea = embedding_row(model, vocab.coord_id(cells[i]));
    for (std::size_t j = i + 1; j < cells.size(); ++j) {
      const auto eb = embedding_row(model, vocab.coord_id(cells[j]));
      double dist = 0;
      for (std::size_t k = 0; k < ea.size(); ++k) dist += std::abs(ea[k] - eb[k]);
      const int cd = manhattan(cells[i], cells[j]);
      st.pairs.push_back({cells[i], cells[j], cd, dist});
      groups[cd].push_back(dist);
      if (cd <= cutoff) {
        xs.push_back(cd);
        ys.push_back(dist);
      }
    }
  }
  st.by_distance = boxes_by_key(groups);
  st.spearman = spearman(xs, ys);
  return st;
}

std::vector<double> anchor_grid(const AnalysisModel& model, const Vocabulary& vocab, int grid_n, Coord anchor) {
  require_vocab(model, vocab);
  const auto ea = embedding_row(model, vocab.coord_id(anchor));
  std::vector<double> out;
  for (int r = 0; r < grid_n; ++r) {
    for (int c = 0; c < grid_n; ++c) {
      const auto eb = embedding_row(model, vocab.coord_id({r, c}));
      double dist = 0;
      for (std::size_t k = 0; k < ea.size(); ++k) dist += std::abs(ea[k] - eb[k]);
      out.push_back(dist);
    }
  }
  return out;
}

// --- direct logit attribution ---------------------------------------------------

double DlaBreakdown::component_sum() const {
  return embed + std::accumulate(heads.begin(), heads.end(), 0.0) + std::accumulate(mlps.begin(), mlps.end(), 0.0);
}

std::vector<double> answer_direction(const AnalysisModel& model, TokenId answer) {
  const auto& E = model.weights.W_E;
  const std::size_t v = E.rows(), d = E.cols();
  if (answer < 0 || static_cast<std::size_t>(answer) >= v) throw std::invalid_argument("answer token out of range");
  std::vector<double> sum(d, 0.0);
  for (std::size_t t = 0; t < v; ++t)
    for (std::size_t k = 0; k < d; ++k) sum[k] += E.at(t, k);
  std::vector<double> dir(d);
  const auto a = static_cast<std::size_t>(answer);
  for (std::size_t k = 0; k < d; ++k) dir[k] = E.at(a, k) - (sum[k] - E.at(a, k)) / static_cast<double>(v - 1);
  return dir;
}

DlaBreakdown dla_breakdown(const AnalysisModel& model, std::span<const TokenId> prompt, TokenId answer) {
  ActivationCache<double> cache;
  forward(model, prompt, &cache);
  const std::size_t pos = prompt.size() - 1;
  const std::size_t d = static_cast<std::size_t>(model.config.d_model);
  const auto dir = answer_direction(model, answer);
  auto project = [&](const double* v) {
    const Tensor<double> row({1, d}, std::vector<double>(v, v + d));
    const Tensor<double> scaled = apply_final_ln_scale(cache, row, pos);
    double s = 0;
    for (std::size_t k = 0; k < d; ++k) s += scaled[k] * dir[k];
    return s;
  };
  const std::size_t layers = cache.n_layers(), heads = cache.n_heads(), len = prompt.size();
  DlaBreakdown out;
  out.embed = project(cache.resid[0].data() + pos * d);
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t h = 0; h < heads; ++h) out.heads.push_back(project(cache.head_out[l].data() + (h * len + pos) * d));
    out.mlps.push_back(project(cache.mlp_out[l].data() + pos * d));
  }
  out.total = project(cache.resid[layers].data() + pos * d);
  return out;
}

DlaMatrix dla(const AnalysisModel& model, const Dataset& ds, const Vocabulary& vocab, TaskId task, std::uint64_t seed) {
  require_vocab(model, vocab);
  DlaMatrix m;
  m.task = task;
  m.n_layers = static_cast<std::size_t>(model.config.n_layers);
  m.n_heads = static_cast<std::size_t>(model.config.n_heads());
  m.values.assign(m.n_layers * m.n_heads, 0.0);
  for (const auto& rec : ds.records) {
    if (rec.solved.path.size() < task_min_path_length(task)) continue;
    const TaskPrompt tp = task_prompt(rec, vocab, task, seed);
    const DlaBreakdown b = dla_breakdown(model, tp.prompt, tp.answer);
    for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] += b.heads[i];
    ++m.samples;
  }
  if (m.samples == 0) throw std::invalid_argument("dla: no record admits task " + to_string(task));
  for (double& v : m.values) v /= static_cast<double>(m.samples);
  return m;
}

// --- attention ----------------------------------------------------------------

std::optional<Coord> current_cell(std::span<const TokenId> prompt, const Vocabulary& vocab) {
  const TokenId ps = vocab.special(Special::path_start);
  std::optional<Coord> cur;
  bool in_path = false;
  for (const TokenId t : prompt) {
    if (t == ps) {
      in_path = true;
      cur.reset();
    } else if (in_path && vocab.is_coord(t)) {
      cur = vocab.coord_of(t);
    }
  }
  return cur;
}

std::vector<AttentionSample> attention_samples(std::span<const double> weights, std::span<const TokenId> tokens,
                                               const Maze& maze, Coord current, const Vocabulary& vocab,
                                               std::size_t record) {
  if (weights.size() != tokens.size()) throw std::invalid_argument("attention_samples: weights and tokens differ in length");
  const auto dist = bfs_distances(maze, current);
  std::vector<AttentionSample> out;
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    if (tokens[j] < 0 || !vocab.is_coord(tokens[j])) continue;
    const Coord c = vocab.coord_of(tokens[j]);
    AttentionSample s;
    s.record = record;
    s.key_position = j;
    s.manhattan = manhattan(c, current);
    s.path_distance = maze.in_bounds(c) ? dist[maze.index(c)] : -1;
    s.weight = weights[j];
    out.push_back(s);
  }
  return out;
}

AttentionByDistance attention_by_distance(const AnalysisModel& model, const Dataset& ds, const Vocabulary& vocab,
                                          TaskId task, std::size_t layer, std::size_t head, std::uint64_t seed) {
  require_vocab(model, vocab);
  if (layer >= static_cast<std::size_t>(model.config.n_layers) || head >= static_cast<std::size_t>(model.config.n_heads())) {
    throw std::invalid_argument("attention_by_distance: head (" + std::to_string(layer) + "," + std::to_string(head) +
                                ") does not exist");
  }
  AttentionByDistance out;
  out.layer = layer;
  out.head = head;
  out.task = task;
  std::map<int, std::vector<double>> by_m, by_p;
  std::map<int, double> mass;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& rec = ds.records[i];
    if (rec.solved.path.size() < task_min_path_length(task)) {
      ++out.skipped;
      continue;
    }
    const TaskPrompt tp = task_prompt(rec, vocab, task, seed);
    const auto cur = current_cell(tp.prompt, vocab);
    if (!cur) {
      ++out.skipped;
      continue;
    }
    ActivationCache<double> cache;
    forward(model, tp.prompt, &cache);
    const std::size_t len = tp.prompt.size();
    const double* row = cache.attn[layer].data() + (head * len + (len - 1)) * len;
    const auto samples = attention_samples(std::span<const double>(row, len), tp.prompt, rec.solved.maze, *cur, vocab, i);
    for (const auto& s : samples) {
      by_m[s.manhattan].push_back(s.weight);
      if (s.path_distance >= 0) {
        by_p[s.path_distance].push_back(s.weight);
        mass[s.path_distance] += s.weight;
      }
    }
    out.samples.insert(out.samples.end(), samples.begin(), samples.end());
    ++out.prompts;
  }
  out.by_manhattan = boxes_by_key(by_m);
  out.by_path_distance = boxes_by_key(by_p);
  if (!mass.empty()) {
    out.mass_by_path_distance.assign(static_cast<std::size_t>(mass.rbegin()->first) + 1, 0.0);
    for (const auto& [k, v] : mass) out.mass_by_path_distance[static_cast<std::size_t>(k)] = v / static_cast<double>(out.prompts);
  }
  return out;
}

double adjacency_mass(std::span<const AttentionSample> samples) {
  std::map<std::size_t, double> per_record;
  for (const auto& s : samples) {
    auto& m = per_record[s.record];
    if (s.path_distance == 1) m += s.weight;
  }
  if (per_record.empty()) return 0.0;
  double total = 0;
  for (const auto& [r, m] : per_record) total += m;
  return total / static_cast<double>(per_record.size());
}

std::vector<HeadScore> adjacency_head_score(const AnalysisModel& model, const Dataset& ds, const Vocabulary& vocab,
                                            TaskId task, std::uint64_t seed) {
  require_vocab(model, vocab);
  const auto layers = static_cast<std::size_t>(model.config.n_layers);
  const auto heads = static_cast<std::size_t>(model.config.n_heads());
  std::vector<double> sums(layers * heads, 0.0);
  std::size_t prompts = 0;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& rec = ds.records[i];
    if (rec.solved.path.size() < task_min_path_length(task)) continue;
    const TaskPrompt tp = task_prompt(rec, vocab, task, seed);
    const auto cur = current_cell(tp.prompt, vocab);
    if (!cur) continue;
    ActivationCache<double> cache;
    forward(model, tp.prompt, &cache);
    const std::size_t len = tp.prompt.size();
    for (std::size_t l = 0; l < layers; ++l) {
      for (std::size_t h = 0; h < heads; ++h) {
        const double* row = cache.attn[l].data() + (h * len + (len - 1)) * len;
        const auto samples = attention_samples(std::span<const double>(row, len), tp.prompt, rec.solved.maze, *cur, vocab, i);
        sums[l * heads + h] += adjacency_mass(samples);
      }
    }
    ++prompts;
  }
  std::vector<HeadScore> out;
  for (std::size_t l = 0; l < layers; ++l)
    for (std::size_t h = 0; h < heads; ++h)
      out.push_back({l, h, prompts ? sums[l * heads + h] / static_cast<double>(prompts) : 0.0});
  std::stable_sort(out.begin(), out.end(), [](const HeadScore& a, const HeadScore& b) { return a.score > b.score; });
  return out;
}

std::vector<double> spatial_attention(const AnalysisModel& model, std::span<const TokenId> prompt, const Vocabulary& vocab,
                                      int grid_n, std::size_t layer, std::size_t head) {
  ActivationCache<double> cache;
  forward(model, prompt, &cache);
  if (layer >= cache.n_layers() || head >= cache.n_heads()) throw std::invalid_argument("spatial_attention: no such head");
  const std::size_t len = prompt.size();
  const double* row = cache.attn[layer].data() + (head * len + (len - 1)) * len;
  std::vector<double> out(static_cast<std::size_t>(grid_n * grid_n), 0.0);
  for (std::size_t j = 0; j < len; ++j) {
    if (!vocab.is_coord(prompt[j])) continue;
    const Coord c = vocab.coord_of(prompt[j]);
    if (c.row < grid_n && c.col < grid_n) out[static_cast<std::size_t>(c.row * grid_n + c.col)] += row[j];
  }
  return out;
}

// --- probes -------------------------------------------------------------------

ResidualSet collect_residuals(const AnalysisModel& model, const Dataset& ds, const Vocabulary& vocab) {
  require_vocab(model, vocab);
  ResidualSet rs;
  rs.d_model = static_cast<std::size_t>(model.config.d_model);
  const TokenId ps = vocab.special(Special::path_start);
  const auto n_snap = static_cast<std::size_t>(model.config.n_layers) + 1;
  std::vector<std::vector<double>> rows(n_snap);
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& rec = ds.records[i];
    const std::size_t at = find_token(rec.tokens, ps);
    if (at == rec.tokens.size()) {
      ++rs.skipped;
      continue;
    }
    if (rs.grid_n == 0) rs.grid_n = rec.solved.maze.grid_n();
    if (rec.solved.maze.grid_n() != rs.grid_n) {
      throw std::invalid_argument("collect_residuals: mixed grid sizes (" + std::to_string(rs.grid_n) + " and " +
                                  std::to_string(rec.solved.maze.grid_n()) + ")");
    }
    ActivationCache<double> cache;
    forward(model, std::span<const TokenId>(rec.tokens.data(), at + 1), &cache);
    for (std::size_t l = 0; l < n_snap; ++l) {
      const auto r = cache.resid[l].row(at);
      rows[l].insert(rows[l].end(), r.begin(), r.end());
    }
    rs.labels.push_back(wall_tensor(rec.solved.maze));
    const WallTensor& walls = rs.labels.back();
    std::vector<std::uint8_t> bits(walls.size());
    for (std::size_t k = 0; k < walls.size(); ++k) bits[k] = walls[k] ? 1 : 0;
    rs.maze_keys.push_back(fnv1a64(bits.data(), bits.size()));
    rs.record_index.push_back(i);
  }
  for (auto& r : rows) rs.layers.emplace_back(Shape{rs.labels.size(), rs.d_model}, std::move(r));
  return rs;
}

void shuffle_labels(ResidualSet& rs, std::uint64_t seed) {
  Rng rng(seed);
  rng.shuffle(rs.labels.begin(), rs.labels.end());
}

Split split_by_maze(const ResidualSet& rs, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw std::invalid_argument("train fraction must lie in (0, 1)");
  const std::set<std::uint64_t> uniq(rs.maze_keys.begin(), rs.maze_keys.end());
  std::vector<std::uint64_t> seeds(uniq.begin(), uniq.end());
  Rng rng(seed);
  rng.shuffle(seeds.begin(), seeds.end());
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(seeds.size())));
  const std::set<std::uint64_t> train_seeds(seeds.begin(), seeds.begin() + static_cast<std::ptrdiff_t>(n_train));
  Split s;
  for (std::size_t i = 0; i < rs.size(); ++i) (train_seeds.count(rs.maze_keys[i]) ? s.train : s.validation).push_back(i);
  return s;
}

ProbeSet train_probes(const ResidualSet& rs, std::span<const std::size_t> train_idx, double reg) {
  if (train_idx.empty()) throw std::invalid_argument("train_probes: empty training set");
  if (reg < 0) throw std::invalid_argument("train_probes: negative regularisation");
  ProbeSet ps;
  ps.n_layers = rs.layers.size() - 1;
  ps.grid_n = rs.grid_n;
  ps.d_model = rs.d_model;
  ps.reg = reg;
  const std::size_t d = rs.d_model, n = train_idx.size();
  const std::size_t P = static_cast<std::size_t>(rs.grid_n * rs.grid_n) * 4;
  RowMat Y(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(P));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < P; ++p) Y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p)) = rs.labels[train_idx[i]][p] ? 1.0 : 0.0;
  ps.constant_label.resize(P);
  for (std::size_t p = 0; p < P; ++p) {
    const auto col = Y.col(static_cast<Eigen::Index>(p));
    ps.constant_label[p] = (col.minCoeff() == col.maxCoeff()) ? 1 : 0;
  }
  for (std::size_t l = 0; l < ps.n_layers; ++l) {
    RowMat X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d + 1));
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = rs.layers[l].row(train_idx[i]);
      for (std::size_t k = 0; k < d; ++k) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = r[k];
      X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = 1.0;
    }
    Eigen::MatrixXd A = X.transpose() * X;
    for (std::size_t k = 0; k < d; ++k) A(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)) += reg * static_cast<double>(n);
    const Eigen::MatrixXd W = A.ldlt().solve(X.transpose() * Y);
    Tensor<double> w({d + 1, P});
    Eigen::Map<RowMat>(w.data(), static_cast<Eigen::Index>(d + 1), static_cast<Eigen::Index>(P)) = W;
    ps.weights.push_back(std::move(w));
  }
  return ps;
}

std::vector<double> probe_scores(const ProbeSet& probes, std::size_t layer, std::span<const double> residual) {
  if (layer >= probes.n_layers) throw std::invalid_argument("probe layer " + std::to_string(layer) + " out of range");
  if (residual.size() != probes.d_model) throw std::invalid_argument("probe residual has the wrong width");
  const auto& w = probes.weights[layer];
  const std::size_t P = w.cols(), d = probes.d_model;
  std::vector<double> out(w.row(d).begin(), w.row(d).end());
  for (std::size_t k = 0; k < d; ++k) {
    const double x = residual[k];
    const double* row = w.data() + k * P;
    for (std::size_t p = 0; p < P; ++p) out[p] += x * row[p];
  }
  return out;
}

bool is_boundary(int grid_n, Coord cell, Dir d) {
  switch (d) {
    case Dir::N: return cell.row == 0;
    case Dir::S: return cell.row == grid_n - 1;
    case Dir::E: return cell.col == grid_n - 1;
    case Dir::W: return cell.col == 0;
  }
  return false;
}

ProbeAccuracy probe_accuracy(const ProbeSet& probes, const ResidualSet& rs, std::span<const std::size_t> idx) {
  if (idx.empty()) throw std::invalid_argument("probe_accuracy: empty evaluation set");
  ProbeAccuracy acc;
  acc.samples = idx.size();
  const int m = probes.grid_n;
  const std::size_t P = static_cast<std::size_t>(m * m) * 4;
  for (std::size_t l = 0; l < probes.n_layers; ++l) {
    std::vector<std::size_t> hits(P, 0);
    for (const std::size_t i : idx) {
      const auto scores = probe_scores(probes, l, rs.layers[l].row(i));
      for (std::size_t p = 0; p < P; ++p) hits[p] += ((scores[p] > ProbeSet::threshold) == rs.labels[i][p]) ? 1 : 0;
    }
    std::vector<double> per(P);
    std::vector<double> dir_sum(4, 0.0);
    double bsum = 0, isum = 0;
    std::size_t bn = 0, in = 0;
    for (std::size_t p = 0; p < P; ++p) {
      per[p] = static_cast<double>(hits[p]) / static_cast<double>(idx.size());
      dir_sum[p % 4] += per[p];
      const std::size_t cell = p / 4;
      const Coord c{static_cast<int>(cell) / m, static_cast<int>(cell) % m};
      if (is_boundary(m, c, static_cast<Dir>(p % 4))) {
        bsum += per[p];
        ++bn;
      } else {
        isum += per[p];
        ++in;
      }
    }
    for (double& v : dir_sum) v /= static_cast<double>(m * m);
    acc.per_layer.push_back(std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(P));
    acc.per_probe.push_back(std::move(per));
    acc.per_direction.push_back(std::move(dir_sum));
    acc.boundary.push_back(bn ? bsum / static_cast<double>(bn) : 0.0);
    acc.interior.push_back(in ? isum / static_cast<double>(in) : 0.0);
  }
  for (std::size_t l = 1; l < acc.per_layer.size(); ++l)
    if (acc.per_layer[l] > acc.per_layer[acc.best_layer]) acc.best_layer = l;
  return acc;
}

double majority_rate(const ResidualSet& rs, std::span<const std::size_t> train_idx, std::span<const std::size_t> eval_idx) {
  if (train_idx.empty() || eval_idx.empty()) throw std::invalid_argument("majority_rate: empty index set");
  const std::size_t P = static_cast<std::size_t>(rs.grid_n * rs.grid_n) * 4;
  double total = 0;
  for (std::size_t p = 0; p < P; ++p) {
    std::size_t ones = 0;
    for (const std::size_t i : train_idx) ones += rs.labels[i][p] ? 1 : 0;
    const bool majority = 2 * ones >= train_idx.size();
    std::size_t hits = 0;
    for (const std::size_t i : eval_idx) hits += (rs.labels[i][p] == majority) ? 1 : 0;
    total += static_cast<double>(hits) / static_cast<double>(eval_idx.size());
  }
  return total / static_cast<double>(P);
}

DecodedWalls decode_maze_from_probes(const ProbeSet& probes, std::span<const double> residual, std::size_t layer,
                                     const WallTensor& truth) {
  if (truth.grid_n() != probes.grid_n) throw std::invalid_argument("decode: ground truth grid differs from probes");
  const auto scores = probe_scores(probes, layer, residual);
  DecodedWalls out;
  out.predicted = WallTensor(probes.grid_n);
  for (int r = 0; r < probes.grid_n; ++r) {
    for (int c = 0; c < probes.grid_n; ++c) {
      for (const Dir d : kDirs) {
        const std::size_t p = truth.flat(r, c, d);
        const bool pred = scores[p] > ProbeSet::threshold;
        const bool wall = truth.at(r, c, d);
        out.predicted.set(r, c, d, pred);
        if (pred && wall) {
          ++out.correct;
        } else if (!pred && wall) {
          ++out.omitted;
          out.omitted_walls.push_back({{r, c}, d});
        } else if (pred && !wall) {
          ++out.added;
          out.added_walls.push_back({{r, c}, d});
        }
      }
    }
  }
  return out;
}

// --- tuned lens ---------------------------------------------------------------

LensTranslators identity_lens(const ModelConfig& cfg) {
  LensTranslators lens;
  lens.n_layers = static_cast<std::size_t>(cfg.n_layers);
  lens.d_model = static_cast<std::size_t>(cfg.d_model);
  const std::size_t d = lens.d_model;
  for (std::size_t l = 0; l <= lens.n_layers; ++l) {
    Tensor<double> A({d, d});
    for (std::size_t k = 0; k < d; ++k) A.at(k, k) = 1.0;
    lens.A.push_back(std::move(A));
    lens.b.emplace_back(Shape{d});
  }
  lens.initial_kl.assign(lens.n_layers + 1, 0.0);
  lens.final_kl.assign(lens.n_layers + 1, 0.0);
  lens.diverged.assign(lens.n_layers + 1, 0);
  return lens;
}

namespace {

// Lens logits for rows x[n, d]: unembed(final_ln(x A + b)).
Tensor<double> lens_logits(const AnalysisModel& model, const Tensor<double>& A, const Tensor<double>& b,
                           const Tensor<double>& x) {
  const auto& w = model.weights;
  const std::size_t n = x.rows(), d = x.cols(), v = w.W_U.cols();
  Eigen::Map<const RowMat> X(x.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  Eigen::Map<const RowMat> Am(A.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  RowMat Y = X * Am;
  for (std::size_t r = 0; r < n; ++r) {
    double mu = 0;
    for (std::size_t k = 0; k < d; ++k) {
      Y(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) += b[k];
      mu += Y(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k));
    }
    mu /= static_cast<double>(d);
    double var = 0;
    for (std::size_t k = 0; k < d; ++k) {
      const double c = Y(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) - mu;
      var += c * c;
    }
    const double sd = std::sqrt(var / static_cast<double>(d) + 1e-5);
    for (std::size_t k = 0; k < d; ++k) {
      auto& y = Y(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k));
      y = (y - mu) / sd * w.lnf_w[k] + w.lnf_b[k];
    }
  }
  Eigen::Map<const RowMat> U(w.W_U.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(v));
  Tensor<double> logits({n, v});
  Eigen::Map<RowMat> L(logits.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(v));
  L.noalias() = Y * U;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < v; ++j) logits[r * v + j] += w.b_U[j];
  return logits;
}

double mean_kl(const Tensor<double>& p, const Tensor<double>& q) {
  double total = 0;
  for (std::size_t i = 0; i < p.numel(); ++i)
    if (p[i] > 0) total += p[i] * (std::log(p[i]) - std::log(std::max(q[i], 1e-300)));
  return total / static_cast<double>(std::max<std::size_t>(p.rows(), 1));
}

}  // namespace

Tensor<double> lens_distribution(const AnalysisModel& model, const LensTranslators& lens,
                                 const ActivationCache<double>& cache, std::size_t layer) {
  if (layer >= lens.A.size() || layer >= cache.resid.size()) throw std::invalid_argument("lens layer out of range");
  Tensor<double> probs;
  softmax_rows(lens_logits(model, lens.A[layer], lens.b[layer], cache.resid[layer]), probs);
  return probs;
}

double lens_kl(const AnalysisModel& model, const LensTranslators& lens, const std::vector<std::vector<TokenId>>& seqs,
               std::size_t layer) {
  double total = 0;
  std::size_t rows = 0;
  for (const auto& s : seqs) {
    ActivationCache<double> cache;
    const Tensor<double> logits = forward(model, s, &cache);
    Tensor<double> p;
    softmax_rows(logits, p);
    const Tensor<double> q = lens_distribution(model, lens, cache, layer);
    total += mean_kl(p, q) * static_cast<double>(p.rows());
    rows += p.rows();
  }
  return rows ? total / static_cast<double>(rows) : 0.0;
}

LensTranslators train_tuned_lens(const AnalysisModel& model, const Dataset& ds, const LensConfig& cfg) {
  LensTranslators lens = identity_lens(model.config);
  const std::size_t d = lens.d_model, L = lens.n_layers;
  const std::size_t v = static_cast<std::size_t>(model.config.d_vocab);
  std::vector<std::vector<double>> resid(L + 1);
  std::vector<double> probs;
  std::size_t n = 0;
  for (const auto& rec : ds.records) {
    if (n >= cfg.max_positions) break;
    const std::size_t len = std::min(rec.tokens.size() - 1, cfg.max_positions - n);
    ActivationCache<double> cache;
    const Tensor<double> logits = forward(model, std::span<const TokenId>(rec.tokens.data(), rec.tokens.size() - 1), &cache);
    Tensor<double> p;
    softmax_rows(logits, p);
    for (std::size_t l = 0; l <= L; ++l) resid[l].insert(resid[l].end(), cache.resid[l].data(), cache.resid[l].data() + len * d);
    probs.insert(probs.end(), p.data(), p.data() + len * v);
    n += len;
  }
  if (n == 0) throw std::invalid_argument("train_tuned_lens: no positions");
  std::vector<Tensor<double>> R;
  for (auto& r : resid) R.emplace_back(Shape{n, d}, std::move(r));
  const Tensor<double> P({n, v}, std::move(probs));

  const auto& w = model.weights;
  for (std::size_t l = 0; l <= L; ++l) {
    Tensor<double>& A = lens.A[l];
    Tensor<double>& b = lens.b[l];
    auto kl_now = [&] {
      Tensor<double> q;
      softmax_rows(lens_logits(model, A, b, R[l]), q);
      return mean_kl(P, q);
    };
    lens.initial_kl[l] = kl_now();
    AdamWConfig oc;
    oc.lr = cfg.lr;
    oc.weight_decay = 0.0;
    oc.on_non_finite = NonFinitePolicy::fail;
    std::vector<const Tensor<double>*> cptrs{&A, &b};
    AdamWState<double> state(oc, cptrs);
    Tensor<double> best_A = A, best_b = b;
    double best = std::numeric_limits<double>::infinity();
    for (int step = 0; step <= cfg.steps; ++step) {
      Tape<double> tape;
      const auto x = tape.parameter(R[l], false);
      const auto a = tape.parameter(A);
      const auto bb = tape.parameter(b);
      const auto y = tape.add_bias(tape.matmul(x, a), bb);
      typename Tape<double>::Var loss;
      if (cfg.mse) {
        loss = tape.mean_squared_error(y, R[L]);
      } else {
        const auto f = tape.layer_norm(y, tape.parameter(w.lnf_w, false), tape.parameter(w.lnf_b, false));
        const auto logits = tape.add_bias(tape.matmul(f, tape.parameter(w.W_U, false)), tape.parameter(w.b_U, false));
        loss = tape.soft_cross_entropy(logits, P);
      }
      const double value = tape.value(loss)[0];
      if (!std::isfinite(value)) {
        lens.diverged[l] = 1;
        break;
      }
      if (value < best) {
        best = value;
        best_A = A;
        best_b = b;
      }
      if (step == cfg.steps) break;
      tape.backward(loss);
      std::vector<Tensor<double>> grads;
      grads.push_back(tape.grad(a) ? *tape.grad(a) : Tensor<double>(A.shape()));
      grads.push_back(tape.grad(bb) ? *tape.grad(bb) : Tensor<double>(b.shape()));
      std::vector<Tensor<double>*> ptrs{&A, &b};
      try {
        adamw_step<double, double>(ptrs, grads, state);
      } catch (const NonFiniteError&) {
        lens.diverged[l] = 1;
        break;
      }
    }
    A = std::move(best_A);
    b = std::move(best_b);
    lens.final_kl[l] = kl_now();
    if (!cfg.mse && lens.final_kl[l] > lens.initial_kl[l] + 1e-9) lens.diverged[l] = 1;
  }
  return lens;
}

NeighborMassCurve lens_neighbor_mass(const AnalysisModel& model, const LensTranslators& lens, const Dataset& ds,
                                     const Vocabulary& vocab) {
  require_vocab(model, vocab);
  const std::size_t layers = lens.A.size();
  std::vector<std::vector<double>> conn(layers), unconn(layers);
  const TokenId ps = vocab.special(Special::path_start);
  const TokenId pe = vocab.special(Special::path_end);
  for (const auto& rec : ds.records) {
    const auto prompt = encode_prompt(rec.solved, vocab, rec.shuffle_seed);
    const Maze& maze = rec.solved.maze;
    const auto ro = rollout(model, prompt, rollout_cap(maze.grid_n()));
    std::vector<TokenId> seq = prompt;
    seq.insert(seq.end(), ro.generated.begin(), ro.generated.end());
    if (seq.size() > static_cast<std::size_t>(model.config.n_ctx)) seq.resize(static_cast<std::size_t>(model.config.n_ctx));
    ActivationCache<double> cache;
    forward(model, seq, &cache);
    std::vector<Tensor<double>> dists;
    for (std::size_t l = 0; l < layers; ++l) dists.push_back(lens_distribution(model, lens, cache, l));
    const std::size_t start = find_token(seq, ps);
    const std::size_t v = static_cast<std::size_t>(model.config.d_vocab);
    for (std::size_t t = start + 1; t < seq.size(); ++t) {
      if (seq[t] == pe) break;
      if (!vocab.is_coord(seq[t])) continue;
      const Coord cur = vocab.coord_of(seq[t]);
      if (!maze.in_bounds(cur)) continue;
      for (std::size_t l = 0; l < layers; ++l) {
        double c = 0, u = 0;
        for (const Dir d : kDirs) {
          const Coord nb = step(cur, d);
          if (!maze.in_bounds(nb)) continue;
          const double mass = dists[l][t * v + static_cast<std::size_t>(vocab.coord_id(nb))];
          (maze.connected(cur, nb) ? c : u) += mass;
        }
        conn[l].push_back(c);
        unconn[l].push_back(u);
      }
    }
  }
  NeighborMassCurve curve;
  curve.positions = conn.empty() ? 0 : conn[0].size();
  for (std::size_t l = 0; l < layers; ++l) {
    const bool any = !conn[l].empty();
    curve.connected_mean.push_back(any ? mean(conn[l]) : 0.0);
    curve.connected_std.push_back(any ? stddev(conn[l]) : 0.0);
    curve.unconnected_mean.push_back(any ? mean(unconn[l]) : 0.0);
    curve.unconnected_std.push_back(any ? stddev(unconn[l]) : 0.0);
  }
  return curve;
}

// --- checkpoint sweep -----------------------------------------------------------

SweepResult checkpoint_sweep(const std::vector<std::filesystem::path>& checkpoints, const Dataset& eval_ds,
                             const Dataset& probe_ds, const Vocabulary& vocab, const SweepConfig& cfg) {
  SweepResult res;
  std::vector<Checkpoint> loaded;
  for (const auto& path : checkpoints) {
    try {
      loaded.push_back(load_checkpoint(path));
    } catch (const std::exception& e) {
      res.warnings.push_back("skipping " + path.string() + ": " + e.what());
    }
  }
  std::stable_sort(loaded.begin(), loaded.end(), [](const Checkpoint& a, const Checkpoint& b) { return a.step < b.step; });
  for (const auto& ck : loaded) {
    SweepRow row;
    row.step = ck.step;
    const auto fn = next_token_fn(ck.model);
    for (const TaskId t : cfg.tasks) row.accuracy.emplace_back(t, eval_single_token(fn, eval_ds, vocab, t, cfg.task_seed).accuracy);
    const AnalysisModel m = ck.model.cast<double>();
    const ResidualSet rs = collect_residuals(m, probe_ds, vocab);
    const Split split = split_by_maze(rs, 0.8, cfg.split_seed);
    const ProbeSet probes = train_probes(rs, split.train, cfg.reg);
    const ProbeAccuracy acc = probe_accuracy(probes, rs, split.validation);
    row.best_layer = acc.best_layer;
    row.best_probe_accuracy = acc.per_layer[acc.best_layer];
    res.rows.push_back(std::move(row));
  }
  return res;
}

}  // namespace mazelab
