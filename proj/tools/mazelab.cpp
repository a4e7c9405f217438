#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "mazelab/interp.hpp"
#include "mazelab/report.hpp"
#include "mazelab/rng.hpp"
#include "mazelab/store.hpp"
#include "mazelab/train.hpp"

using namespace mazelab;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitMissingFile = 3;
constexpr int kExitVersion = 4;

class MissingFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Registers --name and, when it contains an underscore, the kebab-case spelling.
template <class T>
CLI::Option* flag(CLI::App* app, const std::string& name, T& var, const std::string& desc) {
  std::string names = "--" + name;
  std::string kebab = name;
  std::replace(kebab.begin(), kebab.end(), '_', '-');
  if (kebab != name) names += ",--" + kebab;
  return app->add_option(names, var, desc)->capture_default_str();
}

CLI::Option* toggle(CLI::App* app, const std::string& name, bool& var, const std::string& desc) {
  std::string names = "--" + name;
  std::string kebab = name;
  std::replace(kebab.begin(), kebab.end(), '_', '-');
  if (kebab != name) names += ",--" + kebab;
  return app->add_flag(names, var, desc);
}

const fs::path& require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw MissingFileError("input file not found: " + p.string());
  return p;
}

void write_manifest(const CLI::App& sub, const fs::path& out, const json& extra = json::object()) {
  json flags = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    std::string name = opt->get_name();
    if (name == "--help" || name.empty()) continue;
    while (!name.empty() && name.front() == '-') name.erase(name.begin());
    if (opt->count() > 0) {
      const auto& r = opt->results();
      flags[name] = r.size() == 1 ? json(r[0]) : json(r);
    } else {
      flags[name] = opt->get_default_str();
    }
  }
  json m;
  m["subcommand"] = sub.get_name();
  m["flags"] = flags;
  m["checkpoint_version"] = kCheckpointVersion;
  m["dataset_version"] = kDatasetVersion;
  if (!extra.empty()) m["details"] = extra;
  write_file(out / "manifest.json", m.dump(2) + "\n");
}

int vocab_grid(const ModelConfig& c) {
  const int cells = c.d_vocab - kSpecialCount;
  const int n = static_cast<int>(std::lround(std::sqrt(static_cast<double>(std::max(cells, 0)))));
  if (n <= 0 || n * n != cells) throw std::invalid_argument("vocabulary size does not match a square grid");
  return n;
}

Checkpoint open_checkpoint(const fs::path& p) { return load_checkpoint(require_file(p)); }

Dataset open_dataset(const fs::path& p, const Vocabulary& vocab) {
  require_file(p);
  if (dataset_max_grid(p) > vocab.max_grid_n()) throw std::invalid_argument("dataset grid exceeds the model vocabulary");
  return load_dataset(p, vocab);
}

std::vector<TaskId> parse_tasks(const std::string& s) {
  if (s == "all") return {kAllTasks.begin(), kAllTasks.end()};
  std::vector<TaskId> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(task_from_string(item));
  if (out.empty()) throw std::invalid_argument("no tasks given");
  return out;
}

GenSpec make_spec(const std::string& alg, int n, double p, int min_path_len) {
  GenSpec s;
  s.algorithm = algorithm_from_string(alg);
  s.grid_n = n;
  if (s.algorithm == Algorithm::percolation || s.algorithm == Algorithm::rdfs_percolation) s.p = p;
  if (min_path_len > 0) s.min_path_len = min_path_len;
  return s;
}

std::string layer_label(std::size_t l) { return "L" + std::to_string(l); }

// --- subcommands ----------------------------------------------------------------

struct GenArgs {
  std::string alg = "rdfs";
  int n = 6;
  std::size_t count = 1000;
  std::uint64_t seed = 0;
  double p = 0.1;
  int min_path_len = 0;
  int max_grid = 0;
  std::string tag;
  fs::path out;
};

void run_gen(const CLI::App& sub, const GenArgs& a) {
  const int grid = a.max_grid > 0 ? a.max_grid : a.n;
  const Vocabulary vocab(grid);
  const Dataset ds = build_dataset({make_spec(a.alg, a.n, a.p, a.min_path_len)}, a.count, a.seed, vocab, a.tag);
  fs::create_directories(a.out);
  save_dataset(a.out / "dataset.jsonl", ds, vocab);
  write_manifest(sub, a.out);
  std::cout << "wrote " << ds.size() << " records to " << (a.out / "dataset.jsonl").string() << "\n";
}

struct TrainArgs {
  fs::path config;
  std::string alg = "forkless";
  int n = 4;
  double p = 0.1;
  int min_path_len = 0;
  int max_grid = 0;
  std::size_t count = 100000;
  std::size_t eval_size = 256;
  std::uint64_t seed = 1;
  std::uint64_t model_seed = 0;
  int d_model = 64;
  int d_head = 16;
  int n_layers = 4;
  double lr = 1e-4;
  double weight_decay = 0.01;
  std::size_t batch_size = 32;
  int epochs = 1;
  std::string mask_mode = "path_only";
  std::int64_t log_every = 50;
  std::int64_t stop_after = 0;
  fs::path resume;
  bool quiet = false;
  fs::path out;
};

void run_train(const CLI::App& sub, const TrainArgs& a) {
  TrainConfig c;
  if (!a.config.empty()) {
    std::ifstream in(require_file(a.config));
    c = train_config_from_json(json::parse(in));
  } else {
    c.mix = {make_spec(a.alg, a.n, a.p, a.min_path_len)};
    c.dataset_size = a.count;
    c.eval_size = a.eval_size;
    c.data_seed = a.seed;
    c.eval_seed = a.seed + 1;
    c.max_grid_n = a.max_grid > 0 ? a.max_grid : a.n;
    c.model.d_model = a.d_model;
    c.model.d_head = a.d_head;
    c.model.n_layers = a.n_layers;
    c.model.seed = a.model_seed;
    c.model.d_vocab = static_cast<int>(Vocabulary(c.max_grid_n).size());
    c.model.n_ctx = static_cast<int>(max_sequence_length(c.max_grid_n));
    c.optim.lr = a.lr;
    c.optim.weight_decay = a.weight_decay;
    c.batch_size = a.batch_size;
    c.epochs = a.epochs;
    c.mask_mode = loss_mask_mode_from_string(a.mask_mode);
    c.log_every = a.log_every;
  }
  c.out_dir = a.out;
  c.verbose = !a.quiet;
  if (a.stop_after > 0) c.stop_after = a.stop_after;
  std::optional<fs::path> resume;
  if (!a.resume.empty()) resume = require_file(a.resume);
  fs::create_directories(a.out);
  const TrainResult r = train(c, resume);
  write_manifest(sub, a.out, {{"train_config", to_json(c)}});
  std::cout << "finished at step " << r.final_step << " in " << format_number(r.seconds) << " s\n";
}

struct EvalArgs {
  fs::path checkpoint;
  fs::path dataset;
  std::string tasks = "all";
  std::uint64_t seed = 3;
  std::size_t rollouts = 0;
  bool baseline = false;
  fs::path out;
};

void run_eval(const CLI::App& sub, const EvalArgs& a) {
  fs::create_directories(a.out);
  Table acc;
  acc.columns = {"task", "dataset", "accuracy", "n", "skipped"};
  Table roll;
  roll.columns = {"path_length", "n", "exact_rate", "valid_rate", "reached_rate"};
  std::vector<RolloutOutcome> outcomes;
  const std::string ds_name = a.dataset.stem().string();

  if (a.baseline) {
    require_file(a.dataset);
    const Vocabulary vocab(dataset_max_grid(a.dataset));
    const Dataset ds = load_dataset(a.dataset, vocab);
    const std::size_t n = a.rollouts > 0 ? std::min(a.rollouts, ds.size()) : ds.size();
    for (std::size_t i = 0; i < n; ++i) {
      const SolvedMaze& sm = ds.records[i].solved;
      const BaselineResult b = baseline_rollout(sm.maze, sm.origin, sm.target, derive_seed(a.seed, i));
      std::vector<TokenId> gen;
      for (Coord c : b.path) gen.push_back(vocab.coord_id(c));
      if (b.reached) gen.push_back(vocab.special(Special::path_end));
      const RolloutScore s = score_rollout(sm, gen, vocab);
      outcomes.push_back({sm.path.size(), s.exactly_correct, s.valid, s.target_reached});
    }
  } else {
    const Checkpoint ck = open_checkpoint(a.checkpoint);
    const Vocabulary vocab(vocab_grid(ck.config));
    const Dataset ds = open_dataset(a.dataset, vocab);
    const NextTokenFn fn = next_token_fn(ck.model);
    for (TaskId t : parse_tasks(a.tasks)) {
      const TaskEval ev = eval_single_token(fn, ds, vocab, t, a.seed);
      acc.add({to_string(t), ds_name, ev.accuracy, static_cast<std::int64_t>(ev.n), static_cast<std::int64_t>(ev.skipped)});
    }
    write_csv(a.out / "eval.csv", acc);
    const std::size_t n = std::min(a.rollouts, ds.size());
    for (std::size_t i = 0; i < n; ++i) {
      const auto& rec = ds.records[i];
      const auto prompt = encode_prompt(rec.solved, vocab, rec.shuffle_seed);
      const RolloutResult ro = rollout(ck.model, prompt, rollout_cap(rec.solved.maze.grid_n()));
      const RolloutScore s = score_rollout(rec.solved, ro.generated, vocab);
      outcomes.push_back({rec.solved.path.size(), s.exactly_correct, s.valid, s.target_reached});
    }
  }
  if (!outcomes.empty()) {
    for (const PathLengthRow& r : accuracy_by_path_length(outcomes)) {
      roll.add({static_cast<std::int64_t>(r.path_length), static_cast<std::int64_t>(r.n), r.exact_rate, r.valid_rate,
                r.reached_rate});
    }
    write_csv(a.out / "rollouts_by_path_length.csv", roll);
  }
  write_manifest(sub, a.out);
  if (!acc.rows.empty()) std::cout << to_csv(acc);
  if (!roll.rows.empty()) std::cout << to_csv(roll);
}

struct RolloutArgs {
  fs::path checkpoint;
  fs::path dataset;
  std::size_t maze_index = 0;
  std::size_t max_new = 0;
  fs::path out;
};

void run_rollout(const CLI::App& sub, const RolloutArgs& a) {
  const Checkpoint ck = open_checkpoint(a.checkpoint);
  const Vocabulary vocab(vocab_grid(ck.config));
  const Dataset ds = open_dataset(a.dataset, vocab);
  if (a.maze_index >= ds.size()) throw std::out_of_range("maze index beyond dataset size");
  const auto& rec = ds.records[a.maze_index];
  const auto prompt = encode_prompt(rec.solved, vocab, rec.shuffle_seed);
  const std::size_t cap = a.max_new > 0 ? a.max_new : rollout_cap(rec.solved.maze.grid_n());
  const RolloutResult ro = rollout(ck.model, prompt, cap);
  const RolloutScore s = score_rollout(rec.solved, ro.generated, vocab);

  fs::create_directories(a.out);
  std::ostringstream txt;
  txt << "prompt: " << to_text(prompt, vocab) << "\n";
  txt << "generated: " << to_text(ro.generated, vocab) << "\n";
  if (ro.truncated) txt << "stopped: " << ro.reason << "\n";
  txt << "exactly_correct: " << s.exactly_correct << "\nvalid: " << s.valid << "\ntarget_reached: " << s.target_reached
      << "\nterminated: " << s.terminated << "\n";
  for (const auto& note : s.annotations) txt << "note: " << note << "\n";
  write_file(a.out / "rollout.txt", txt.str());

  MazeOverlay o;
  o.title = "rollout " + std::to_string(a.maze_index);
  o.maze = &rec.solved.maze;
  o.path = s.path;
  o.current = rec.solved.target;
  write_file(a.out / "rollout.svg", maze_svg(o));
  write_manifest(sub, a.out);
  std::cout << txt.str();
}

struct DlaArgs {
  fs::path checkpoint;
  fs::path dataset;
  std::string task = "rand_path_token";
  std::uint64_t seed = 3;
  fs::path out;
};

void run_dla(const CLI::App& sub, const DlaArgs& a) {
  const Checkpoint ck = open_checkpoint(a.checkpoint);
  const Vocabulary vocab(vocab_grid(ck.config));
  const Dataset ds = open_dataset(a.dataset, vocab);
  const DlaMatrix d = dla(ck.model.cast<double>(), ds, vocab, task_from_string(a.task), a.seed);
  fs::create_directories(a.out);
  Table t;
  t.columns = {"layer", "head", "dla"};
  Heatmap h;
  h.title = "direct logit attribution: " + a.task;
  h.diverging = true;
  h.values = d.values;
  for (std::size_t l = 0; l < d.n_layers; ++l) {
    h.row_labels.push_back(layer_label(l));
    for (std::size_t k = 0; k < d.n_heads; ++k) t.add({static_cast<std::int64_t>(l), static_cast<std::int64_t>(k), d.at(l, k)});
  }
  for (std::size_t k = 0; k < d.n_heads; ++k) h.col_labels.push_back("H" + std::to_string(k));
  write_csv(a.out / "dla.csv", t);
  write_file(a.out / "dla.svg", heatmap_svg(h));
  write_manifest(sub, a.out, {{"samples", d.samples}});
  std::cout << to_csv(t);
}

struct ProbeArgs {
  fs::path checkpoint;
  fs::path dataset;
  double reg = 1e-2;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  bool shuffle = false;
  fs::path out;
};

void run_probes(const CLI::App& sub, const ProbeArgs& a) {
  const Checkpoint ck = open_checkpoint(a.checkpoint);
  const Vocabulary vocab(vocab_grid(ck.config));
  const Dataset ds = open_dataset(a.dataset, vocab);
  ResidualSet rs = collect_residuals(ck.model.cast<double>(), ds, vocab);
  if (a.shuffle) shuffle_labels(rs, derive_seed(a.seed, 1));
  const Split sp = split_by_maze(rs, a.train_fraction, a.seed);
  const ProbeSet ps = train_probes(rs, sp.train, a.reg);
  const ProbeAccuracy acc = probe_accuracy(ps, rs, sp.validation);
  const double majority = majority_rate(rs, sp.train, sp.validation);

  fs::create_directories(a.out);
  Table t;
  t.columns = {"layer", "accuracy", "boundary", "interior", "majority"};
  Series s{"probe accuracy", {}, {}, {}, {}};
  for (std::size_t l = 0; l < acc.per_layer.size(); ++l) {
    t.add({static_cast<std::int64_t>(l), acc.per_layer[l], acc.boundary[l], acc.interior[l], majority});
    s.x.push_back(static_cast<double>(l));
    s.y.push_back(acc.per_layer[l]);
  }
  LineChart c;
  c.title = "wall probe accuracy";
  c.x_label = "layer";
  c.y_label = "accuracy";
  c.series = {s, Series{"majority", s.x, std::vector<double>(s.x.size(), majority), {}, {}}};
  write_csv(a.out / "probes.csv", t);
  write_file(a.out / "probes.svg", line_chart_svg(c));
  write_manifest(sub, a.out,
                 {{"best_layer", acc.best_layer}, {"train", sp.train.size()}, {"validation", sp.validation.size()},
                  {"skipped", rs.skipped}});
  std::cout << to_csv(t);
}

struct LensArgs {
  fs::path checkpoint;
  fs::path dataset;
  int steps = 300;
  double lr = 1e-2;
  bool mse = false;
  bool identity = false;
  std::uint64_t seed = 0;
  fs::path out;
};

void run_lens(const CLI::App& sub, const LensArgs& a) {
  const Checkpoint ck = open_checkpoint(a.checkpoint);
  const Vocabulary vocab(vocab_grid(ck.config));
  const Dataset ds = open_dataset(a.dataset, vocab);
  const AnalysisModel model = ck.model.cast<double>();
  LensConfig cfg;
  cfg.steps = a.steps;
  cfg.lr = a.lr;
  cfg.mse = a.mse;
  cfg.seed = a.seed;
  const LensTranslators lens = a.identity ? identity_lens(model.config) : train_tuned_lens(model, ds, cfg);
  const NeighborMassCurve nm = lens_neighbor_mass(model, lens, ds, vocab);

  fs::create_directories(a.out);
  Table t;
  t.columns = {"layer", "initial_kl", "final_kl", "connected_mean", "connected_std", "unconnected_mean", "unconnected_std"};
  Series con{"connected", {}, {}, {}, {}}, unc{"unconnected", {}, {}, {}, {}};
  for (std::size_t l = 0; l < nm.connected_mean.size(); ++l) {
    const double ik = l < lens.initial_kl.size() ? lens.initial_kl[l] : 0.0;
    const double fk = l < lens.final_kl.size() ? lens.final_kl[l] : 0.0;
    t.add({static_cast<std::int64_t>(l), ik, fk, nm.connected_mean[l], nm.connected_std[l], nm.unconnected_mean[l],
           nm.unconnected_std[l]});
    for (Series* s : {&con, &unc}) s->x.push_back(static_cast<double>(l));
    con.y.push_back(nm.connected_mean[l]);
    unc.y.push_back(nm.unconnected_mean[l]);
  }
  LineChart c;
  c.title = "tuned lens neighbour mass";
  c.x_label = "layer";
  c.y_label = "probability mass";
  c.series = {con, unc};
  c.y_range = std::make_pair(0.0, 1.0);
  write_csv(a.out / "lens.csv", t);
  write_file(a.out / "lens.svg", line_chart_svg(c));
  write_manifest(sub, a.out, {{"positions", nm.positions}});
  std::cout << to_csv(t);
}

struct EmbedArgs {
  fs::path checkpoint;
  int grid = 0;
  int cutoff = 3;
  int anchor_row = 0;
  int anchor_col = 0;
  fs::path out;
};

void run_embed(const CLI::App& sub, const EmbedArgs& a) {
  const Checkpoint ck = open_checkpoint(a.checkpoint);
  const Vocabulary vocab(vocab_grid(ck.config));
  const int grid = a.grid > 0 ? a.grid : vocab.max_grid_n();
  const AnalysisModel model = ck.model.cast<double>();
  const EmbeddingStats st = embedding_distance_stats(model, vocab, grid, a.cutoff);

  fs::create_directories(a.out);
  Table pairs;
  pairs.columns = {"a", "b", "coord_distance", "embedding_distance"};
  for (const auto& p : st.pairs)
    pairs.add({to_string(p.a), to_string(p.b), static_cast<std::int64_t>(p.coord_distance), p.embedding_distance});
  write_csv(a.out / "embedding_pairs.csv", pairs);

  BoxPlot bp;
  bp.title = "embedding distance by lattice distance";
  bp.x_label = "Manhattan distance";
  bp.y_label = "L1 embedding distance";
  for (std::size_t d = 1; d < st.by_distance.size(); ++d) {
    bp.labels.push_back(std::to_string(d));
    bp.boxes.push_back(st.by_distance[d]);
  }
  write_file(a.out / "embedding_box.svg", box_plot_svg(bp));

  const auto grid_vals = anchor_grid(model, vocab, grid, {a.anchor_row, a.anchor_col});
  Heatmap h;
  h.title = "distance from " + to_string(Coord{a.anchor_row, a.anchor_col});
  h.values = grid_vals;
  for (int i = 0; i < grid; ++i) {
    h.row_labels.push_back(std::to_string(i));
    h.col_labels.push_back(std::to_string(i));
  }
  write_file(a.out / "embedding_anchor.svg", heatmap_svg(h));
  const json summary = {{"rho", st.spearman.rho}, {"p_value", st.spearman.p_value}, {"defined", st.spearman.defined},
                        {"cutoff", st.cutoff}};
  write_manifest(sub, a.out, summary);
  std::cout << summary.dump() << "\n";
}

struct AttentionArgs {
  fs::path checkpoint;
  fs::path dataset;
  std::size_t layer = 0;
  std::size_t head = 0;
  std::string task = "rand_path_token_nonend";
  std::uint64_t seed = 3;
  fs::path out;
};

void run_attention(const CLI::App& sub, const AttentionArgs& a) {
  const Checkpoint ck = open_checkpoint(a.checkpoint);
  const Vocabulary vocab(vocab_grid(ck.config));
  const Dataset ds = open_dataset(a.dataset, vocab);
  const AnalysisModel model = ck.model.cast<double>();
  const TaskId task = task_from_string(a.task);
  const AttentionByDistance ab = attention_by_distance(model, ds, vocab, task, a.layer, a.head, a.seed);

  fs::create_directories(a.out);
  Table t;
  t.columns = {"kind", "distance", "n", "median", "q1", "q3", "mass"};
  for (std::size_t d = 0; d < ab.by_manhattan.size(); ++d) {
    const BoxStats& b = ab.by_manhattan[d];
    t.add({std::string("manhattan"), static_cast<std::int64_t>(d), static_cast<std::int64_t>(b.n), b.median, b.q1, b.q3, 0.0});
  }
  for (std::size_t d = 0; d < ab.by_path_distance.size(); ++d) {
    const BoxStats& b = ab.by_path_distance[d];
    const double mass = d < ab.mass_by_path_distance.size() ? ab.mass_by_path_distance[d] : 0.0;
    t.add({std::string("path"), static_cast<std::int64_t>(d), static_cast<std::int64_t>(b.n), b.median, b.q1, b.q3, mass});
  }
  write_csv(a.out / "attention_by_distance.csv", t);

  BoxPlot bp;
  bp.title = "attention by path distance, " + layer_label(a.layer) + "H" + std::to_string(a.head);
  bp.x_label = "path distance";
  bp.y_label = "attention weight";
  for (std::size_t d = 0; d < ab.by_path_distance.size(); ++d) {
    if (ab.by_path_distance[d].n == 0) continue;
    bp.labels.push_back(std::to_string(d));
    bp.boxes.push_back(ab.by_path_distance[d]);
  }
  write_file(a.out / "attention_by_distance.svg", box_plot_svg(bp));

  Table heads;
  heads.columns = {"layer", "head", "adjacency_score"};
  for (const HeadScore& h : adjacency_head_score(model, ds, vocab, task, a.seed))
    heads.add({static_cast<std::int64_t>(h.layer), static_cast<std::int64_t>(h.head), h.score});
  write_csv(a.out / "head_scores.csv", heads);
  write_manifest(sub, a.out, {{"prompts", ab.prompts}, {"skipped", ab.skipped}});
  std::cout << to_csv(heads);
}

struct SweepArgs {
  fs::path checkpoints;
  fs::path eval_dataset;
  fs::path probe_dataset;
  std::string tasks = "all";
  std::uint64_t seed = 3;
  double reg = 1e-2;
  fs::path out;
};

void run_sweep(const CLI::App& sub, const SweepArgs& a) {
  if (!fs::is_directory(a.checkpoints)) throw MissingFileError("checkpoint directory not found: " + a.checkpoints.string());
  fs::path dir = a.checkpoints;
  if (fs::is_directory(dir / "checkpoints")) dir /= "checkpoints";
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".bin") paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw MissingFileError("no checkpoints in " + a.checkpoints.string());
  const Checkpoint first = load_checkpoint(paths.front());
  const Vocabulary vocab(vocab_grid(first.config));
  const Dataset eval_ds = open_dataset(a.eval_dataset, vocab);
  const Dataset probe_ds = open_dataset(a.probe_dataset, vocab);
  SweepConfig cfg;
  cfg.tasks = parse_tasks(a.tasks);
  cfg.task_seed = a.seed;
  cfg.reg = a.reg;
  const SweepResult r = checkpoint_sweep(paths, eval_ds, probe_ds, vocab, cfg);

  fs::create_directories(a.out);
  Table t;
  t.columns = {"step"};
  for (TaskId task : cfg.tasks) t.columns.push_back(to_string(task));
  t.columns.push_back("best_layer");
  t.columns.push_back("best_probe_accuracy");
  std::vector<Series> series;
  for (TaskId task : cfg.tasks) series.push_back({to_string(task), {}, {}, {}, {}});
  series.push_back({"probe", {}, {}, {}, {}});
  for (const SweepRow& row : r.rows) {
    std::vector<Cell> cells{row.step};
    for (std::size_t i = 0; i < row.accuracy.size(); ++i) {
      cells.push_back(row.accuracy[i].second);
      series[i].x.push_back(static_cast<double>(std::max<std::int64_t>(row.step, 1)));
      series[i].y.push_back(row.accuracy[i].second);
    }
    cells.push_back(static_cast<std::int64_t>(row.best_layer));
    cells.push_back(row.best_probe_accuracy);
    series.back().x.push_back(static_cast<double>(std::max<std::int64_t>(row.step, 1)));
    series.back().y.push_back(row.best_probe_accuracy);
    t.add(std::move(cells));
  }
  LineChart c;
  c.title = "accuracy across training";
  c.x_label = "step";
  c.y_label = "accuracy";
  c.log_x = true;
  c.series = series;
  c.y_range = std::make_pair(0.0, 1.0);
  write_csv(a.out / "sweep.csv", t);
  write_file(a.out / "sweep.svg", line_chart_svg(c));
  write_manifest(sub, a.out, {{"warnings", r.warnings}});
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << to_csv(t);
}

struct RenderArgs {
  fs::path dataset;
  std::size_t maze_index = 0;
  std::string alg;
  int n = 6;
  double p = 0.1;
  std::uint64_t seed = 0;
  fs::path out;
};

void run_render(const CLI::App& sub, const RenderArgs& a) {
  SolvedMaze sm;
  if (!a.dataset.empty()) {
    require_file(a.dataset);
    const Vocabulary vocab(dataset_max_grid(a.dataset));
    const Dataset ds = load_dataset(a.dataset, vocab);
    if (a.maze_index >= ds.size()) throw std::out_of_range("maze index beyond dataset size");
    sm = ds.records[a.maze_index].solved;
  } else {
    if (a.alg.empty()) throw std::invalid_argument("render needs --dataset or --alg");
    GenSpec s = make_spec(a.alg, a.n, a.p, 0);
    s.seed = a.seed;
    sm = solve(generate(s), a.seed);
  }
  fs::create_directories(a.out);
  const std::string text = render_text(sm.maze, &sm.path);
  write_file(a.out / "maze.txt", text);
  MazeOverlay o;
  o.title = "maze";
  o.maze = &sm.maze;
  o.path = sm.path;
  o.current = sm.target;
  write_file(a.out / "maze.svg", maze_svg(o));
  write_manifest(sub, a.out);
  std::cout << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Maze transformer toolkit"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-dataset", "Generate a solved-maze dataset")->alias("gen_dataset");
  flag(g, "alg", gen.alg, "rdfs | forkless | percolation | rdfs_percolation");
  flag(g, "n", gen.n, "grid size");
  flag(g, "count", gen.count, "number of mazes");
  flag(g, "seed", gen.seed, "dataset seed");
  flag(g, "p", gen.p, "percolation probability");
  flag(g, "min_path_len", gen.min_path_len, "forkless minimum walk length in cells (0 = none)");
  flag(g, "max_grid", gen.max_grid, "vocabulary grid (0 = n)");
  flag(g, "tag", gen.tag, "dataset tag");
  flag(g, "out", gen.out, "output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model");
  flag(t, "config", tr.config, "training config JSON (overrides model and data flags)");
  flag(t, "alg", tr.alg, "maze algorithm");
  flag(t, "n", tr.n, "grid size");
  flag(t, "p", tr.p, "percolation probability");
  flag(t, "min_path_len", tr.min_path_len, "forkless minimum walk length (0 = none)");
  flag(t, "max_grid", tr.max_grid, "vocabulary grid (0 = n)");
  flag(t, "count", tr.count, "training sequences");
  flag(t, "eval_size", tr.eval_size, "held-out evaluation mazes");
  flag(t, "seed", tr.seed, "data seed; the held-out set uses seed + 1");
  flag(t, "model_seed", tr.model_seed, "parameter initialization seed");
  flag(t, "d_model", tr.d_model, "residual width");
  flag(t, "d_head", tr.d_head, "head width");
  flag(t, "n_layers", tr.n_layers, "transformer blocks");
  flag(t, "lr", tr.lr, "learning rate");
  flag(t, "weight_decay", tr.weight_decay, "decoupled weight decay");
  flag(t, "batch_size", tr.batch_size, "batch size");
  flag(t, "epochs", tr.epochs, "passes over the data");
  flag(t, "mask_mode", tr.mask_mode, "path_only | full_sequence");
  flag(t, "log_every", tr.log_every, "train-loss logging interval");
  flag(t, "stop_after", tr.stop_after, "stop after this step (0 = run to the end)");
  flag(t, "resume", tr.resume, "checkpoint to resume from");
  toggle(t, "quiet", tr.quiet, "suppress progress output");
  flag(t, "out", tr.out, "output directory")->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Single-token task accuracy and rollouts");
  flag(e, "checkpoint", ev.checkpoint, "model checkpoint");
  flag(e, "dataset", ev.dataset, "dataset JSONL")->required();
  flag(e, "tasks", ev.tasks, "comma-separated task names or 'all'");
  flag(e, "seed", ev.seed, "task position seed");
  flag(e, "rollouts", ev.rollouts, "number of greedy rollouts to score");
  toggle(e, "baseline", ev.baseline, "score the corridor-following baseline instead of a model");
  flag(e, "out", ev.out, "output directory")->required();

  RolloutArgs ro;
  auto* r = app.add_subcommand("rollout", "Greedy rollout on one maze");
  flag(r, "checkpoint", ro.checkpoint, "model checkpoint")->required();
  flag(r, "dataset", ro.dataset, "dataset JSONL")->required();
  flag(r, "maze_index", ro.maze_index, "record index");
  flag(r, "max_new", ro.max_new, "token cap (0 = 4 n^2)");
  flag(r, "out", ro.out, "output directory")->required();

  DlaArgs dl;
  auto* d = app.add_subcommand("dla", "Direct logit attribution per head");
  flag(d, "checkpoint", dl.checkpoint, "model checkpoint")->required();
  flag(d, "dataset", dl.dataset, "dataset JSONL")->required();
  flag(d, "task", dl.task, "task name");
  flag(d, "seed", dl.seed, "task position seed");
  flag(d, "out", dl.out, "output directory")->required();

  ProbeArgs pr;
  auto* p = app.add_subcommand("probes", "Linear wall probes on the residual stream");
  flag(p, "checkpoint", pr.checkpoint, "model checkpoint")->required();
  flag(p, "dataset", pr.dataset, "dataset JSONL")->required();
  flag(p, "reg", pr.reg, "ridge penalty");
  flag(p, "train_fraction", pr.train_fraction, "fraction of mazes used for fitting");
  flag(p, "seed", pr.seed, "split seed");
  toggle(p, "shuffle", pr.shuffle, "shuffle labels across mazes (control)");
  flag(p, "out", pr.out, "output directory")->required();

  LensArgs le;
  auto* l = app.add_subcommand("lens", "Tuned lens and neighbour mass");
  flag(l, "checkpoint", le.checkpoint, "model checkpoint")->required();
  flag(l, "dataset", le.dataset, "dataset JSONL")->required();
  flag(l, "steps", le.steps, "optimizer steps per layer");
  flag(l, "lr", le.lr, "learning rate");
  toggle(l, "mse", le.mse, "match the final residual instead of the output distribution");
  toggle(l, "identity", le.identity, "skip training and use the identity lens");
  flag(l, "seed", le.seed, "position sampling seed");
  flag(l, "out", le.out, "output directory")->required();

  EmbedArgs em;
  auto* m = app.add_subcommand("embed", "Token embedding geometry");
  flag(m, "checkpoint", em.checkpoint, "model checkpoint")->required();
  flag(m, "grid", em.grid, "grid size (0 = vocabulary grid)");
  flag(m, "cutoff", em.cutoff, "maximum Manhattan distance in the correlation");
  flag(m, "anchor_row", em.anchor_row, "anchor cell row");
  flag(m, "anchor_col", em.anchor_col, "anchor cell column");
  flag(m, "out", em.out, "output directory")->required();

  AttentionArgs at;
  auto* a = app.add_subcommand("attention", "Attention weight against maze distance");
  flag(a, "checkpoint", at.checkpoint, "model checkpoint")->required();
  flag(a, "dataset", at.dataset, "dataset JSONL")->required();
  flag(a, "layer", at.layer, "layer");
  flag(a, "head", at.head, "head");
  flag(a, "task", at.task, "task defining the query position");
  flag(a, "seed", at.seed, "task position seed");
  flag(a, "out", at.out, "output directory")->required();

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep-checkpoints", "Task accuracy and probes across checkpoints")->alias("sweep_checkpoints");
  flag(s, "checkpoints", sw.checkpoints, "training output or checkpoint directory")->required();
  flag(s, "eval_dataset", sw.eval_dataset, "evaluation dataset")->required();
  flag(s, "probe_dataset", sw.probe_dataset, "probe dataset")->required();
  flag(s, "tasks", sw.tasks, "comma-separated task names or 'all'");
  flag(s, "seed", sw.seed, "task position seed");
  flag(s, "reg", sw.reg, "probe ridge penalty");
  flag(s, "out", sw.out, "output directory")->required();

  RenderArgs rd;
  auto* n = app.add_subcommand("render", "Render a maze as text and SVG");
  flag(n, "dataset", rd.dataset, "dataset JSONL");
  flag(n, "maze_index", rd.maze_index, "record index");
  flag(n, "alg", rd.alg, "generate instead of reading a dataset");
  flag(n, "n", rd.n, "grid size");
  flag(n, "p", rd.p, "percolation probability");
  flag(n, "seed", rd.seed, "maze seed");
  flag(n, "out", rd.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitUsage;
  }

  try {
    if (*g) run_gen(*g, gen);
    if (*t) run_train(*t, tr);
    if (*e) {
      if (!ev.baseline && ev.checkpoint.empty()) throw CLI::RequiredError("--checkpoint");
      run_eval(*e, ev);
    }
    if (*r) run_rollout(*r, ro);
    if (*d) run_dla(*d, dl);
    if (*p) run_probes(*p, pr);
    if (*l) run_lens(*l, le);
    if (*m) run_embed(*m, em);
    if (*a) run_attention(*a, at);
    if (*s) run_sweep(*s, sw);
    if (*n) run_render(*n, rd);
  } catch (const CLI::ParseError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitUsage;
  } catch (const MissingFileError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitMissingFile;
  } catch (const CheckpointVersionError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitVersion;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitError;
  }
  return 0;
}
