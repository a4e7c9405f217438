#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "mazelab/gradcheck.hpp"
#include "mazelab/interp.hpp"
#include "mazelab/report.hpp"
#include "mazelab/rng.hpp"
#include "mazelab/store.hpp"
#include "mazelab/train.hpp"

using namespace mazelab;
namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Options {
  fs::path out = "acceptance_out";
  fs::path cache = "acceptance_cache";
  int epochs = 5;
  std::vector<int> only;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double x, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << x;
  return os.str();
}

// Independent union-find used for the structural checks.
struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), std::size_t{0}); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[a] = b;
    return true;
  }
};

// --- 1-4: mazes and codec ---------------------------------------------------------

Outcome maze_invariants() {
  const auto t0 = Clock::now();
  std::size_t bad = 0, total = 0;
  for (int n = 3; n <= 8; ++n) {
    for (std::uint64_t s = 0; s < 1000; ++s) {
      const Maze m = generate_rdfs(n, derive_seed(static_cast<std::uint64_t>(n), s));
      const auto edges = m.edges();
      UnionFind uf(m.cell_count());
      bool acyclic = true;
      for (const Edge& e : edges) acyclic = uf.unite(m.index(e.a), m.index(e.b)) && acyclic;
      std::set<std::size_t> roots;
      for (std::size_t i = 0; i < m.cell_count(); ++i) roots.insert(uf.find(i));
      const bool ok = acyclic && roots.size() == 1 && edges.size() == static_cast<std::size_t>(n * n - 1);
      bad += ok ? 0 : 1;
      ++total;
    }
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < 10.0, std::to_string(total - bad) + "/" + std::to_string(total) + " valid in " + fmt(secs) + " s"};
}

Outcome bipartite_parity() {
  const auto t0 = Clock::now();
  std::size_t pairs = 0, even = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const int n = 3 + static_cast<int>(s % 6);
    const Maze m = generate_rdfs(n, derive_seed(99, s));
    for (std::size_t i = 0; i < m.cell_count(); ++i) {
      const Coord a = m.coord(i);
      const auto dist = bfs_distances(m, a);
      for (Dir d : {Dir::S, Dir::E}) {
        const Coord b = step(a, d);
        if (!m.in_bounds(b)) continue;
        const int pd = dist[m.index(b)];
        if (pd < 0) continue;
        ++pairs;
        if (pd % 2 == 0) ++even;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {even == 0 && pairs > 0 && secs < 30.0,
          std::to_string(pairs - even) + "/" + std::to_string(pairs) + " adjacent pairs odd in " + fmt(secs) + " s"};
}

Outcome percolation_stats() {
  const int n = 6;
  const double p = 0.1;
  const std::size_t seeds = 10000;
  double sum_perc = 0, sum_union = 0;
  for (std::uint64_t s = 0; s < seeds; ++s) {
    const Maze perc = generate_percolation(n, p, derive_seed(7, s));
    sum_perc += static_cast<double>(perc.edge_count());
    GenSpec spec;
    spec.algorithm = Algorithm::rdfs_percolation;
    spec.grid_n = n;
    spec.p = p;
    spec.seed = derive_seed(8, s);
    sum_union += static_cast<double>(generate(spec).edge_count());
  }
  const double lattice = 2.0 * n * (n - 1);           // 60
  const double tree = n * n - 1.0;                    // 35
  const double mean_perc = sum_perc / seeds, mean_union = sum_union / seeds;
  const double exp_perc = lattice * p, sd_perc = std::sqrt(lattice * p * (1 - p) / seeds);
  const double exp_union = tree + (lattice - tree) * p, sd_union = std::sqrt((lattice - tree) * p * (1 - p) / seeds);
  const double z1 = (mean_perc - exp_perc) / sd_perc, z2 = (mean_union - exp_union) / sd_union;
  return {std::abs(z1) <= 3 && std::abs(z2) <= 3,
          "percolation mean " + fmt(mean_perc, 6) + " (expected " + fmt(exp_perc) + ", z " + fmt(z1, 3) + "); union mean " +
              fmt(mean_union, 6) + " (expected " + fmt(exp_union) + ", z " + fmt(z2, 3) + ")"};
}

Outcome codec_round_trip() {
  const Vocabulary vocab(8);
  std::size_t ok = 0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    GenSpec s;
    s.algorithm = static_cast<Algorithm>(i % 4);
    s.grid_n = 3 + static_cast<int>((i / 4) % 6);
    if (s.algorithm == Algorithm::percolation) s.p = 0.5;
    if (s.algorithm == Algorithm::rdfs_percolation) s.p = 0.1;
    try {
      const DatasetRecord r = make_record(s, 4242, i, vocab);
      const auto ids = encode(r.solved, vocab, r.shuffle_seed);
      const SolvedMaze back = decode(from_text(to_text(ids, vocab), vocab), vocab, s.grid_n);
      if (back == r.solved) ++ok;
    } catch (const std::exception&) {
    }
  }
  return {ok == 1000, std::to_string(ok) + "/1000 mazes round-trip"};
}

// --- 5-6: gradients and DLA ---------------------------------------------------------

GptModel<double> scaled_random_model(const ModelConfig& cfg, std::uint64_t seed) {
  GptModel<double> m = GptModel<double>::zeros(cfg);
  Rng rng(seed);
  m.weights.visit([&](const std::string& name, Tensor<double>& t) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double u = (rng.uniform() * 2 - 1) * 0.3;
      t[i] = is_gain_name(name) ? 1.0 + u : u;
    }
  });
  return m;
}

Outcome gradient_check() {
  const Vocabulary vocab(6);
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.d_head = 4;
  cfg.n_layers = 2;
  cfg.d_vocab = static_cast<int>(vocab.size());
  cfg.n_ctx = 48;
  const auto model = scaled_random_model(cfg, 5);
  GenSpec s;
  s.grid_n = 3;
  const DatasetRecord rec = make_record(s, 17, 0, vocab);
  const std::vector<TokenId>& seq = rec.tokens;
  const auto mask = loss_mask(seq, LossMaskMode::full_sequence);
  const GradCheckResult r = grad_check(model, seq, mask);

  std::size_t calls = 0;
  const GradCheckResult bad = grad_check<double>(model, seq, mask, 1e-5, 7, [&](std::size_t, Tensor<double>& g) {
    if (++calls == 12) {
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= 1.5;
    }
  });
  const bool pass = cfg.d_vocab == 47 && r.checked == model.parameter_count() && r.max_rel_error < 1e-3 &&
                    bad.max_rel_error > 1e-2;
  return {pass, "max relative error " + fmt(r.max_rel_error, 3) + " over " + std::to_string(r.checked) +
                    " parameters (worst " + r.worst_tensor + "); corrupted backward " + fmt(bad.max_rel_error, 3)};
}

Outcome dla_completeness() {
  const Vocabulary vocab(6);
  ModelConfig cfg;
  cfg.d_model = 32;
  cfg.d_head = 8;
  cfg.n_layers = 3;
  cfg.d_vocab = static_cast<int>(vocab.size());
  cfg.n_ctx = static_cast<int>(max_sequence_length(6));
  const auto model = scaled_random_model(cfg, 21);
  GenSpec s;
  s.grid_n = 6;
  const Dataset ds = build_dataset({s}, 100, 31, vocab);
  const std::size_t d = static_cast<std::size_t>(cfg.d_model);
  double worst_sum = 0, worst_oracle = 0;
  for (const auto& rec : ds.records) {
    const TaskPrompt tp = task_prompt(rec, vocab, TaskId::rand_path_token, rec.index);
    const DlaBreakdown b = dla_breakdown(model, tp.prompt, tp.answer);
    // Oracle: centre and scale the final residual by hand, apply the gain,
    // and project onto E(c) minus the mean of the other embeddings.
    ActivationCache<double> cache;
    forward(model, tp.prompt, &cache);
    const auto x = cache.resid.back().row(tp.prompt.size() - 1);
    double mu = 0, var = 0;
    for (double xi : x) mu += xi;
    mu /= static_cast<double>(d);
    for (double xi : x) var += (xi - mu) * (xi - mu);
    var /= static_cast<double>(d);
    const auto& E = model.weights.W_E;
    double oracle = 0;
    for (std::size_t k = 0; k < d; ++k) {
      double others = 0;
      for (std::size_t t = 0; t < E.rows(); ++t)
        if (t != static_cast<std::size_t>(tp.answer)) others += E.at(t, k);
      const double dir = E.at(static_cast<std::size_t>(tp.answer), k) - others / static_cast<double>(E.rows() - 1);
      oracle += model.weights.lnf_w[k] * (x[k] - mu) / std::sqrt(var + 1e-5) * dir;
    }
    const double scale = std::max(std::abs(oracle), 1e-12);
    worst_sum = std::max(worst_sum, std::abs(b.component_sum() - oracle) / scale);
    worst_oracle = std::max(worst_oracle, std::abs(b.total - oracle) / scale);
  }
  return {worst_sum <= 1e-3 && worst_oracle <= 1e-3,
          "100 prompts; worst relative error of component sum " + fmt(worst_sum, 3) + ", of total " + fmt(worst_oracle, 3)};
}

// --- 7-10: trained models ------------------------------------------------------------

TrainConfig desk_config(Algorithm alg, int epochs) {
  TrainConfig c;
  GenSpec s;
  s.algorithm = alg;
  s.grid_n = 4;
  c.mix = {s};
  c.dataset_size = 100000;
  c.eval_size = 500;
  c.max_grid_n = 4;
  c.model.d_model = 64;
  c.model.d_head = 16;
  c.model.n_layers = 4;
  c.model.d_vocab = static_cast<int>(Vocabulary(4).size());
  c.model.n_ctx = static_cast<int>(max_sequence_length(4));
  c.optim.lr = 1e-4;
  c.batch_size = 32;
  c.epochs = epochs;
  c.mask_mode = LossMaskMode::path_only;
  c.log_every = 500;
  return c;
}

struct TrainedModel {
  GptModel<float> model;
  double train_seconds = 0;
  bool cached = false;
  std::vector<json> log;
};

TrainedModel trained(TrainConfig c, const fs::path& cache_root) {
  const std::string key = c.mix[0].algorithm == Algorithm::forkless ? "forkless" : "rdfs";
  const std::string body = to_json(c).dump();
  std::ostringstream hex;
  hex << std::hex << fnv1a64(body.data(), body.size());
  c.out_dir = cache_root / (key + "_" + hex.str());
  const fs::path final_ck = checkpoint_path(c.out_dir, total_steps(c));
  const fs::path summary = c.out_dir / "summary.json";
  TrainedModel out;
  if (fs::exists(final_ck) && fs::exists(summary)) {
    std::ifstream in(summary);
    const json j = json::parse(in);
    out.model = load_checkpoint(final_ck).model;
    out.train_seconds = j.at("seconds").get<double>();
    out.cached = true;
    std::ifstream log(c.out_dir / "metrics.jsonl");
    std::string line;
    while (std::getline(log, line))
      if (!line.empty()) out.log.push_back(json::parse(line));
    return out;
  }
  std::cerr << "training " << key << " model into " << c.out_dir << "\n";
  c.verbose = true;
  TrainResult r = train(c);
  write_file(summary, json{{"seconds", r.seconds}, {"final_step", r.final_step}}.dump() + "\n");
  out.model = std::move(r.model);
  out.train_seconds = r.seconds;
  out.log = std::move(r.log);
  return out;
}

const Vocabulary& vocab4() {
  static const Vocabulary v(4);
  return v;
}

Dataset heldout(Algorithm alg, std::size_t n, std::uint64_t seed) {
  GenSpec s;
  s.algorithm = alg;
  s.grid_n = 4;
  return build_dataset({s}, n, seed, vocab4(), "heldout");
}

Outcome training_criterion(const TrainedModel& fk, const TrainedModel& rd) {
  const Vocabulary& v = vocab4();
  const Dataset ev = heldout(Algorithm::forkless, 1000, 7001);
  const NextTokenFn fn = next_token_fn(fk.model);
  const double nonend = eval_single_token(fn, ev, v, TaskId::rand_path_token_nonend, 1).accuracy;
  std::size_t reached = 0;
  for (const auto& rec : ev.records) {
    const auto prompt = encode_prompt(rec.solved, v, rec.shuffle_seed);
    const RolloutResult ro = rollout(fk.model, prompt, rollout_cap(4));
    reached += score_rollout(rec.solved, ro.generated, v).target_reached ? 1 : 0;
  }
  const double reach_rate = static_cast<double>(reached) / static_cast<double>(ev.size());

  const Dataset rev = heldout(Algorithm::rdfs, 1000, 7002);
  const NextTokenFn rfn = next_token_fn(rd.model);
  const double r_first = eval_single_token(rfn, rev, v, TaskId::first_path_choice, 1).accuracy;
  const double r_nonend = eval_single_token(rfn, rev, v, TaskId::rand_path_token_nonend, 1).accuracy;

  const bool pass = nonend >= 0.85 && reach_rate >= 0.70 && fk.train_seconds <= 7200 && r_first <= r_nonend;
  return {pass, "forkless rand_path_token_nonend " + fmt(nonend) + ", target reached " + fmt(reach_rate) + ", training " +
                    fmt(fk.train_seconds, 5) + " s" + (fk.cached ? " (cached)" : "") + "; rdfs first_path_choice " +
                    fmt(r_first) + " vs rand_path_token_nonend " + fmt(r_nonend)};
}

Outcome probe_criterion(const TrainedModel& fk, std::uint64_t random_seed) {
  const Vocabulary& v = vocab4();
  const Dataset ds = heldout(Algorithm::forkless, 2000, 7003);
  const AnalysisModel model = fk.model.cast<double>();
  ModelConfig rc = fk.model.config;
  rc.seed = random_seed;
  const AnalysisModel random = init_params<float>(rc).cast<double>();

  const ResidualSet rs = collect_residuals(model, ds, v);
  const ResidualSet rr = collect_residuals(random, ds, v);
  const Split sp = split_by_maze(rs, 0.8, 1);
  const ProbeSet ps = train_probes(rs, sp.train, 1e-2);
  const ProbeSet pr = train_probes(rr, sp.train, 1e-2);
  const ProbeAccuracy at = probe_accuracy(ps, rs, sp.validation);
  const ProbeAccuracy ar = probe_accuracy(pr, rr, sp.validation);
  const double best_t = at.per_layer[at.best_layer], best_r = ar.per_layer[ar.best_layer];
  const double boundary = *std::min_element(at.boundary.begin(), at.boundary.end());

  ResidualSet shuffled = rs;
  shuffle_labels(shuffled, 77);
  const ProbeSet pshuf = train_probes(shuffled, sp.train, 1e-2);
  const ProbeAccuracy ashuf = probe_accuracy(pshuf, shuffled, sp.validation);
  const double majority = majority_rate(shuffled, sp.train, sp.validation);
  double worst_gap = 0;
  for (double a : ashuf.per_layer) worst_gap = std::max(worst_gap, std::abs(a - majority));

  const bool pass = best_t - best_r >= 0.10 && boundary >= 0.99 && worst_gap <= 0.03;
  return {pass, "trained best layer " + std::to_string(at.best_layer) + " " + fmt(best_t) + " vs random-init " +
                    fmt(best_r) + "; boundary " + fmt(boundary) + "; shuffled within " + fmt(worst_gap, 3) +
                    " of majority " + fmt(majority)};
}

Outcome lens_criterion(const TrainedModel& fk) {
  const Vocabulary& v = vocab4();
  const Dataset ds = heldout(Algorithm::forkless, 300, 7004);
  const AnalysisModel model = fk.model.cast<double>();
  const LensTranslators lens = train_tuned_lens(model, ds, LensConfig{});
  const NeighborMassCurve nm = lens_neighbor_mass(model, lens, ds, v);
  const std::size_t L = lens.n_layers;
  double worst_total = 0;
  for (std::size_t l = 0; l < nm.connected_mean.size(); ++l)
    worst_total = std::max(worst_total, nm.connected_mean[l] + nm.unconnected_mean[l]);
  const bool pass = lens.final_kl[L] <= 1e-3 && worst_total <= 1.0 + 1e-12 && nm.connected_mean[L] > nm.unconnected_mean[L];
  return {pass, "final-layer KL " + fmt(lens.final_kl[L], 3) + "; max connected+unconnected " + fmt(worst_total) +
                    "; final connected " + fmt(nm.connected_mean[L]) + " vs unconnected " + fmt(nm.unconnected_mean[L])};
}

Outcome embedding_criterion(const TrainedModel& fk, const TrainedModel& rd) {
  const Vocabulary& v = vocab4();
  const EmbeddingStats st = embedding_distance_stats(fk.model.cast<double>(), v, 4, 3);
  const EmbeddingStats sr = embedding_distance_stats(rd.model.cast<double>(), v, 4, 3);
  int non_reject = 0;
  std::string ps;
  for (std::uint64_t seed = 100; seed < 105; ++seed) {
    ModelConfig rc = fk.model.config;
    rc.seed = seed;
    const EmbeddingStats r = embedding_distance_stats(init_params<float>(rc).cast<double>(), v, 4, 3);
    if (!(r.spearman.p_value < 0.01)) ++non_reject;
    ps += (ps.empty() ? "" : ", ") + fmt(r.spearman.p_value, 2);
  }
  const bool pass = st.spearman.defined && st.spearman.rho > 0 && st.spearman.p_value < 0.01 && non_reject >= 4;
  return {pass, "trained rho " + fmt(st.spearman.rho, 3) + " p " + fmt(st.spearman.p_value, 3) + "; random-init p [" + ps +
                    "] (" + std::to_string(non_reject) + "/5 not rejected); rdfs variant rho " + fmt(sr.spearman.rho, 3) +
                    " p " + fmt(sr.spearman.p_value, 3) + " (not scored)"};
}

// --- 11-12 ----------------------------------------------------------------------------

Outcome baseline_criterion(const fs::path& out) {
  std::vector<RolloutOutcome> outcomes;
  std::size_t solved = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const int n = 3 + static_cast<int>(s % 6);
    const Maze m = generate_forkless(n, derive_seed(11, s));
    std::vector<Coord> ends, cells;
    for (std::size_t i = 0; i < m.cell_count(); ++i) {
      const Coord c = m.coord(i);
      if (m.degree(c) == 1) ends.push_back(c);
      if (m.degree(c) > 0) cells.push_back(c);
    }
    Rng rng(derive_seed(12, s));
    const Coord origin = ends[rng.below(ends.size())];
    Coord target = origin;
    while (target == origin) target = cells[rng.below(cells.size())];
    const SolvedMaze sm{m, origin, target, shortest_path(m, origin, target)};
    const BaselineResult b = baseline_rollout(m, origin, target, derive_seed(13, s));
    const Vocabulary v(n);
    std::vector<TokenId> gen;
    for (Coord c : b.path) gen.push_back(v.coord_id(c));
    if (b.reached) gen.push_back(v.special(Special::path_end));
    const RolloutScore sc = score_rollout(sm, gen, v);
    outcomes.push_back({sm.path.size(), sc.exactly_correct, sc.valid, sc.target_reached});
    solved += sc.exactly_correct ? 1 : 0;
  }
  Table t;
  t.columns = {"path_length", "n", "exact_rate", "valid_rate", "reached_rate"};
  for (const PathLengthRow& r : accuracy_by_path_length(outcomes))
    t.add({static_cast<std::int64_t>(r.path_length), static_cast<std::int64_t>(r.n), r.exact_rate, r.valid_rate, r.reached_rate});
  const fs::path csv = out / "baseline_accuracy_by_path_length.csv";
  write_csv(csv, t);
  return {solved == outcomes.size() && fs::exists(csv),
          std::to_string(solved) + "/" + std::to_string(outcomes.size()) + " solved exactly; wrote " + csv.string()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome persistence_criterion(const fs::path& out) {
  const fs::path dir = out / "persistence";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const Vocabulary v(6);
  std::vector<GenSpec> mix(4);
  for (std::size_t i = 0; i < 4; ++i) {
    mix[i].algorithm = static_cast<Algorithm>(i);
    mix[i].grid_n = 6;
  }
  mix[2].p = 0.5;
  mix[3].p = 0.1;
  save_dataset(dir / "a.jsonl", build_dataset(mix, 500, 3, v, "p"), v);
  save_dataset(dir / "b.jsonl", build_dataset(mix, 500, 3, v, "p"), v);
  const bool data_ok = slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl");

  TrainConfig c;
  GenSpec s;
  s.grid_n = 3;
  c.mix = {s};
  c.dataset_size = 64;
  c.eval_size = 16;
  c.max_grid_n = 3;
  c.model.d_model = 16;
  c.model.d_head = 8;
  c.model.n_layers = 2;
  c.model.d_vocab = static_cast<int>(Vocabulary(3).size());
  c.model.n_ctx = static_cast<int>(max_sequence_length(3));
  c.optim.lr = 1e-3;
  c.batch_size = 8;
  c.epochs = 2;
  c.log_every = 1;
  c.out_dir = dir / "full";
  const TrainResult full = train(c);
  save_checkpoint(dir / "copy.bin", load_checkpoint(checkpoint_path(c.out_dir, full.final_step)).model, full.final_step,
                  nullptr);
  const Checkpoint back = load_checkpoint(dir / "copy.bin");
  bool ck_ok = true;
  const auto pa = full.model.tensors(), pb = back.model.tensors();
  for (std::size_t i = 0; i < pa.size(); ++i) ck_ok = ck_ok && std::memcmp(pa[i]->data(), pb[i]->data(), pa[i]->numel() * 4) == 0;

  TrainConfig part = c;
  part.out_dir = dir / "resumed";
  part.stop_after = 5;
  train(part);
  TrainConfig rest = c;
  rest.out_dir = part.out_dir;
  train(rest, checkpoint_path(part.out_dir, 5));
  const bool log_ok = slurp(c.out_dir / "metrics.jsonl") == slurp(part.out_dir / "metrics.jsonl") &&
                      slurp(checkpoint_path(c.out_dir, full.final_step)) == slurp(checkpoint_path(part.out_dir, full.final_step));
  return {data_ok && ck_ok && log_ok, std::string("dataset bytes ") + (data_ok ? "identical" : "differ") + "; checkpoint " +
                                          (ck_ok ? "bitwise equal" : "differs") + "; resumed log " +
                                          (log_ok ? "identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  CLI::App app{"Acceptance checks"};
  app.add_option("--out", opt.out, "directory for emitted reports")->capture_default_str();
  app.add_option("--cache", opt.cache, "directory holding trained checkpoints")->capture_default_str();
  app.add_option("--epochs", opt.epochs, "epochs for the trained models")->capture_default_str();
  app.add_option("--only", opt.only, "run only these criteria");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(opt.out);
  fs::create_directories(opt.cache);

  const auto wanted = [&](int id) { return opt.only.empty() || std::find(opt.only.begin(), opt.only.end(), id) != opt.only.end(); };
  int failures = 0;
  const auto run = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    if (!wanted(id)) return;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << name << ": " << o.detail << " [" << fmt(seconds_since(t0), 3)
              << " s]" << std::endl;
  };

  run(1, "maze invariants", maze_invariants);
  run(2, "bipartite parity", bipartite_parity);
  run(3, "percolation statistics", percolation_stats);
  run(4, "codec round trip", codec_round_trip);
  run(5, "gradient check", gradient_check);
  run(6, "dla completeness", dla_completeness);

  std::optional<TrainedModel> fk, rd;
  const auto forkless = [&]() -> const TrainedModel& {
    if (!fk) fk = trained(desk_config(Algorithm::forkless, opt.epochs), opt.cache);
    return *fk;
  };
  const auto rdfs = [&]() -> const TrainedModel& {
    if (!rd) rd = trained(desk_config(Algorithm::rdfs, opt.epochs), opt.cache);
    return *rd;
  };
  run(7, "scaled-down training", [&] { return training_criterion(forkless(), rdfs()); });
  run(8, "probe discrimination", [&] { return probe_criterion(forkless(), 4242); });
  run(9, "tuned lens", [&] { return lens_criterion(forkless()); });
  run(10, "embedding geometry", [&] { return embedding_criterion(forkless(), rdfs()); });
  run(11, "corridor baseline", [&] { return baseline_criterion(opt.out); });
  run(12, "determinism and persistence", [&] { return persistence_criterion(opt.out); });
  return failures == 0 ? 0 : 1;
}
