#include "mazelab/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include "mazelab/rng.hpp"
#include "mazelab/store.hpp"

namespace mazelab {

using nlohmann::json;

json to_json(const TrainConfig& c) {
  json mix = json::array();
  for (const auto& s : c.mix) mix.push_back(to_json(s));
  json tasks = json::array();
  for (TaskId t : c.eval_tasks) tasks.push_back(to_string(t));
  json j{{"mix", mix},
         {"dataset_size", c.dataset_size},
         {"data_seed", c.data_seed},
         {"eval_size", c.eval_size},
         {"eval_seed", c.eval_seed},
         {"task_seed", c.task_seed},
         {"shuffle_seed", c.shuffle_seed},
         {"max_grid_n", c.max_grid_n},
         {"model", to_json(c.model)},
         {"optim",
          {{"lr", c.optim.lr},
           {"beta1", c.optim.beta1},
           {"beta2", c.optim.beta2},
           {"eps", c.optim.eps},
           {"weight_decay", c.optim.weight_decay},
           {"on_non_finite", c.optim.on_non_finite == NonFinitePolicy::fail ? "fail" : "skip_step"}}},
         {"batch_size", c.batch_size},
         {"epochs", c.epochs},
         {"mask_mode", to_string(c.mask_mode)},
         {"checkpoint_steps", c.checkpoint_steps},
         {"eval_tasks", tasks},
         {"log_every", c.log_every}};
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  for (const auto& s : j.at("mix")) c.mix.push_back(gen_spec_from_json(s));
  c.dataset_size = j.at("dataset_size").get<std::size_t>();
  c.data_seed = j.at("data_seed").get<std::uint64_t>();
  c.eval_size = j.at("eval_size").get<std::size_t>();
  c.eval_seed = j.at("eval_seed").get<std::uint64_t>();
  c.task_seed = j.at("task_seed").get<std::uint64_t>();
  c.shuffle_seed = j.at("shuffle_seed").get<std::uint64_t>();
  c.max_grid_n = j.at("max_grid_n").get<int>();
  c.model = model_config_from_json(j.at("model"));
  const auto& o = j.at("optim");
  c.optim.lr = o.at("lr").get<double>();
  c.optim.beta1 = o.at("beta1").get<double>();
  c.optim.beta2 = o.at("beta2").get<double>();
  c.optim.eps = o.at("eps").get<double>();
  c.optim.weight_decay = o.at("weight_decay").get<double>();
  c.optim.on_non_finite = o.value("on_non_finite", std::string("fail")) == "fail" ? NonFinitePolicy::fail : NonFinitePolicy::skip_step;
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<int>();
  c.mask_mode = loss_mask_mode_from_string(j.at("mask_mode").get<std::string>());
  c.checkpoint_steps = j.at("checkpoint_steps").get<std::vector<std::int64_t>>();
  c.eval_tasks.clear();
  for (const auto& t : j.at("eval_tasks")) c.eval_tasks.push_back(task_from_string(t.get<std::string>()));
  c.log_every = j.at("log_every").get<std::int64_t>();
  return c;
}

std::vector<std::int64_t> log_spaced_steps(std::int64_t total) {
  std::vector<std::int64_t> out{0};
  for (std::int64_t s = 1; s < total; s *= 2) out.push_back(s);
  if (total > 0) out.push_back(total);
  return out;
}

std::int64_t steps_per_epoch(const TrainConfig& c) {
  if (c.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  return static_cast<std::int64_t>((c.dataset_size + c.batch_size - 1) / c.batch_size);
}

std::int64_t total_steps(const TrainConfig& c) { return steps_per_epoch(c) * c.epochs; }

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::int64_t step) {
  char name[32];
  std::snprintf(name, sizeof(name), "ckpt_%08lld.bin", static_cast<long long>(step));
  return out_dir / "checkpoints" / name;
}

NextTokenFn next_token_fn(const GptModel<float>& model) {
  return [&model](std::span<const TokenId> prompt) {
    const Tensor<float> logits = forward(model, prompt);
    const auto last = logits.row(logits.rows() - 1);
    return std::vector<float>(last.begin(), last.end());
  };
}

std::vector<json> evaluate_tasks(const GptModel<float>& model, const Dataset& ds, const Vocabulary& vocab,
                                 const std::vector<TaskId>& tasks, std::uint64_t task_seed, std::int64_t step) {
  std::vector<json> out;
  const auto fn = next_token_fn(model);
  for (TaskId t : tasks) {
    const TaskEval ev = eval_single_token(fn, ds, vocab, t, task_seed);
    out.push_back({{"step", step}, {"task", to_string(t)}, {"dataset_tag", ds.tag}, {"accuracy", ev.accuracy}, {"n", ev.n}});
  }
  return out;
}

namespace {

struct SequenceLoss {
  double loss = 0.0;
  std::size_t count = 0;
};

std::size_t mask_count(const std::vector<std::uint8_t>& mask) {
  return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; }));
}

}  // namespace

double train_step(GptModel<float>& model, AdamWState<float>& state, const std::vector<const std::vector<TokenId>*>& batch,
                  LossMaskMode mode) {
  std::vector<std::vector<std::uint8_t>> masks;
  std::size_t total = 0;
  for (const auto* seq : batch) {
    masks.push_back(loss_mask(*seq, mode));
    total += mask_count(masks.back());
  }
  if (total == 0) throw DegenerateBatchError("batch has no loss positions");

  const auto params = model.tensors();
  std::vector<Tensor<double>> grads;
  grads.reserve(params.size());
  for (const auto* p : params) grads.emplace_back(p->shape());

  double loss_sum = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& seq = *batch[b];
    const std::size_t count = mask_count(masks[b]);
    if (count == 0) continue;
    Tape<float> tape;
    const auto vars = bind(tape, model, true);
    const std::span<const TokenId> inputs(seq.data(), seq.size() - 1);
    const std::span<const TokenId> targets(seq.data() + 1, seq.size() - 1);
    const auto logits = gpt_forward(tape, model.config, vars, inputs);
    const auto loss = tape.cross_entropy_masked(logits, targets, masks[b]);
    const double value = tape.value(loss)[0];
    if (!std::isfinite(value)) throw NonFiniteError("non-finite training loss");
    loss_sum += value * static_cast<double>(count);
    tape.backward(loss, static_cast<float>(static_cast<double>(count) / static_cast<double>(total)));
    std::size_t i = 0;
    vars.visit([&](const std::string&, const Tape<float>::Var& v) {
      if (const auto* g = tape.grad(v)) {
        auto& acc = grads[i];
        for (std::size_t j = 0; j < acc.numel(); ++j) acc[j] += static_cast<double>((*g)[j]);
      }
      ++i;
    });
  }
  adamw_step<float, double>(std::span<Tensor<float>* const>(params), std::span<const Tensor<double>>(grads), state);
  return loss_sum / static_cast<double>(total);
}

double mean_loss(const GptModel<float>& model, const std::vector<std::vector<TokenId>>& seqs, LossMaskMode mode) {
  double sum = 0.0;
  std::size_t total = 0;
  for (const auto& seq : seqs) {
    const auto mask = loss_mask(seq, mode);
    const std::size_t count = mask_count(mask);
    if (count == 0) continue;
    Tape<float> tape;
    const auto vars = bind(tape, model, false);
    const std::span<const TokenId> inputs(seq.data(), seq.size() - 1);
    const std::span<const TokenId> targets(seq.data() + 1, seq.size() - 1);
    const auto logits = gpt_forward(tape, model.config, vars, inputs);
    sum += static_cast<double>(tape.value(tape.cross_entropy_masked(logits, targets, mask))[0]) * static_cast<double>(count);
    total += count;
  }
  if (total == 0) throw DegenerateBatchError("mean_loss: no loss positions");
  return sum / static_cast<double>(total);
}

TrainResult train(const TrainConfig& config, const std::optional<std::filesystem::path>& resume_from) {
  const auto t0 = std::chrono::steady_clock::now();
  const Vocabulary vocab(config.max_grid_n);
  if (config.model.d_vocab != static_cast<int>(vocab.size())) {
    throw std::invalid_argument("model d_vocab " + std::to_string(config.model.d_vocab) + " != vocabulary size " +
                                std::to_string(vocab.size()));
  }
  const std::int64_t total = total_steps(config);
  std::vector<std::int64_t> schedule = config.checkpoint_steps.empty() ? log_spaced_steps(total) : config.checkpoint_steps;
  for (std::size_t i = 1; i < schedule.size(); ++i) {
    if (schedule[i] <= schedule[i - 1]) throw std::invalid_argument("checkpoint schedule must be strictly increasing");
  }
  auto scheduled = [&](std::int64_t s) { return std::binary_search(schedule.begin(), schedule.end(), s); };

  Dataset train_ds = build_dataset(config.mix, config.dataset_size, config.data_seed, vocab, "train");
  Dataset eval_ds = build_dataset(config.mix, config.eval_size, config.eval_seed, vocab, "eval");
  assert_disjoint(train_ds, eval_ds);
  std::size_t longest = 0;
  for (const auto& r : train_ds.records) longest = std::max(longest, r.tokens.size());
  if (longest > static_cast<std::size_t>(config.model.n_ctx) + 1) {
    throw std::invalid_argument("n_ctx " + std::to_string(config.model.n_ctx) + " shorter than training sequences (" +
                                std::to_string(longest) + " tokens)");
  }

  TrainResult result;
  std::int64_t start = 0;
  AdamWState<float> state;
  if (resume_from) {
    Checkpoint ck = load_checkpoint(*resume_from);
    if (!(ck.config == config.model)) throw std::invalid_argument("resume checkpoint has a different model config");
    if (!ck.optimizer) throw std::invalid_argument("resume checkpoint carries no optimizer state");
    result.model = std::move(ck.model);
    state = std::move(*ck.optimizer);
    state.config = config.optim;
    start = ck.step;
  } else {
    result.model = init_params<float>(config.model);
    const auto ptrs = result.model.tensors();
    std::vector<const Tensor<float>*> cptrs(ptrs.begin(), ptrs.end());
    state = AdamWState<float>(config.optim, cptrs);
  }

  const bool write = !config.out_dir.empty();
  std::ofstream log_file;
  if (write) {
    std::filesystem::create_directories(config.out_dir / "checkpoints");
    std::ofstream(config.out_dir / "train_config.json") << to_json(config).dump(2) << '\n';
    const auto log_path = config.out_dir / "metrics.jsonl";
    std::vector<std::string> kept;
    if (resume_from && std::filesystem::exists(log_path)) {
      std::ifstream in(log_path);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        if (j.at("step").get<std::int64_t>() <= start) {
          kept.push_back(line);
          result.log.push_back(j);
        }
      }
    }
    log_file.open(log_path, std::ios::trunc);
    for (const auto& line : kept) log_file << line << '\n';
  }
  auto emit = [&](const json& rec) {
    result.log.push_back(rec);
    if (write) {
      log_file << rec.dump() << '\n';
      log_file.flush();
    }
  };
  auto checkpoint = [&](std::int64_t step) {
    if (write) {
      const auto path = checkpoint_path(config.out_dir, step);
      save_checkpoint(path, result.model, step, &state, {{"mask_mode", to_string(config.mask_mode)}});
      result.checkpoints.push_back(path);
    }
    for (auto& rec : evaluate_tasks(result.model, eval_ds, vocab, config.eval_tasks, config.task_seed, step)) emit(rec);
  };

  if (!resume_from && scheduled(0)) checkpoint(0);

  const std::int64_t per_epoch = steps_per_epoch(config);
  std::vector<std::size_t> order;
  std::int64_t order_epoch = -1;
  const std::int64_t end = config.stop_after ? std::min(total, *config.stop_after) : total;
  for (std::int64_t s = start; s < end; ++s) {
    const std::int64_t epoch = s / per_epoch;
    if (epoch != order_epoch) {
      order.resize(train_ds.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng rng(derive_seed(config.shuffle_seed, static_cast<std::uint64_t>(epoch)));
      rng.shuffle(order.begin(), order.end());
      order_epoch = epoch;
    }
    const std::size_t first = static_cast<std::size_t>(s % per_epoch) * config.batch_size;
    const std::size_t last = std::min(first + config.batch_size, order.size());
    std::vector<const std::vector<TokenId>*> batch;
    for (std::size_t i = first; i < last; ++i) batch.push_back(&train_ds.records[order[i]].tokens);
    double loss = 0.0;
    try {
      loss = train_step(result.model, state, batch, config.mask_mode);
    } catch (const NonFiniteError& e) {
      throw TrainingAborted("step " + std::to_string(s + 1) + ": " + e.what() + "; last checkpoint retained");
    }
    const std::int64_t done = s + 1;
    if (config.log_every > 0 && (done % config.log_every == 0 || done == total)) emit({{"step", done}, {"train_loss", loss}});
    if (config.verbose && (done % 50 == 0 || done == total)) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cerr << "step " << done << "/" << total << " loss " << loss << " (" << secs << " s)\n";
    }
    if (scheduled(done)) checkpoint(done);
    result.final_step = done;
  }
  if (start >= end) result.final_step = start;
  if (write && end < total && end > start && !scheduled(end)) {
    const auto path = checkpoint_path(config.out_dir, end);
    save_checkpoint(path, result.model, end, &state, {{"mask_mode", to_string(config.mask_mode)}});
    result.checkpoints.push_back(path);
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace mazelab
