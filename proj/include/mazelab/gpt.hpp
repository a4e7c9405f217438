#pragma once

// Decoder-only transformer: token + learned position embeddings, pre-LN
// attention/MLP blocks, final LayerNorm and an untied unembedding.
//
// Parameter naming follows a fixed canonical order (see visit()), which is
// also the on-disk order of checkpoints.

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mazelab/autodiff.hpp"
#include "mazelab/codec.hpp"
#include "mazelab/tensor.hpp"

namespace mazelab {

class ContextOverflowError : public std::length_error {
 public:
  using std::length_error::length_error;
};

struct ModelConfig {
  int d_model = 64;
  int d_head = 16;
  int n_layers = 4;
  int d_vocab = 27;
  int n_ctx = 128;
  std::uint64_t seed = 0;
  TokenId pad_id = static_cast<TokenId>(Special::pad);

  int n_heads() const { return d_model / d_head; }
  int d_mlp() const { return 4 * d_model; }

  void validate() const {
    if (d_model <= 0 || d_head <= 0 || n_layers <= 0 || d_vocab <= 0 || n_ctx <= 0) {
      throw std::invalid_argument("model dimensions must be positive");
    }
    if (d_model % d_head != 0) {
      throw std::invalid_argument("d_model " + std::to_string(d_model) + " not divisible by d_head " +
                                  std::to_string(d_head));
    }
  }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <class X>
struct BlockOf {
  X ln1_w, ln1_b;
  X W_Q, b_Q, W_K, b_K, W_V, b_V;
  X W_O;  // rows h*d_head .. (h+1)*d_head belong to head h; no output bias
  X ln2_w, ln2_b;
  X W_in, b_in, W_out, b_out;
};

template <class X>
struct ModelOf {
  X W_E;    // [d_vocab, d_model]
  X W_pos;  // [n_ctx, d_model]
  std::vector<BlockOf<X>> blocks;
  X lnf_w, lnf_b;
  X W_U;  // [d_model, d_vocab]
  X b_U;

  template <class F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

 private:
  template <class Self, class F>
  static void visit_impl(Self& s, F& f) {
    f("embed.W_E", s.W_E);
    f("embed.W_pos", s.W_pos);
    for (std::size_t l = 0; l < s.blocks.size(); ++l) {
      auto& b = s.blocks[l];
      const std::string p = "blocks." + std::to_string(l) + ".";
      f(p + "ln1.w", b.ln1_w);
      f(p + "ln1.b", b.ln1_b);
      f(p + "attn.W_Q", b.W_Q);
      f(p + "attn.b_Q", b.b_Q);
      f(p + "attn.W_K", b.W_K);
      f(p + "attn.b_K", b.b_K);
      f(p + "attn.W_V", b.W_V);
      f(p + "attn.b_V", b.b_V);
      f(p + "attn.W_O", b.W_O);
      f(p + "ln2.w", b.ln2_w);
      f(p + "ln2.b", b.ln2_b);
      f(p + "mlp.W_in", b.W_in);
      f(p + "mlp.b_in", b.b_in);
      f(p + "mlp.W_out", b.W_out);
      f(p + "mlp.b_out", b.b_out);
    }
    f("ln_final.w", s.lnf_w);
    f("ln_final.b", s.lnf_b);
    f("unembed.W_U", s.W_U);
    f("unembed.b_U", s.b_U);
  }
};

template <class T>
struct GptModel {
  ModelConfig config;
  ModelOf<Tensor<T>> weights;

  std::vector<Tensor<T>*> tensors() {
    std::vector<Tensor<T>*> out;
    weights.visit([&](const std::string&, Tensor<T>& t) { out.push_back(&t); });
    return out;
  }
  std::vector<const Tensor<T>*> tensors() const {
    std::vector<const Tensor<T>*> out;
    weights.visit([&](const std::string&, const Tensor<T>& t) { out.push_back(&t); });
    return out;
  }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    weights.visit([&](const std::string& n, const Tensor<T>&) { out.push_back(n); });
    return out;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    weights.visit([&](const std::string&, const Tensor<T>& t) { n += t.numel(); });
    return n;
  }

  template <class U>
  GptModel<U> cast() const {
    GptModel<U> out = GptModel<U>::zeros(config);
    auto dst = out.tensors();
    auto src = tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<U>();
    return out;
  }

  // Correctly shaped, zero-filled parameters (LayerNorm gains included).
  static GptModel zeros(const ModelConfig& cfg) {
    cfg.validate();
    const auto d = static_cast<std::size_t>(cfg.d_model);
    const auto v = static_cast<std::size_t>(cfg.d_vocab);
    const auto m = static_cast<std::size_t>(cfg.d_mlp());
    GptModel g;
    g.config = cfg;
    auto& w = g.weights;
    w.W_E = Tensor<T>({v, d});
    w.W_pos = Tensor<T>({static_cast<std::size_t>(cfg.n_ctx), d});
    w.blocks.resize(static_cast<std::size_t>(cfg.n_layers));
    for (auto& b : w.blocks) {
      b.ln1_w = Tensor<T>({d});
      b.ln1_b = Tensor<T>({d});
      b.W_Q = Tensor<T>({d, d});
      b.b_Q = Tensor<T>({d});
      b.W_K = Tensor<T>({d, d});
      b.b_K = Tensor<T>({d});
      b.W_V = Tensor<T>({d, d});
      b.b_V = Tensor<T>({d});
      b.W_O = Tensor<T>({d, d});
      b.ln2_w = Tensor<T>({d});
      b.ln2_b = Tensor<T>({d});
      b.W_in = Tensor<T>({d, m});
      b.b_in = Tensor<T>({m});
      b.W_out = Tensor<T>({m, d});
      b.b_out = Tensor<T>({d});
    }
    w.lnf_w = Tensor<T>({d});
    w.lnf_b = Tensor<T>({d});
    w.W_U = Tensor<T>({d, v});
    w.b_U = Tensor<T>({v});
    return g;
  }
};

inline bool is_bias_name(const std::string& name) {
  const auto dot = name.rfind('.');
  const std::string leaf = name.substr(dot + 1);
  return leaf.rfind("b_", 0) == 0 || leaf == "b";
}
inline bool is_gain_name(const std::string& name) {
  return name.size() >= 2 && name.compare(name.size() - 2, 2, ".w") == 0;
}

// Weights ~ Normal(0, 0.02), biases 0, LayerNorm gains 1; deterministic in config.seed.
template <class T>
GptModel<T> init_params(const ModelConfig& cfg) {
  GptModel<T> g = GptModel<T>::zeros(cfg);
  std::mt19937_64 engine(cfg.seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  g.weights.visit([&](const std::string& name, Tensor<T>& t) {
    if (is_gain_name(name)) {
      t.fill(T{1});
    } else if (!is_bias_name(name)) {
      for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(normal(engine));
    }
  });
  return g;
}

template <class T>
ModelOf<typename Tape<T>::Var> bind(Tape<T>& tape, const GptModel<T>& model, bool requires_grad) {
  using Var = typename Tape<T>::Var;
  ModelOf<Var> vars;
  vars.blocks.resize(model.weights.blocks.size());
  std::vector<Var*> slots;
  vars.visit([&](const std::string&, Var& v) { slots.push_back(&v); });
  std::size_t i = 0;
  model.weights.visit([&](const std::string&, const Tensor<T>& t) { *slots[i++] = tape.parameter(t, requires_grad); });
  return vars;
}

template <class T>
struct ActivationCache {
  std::vector<TokenId> tokens;
  std::vector<Tensor<T>> resid;      // n_layers + 1 snapshots, each [len, d_model]
  std::vector<Tensor<T>> resid_mid;  // after attention, per layer
  std::vector<Tensor<T>> head_out;   // per layer [H, len, d_model], residual basis
  std::vector<Tensor<T>> mlp_out;    // per layer [len, d_model]
  std::vector<Tensor<T>> attn;       // per layer [H, len, len]
  std::vector<T> final_ln_mean;      // per position
  std::vector<T> final_ln_scale;     // per position, sqrt(var + eps)
  Tensor<T> final_ln_gain;

  std::size_t length() const noexcept { return tokens.size(); }
  std::size_t n_layers() const noexcept { return attn.size(); }
  std::size_t n_heads() const noexcept { return attn.empty() ? 0 : attn.front().dim(0); }
};

// Per-position inputs derived from a token sequence with optional left padding.
struct PositionInfo {
  std::vector<std::int32_t> positions;  // pads excluded from the count
  std::vector<std::uint8_t> key_valid;  // 0 for pad tokens
};

inline PositionInfo position_info(std::span<const TokenId> tokens, TokenId pad_id) {
  PositionInfo info;
  info.positions.resize(tokens.size());
  info.key_valid.resize(tokens.size());
  std::int32_t next = 0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const bool real = tokens[t] != pad_id;
    info.key_valid[t] = real ? 1 : 0;
    info.positions[t] = real ? next++ : 0;
  }
  return info;
}

// Records the forward pass on the tape and returns the logits [len, d_vocab].
template <class T>
typename Tape<T>::Var gpt_forward(Tape<T>& tape, const ModelConfig& cfg, const ModelOf<typename Tape<T>::Var>& w,
                                  std::span<const TokenId> tokens, ActivationCache<T>* cache = nullptr) {
  using Var = typename Tape<T>::Var;
  const std::size_t len = tokens.size();
  if (len == 0) throw std::invalid_argument("forward: empty token sequence");
  if (len > static_cast<std::size_t>(cfg.n_ctx)) {
    throw ContextOverflowError("sequence of " + std::to_string(len) + " tokens exceeds n_ctx " + std::to_string(cfg.n_ctx));
  }
  for (std::size_t t = 0; t < len; ++t) {
    if (tokens[t] < 0 || tokens[t] >= cfg.d_vocab) {
      throw std::invalid_argument("token id " + std::to_string(tokens[t]) + " at position " + std::to_string(t) +
                                  " outside d_vocab " + std::to_string(cfg.d_vocab));
    }
  }
  const auto heads = static_cast<std::size_t>(cfg.n_heads());
  const auto dh = static_cast<std::size_t>(cfg.d_head);
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const PositionInfo info = position_info(tokens, cfg.pad_id);
  const T inv_sqrt_dh = T{1} / std::sqrt(static_cast<T>(cfg.d_head));

  Var x = tape.add(tape.embedding(w.W_E, tokens), tape.embedding(w.W_pos, info.positions));
  if (cache) {
    *cache = ActivationCache<T>{};
    cache->tokens.assign(tokens.begin(), tokens.end());
    cache->resid.push_back(tape.value(x));
  }
  for (const auto& b : w.blocks) {
    Var h = tape.layer_norm(x, b.ln1_w, b.ln1_b);
    Var q = tape.split_heads(tape.add_bias(tape.matmul(h, b.W_Q), b.b_Q), heads);
    Var k = tape.split_heads(tape.add_bias(tape.matmul(h, b.W_K), b.b_K), heads);
    Var v = tape.split_heads(tape.add_bias(tape.matmul(h, b.W_V), b.b_V), heads);
    Var pattern = tape.causal_softmax(tape.scale(tape.bmm(q, k, true), inv_sqrt_dh), info.key_valid);
    Var z = tape.bmm(pattern, v);
    Var attn_out = tape.matmul(tape.merge_heads(z), b.W_O);
    Var mid = tape.add(x, attn_out);
    Var h2 = tape.layer_norm(mid, b.ln2_w, b.ln2_b);
    Var mlp = tape.add_bias(tape.matmul(tape.gelu(tape.add_bias(tape.matmul(h2, b.W_in), b.b_in)), b.W_out), b.b_out);
    x = tape.add(mid, mlp);
    if (cache) {
      using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
      const auto& zv = tape.value(z);
      const auto& wo = tape.value(b.W_O);
      Tensor<T> per_head({heads, len, d});
      for (std::size_t hh = 0; hh < heads; ++hh) {
        Eigen::Map<const RowMat> zh(zv.data() + hh * len * dh, static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(dh));
        Eigen::Map<const RowMat> wh(wo.data() + hh * dh * d, static_cast<Eigen::Index>(dh), static_cast<Eigen::Index>(d));
        Eigen::Map<RowMat>(per_head.data() + hh * len * d, static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(d))
            .noalias() = zh * wh;
      }
      cache->head_out.push_back(std::move(per_head));
      cache->attn.push_back(tape.value(pattern));
      cache->resid_mid.push_back(tape.value(mid));
      cache->mlp_out.push_back(tape.value(mlp));
      cache->resid.push_back(tape.value(x));
    }
  }
  Var f = tape.layer_norm(x, w.lnf_w, w.lnf_b);
  if (cache) {
    const auto& st = tape.aux(f);
    for (std::size_t t = 0; t < len; ++t) {
      cache->final_ln_mean.push_back(st[2 * t]);
      cache->final_ln_scale.push_back(st[2 * t + 1]);
    }
    cache->final_ln_gain = tape.value(w.lnf_w);
  }
  return tape.add_bias(tape.matmul(f, w.W_U), w.b_U);
}

// Inference-only forward returning logits [len, d_vocab].
template <class T>
Tensor<T> forward(const GptModel<T>& model, std::span<const TokenId> tokens, ActivationCache<T>* cache = nullptr) {
  Tape<T> tape;
  const auto vars = bind(tape, model, false);
  const auto logits = gpt_forward(tape, model.config, vars, tokens, cache);
  return tape.value(logits);
}

// Index of the largest entry; ties resolved to the lowest index.
template <class T>
TokenId argmax(std::span<const T> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return static_cast<TokenId>(best);
}

// Residual-basis output of head h in layer l, [len, d_model].
template <class T>
Tensor<T> head_output(const ActivationCache<T>& cache, std::size_t layer, std::size_t head) {
  if (layer >= cache.head_out.size() || head >= cache.n_heads()) {
    throw std::invalid_argument("head_output: (" + std::to_string(layer) + "," + std::to_string(head) +
                                ") outside cache with " + std::to_string(cache.n_layers()) + " layers and " +
                                std::to_string(cache.n_heads()) + " heads");
  }
  const auto& all = cache.head_out[layer];
  const std::size_t len = all.dim(1), d = all.dim(2);
  std::vector<T> data(all.data() + head * len * d, all.data() + (head + 1) * len * d);
  return Tensor<T>({len, d}, std::move(data));
}

class InvalidStateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Frozen final-LayerNorm map at a position: v -> gain * (v - mean(v)) / scale[pos].
// Linear in v; applied row-wise to vectors[k, d_model] (or a single [d_model] vector).
template <class T>
Tensor<T> apply_final_ln_scale(const ActivationCache<T>& cache, const Tensor<T>& vectors, std::size_t position) {
  if (cache.final_ln_scale.empty() || cache.final_ln_gain.empty()) {
    throw InvalidStateError("apply_final_ln_scale: cache holds no final LayerNorm statistics");
  }
  if (position >= cache.final_ln_scale.size()) throw std::invalid_argument("apply_final_ln_scale: position out of range");
  const std::size_t d = cache.final_ln_gain.numel();
  if (vectors.cols() != d) throw ShapeError("apply_final_ln_scale", vectors.shape(), cache.final_ln_gain.shape());
  const T scale = cache.final_ln_scale[position];
  Tensor<T> out(vectors.shape());
  for (std::size_t r = 0; r < vectors.rows(); ++r) {
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += vectors[r * d + j];
    mean /= static_cast<T>(d);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = cache.final_ln_gain[j] * (vectors[r * d + j] - mean) / scale;
  }
  return out;
}

struct RolloutResult {
  std::vector<TokenId> generated;  // continuation only
  bool truncated = false;
  std::string reason;
};

// Greedy argmax continuation until stop_id or max_new tokens. The prefix is
// recomputed at every step.
template <class T>
RolloutResult rollout(const GptModel<T>& model, std::span<const TokenId> prompt, std::size_t max_new,
                      TokenId stop_id = static_cast<TokenId>(Special::path_end)) {
  RolloutResult result;
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  while (result.generated.size() < max_new) {
    if (seq.size() > static_cast<std::size_t>(model.config.n_ctx)) {
      result.truncated = true;
      result.reason = "context overflow";
      return result;
    }
    const Tensor<T> logits = forward(model, seq);
    const TokenId next = argmax<T>(logits.row(logits.rows() - 1));
    result.generated.push_back(next);
    seq.push_back(next);
    if (next == stop_id) return result;
  }
  result.truncated = true;
  result.reason = "max_new reached";
  return result;
}

}  // namespace mazelab
