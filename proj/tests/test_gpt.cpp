#include <gtest/gtest.h>

#include <cmath>

#include "mazelab/gpt.hpp"
#include "mazelab/gradcheck.hpp"
#include "mazelab/rng.hpp"

using namespace mazelab;

namespace {

ModelConfig toy_config() {
  ModelConfig c;
  c.d_model = 16;
  c.d_head = 4;
  c.n_layers = 2;
  c.d_vocab = 47;
  c.n_ctx = 32;
  c.seed = 3;
  return c;
}

// Every parameter drawn at a scale where no term is negligible.
GptModel<double> random_model(const ModelConfig& cfg, std::uint64_t seed, double scale = 0.3) {
  GptModel<double> m = GptModel<double>::zeros(cfg);
  Rng rng(seed);
  m.weights.visit([&](const std::string& name, Tensor<double>& t) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double u = (rng.uniform() * 2 - 1) * scale;
      t[i] = is_gain_name(name) ? 1.0 + u : u;
    }
  });
  return m;
}

std::vector<TokenId> random_tokens(std::size_t len, int vocab, std::uint64_t seed, TokenId avoid = -1) {
  Rng rng(seed);
  std::vector<TokenId> out;
  while (out.size() < len) {
    const auto t = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(vocab)));
    if (t != avoid) out.push_back(t);
  }
  return out;
}

}  // namespace

TEST(Gpt, LogitShape) {
  const auto m = init_params<float>(toy_config());
  const auto logits = forward(m, random_tokens(9, 47, 1));
  EXPECT_EQ(logits.shape(), (Shape{9, 47}));
}

TEST(Gpt, ParameterCountFormula) {
  const ModelConfig c = toy_config();
  const std::size_t d = 16, v = 47, ctx = 32, L = 2;
  const std::size_t per_block = 2 * d + 3 * (d * d + d) + d * d + 2 * d + (d * 4 * d + 4 * d) + (4 * d * d + d);
  EXPECT_EQ(init_params<float>(c).parameter_count(), v * d + ctx * d + L * per_block + 2 * d + d * v + v);
}

TEST(Gpt, InitIsDeterministicAndScaled) {
  const auto a = init_params<float>(toy_config()), b = init_params<float>(toy_config());
  EXPECT_EQ(a.tensors().size(), b.tensors().size());
  for (std::size_t i = 0; i < a.tensors().size(); ++i) EXPECT_EQ(*a.tensors()[i], *b.tensors()[i]);
  ModelConfig big = toy_config();
  big.d_model = 64;
  big.d_head = 16;
  const auto m = init_params<double>(big);
  const auto& w = m.weights.blocks[0].W_in;
  double ss = 0;
  for (std::size_t i = 0; i < w.numel(); ++i) ss += w[i] * w[i];
  EXPECT_NEAR(std::sqrt(ss / static_cast<double>(w.numel())), 0.02, 0.002);
  for (std::size_t i = 0; i < 64; ++i) {
    EXPECT_EQ(m.weights.blocks[0].ln1_w[i], 1.0);
    EXPECT_EQ(m.weights.blocks[0].b_Q[i], 0.0);
  }
}

TEST(Gpt, CausalPrefixInvariance) {
  const auto m = random_model(toy_config(), 2);
  auto tokens = random_tokens(12, 47, 4, 10);
  const auto before = forward(m, tokens);
  tokens[7] = (tokens[7] + 1) % 47 == 10 ? 11 : (tokens[7] + 1) % 47;
  const auto after = forward(m, tokens);
  for (std::size_t t = 0; t < 12; ++t) {
    double diff = 0;
    for (std::size_t j = 0; j < 47; ++j) diff = std::max(diff, std::abs(before.at(t, j) - after.at(t, j)));
    if (t < 7) {
      EXPECT_LT(diff, 1e-12) << "position " << t;
    } else {
      EXPECT_GT(diff, 1e-6) << "position " << t;
    }
  }
}

TEST(Gpt, CacheDoesNotChangeLogits) {
  const auto m = init_params<float>(toy_config());
  const auto tokens = random_tokens(15, 47, 5);
  ActivationCache<float> cache;
  EXPECT_EQ(forward(m, tokens), forward(m, tokens, &cache));
  EXPECT_EQ(cache.n_layers(), 2u);
  EXPECT_EQ(cache.n_heads(), 4u);
  EXPECT_EQ(cache.resid.size(), 3u);
  EXPECT_EQ(cache.length(), 15u);
}

TEST(Gpt, ResidualStreamIsSumOfComponents) {
  const auto m = random_model(toy_config(), 6);
  const auto tokens = random_tokens(10, 47, 7, 10);
  ActivationCache<double> cache;
  forward(m, tokens, &cache);
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t i = 0; i < cache.resid[l].numel(); ++i) {
      double heads = 0;
      for (std::size_t h = 0; h < 4; ++h) heads += cache.head_out[l][h * 10 * 16 + i];
      EXPECT_NEAR(cache.resid_mid[l][i], cache.resid[l][i] + heads, 1e-12);
      EXPECT_NEAR(cache.resid[l + 1][i], cache.resid_mid[l][i] + cache.mlp_out[l][i], 1e-12);
    }
  }
}

TEST(Gpt, LogitsFromFrozenFinalLayerNorm) {
  const auto m = random_model(toy_config(), 8);
  const auto tokens = random_tokens(6, 47, 9, 10);
  ActivationCache<double> cache;
  const auto logits = forward(m, tokens, &cache);
  const auto& w = m.weights;
  for (std::size_t t = 0; t < 6; ++t) {
    Tensor<double> row({1, 16}, std::vector<double>(cache.resid[2].row(t).begin(), cache.resid[2].row(t).end()));
    const auto normed = apply_final_ln_scale(cache, row, t);
    for (std::size_t j = 0; j < 47; ++j) {
      double z = w.b_U[j];
      for (std::size_t k = 0; k < 16; ++k) z += (normed[k] + w.lnf_b[k]) * w.W_U.at(k, j);
      EXPECT_NEAR(logits.at(t, j), z, 1e-10);
    }
  }
}

TEST(Gpt, LeftPaddingIsInvisible) {
  const auto m = random_model(toy_config(), 10);
  const auto tokens = random_tokens(8, 47, 11, 10);
  std::vector<TokenId> padded(3, 10);
  padded.insert(padded.end(), tokens.begin(), tokens.end());
  const auto a = forward(m, tokens), b = forward(m, padded);
  for (std::size_t t = 0; t < 8; ++t)
    for (std::size_t j = 0; j < 47; ++j) EXPECT_NEAR(a.at(t, j), b.at(t + 3, j), 1e-12);
}

TEST(Gpt, ContextAndVocabularyChecked) {
  const auto m = init_params<float>(toy_config());
  EXPECT_NO_THROW(forward(m, random_tokens(32, 47, 1)));
  EXPECT_THROW(forward(m, random_tokens(33, 47, 1)), ContextOverflowError);
  EXPECT_THROW(forward(m, std::vector<TokenId>{1, 47}), std::invalid_argument);
  EXPECT_THROW(forward(m, std::vector<TokenId>{}), std::invalid_argument);
}

TEST(Gpt, ConfigValidation) {
  ModelConfig c = toy_config();
  c.d_head = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.d_head = 4;
  c.n_layers = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Gpt, ZeroUnembeddingGivesLogVocabLoss) {
  auto m = init_params<double>(toy_config());
  m.weights.W_U.fill(0.0);
  const auto seq = random_tokens(20, 47, 12);
  const std::vector<std::uint8_t> mask(19, 1);
  EXPECT_NEAR(sequence_loss(m, seq, mask), std::log(47.0), 1e-12);
}

TEST(Gpt, CastRoundTrip) {
  const auto m = init_params<float>(toy_config());
  const auto back = m.cast<double>().cast<float>();
  for (std::size_t i = 0; i < m.tensors().size(); ++i) EXPECT_EQ(*m.tensors()[i], *back.tensors()[i]);
}

TEST(Rollout, ArgmaxTiesPickLowestId) {
  auto m = GptModel<double>::zeros(toy_config());
  m.weights.b_U[20] = 1.0;
  m.weights.b_U[14] = 1.0;
  const auto r = rollout(m, std::vector<TokenId>{0, 1}, 3);
  EXPECT_EQ(r.generated, (std::vector<TokenId>{14, 14, 14}));
  EXPECT_TRUE(r.truncated);
  EXPECT_EQ(r.reason, "max_new reached");
}

TEST(Rollout, StopsAtPathEnd) {
  auto m = GptModel<double>::zeros(toy_config());
  m.weights.b_U[static_cast<std::size_t>(Special::path_end)] = 1.0;
  const auto r = rollout(m, std::vector<TokenId>{0}, 5);
  EXPECT_EQ(r.generated, (std::vector<TokenId>{static_cast<TokenId>(Special::path_end)}));
  EXPECT_FALSE(r.truncated);
}

TEST(Rollout, ContextOverflowTruncates) {
  auto m = GptModel<double>::zeros(toy_config());
  m.weights.b_U[12] = 1.0;
  const auto r = rollout(m, std::vector<TokenId>(31, 11), 5);
  EXPECT_EQ(r.generated.size(), 2u);
  EXPECT_TRUE(r.truncated);
  EXPECT_EQ(r.reason, "context overflow");
}

TEST(GradCheck, FullToyModel) {
  const auto m = random_model(toy_config(), 13);
  const auto seq = random_tokens(24, 47, 14, 10);
  std::vector<std::uint8_t> mask(23, 0);
  for (std::size_t i = 8; i < 23; ++i) mask[i] = 1;
  const auto r = grad_check(m, seq, mask);
  EXPECT_EQ(r.checked, m.parameter_count());
  EXPECT_LT(r.max_rel_error, 1e-3) << r.worst_tensor << "[" << r.worst_index << "] analytic " << r.worst_analytic
                                   << " numeric " << r.worst_numeric;
}

TEST(GradCheck, CorruptedBackwardIsDetected) {
  const auto m = random_model(toy_config(), 13);
  const auto seq = random_tokens(24, 47, 14, 10);
  const std::vector<std::uint8_t> mask(23, 1);
  std::size_t calls = 0;
  const auto r = grad_check<double>(m, seq, mask, 1e-5, 7, [&](std::size_t, Tensor<double>& g) {
    if (++calls == 12) {
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= 1.5;
    }
  });
  EXPECT_GT(r.max_rel_error, 0.1);
}
