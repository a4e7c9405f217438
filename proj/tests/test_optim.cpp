#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "mazelab/optim.hpp"
#include "mazelab/rng.hpp"

using namespace mazelab;

namespace {

// Scalar reference, written out step by step.
struct ScalarAdamW {
  double lr, b1, b2, eps, wd;
  double p, m = 0, v = 0;
  int t = 0;
  void step(double g) {
    ++t;
    p = p * (1 - lr * wd);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    p = p - lr * mhat / (std::sqrt(vhat) + eps);
  }
};

template <class T>
struct Fixture {
  std::vector<Tensor<T>> params;
  AdamWState<T> state;
  Fixture(std::vector<Tensor<T>> ps, AdamWConfig cfg) : params(std::move(ps)) {
    std::vector<const Tensor<T>*> ptrs;
    for (auto& p : params) ptrs.push_back(&p);
    state = AdamWState<T>(cfg, ptrs);
  }
  template <class G>
  StepOutcome step(const std::vector<Tensor<G>>& grads) {
    std::vector<Tensor<T>*> ptrs;
    for (auto& p : params) ptrs.push_back(&p);
    return adamw_step<T, G>(ptrs, grads, state);
  }
};

}  // namespace

TEST(AdamW, MatchesScalarReference) {
  AdamWConfig cfg;
  cfg.lr = 3e-3;
  cfg.weight_decay = 0.05;
  Rng rng(5);
  std::vector<double> init(7);
  for (auto& x : init) x = rng.uniform() * 2 - 1;
  Fixture<double> f({Tensor<double>({7}, init)}, cfg);
  std::vector<ScalarAdamW> ref;
  for (double x : init) ref.push_back({cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay, x});
  for (int s = 0; s < 50; ++s) {
    Tensor<double> g({7});
    for (std::size_t i = 0; i < 7; ++i) {
      g[i] = std::sin(0.3 * s + static_cast<double>(i)) + 0.1 * static_cast<double>(i);
      ref[i].step(g[i]);
    }
    f.step<double>({g});
  }
  EXPECT_EQ(f.state.step, 50);
  for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(f.params[0][i], ref[i].p, 1e-14);
}

TEST(AdamW, ZeroGradientOnlyDecays) {
  AdamWConfig cfg;
  cfg.lr = 1e-3;
  cfg.weight_decay = 0.01;
  Fixture<double> f({Tensor<double>({2}, std::vector<double>{1.0, -2.0})}, cfg);
  f.step<double>({Tensor<double>({2})});
  EXPECT_DOUBLE_EQ(f.params[0][0], 1.0 * (1 - 1e-5));
  EXPECT_DOUBLE_EQ(f.params[0][1], -2.0 * (1 - 1e-5));
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  AdamWConfig cfg;
  cfg.lr = 1e-3;
  cfg.weight_decay = 0.0;
  Fixture<double> f({Tensor<double>({2}, std::vector<double>{0.5, 0.5})}, cfg);
  f.step<double>({Tensor<double>({2}, std::vector<double>{0.25, -4.0})});
  EXPECT_NEAR(f.params[0][0], 0.5 - 1e-3, 1e-10);
  EXPECT_NEAR(f.params[0][1], 0.5 + 1e-3, 1e-10);
}

TEST(AdamW, WeightDecayIsDecoupled) {
  AdamWConfig a, b;
  a.weight_decay = 0.0;
  b.weight_decay = 0.1;
  a.lr = b.lr = 1e-2;
  Fixture<double> fa({Tensor<double>({1}, 3.0)}, a), fb({Tensor<double>({1}, 3.0)}, b);
  fa.step<double>({Tensor<double>({1}, 0.7)});
  fb.step<double>({Tensor<double>({1}, 0.7)});
  // The decay term is lr * wd * p, independent of the gradient statistics.
  EXPECT_NEAR(fa.params[0][0] - fb.params[0][0], 1e-2 * 0.1 * 3.0, 1e-12);
}

TEST(AdamW, FloatParamsWithDoubleGrads) {
  AdamWConfig cfg;
  cfg.lr = 1e-2;
  Fixture<float> f({Tensor<float>({3}, 1.0f)}, cfg);
  ScalarAdamW ref{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay, 1.0};
  for (int s = 0; s < 10; ++s) {
    const double g = 0.1 * (s + 1);
    ref.step(g);
    f.step<double>({Tensor<double>({3}, g)});
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(f.params[0][i], ref.p, 1e-6);
}

TEST(AdamW, NonFiniteFailPolicyThrows) {
  AdamWConfig cfg;
  Fixture<double> f({Tensor<double>({2}, 1.0)}, cfg);
  Tensor<double> g({2});
  g[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(f.step<double>({g}), NonFiniteError);
  EXPECT_EQ(f.state.step, 0);
  EXPECT_EQ(f.params[0][0], 1.0);
}

TEST(AdamW, NonFiniteSkipPolicyLeavesStateUntouched) {
  AdamWConfig cfg;
  cfg.on_non_finite = NonFinitePolicy::skip_step;
  Fixture<double> f({Tensor<double>({2}, 1.0)}, cfg);
  Tensor<double> g({2});
  g[0] = std::numeric_limits<double>::infinity();
  EXPECT_EQ(f.step<double>({g}), StepOutcome::skipped_non_finite);
  EXPECT_EQ(f.state.step, 0);
  EXPECT_EQ(f.params[0], Tensor<double>({2}, 1.0));
  EXPECT_EQ(f.state.m[0], Tensor<double>({2}));
  g[0] = 0.5;
  EXPECT_EQ(f.step<double>({g}), StepOutcome::applied);
  EXPECT_EQ(f.state.step, 1);
}

TEST(AdamW, ShapeAndCountMismatchThrow) {
  AdamWConfig cfg;
  Fixture<double> f({Tensor<double>({2}, 1.0)}, cfg);
  EXPECT_THROW(f.step<double>({Tensor<double>({3})}), ShapeError);
  EXPECT_THROW(f.step<double>({Tensor<double>({2}), Tensor<double>({2})}), std::invalid_argument);
}
