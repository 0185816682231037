#include <gtest/gtest.h>

#include <cmath>

#include "vqarank/optimizer.hpp"
#include "vqarank/rng.hpp"

using vqarank::LinearLayer;
using vqarank::Matrix;
using vqarank::RmsPropConfig;

TEST(RmsProp, ZeroGradientLeavesParamsUnchanged) {
  vqarank::Rng rng(3);
  LinearLayer layer(3, 3);
  layer.init_uniform(rng);
  const Matrix before = layer.W;
  RmsPropConfig cfg;
  cfg.learning_rate = 0.1;
  vqarank::rmsprop_step(layer, cfg, 0);
  for (std::size_t i = 0; i < before.data.size(); ++i)
    EXPECT_DOUBLE_EQ(layer.W.data[i], before.data[i]);
}

TEST(RmsProp, HandComputedScalarStep) {
  LinearLayer layer(1, 1, /*with_bias=*/false);
  layer.W(0, 0) = 1.0;
  layer.grad_W(0, 0) = 1.0;
  RmsPropConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.decay_rho = 0.9;
  cfg.epsilon = 1e-8;
  vqarank::rmsprop_step(layer, cfg, 0);
  EXPECT_DOUBLE_EQ(layer.rms_W(0, 0), 0.1);
  const double expected = 1.0 - 0.1 / (std::sqrt(0.1) + 1e-8);
  EXPECT_DOUBLE_EQ(layer.W(0, 0), expected);
  EXPECT_NEAR(layer.W(0, 0), 0.683772, 5e-7);
  EXPECT_DOUBLE_EQ(layer.grad_W(0, 0), 0.0);  // gradients zeroed afterward
}

TEST(RmsProp, LearningRateDecaySchedule) {
  RmsPropConfig cfg;
  cfg.learning_rate = 1e-5;
  cfg.lr_decay_factor = 0.1;
  cfg.lr_decay_every = 50000;
  EXPECT_DOUBLE_EQ(cfg.effective_lr(0), 1e-5);
  EXPECT_DOUBLE_EQ(cfg.effective_lr(49999), 1e-5);
  EXPECT_DOUBLE_EQ(cfg.effective_lr(50000), 1e-6);
  EXPECT_DOUBLE_EQ(cfg.effective_lr(99999), 1e-6);
  EXPECT_NEAR(cfg.effective_lr(100000), 1e-7, 1e-21);
}

TEST(RmsProp, CacheStaysNonnegativeAndParamsFinite) {
  vqarank::Rng rng(5);
  LinearLayer layer(4, 6);
  layer.init_uniform(rng);
  RmsPropConfig cfg;
  cfg.learning_rate = 0.05;
  for (std::uint64_t it = 0; it < 200; ++it) {
    for (double& g : layer.grad_W.data) g = rng.uniform(-5.0, 5.0);
    for (double& g : layer.grad_b.data) g = rng.uniform(-5.0, 5.0);
    vqarank::rmsprop_step(layer, cfg, it);
    for (double c : layer.rms_W.data) ASSERT_GE(c, 0.0);
    for (double c : layer.rms_b.data) ASSERT_GE(c, 0.0);
    ASSERT_TRUE(layer.W.all_finite());
    ASSERT_TRUE(layer.b.all_finite());
  }
}

TEST(RmsProp, ConfigValidation) {
  RmsPropConfig cfg;
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), vqarank::ParamError);
  cfg.learning_rate = 0.1;
  cfg.decay_rho = 1.0;
  EXPECT_THROW(cfg.validate(), vqarank::ParamError);
  cfg.decay_rho = 0.9;
  cfg.epsilon = 0.0;
  EXPECT_THROW(cfg.validate(), vqarank::ParamError);
  cfg.epsilon = 1e-8;
  cfg.lr_decay_factor = 0.0;
  EXPECT_THROW(cfg.validate(), vqarank::ParamError);
  cfg.lr_decay_factor = 1.0;
  cfg.lr_decay_every = 0;
  EXPECT_THROW(cfg.validate(), vqarank::ParamError);
  cfg.lr_decay_every = 1;
  EXPECT_NO_THROW(cfg.validate());
}

TEST(RmsProp, NoBiasLayerCacheUntouched) {
  LinearLayer layer(2, 2, /*with_bias=*/false);
  layer.grad_W.fill(1.0);
  RmsPropConfig cfg;
  cfg.learning_rate = 0.1;
  vqarank::rmsprop_step(layer, cfg, 0);
  for (double c : layer.rms_b.data) EXPECT_DOUBLE_EQ(c, 0.0);
}
