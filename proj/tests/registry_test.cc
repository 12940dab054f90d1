#include "mmt/registry.hpp"

#include <cmath>
#include <vector>

#include "gtest/gtest.h"
#include "mmt/adam.hpp"

namespace {

using mmt::Adam;
using mmt::AdamConfig;
using mmt::FreezePolicy;
using mmt::ParameterRegistry;
using mmt::Tensor;

ParameterRegistry tiny_registry() {
  ParameterRegistry reg;
  reg.add("embed.tokens", Tensor::zeros({8, 4}));
  reg.add("enc.0.attn.wq", Tensor::zeros({4, 4}));
  reg.add("enc.0.adapter_attn.down", Tensor::zeros({4, 2}));
  reg.add("enc.0.adapter_attn.up", Tensor::zeros({2, 4}));
  reg.add("visual.local_proj.w", Tensor::zeros({3, 4}));
  reg.add("visual.global_proj.w", Tensor::zeros({5, 4}));
  return reg;
}

TEST(Registry, AddGetAndErrors) {
  ParameterRegistry reg;
  reg.add("a", Tensor::zeros({2}));
  EXPECT_TRUE(reg.contains("a"));
  EXPECT_FALSE(reg.contains("b"));
  EXPECT_THROW(reg.add("a", Tensor::zeros({2})), mmt::ValidationError);
  EXPECT_THROW(reg.get("b"), mmt::ValidationError);
  EXPECT_THROW(reg.is_frozen("b"), mmt::ValidationError);
}

TEST(Registry, PreservesRegistrationOrder) {
  ParameterRegistry reg = tiny_registry();
  std::vector<std::string> names;
  for (const auto& e : reg.entries()) names.push_back(e.name);
  std::vector<std::string> expect = {
      "embed.tokens",           "enc.0.attn.wq",
      "enc.0.adapter_attn.down", "enc.0.adapter_attn.up",
      "visual.local_proj.w",    "visual.global_proj.w"};
  EXPECT_EQ(names, expect);
}

TEST(Registry, DefaultPolicyTrainsAdaptersAndProjectionsOnly) {
  ParameterRegistry reg = tiny_registry();
  mmt::partition_parameters(reg, FreezePolicy::kFrozenWithAdapters);
  EXPECT_TRUE(reg.is_frozen("embed.tokens"));
  EXPECT_TRUE(reg.is_frozen("enc.0.attn.wq"));
  EXPECT_FALSE(reg.is_frozen("enc.0.adapter_attn.down"));
  EXPECT_FALSE(reg.is_frozen("enc.0.adapter_attn.up"));
  EXPECT_FALSE(reg.is_frozen("visual.local_proj.w"));
  EXPECT_FALSE(reg.is_frozen("visual.global_proj.w"));
  EXPECT_TRUE(reg.get("enc.0.adapter_attn.down").requires_grad());
  EXPECT_FALSE(reg.get("embed.tokens").requires_grad());
  // 4*2 + 2*4 + 3*4 + 5*4 = 48 trainable values
  EXPECT_EQ(reg.trainable_value_count(), 48);
  EXPECT_EQ(reg.frozen_value_count(), 8 * 4 + 4 * 4);
}

TEST(Registry, UnfrozenPolicyFreezesNothing) {
  ParameterRegistry reg = tiny_registry();
  mmt::partition_parameters(reg, FreezePolicy::kFullyUnfrozenNoAdapters);
  EXPECT_EQ(reg.frozen_value_count(), 0);
}

TEST(Registry, TextOnlyPolicyTrainsAdaptersOnly) {
  ParameterRegistry reg = tiny_registry();
  mmt::partition_parameters(reg, FreezePolicy::kTextOnlyNoVisual);
  EXPECT_FALSE(reg.is_frozen("enc.0.adapter_attn.down"));
  EXPECT_TRUE(reg.is_frozen("visual.local_proj.w"));
  EXPECT_TRUE(reg.is_frozen("embed.tokens"));
}

TEST(Registry, PolicyNamesRoundTrip) {
  for (FreezePolicy p :
       {FreezePolicy::kFrozenWithAdapters, FreezePolicy::kFullyUnfrozenNoAdapters,
        FreezePolicy::kTextOnlyNoVisual})
    EXPECT_EQ(mmt::parse_freeze_policy(mmt::freeze_policy_name(p)), p);
  EXPECT_THROW(mmt::parse_freeze_policy("frozen"), mmt::ValidationError);
}

TEST(Adam, BindsOnlyTrainableParameters) {
  ParameterRegistry reg = tiny_registry();
  mmt::partition_parameters(reg, FreezePolicy::kFrozenWithAdapters);
  Adam opt(reg);
  EXPECT_EQ(opt.bound_names().size(), 4u);
  for (const std::string& n : opt.bound_names()) EXPECT_FALSE(reg.is_frozen(n));
}

TEST(Adam, FirstStepWithUnitGradientMovesByLr) {
  ParameterRegistry reg;
  reg.add("p", Tensor::scalar(3.0), /*frozen=*/false);
  reg.get("p").set_requires_grad(true);
  AdamConfig cfg;
  cfg.lr = 1e-4;
  Adam opt(reg, cfg);
  reg.get("p").grad()[0] = 1.0;
  opt.step(reg);
  // bias-corrected first update is exactly g/( |g| + eps ) * lr
  EXPECT_NEAR(reg.get("p").at(0), 3.0 - 1e-4, 1e-11);
}

TEST(Adam, ZeroGradientFreshMomentsLeavesParameterUnchanged) {
  ParameterRegistry reg;
  reg.add("p", Tensor::scalar(1.25), /*frozen=*/false);
  Adam opt(reg);
  opt.step(reg);
  EXPECT_EQ(reg.get("p").at(0), 1.25);
}

TEST(Adam, FrozenParametersAreBitIdenticalAfterSteps) {
  ParameterRegistry reg = tiny_registry();
  mmt::Rng rng(31);
  for (auto& e : reg.entries())
    for (double& v : e.tensor.values()) v = rng.normal();
  mmt::partition_parameters(reg, FreezePolicy::kFrozenWithAdapters);
  std::vector<std::vector<double>> frozen_before;
  for (const auto& e : reg.entries())
    if (e.frozen) frozen_before.push_back(e.tensor.values());
  Adam opt(reg);
  for (int s = 0; s < 20; ++s) {
    for (auto& e : reg.entries())
      for (double& g : e.tensor.grad()) g = rng.normal();
    opt.step(reg);
  }
  std::size_t k = 0;
  double trainable_change = 0.0;
  for (const auto& e : reg.entries()) {
    if (e.frozen) {
      EXPECT_EQ(e.tensor.values(), frozen_before[k++]);
    } else {
      for (double v : e.tensor.values()) trainable_change += std::fabs(v);
    }
  }
  EXPECT_GT(trainable_change, 0.0);
}

TEST(Adam, MatchesScalarReferenceOverManySteps) {
  ParameterRegistry reg;
  reg.add("p", Tensor::from({2}, {0.5, -1.5}), /*frozen=*/false);
  AdamConfig cfg;
  cfg.lr = 0.01;
  Adam opt(reg, cfg);
  // plain transcription of the update rule, kept independent of the class
  double theta[2] = {0.5, -1.5}, m[2] = {0, 0}, v[2] = {0, 0};
  mmt::Rng rng(32);
  for (int t = 1; t <= 50; ++t) {
    double g[2] = {rng.normal(), rng.normal()};
    for (int j = 0; j < 2; ++j) {
      reg.get("p").grad()[static_cast<std::size_t>(j)] = g[j];
      m[j] = 0.9 * m[j] + 0.1 * g[j];
      v[j] = 0.99 * v[j] + 0.01 * g[j] * g[j];
      const double mhat = m[j] / (1.0 - std::pow(0.9, t));
      const double vhat = v[j] / (1.0 - std::pow(0.99, t));
      theta[j] -= 0.01 * mhat / (std::sqrt(vhat) + 1e-8);
    }
    opt.step(reg);
  }
  EXPECT_NEAR(reg.get("p").at(0), theta[0], 1e-12);
  EXPECT_NEAR(reg.get("p").at(1), theta[1], 1e-12);
}

TEST(Adam, RejectsBadConfig) {
  ParameterRegistry reg;
  reg.add("p", Tensor::scalar(0.0), false);
  AdamConfig bad;
  bad.lr = 0.0;
  EXPECT_THROW(Adam(reg, bad), mmt::ValidationError);
  bad.lr = 1e-4;
  bad.beta1 = 1.0;
  EXPECT_THROW(Adam(reg, bad), mmt::ValidationError);
}

}  // namespace
