#include "mmt/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "mmt/checkpoint.hpp"
#include "mmt/errors.hpp"
#include "mmt/generator.hpp"
#include "mmt/model.hpp"
#include "mmt/rng.hpp"

namespace mmt {
namespace {

GeneratorSpec tiny_spec() {
  GeneratorSpec spec;
  spec.n_lexemes = 3;
  spec.n_fillers = 5;
  spec.n_parallel = 16;
  spec.n_parallel_dev = 6;
  spec.n_monolingual = 20;
  spec.n_contrastive = 6;
  spec.n_boxes = 2;
  spec.d_local = 4;
  spec.d_global = 10;
  return spec;
}

ModelConfig tiny_cfg(int vocab) {
  ModelConfig cfg;
  cfg.vocab_size = vocab;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_encoder_layers = 1;
  cfg.n_decoder_layers = 1;
  cfg.d_ffn = 24;
  cfg.max_text_len = 16;
  cfg.n_local_features = 4;
  cfg.d_local_in = 4;
  cfg.d_global_in = 10;
  cfg.adapter_reduction = 4;
  return cfg;
}

TrainDatasets datasets_of(const SyntheticCorpus& corpus) {
  return {corpus.parallel, corpus.parallel_dev, corpus.monolingual};
}

std::string temp_file(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

TEST(Losses, UniformModelMmtLossIsLogV) {
  Rng gen_rng(1);
  const SyntheticCorpus corpus = generate_synthetic_corpus(tiny_spec(), gen_rng);
  Model model(tiny_cfg(corpus.vocab.size()));
  Rng rng(2);
  model.init_params(rng);
  Tensor embed = model.params().get("embed.tokens");
  for (int i = 0; i < embed.size(); ++i) embed.at(i) = 0.0;
  const std::vector<MultimodalExample> batch(corpus.parallel.begin(),
                                             corpus.parallel.begin() + 4);
  const double want = std::log(static_cast<double>(corpus.vocab.size()));
  for (double smoothing : {0.0, 0.1}) {
    const Tensor loss =
        mmt_loss(model, batch, smoothing, GuidanceMode::kGuided, nullptr);
    EXPECT_NEAR(loss.at(0), want, 1e-12) << "smoothing " << smoothing;
  }
}

TEST(Losses, UniformModelVmlmLossIsLogV) {
  Rng gen_rng(1);
  const SyntheticCorpus corpus = generate_synthetic_corpus(tiny_spec(), gen_rng);
  Model model(tiny_cfg(corpus.vocab.size()));
  Rng rng(3);
  model.init_params(rng);
  Tensor embed = model.params().get("embed.tokens");
  for (int i = 0; i < embed.size(); ++i) embed.at(i) = 0.0;
  const MultimodalExample& ex = corpus.monolingual[0];
  MaskResult mask;
  mask.masked_ids = ex.source_ids;
  mask.masked_ids[0] = kMaskId;
  mask.positions = {0};
  mask.originals = {ex.source_ids[0]};
  const Tensor loss =
      vmlm_example_loss(model, ex, mask, GuidanceMode::kGuided, nullptr);
  EXPECT_NEAR(loss.at(0), std::log(static_cast<double>(corpus.vocab.size())),
              1e-12);
}

TEST(Losses, VmlmRejectsZeroMaskedPositions) {
  Rng gen_rng(1);
  const SyntheticCorpus corpus = generate_synthetic_corpus(tiny_spec(), gen_rng);
  Model model(tiny_cfg(corpus.vocab.size()));
  Rng rng(4);
  model.init_params(rng);
  MaskResult empty;
  empty.masked_ids = corpus.monolingual[0].source_ids;
  EXPECT_THROW(vmlm_example_loss(model, corpus.monolingual[0], empty,
                                 GuidanceMode::kGuided, nullptr),
               ValidationError);
  EXPECT_THROW(vmlm_loss(model, {corpus.monolingual[0]}, {empty},
                         GuidanceMode::kGuided, nullptr),
               ValidationError);
}

TEST(Losses, MmtBatchValidation) {
  Rng gen_rng(1);
  const SyntheticCorpus corpus = generate_synthetic_corpus(tiny_spec(), gen_rng);
  Model model(tiny_cfg(corpus.vocab.size()));
  Rng rng(5);
  model.init_params(rng);
  EXPECT_THROW(mmt_loss(model, {}, 0.1, GuidanceMode::kGuided, nullptr),
               ValidationError);
  std::vector<MultimodalExample> bad = {corpus.monolingual[0]};  // no target
  EXPECT_THROW(mmt_loss(model, bad, 0.1, GuidanceMode::kGuided, nullptr),
               ValidationError);
}

TEST(Train, OverfitSmokeLossDecreases) {
  Rng gen_rng(6);
  const SyntheticCorpus corpus = generate_synthetic_corpus(tiny_spec(), gen_rng);
  Model model(tiny_cfg(corpus.vocab.size()));
  Rng rng(7);
  model.init_params(rng);

  const double before = mmt_loss(model, corpus.parallel, 0.1,
                                 GuidanceMode::kGuided, nullptr)
                            .at(0);
  TrainConfig cfg;
  cfg.vmlm = false;
  cfg.max_steps = 200;
  cfg.batch_size = 16;
  cfg.lr = 3e-3;
  cfg.freeze_policy = FreezePolicy::kFullyUnfrozenNoAdapters;
  cfg.seed = 8;
  train(model, cfg, datasets_of(corpus), "");
  const double after = mmt_loss(model, corpus.parallel, 0.1,
                                GuidanceMode::kGuided, nullptr)
                           .at(0);
  EXPECT_LT(after, before * 0.7) << "before " << before << " after " << after;
}

TEST(Train, ReproducibleFromSeed) {
  Rng gen_rng(9);
  const SyntheticCorpus corpus = generate_synthetic_corpus(tiny_spec(), gen_rng);
  TrainConfig cfg;
  cfg.max_steps = 30;
  cfg.batch_size = 4;
  cfg.lr = 1e-3;
  cfg.seed = 10;

  std::ostringstream log1, log2;
  Model m1(tiny_cfg(corpus.vocab.size()));
  Model m2(tiny_cfg(corpus.vocab.size()));
  Rng r1(11), r2(11);
  m1.init_params(r1);
  m2.init_params(r2);
  train(m1, cfg, datasets_of(corpus), "", &log1);
  train(m2, cfg, datasets_of(corpus), "", &log2);
  EXPECT_EQ(log1.str(), log2.str());
  const auto& e1 = m1.params().entries();
  const auto& e2 = m2.params().entries();
  ASSERT_EQ(e1.size(), e2.size());
  for (std::size_t i = 0; i < e1.size(); ++i) {
    const auto& a = e1[i].tensor.values();
    const auto& b = e2[i].tensor.values();
    ASSERT_EQ(a.size(), b.size());
    EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0)
        << e1[i].name;
  }
}

TEST(Train, FrozenParametersAreByteIdentical) {
  Rng gen_rng(12);
  const SyntheticCorpus corpus = generate_synthetic_corpus(tiny_spec(), gen_rng);
  Model model(tiny_cfg(corpus.vocab.size()));
  Rng rng(13);
  model.init_params(rng);
  partition_parameters(model.params(), FreezePolicy::kFrozenWithAdapters);

  std::vector<std::pair<std::string, std::vector<double>>> frozen_before;
  for (const auto& e : model.params().entries())
    if (e.frozen) frozen_before.emplace_back(e.name, e.tensor.values());

  TrainConfig cfg;
  cfg.max_steps = 50;
  cfg.batch_size = 4;
  cfg.lr = 1e-3;
  cfg.seed = 14;
  train(model, cfg, datasets_of(corpus), "");

  bool some_trainable_moved = false;
  for (const auto& [name, before] : frozen_before) {
    const auto& after = model.params().get(name).values();
    ASSERT_EQ(before.size(), after.size());
    EXPECT_EQ(std::memcmp(before.data(), after.data(),
                          before.size() * sizeof(double)),
              0)
        << name;
  }
  const Tensor up = model.params().get("enc.0.adapter_attn.up");
  for (double v : up.values())
    if (v != 0.0) some_trainable_moved = true;
  EXPECT_TRUE(some_trainable_moved);
}

TEST(Train, HugeLearningRateRaisesDivergence) {
  Rng gen_rng(15);
  const SyntheticCorpus corpus = generate_synthetic_corpus(tiny_spec(), gen_rng);
  Model model(tiny_cfg(corpus.vocab.size()));
  Rng rng(16);
  model.init_params(rng);
  TrainConfig cfg;
  cfg.max_steps = 20;
  cfg.batch_size = 2;
  cfg.lr = 1e150;
  cfg.freeze_policy = FreezePolicy::kFullyUnfrozenNoAdapters;
  cfg.seed = 17;
  EXPECT_THROW(train(model, cfg, datasets_of(corpus), ""), DivergenceError);
}

TEST(Train, ObjectiveSelectionModes) {
  Rng gen_rng(18);
  const SyntheticCorpus corpus = generate_synthetic_corpus(tiny_spec(), gen_rng);
  TrainConfig cfg;
  cfg.max_steps = 10;
  cfg.batch_size = 1;
  cfg.seed = 19;

  {
    Model model(tiny_cfg(corpus.vocab.size()));
    Rng rng(20);
    model.init_params(rng);
    cfg.p_vmlm = 0.0;
    const TrainResult r = train(model, cfg, datasets_of(corpus), "");
    EXPECT_EQ(r.vmlm_steps, 0);
    EXPECT_EQ(r.mmt_steps, 10);
  }
  {
    Model model(tiny_cfg(corpus.vocab.size()));
    Rng rng(21);
    model.init_params(rng);
    cfg.p_vmlm = 1.0;
    const TrainResult r = train(model, cfg, datasets_of(corpus), "");
    EXPECT_EQ(r.vmlm_steps, 10);
    EXPECT_EQ(r.mmt_steps, 0);
  }
  {
    Model model(tiny_cfg(corpus.vocab.size()));
    Rng rng(22);
    model.init_params(rng);
    cfg.p_vmlm = 0.5;
    cfg.disjoint_schedule = true;
    std::ostringstream log;
    const TrainResult r = train(model, cfg, datasets_of(corpus), "", &log);
    EXPECT_EQ(r.vmlm_steps, 5);
    EXPECT_EQ(r.mmt_steps, 5);
    std::istringstream lines(log.str());
    std::string line;
    int step = 0;
    while (std::getline(lines, line)) {
      const nlohmann::json j = nlohmann::json::parse(line);
      if (!j.contains("objective")) continue;
      EXPECT_EQ(j["objective"], step < 5 ? "vmlm" : "mmt") << "step " << step;
      ++step;
    }
    EXPECT_EQ(step, 10);
  }
}

TEST(Train, ObjectiveMixApproachesPVmlm) {
  Rng gen_rng(23);
  GeneratorSpec spec = tiny_spec();
  spec.n_parallel = 4;
  spec.n_monolingual = 4;
  const SyntheticCorpus corpus = generate_synthetic_corpus(spec, gen_rng);
  ModelConfig mc = tiny_cfg(corpus.vocab.size());
  mc.d_model = 8;
  mc.d_ffn = 8;
  mc.adapter_reduction = 2;
  Model model(mc);
  Rng rng(24);
  model.init_params(rng);
  TrainConfig cfg;
  cfg.max_steps = 200;
  cfg.batch_size = 1;
  cfg.seed = 25;
  const TrainResult r = train(model, cfg, datasets_of(corpus), "");
  const double frac = static_cast<double>(r.vmlm_steps) / cfg.max_steps;
  EXPECT_GE(frac, 0.35);
  EXPECT_LE(frac, 0.65);
}

TEST(Train, KeepsBestCheckpointByDevBleu) {
  Rng gen_rng(26);
  const SyntheticCorpus corpus = generate_synthetic_corpus(tiny_spec(), gen_rng);
  Model model(tiny_cfg(corpus.vocab.size()));
  Rng rng(27);
  model.init_params(rng);
  TrainConfig cfg;
  cfg.vmlm = false;
  cfg.max_steps = 60;
  cfg.batch_size = 8;
  cfg.lr = 3e-3;
  cfg.eval_every = 15;
  cfg.freeze_policy = FreezePolicy::kFullyUnfrozenNoAdapters;
  cfg.seed = 28;
  const std::string path = temp_file("train_best.ck");
  std::ostringstream log;
  const TrainResult r = train(model, cfg, datasets_of(corpus), path, &log);

  EXPECT_GE(r.best_dev_bleu, 0.0);
  EXPECT_GE(r.best_step, 0);
  double max_seen = -1.0;
  std::istringstream lines(log.str());
  std::string line;
  while (std::getline(lines, line)) {
    const nlohmann::json j = nlohmann::json::parse(line);
    if (j.contains("dev_bleu")) max_seen = std::max(max_seen, j["dev_bleu"].get<double>());
  }
  EXPECT_DOUBLE_EQ(r.best_dev_bleu, max_seen);
  const Model best = load_checkpoint(path);
  EXPECT_EQ(best.params().size(), model.params().size());
}

TEST(Train, InputValidation) {
  Rng gen_rng(29);
  const SyntheticCorpus corpus = generate_synthetic_corpus(tiny_spec(), gen_rng);
  Model model(tiny_cfg(corpus.vocab.size()));
  Rng rng(30);
  model.init_params(rng);
  TrainConfig cfg;
  cfg.max_steps = 5;

  TrainDatasets no_parallel = datasets_of(corpus);
  no_parallel.parallel.clear();
  EXPECT_THROW(train(model, cfg, no_parallel, ""), ValidationError);

  TrainDatasets no_mono = datasets_of(corpus);
  no_mono.monolingual.clear();
  EXPECT_THROW(train(model, cfg, no_mono, ""), ValidationError);

  TrainConfig bad = cfg;
  bad.mask_rate = 0.0;
  EXPECT_THROW(train(model, bad, datasets_of(corpus), ""), ValidationError);

  bad = cfg;
  bad.max_steps = 0;
  EXPECT_THROW(train(model, bad, datasets_of(corpus), ""), ValidationError);
  bad = cfg;
  bad.p_vmlm = 1.5;
  EXPECT_THROW(train(model, bad, datasets_of(corpus), ""), ValidationError);
}

}  // namespace
}  // namespace mmt
