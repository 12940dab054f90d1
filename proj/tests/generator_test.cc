#include "mmt/generator.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mmt/data.hpp"
#include "mmt/errors.hpp"
#include "mmt/rng.hpp"

namespace mmt {
namespace {

std::uint64_t bits_of(double d) {
  std::uint64_t b;
  std::memcpy(&b, &d, 8);
  return b;
}

GeneratorSpec small_spec() {
  GeneratorSpec spec;
  spec.n_lexemes = 4;
  spec.n_fillers = 6;
  spec.n_parallel = 30;
  spec.n_parallel_dev = 8;
  spec.n_monolingual = 12;
  spec.n_contrastive = 10;
  spec.d_global = 10;
  spec.d_local = 4;
  return spec;
}

TEST(Generator, DefaultSpecProducesPinnedSizes) {
  GeneratorSpec spec;
  Rng rng(1);
  const SyntheticCorpus corpus = generate_synthetic_corpus(spec, rng);
  EXPECT_EQ(corpus.parallel.size(), 400u);
  EXPECT_EQ(corpus.parallel_dev.size(), 64u);
  EXPECT_EQ(corpus.monolingual.size(), 300u);
  EXPECT_EQ(corpus.contrastive.size(), 155u);
  // 5 reserved + 30 source fillers + 30 target fillers + 20 ambiguous + 40 senses
  EXPECT_EQ(corpus.vocab.size(), 125);
  EXPECT_EQ(corpus.header.d_local, 8);
  EXPECT_EQ(corpus.header.d_global, 48);
}

TEST(Generator, MinimalSpecMakesOneItemWithTwoImagesAndTranslations) {
  GeneratorSpec spec;
  spec.n_lexemes = 1;
  spec.n_parallel = 2;
  spec.n_parallel_dev = 0;
  spec.n_monolingual = 0;
  spec.n_contrastive = 1;
  spec.d_global = 2;
  Rng rng(2);
  const SyntheticCorpus corpus = generate_synthetic_corpus(spec, rng);
  ASSERT_EQ(corpus.contrastive.size(), 1u);
  const ContrastiveItem& it = corpus.contrastive[0];
  EXPECT_FALSE(it.translation_a.empty());
  EXPECT_NE(it.translation_a, it.translation_b);
  EXPECT_EQ(it.image_1.global_feature.size(), 2u);
  EXPECT_EQ(it.image_2.global_feature.size(), 2u);
}

TEST(Generator, InvalidSpecsThrow) {
  Rng rng(1);
  GeneratorSpec spec;
  spec.n_parallel = 0;
  EXPECT_THROW(generate_synthetic_corpus(spec, rng), ValidationError);
  spec = GeneratorSpec();
  spec.d_global = 2 * spec.n_lexemes - 1;
  EXPECT_THROW(generate_synthetic_corpus(spec, rng), ValidationError);
  spec = GeneratorSpec();
  spec.n_contrastive = 0;
  EXPECT_THROW(generate_synthetic_corpus(spec, rng), ValidationError);
  spec = GeneratorSpec();
  spec.min_sentence_len = 5;
  spec.max_sentence_len = 4;
  EXPECT_THROW(generate_synthetic_corpus(spec, rng), ValidationError);
  spec = GeneratorSpec();
  spec.sense_filler_fraction = 0.3;  // needs shared_filler_vocab
  EXPECT_THROW(generate_synthetic_corpus(spec, rng), ValidationError);
  spec = GeneratorSpec();
  spec.shared_filler_vocab = true;
  spec.sense_filler_fraction = 1.5;
  EXPECT_THROW(generate_synthetic_corpus(spec, rng), ValidationError);
}

TEST(Generator, SameSeedIsBitIdentical) {
  const GeneratorSpec spec = small_spec();
  Rng r1(77), r2(77);
  const SyntheticCorpus a = generate_synthetic_corpus(spec, r1);
  const SyntheticCorpus b = generate_synthetic_corpus(spec, r2);
  ASSERT_EQ(a.parallel.size(), b.parallel.size());
  for (std::size_t i = 0; i < a.parallel.size(); ++i) {
    EXPECT_EQ(a.parallel[i].source_ids, b.parallel[i].source_ids);
    EXPECT_EQ(a.parallel[i].target_ids, b.parallel[i].target_ids);
    for (std::size_t c = 0; c < a.parallel[i].global_feature.size(); ++c)
      EXPECT_EQ(bits_of(a.parallel[i].global_feature[c]),
                bits_of(b.parallel[i].global_feature[c]));
  }
  EXPECT_EQ(a.key.dump(), b.key.dump());
}

TEST(Generator, ContrastiveImagesDifferOnlyInSignalDims) {
  const GeneratorSpec spec = small_spec();
  Rng rng(5);
  const SyntheticCorpus corpus = generate_synthetic_corpus(spec, rng);
  for (const ContrastiveItem& it : corpus.contrastive) {
    const int k = corpus.key["items"][it.example_id]["lexeme"].get<int>();
    for (int d = 0; d < spec.d_global; ++d) {
      const double v1 = it.image_1.global_feature[static_cast<std::size_t>(d)];
      const double v2 = it.image_2.global_feature[static_cast<std::size_t>(d)];
      if (d == 2 * k || d == 2 * k + 1)
        EXPECT_NE(bits_of(v1), bits_of(v2));
      else
        EXPECT_EQ(bits_of(v1), bits_of(v2)) << "dim " << d;
    }
    ASSERT_EQ(it.image_1.local_features.size(), it.image_2.local_features.size());
    for (std::size_t r = 0; r < it.image_1.local_features.size(); ++r)
      for (std::size_t c = 0; c < it.image_1.local_features[r].size(); ++c)
        EXPECT_EQ(bits_of(it.image_1.local_features[r][c]),
                  bits_of(it.image_2.local_features[r][c]));
  }
}

TEST(Generator, ContrastiveSetIsPerfectlyBalanced) {
  const GeneratorSpec spec = small_spec();
  Rng rng(6);
  const SyntheticCorpus corpus = generate_synthetic_corpus(spec, rng);
  for (const ContrastiveItem& it : corpus.contrastive) {
    EXPECT_NE(it.correct_for_image_1, it.correct_for_image_2);
    EXPECT_TRUE(it.correct_for_image_1 == 'a' || it.correct_for_image_1 == 'b');
  }
}

TEST(Generator, TranslationsDifferOnlyAtTheAmbiguousPosition) {
  const GeneratorSpec spec = small_spec();
  Rng rng(7);
  const SyntheticCorpus corpus = generate_synthetic_corpus(spec, rng);
  for (const ContrastiveItem& it : corpus.contrastive) {
    ASSERT_EQ(it.translation_a.size(), it.translation_b.size());
    ASSERT_EQ(it.source_ids.size(), it.translation_a.size());
    int diffs = 0, diff_pos = -1;
    for (std::size_t i = 0; i < it.translation_a.size(); ++i)
      if (it.translation_a[i] != it.translation_b[i]) {
        ++diffs;
        diff_pos = static_cast<int>(i);
      }
    EXPECT_EQ(diffs, 1);
    const int k = corpus.key["items"][it.example_id]["lexeme"].get<int>();
    const auto& lexeme = corpus.key["lexemes"][static_cast<std::size_t>(k)];
    EXPECT_EQ(it.source_ids[static_cast<std::size_t>(diff_pos)],
              lexeme["source_id"].get<int>());
    EXPECT_EQ(it.translation_a[static_cast<std::size_t>(diff_pos)],
              lexeme["sense_a_id"].get<int>());
    EXPECT_EQ(it.translation_b[static_cast<std::size_t>(diff_pos)],
              lexeme["sense_b_id"].get<int>());
    // The ambiguous token is linked to box 0 in both bundles.
    ASSERT_EQ(it.image_1.alignments.size(), 1u);
    EXPECT_EQ(it.image_1.alignments[0].token_start, diff_pos);
    EXPECT_EQ(it.image_1.alignments[0].box_index, 0);
  }
}

TEST(Generator, AmbiguousParallelTargetsMatchThePlantedSignal) {
  const GeneratorSpec spec = small_spec();
  Rng rng(8);
  const SyntheticCorpus corpus = generate_synthetic_corpus(spec, rng);
  std::map<int, std::pair<int, int>> senses_by_amb;  // amb id -> (sense ids)
  std::map<int, int> lexeme_by_amb;
  for (std::size_t k = 0; k < corpus.key["lexemes"].size(); ++k) {
    const auto& lx = corpus.key["lexemes"][k];
    senses_by_amb[lx["source_id"].get<int>()] = {lx["sense_a_id"].get<int>(),
                                                 lx["sense_b_id"].get<int>()};
    lexeme_by_amb[lx["source_id"].get<int>()] = static_cast<int>(k);
  }
  int ambiguous_count = 0;
  for (const MultimodalExample& ex : corpus.parallel) {
    for (std::size_t i = 0; i < ex.source_ids.size(); ++i) {
      const auto hit = senses_by_amb.find(ex.source_ids[i]);
      if (hit == senses_by_amb.end()) continue;
      ++ambiguous_count;
      const int k = lexeme_by_amb[ex.source_ids[i]];
      const double va = ex.global_feature[static_cast<std::size_t>(2 * k)];
      const double vb = ex.global_feature[static_cast<std::size_t>(2 * k + 1)];
      const int expected =
          va > vb ? hit->second.first : hit->second.second;
      EXPECT_EQ(ex.target_ids[i], expected);
      ASSERT_EQ(ex.alignments.size(), 1u);
      EXPECT_EQ(ex.alignments[0].token_start, static_cast<int>(i));
    }
  }
  EXPECT_GT(ambiguous_count, 5);
}

TEST(Generator, SharedVocabMakesTranslationACopyTask) {
  GeneratorSpec spec = small_spec();
  spec.shared_filler_vocab = true;
  Rng rng(12);
  const SyntheticCorpus corpus = generate_synthetic_corpus(spec, rng);
  // 5 reserved + 6 fillers + 4 ambiguous + 8 senses; no separate target side
  EXPECT_EQ(corpus.vocab.size(), 23);
  for (const auto& f : corpus.key["fillers"])
    EXPECT_EQ(f["source_id"].get<int>(), f["target_id"].get<int>());
  for (const MultimodalExample& ex : corpus.parallel) {
    if (!ex.alignments.empty()) continue;  // ambiguous sentences swap one word
    EXPECT_EQ(ex.target_ids, ex.source_ids);
  }
}

TEST(Generator, SenseWordsCanAppearPlainlyWithoutVisualEvidence) {
  GeneratorSpec spec = small_spec();
  spec.shared_filler_vocab = true;
  spec.sense_filler_fraction = 0.5;
  spec.n_parallel = 60;
  Rng rng(13);
  const SyntheticCorpus corpus = generate_synthetic_corpus(spec, rng);
  std::set<int> senses;
  for (const auto& lx : corpus.key["lexemes"]) {
    senses.insert(lx["sense_a_id"].get<int>());
    senses.insert(lx["sense_b_id"].get<int>());
  }
  int plain_sense_tokens = 0;
  for (const MultimodalExample& ex : corpus.parallel) {
    if (!ex.alignments.empty()) continue;
    EXPECT_EQ(ex.target_ids, ex.source_ids);
    for (int id : ex.source_ids)
      if (senses.count(id) > 0) ++plain_sense_tokens;
    // Plain sentences keep noise-only images: no planted bump anywhere.
    for (double v : ex.global_feature)
      EXPECT_LT(std::abs(v), spec.signal_amplitude / 2);
  }
  EXPECT_GT(plain_sense_tokens, 10);
}

TEST(Generator, MonolingualCaptionsCoverEveryLexeme) {
  const GeneratorSpec spec = small_spec();
  Rng rng(9);
  const SyntheticCorpus corpus = generate_synthetic_corpus(spec, rng);
  std::map<int, int> seen;  // lexeme -> count
  for (std::size_t i = 0; i < corpus.monolingual.size(); ++i) {
    const MultimodalExample& ex = corpus.monolingual[i];
    EXPECT_TRUE(ex.target_ids.empty());
    ASSERT_EQ(ex.alignments.size(), 1u);
    const int pos = ex.alignments[0].token_start;
    const int sense = ex.source_ids[static_cast<std::size_t>(pos)];
    bool found = false;
    for (std::size_t k = 0; k < corpus.key["lexemes"].size(); ++k) {
      const auto& lx = corpus.key["lexemes"][k];
      if (sense == lx["sense_a_id"].get<int>() ||
          sense == lx["sense_b_id"].get<int>()) {
        ++seen[static_cast<int>(k)];
        const int x = sense == lx["sense_b_id"].get<int>() ? 1 : 0;
        const double planted =
            ex.global_feature[static_cast<std::size_t>(2 * static_cast<int>(k) + x)];
        EXPECT_GT(planted, spec.signal_amplitude - 1.0);
        found = true;
      }
    }
    EXPECT_TRUE(found);
  }
  for (int k = 0; k < spec.n_lexemes; ++k) EXPECT_GT(seen[k], 0);
}

// A rule-based translator that reads only the key (lexicon + signal location)
// must disambiguate every contrastive comparison.
TEST(Generator, KeyOracleScoresEveryComparison) {
  const GeneratorSpec spec = small_spec();
  Rng rng(10);
  const SyntheticCorpus corpus = generate_synthetic_corpus(spec, rng);
  std::map<int, int> tgt_by_src;
  for (const auto& f : corpus.key["fillers"])
    tgt_by_src[f["source_id"].get<int>()] = f["target_id"].get<int>();
  int correct = 0, total = 0;
  for (const ContrastiveItem& it : corpus.contrastive) {
    const std::pair<const ImageBundle*, char> sides[] = {
        {&it.image_1, it.correct_for_image_1},
        {&it.image_2, it.correct_for_image_2}};
    for (const auto& [img, truth] : sides) {
      std::vector<int> oracle;
      for (int id : it.source_ids) {
        const auto filler = tgt_by_src.find(id);
        if (filler != tgt_by_src.end()) {
          oracle.push_back(filler->second);
          continue;
        }
        for (const auto& lx : corpus.key["lexemes"])
          if (lx["source_id"].get<int>() == id) {
            const double va =
                img->global_feature[lx["global_dim_a"].get<std::size_t>()];
            const double vb =
                img->global_feature[lx["global_dim_b"].get<std::size_t>()];
            oracle.push_back(va > vb ? lx["sense_a_id"].get<int>()
                                     : lx["sense_b_id"].get<int>());
          }
      }
      const std::vector<int>& winner =
          truth == 'a' ? it.translation_a : it.translation_b;
      ++total;
      if (oracle == winner) ++correct;
    }
  }
  EXPECT_EQ(total, 2 * static_cast<int>(corpus.contrastive.size()));
  EXPECT_EQ(correct, total);
}

TEST(Generator, SaveCorpusRoundTripsThroughLoaders) {
  const GeneratorSpec spec = small_spec();
  Rng rng(11);
  const SyntheticCorpus corpus = generate_synthetic_corpus(spec, rng);
  const std::string dir =
      (std::filesystem::temp_directory_path() / "corpus_rt").string();
  save_corpus(corpus, dir);
  const auto [hp, parallel] = load_examples(dir + "/parallel.jsonl", true);
  const auto [hm, mono] = load_examples(dir + "/monolingual.jsonl", false);
  const auto [hc, contrastive] = load_contrastive(dir + "/contrastive.jsonl");
  EXPECT_EQ(parallel.size(), corpus.parallel.size());
  EXPECT_EQ(mono.size(), corpus.monolingual.size());
  EXPECT_EQ(contrastive.size(), corpus.contrastive.size());
  EXPECT_EQ(hp.d_global, spec.d_global);
  EXPECT_EQ(bits_of(parallel[3].global_feature[1]),
            bits_of(corpus.parallel[3].global_feature[1]));
  std::ifstream kf(dir + "/key.json");
  ASSERT_TRUE(kf.good());
  nlohmann::json key = nlohmann::json::parse(kf);
  EXPECT_EQ(key.dump(), corpus.key.dump());
  std::ifstream vf(dir + "/vocab.json");
  ASSERT_TRUE(vf.good());
  const Vocabulary vocab = Vocabulary::from_json(nlohmann::json::parse(vf));
  EXPECT_EQ(vocab.size(), corpus.vocab.size());
}

}  // namespace
}  // namespace mmt
