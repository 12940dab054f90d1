#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmt/data.hpp"
#include "mmt/errors.hpp"
#include "mmt/rng.hpp"
#include "mmt/vocab.hpp"

namespace mmt {

// Knobs for the synthetic disambiguation corpus. Each ambiguous source word
// has two target-side senses; which one is correct is decided by a planted
// one-hot bump in the global feature (dims 2k and 2k+1 for lexeme k). Local
// features are noise by default so that dropping the global path removes the
// decisive signal entirely; the ambiguous token is still linked to box 0 so
// guided attention has a cross-modal edge to exercise.
struct GeneratorSpec {
  int n_lexemes = 20;
  int n_fillers = 30;
  int n_parallel = 400;
  int n_parallel_dev = 64;
  int n_monolingual = 300;
  int n_contrastive = 155;
  int n_boxes = 2;
  int d_local = 8;
  int d_global = 48;
  double signal_amplitude = 3.0;
  double noise_stddev = 0.1;
  double ambiguous_fraction = 0.5;
  int min_sentence_len = 3;  // content tokens, including the ambiguous one
  int max_sentence_len = 6;
  bool signal_in_local = false;  // optionally repeat the sense bit in box 0
  bool shared_filler_vocab = false;  // fillers translate to themselves
  // Chance that a slot in an unambiguous sentence holds a sense word used
  // plainly (copied, image carries no signal). Requires shared_filler_vocab.
  double sense_filler_fraction = 0.0;
  // Caption length range; 0 means reuse the sentence length range. A length
  // of 1 makes each caption just the sense word.
  int min_caption_len = 0;
  int max_caption_len = 0;
  // Restrict ambiguous parallel examples to sense a. Captions still cover
  // both senses, so the second sense of each pair is only ever grounded
  // visually, never by parallel text.
  bool single_sense_parallel = false;

  void validate() const {
    if (n_lexemes < 1) throw ValidationError("need at least one lexeme");
    if (n_fillers < 1) throw ValidationError("need at least one filler word");
    if (n_parallel < 1) throw ValidationError("need at least one parallel example");
    if (n_parallel_dev < 0 || n_monolingual < 0)
      throw ValidationError("negative example count");
    if (n_contrastive < 1)
      throw ValidationError("need at least one contrastive item");
    if (n_boxes < 1) throw ValidationError("need at least one box");
    if (d_local < 2) throw ValidationError("d_local must be at least 2");
    if (d_global < 2 * n_lexemes)
      throw ValidationError("d_global must be at least 2 * n_lexemes");
    if (signal_amplitude <= 0) throw ValidationError("signal amplitude must be positive");
    if (noise_stddev < 0) throw ValidationError("negative noise stddev");
    if (ambiguous_fraction < 0 || ambiguous_fraction > 1)
      throw ValidationError("ambiguous fraction must be in [0, 1]");
    if (sense_filler_fraction < 0 || sense_filler_fraction > 1)
      throw ValidationError("sense filler fraction must be in [0, 1]");
    if (sense_filler_fraction > 0 && !shared_filler_vocab)
      throw ValidationError("sense filler words require a shared filler vocabulary");
    if (min_sentence_len < 1 || max_sentence_len < min_sentence_len)
      throw ValidationError("bad sentence length range");
    if (min_caption_len < 0 || max_caption_len < min_caption_len)
      throw ValidationError("bad caption length range");
    if ((min_caption_len == 0) != (max_caption_len == 0))
      throw ValidationError("caption length bounds must be set together");
  }
};

struct SyntheticCorpus {
  Vocabulary vocab;
  DatasetHeader header;
  std::vector<MultimodalExample> parallel;
  std::vector<MultimodalExample> parallel_dev;
  std::vector<MultimodalExample> monolingual;
  std::vector<ContrastiveItem> contrastive;
  nlohmann::json key;
};

namespace gen_detail {

struct Lexicon {
  std::vector<int> filler_src, filler_tgt;  // w<i> -> t<i>
  std::vector<int> amb;                     // amb<k>
  std::vector<int> sense_a, sense_b;        // s<k>a / s<k>b
};

inline Lexicon build_lexicon(const GeneratorSpec& spec, Vocabulary& vocab) {
  Lexicon lex;
  for (int i = 0; i < spec.n_fillers; ++i)
    lex.filler_src.push_back(vocab.add("w" + std::to_string(i)));
  if (spec.shared_filler_vocab)
    lex.filler_tgt = lex.filler_src;
  else
    for (int i = 0; i < spec.n_fillers; ++i)
      lex.filler_tgt.push_back(vocab.add("t" + std::to_string(i)));
  for (int k = 0; k < spec.n_lexemes; ++k)
    lex.amb.push_back(vocab.add("amb" + std::to_string(k)));
  for (int k = 0; k < spec.n_lexemes; ++k) {
    lex.sense_a.push_back(vocab.add("s" + std::to_string(k) + "a"));
    lex.sense_b.push_back(vocab.add("s" + std::to_string(k) + "b"));
  }
  return lex;
}

inline ImageBundle noise_image(const GeneratorSpec& spec, Rng& rng) {
  ImageBundle img;
  img.local_features.assign(static_cast<std::size_t>(spec.n_boxes),
                            std::vector<double>(static_cast<std::size_t>(spec.d_local)));
  for (auto& row : img.local_features)
    for (double& v : row) v = rng.normal(0.0, spec.noise_stddev);
  img.global_feature.resize(static_cast<std::size_t>(spec.d_global));
  for (double& v : img.global_feature) v = rng.normal(0.0, spec.noise_stddev);
  return img;
}

// x = 0 selects sense a, x = 1 sense b.
inline void plant_signal(ImageBundle& img, const GeneratorSpec& spec, int k, int x) {
  img.global_feature[static_cast<std::size_t>(2 * k + x)] += spec.signal_amplitude;
  if (spec.signal_in_local)
    img.local_features[0][static_cast<std::size_t>(x)] += spec.signal_amplitude;
}

inline std::vector<int> sample_fillers(const GeneratorSpec& spec,
                                       const Lexicon& lex, int n, Rng& rng) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    out.push_back(lex.filler_src[rng.below(
        static_cast<std::uint64_t>(spec.n_fillers))]);
  return out;
}

inline std::vector<int> translate_fillers(const Lexicon& lex,
                                          const std::vector<int>& src) {
  std::vector<int> out;
  out.reserve(src.size());
  for (int id : src)
    out.push_back(lex.filler_tgt[static_cast<std::size_t>(id - lex.filler_src[0])]);
  return out;
}

}  // namespace gen_detail

inline SyntheticCorpus generate_synthetic_corpus(const GeneratorSpec& spec, Rng& rng) {
  spec.validate();
  SyntheticCorpus out;
  gen_detail::Lexicon lex = gen_detail::build_lexicon(spec, out.vocab);
  out.header.d_local = spec.d_local;
  out.header.d_global = spec.d_global;

  const auto draw_len = [&]() {
    return spec.min_sentence_len +
           static_cast<int>(rng.below(static_cast<std::uint64_t>(
               spec.max_sentence_len - spec.min_sentence_len + 1)));
  };
  const auto draw_caption_len = [&]() {
    if (spec.min_caption_len == 0) return draw_len();
    return spec.min_caption_len +
           static_cast<int>(rng.below(static_cast<std::uint64_t>(
               spec.max_caption_len - spec.min_caption_len + 1)));
  };

  const auto make_parallel = [&](const std::string& id) {
    MultimodalExample ex;
    ex.example_id = id;
    const int len = draw_len();
    ImageBundle img = gen_detail::noise_image(spec, rng);
    if (rng.bernoulli(spec.ambiguous_fraction)) {
      const int k = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.n_lexemes)));
      const int x = spec.single_sense_parallel ? 0 : static_cast<int>(rng.below(2));
      const int pos = static_cast<int>(rng.below(static_cast<std::uint64_t>(len)));
      ex.source_ids = gen_detail::sample_fillers(spec, lex, len - 1, rng);
      ex.target_ids = gen_detail::translate_fillers(lex, ex.source_ids);
      ex.source_ids.insert(ex.source_ids.begin() + pos, lex.amb[static_cast<std::size_t>(k)]);
      ex.target_ids.insert(ex.target_ids.begin() + pos,
                           x == 0 ? lex.sense_a[static_cast<std::size_t>(k)]
                                  : lex.sense_b[static_cast<std::size_t>(k)]);
      gen_detail::plant_signal(img, spec, k, x);
      ex.alignments.push_back({pos, pos + 1, 0});
    } else if (spec.sense_filler_fraction > 0) {
      // Sense words double as plain vocabulary in copied sentences; the
      // image stays pure noise, so they carry no visual information here.
      ex.source_ids.reserve(static_cast<std::size_t>(len));
      for (int t = 0; t < len; ++t) {
        if (rng.bernoulli(spec.sense_filler_fraction)) {
          const std::size_t pick = static_cast<std::size_t>(
              rng.below(static_cast<std::uint64_t>(2 * spec.n_lexemes)));
          ex.source_ids.push_back(
              pick < static_cast<std::size_t>(spec.n_lexemes)
                  ? lex.sense_a[pick]
                  : lex.sense_b[pick - static_cast<std::size_t>(spec.n_lexemes)]);
        } else {
          ex.source_ids.push_back(lex.filler_src[rng.below(
              static_cast<std::uint64_t>(spec.n_fillers))]);
        }
      }
      ex.target_ids = ex.source_ids;
    } else {
      ex.source_ids = gen_detail::sample_fillers(spec, lex, len, rng);
      ex.target_ids = gen_detail::translate_fillers(lex, ex.source_ids);
    }
    ex.local_features = std::move(img.local_features);
    ex.global_feature = std::move(img.global_feature);
    return ex;
  };

  for (int i = 0; i < spec.n_parallel; ++i)
    out.parallel.push_back(make_parallel("train-" + std::to_string(i)));
  for (int i = 0; i < spec.n_parallel_dev; ++i)
    out.parallel_dev.push_back(make_parallel("dev-" + std::to_string(i)));

  // Monolingual captions are target-language sentences that name the sense
  // outright; masking that word makes the image the only way to recover it.
  for (int i = 0; i < spec.n_monolingual; ++i) {
    MultimodalExample ex;
    ex.example_id = "mono-" + std::to_string(i);
    // Cycle lexemes and alternate senses so caption coverage is balanced.
    const int k = i % spec.n_lexemes;
    const int x = (i / spec.n_lexemes) % 2;
    const int len = draw_caption_len();
    const int pos = static_cast<int>(rng.below(static_cast<std::uint64_t>(len)));
    std::vector<int> src = gen_detail::sample_fillers(spec, lex, len - 1, rng);
    ex.source_ids = gen_detail::translate_fillers(lex, src);
    ex.source_ids.insert(ex.source_ids.begin() + pos,
                         x == 0 ? lex.sense_a[static_cast<std::size_t>(k)]
                                : lex.sense_b[static_cast<std::size_t>(k)]);
    ImageBundle img = gen_detail::noise_image(spec, rng);
    gen_detail::plant_signal(img, spec, k, x);
    ex.local_features = std::move(img.local_features);
    ex.global_feature = std::move(img.global_feature);
    ex.alignments.push_back({pos, pos + 1, 0});
    out.monolingual.push_back(std::move(ex));
  }

  nlohmann::json key_items = nlohmann::json::object();
  for (int i = 0; i < spec.n_contrastive; ++i) {
    ContrastiveItem it;
    it.example_id = "item-" + std::to_string(i);
    const int k = i % spec.n_lexemes;
    const int len = draw_len();
    const int pos = static_cast<int>(rng.below(static_cast<std::uint64_t>(len)));
    std::vector<int> src_fill = gen_detail::sample_fillers(spec, lex, len - 1, rng);
    std::vector<int> tgt_fill = gen_detail::translate_fillers(lex, src_fill);
    it.source_ids = src_fill;
    it.source_ids.insert(it.source_ids.begin() + pos, lex.amb[static_cast<std::size_t>(k)]);
    it.translation_a = tgt_fill;
    it.translation_a.insert(it.translation_a.begin() + pos,
                            lex.sense_a[static_cast<std::size_t>(k)]);
    it.translation_b = tgt_fill;
    it.translation_b.insert(it.translation_b.begin() + pos,
                            lex.sense_b[static_cast<std::size_t>(k)]);

    // Both bundles share the same noise and differ only in the signal dims.
    ImageBundle base = gen_detail::noise_image(spec, rng);
    base.alignments.push_back({pos, pos + 1, 0});
    ImageBundle img_a = base, img_b = base;
    gen_detail::plant_signal(img_a, spec, k, 0);
    gen_detail::plant_signal(img_b, spec, k, 1);
    if (rng.bernoulli(0.5)) {
      it.image_1 = std::move(img_a);
      it.image_2 = std::move(img_b);
      it.correct_for_image_1 = 'a';
      it.correct_for_image_2 = 'b';
    } else {
      it.image_1 = std::move(img_b);
      it.image_2 = std::move(img_a);
      it.correct_for_image_1 = 'b';
      it.correct_for_image_2 = 'a';
    }
    key_items[it.example_id] = {
        {"lexeme", k},
        {"image_1", std::string(1, it.correct_for_image_1)},
        {"image_2", std::string(1, it.correct_for_image_2)}};
    out.contrastive.push_back(std::move(it));
  }

  nlohmann::json lexemes = nlohmann::json::array();
  for (int k = 0; k < spec.n_lexemes; ++k)
    lexemes.push_back({{"source", out.vocab.token(lex.amb[static_cast<std::size_t>(k)])},
                       {"source_id", lex.amb[static_cast<std::size_t>(k)]},
                       {"sense_a_id", lex.sense_a[static_cast<std::size_t>(k)]},
                       {"sense_b_id", lex.sense_b[static_cast<std::size_t>(k)]},
                       {"global_dim_a", 2 * k},
                       {"global_dim_b", 2 * k + 1}});
  nlohmann::json fillers = nlohmann::json::array();
  for (int i = 0; i < spec.n_fillers; ++i)
    fillers.push_back({{"source_id", lex.filler_src[static_cast<std::size_t>(i)]},
                       {"target_id", lex.filler_tgt[static_cast<std::size_t>(i)]}});
  out.key = {{"lexemes", lexemes},
             {"fillers", fillers},
             {"signal",
              {{"kind", "global-onehot"},
               {"amplitude", spec.signal_amplitude},
               {"in_local", spec.signal_in_local}}},
             {"items", key_items}};
  return out;
}

inline void save_corpus(const SyntheticCorpus& corpus, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory: " + dir);
  const std::filesystem::path base(dir);
  save_examples((base / "parallel.jsonl").string(), corpus.header, corpus.parallel, true);
  save_examples((base / "parallel_dev.jsonl").string(), corpus.header,
                corpus.parallel_dev, true);
  save_examples((base / "monolingual.jsonl").string(), corpus.header,
                corpus.monolingual, false);
  save_contrastive((base / "contrastive.jsonl").string(), corpus.header,
                   corpus.contrastive);
  for (const char* name : {"key.json", "vocab.json"}) {
    const std::filesystem::path p = base / name;
    std::ofstream f(p, std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + p.string());
    f << (std::string(name) == "key.json" ? corpus.key : corpus.vocab.to_json()).dump(2)
      << "\n";
    if (!f) throw IoError("failed writing: " + p.string());
  }
}

}  // namespace mmt
