#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mmt/data.hpp"
#include "mmt/errors.hpp"
#include "mmt/guidance.hpp"
#include "mmt/model.hpp"
#include "mmt/tensor.hpp"

namespace mmt {

inline constexpr double kPplTieEpsilon = 1e-12;

inline double perplexity(const std::vector<double>& log_probs) {
  if (log_probs.empty())
    throw ValidationError("perplexity needs at least one token");
  double sum = 0.0;
  for (double lp : log_probs) {
    if (!std::isfinite(lp))
      throw ValidationError("non-finite log probability in perplexity");
    sum += lp;
  }
  return std::exp(-sum / static_cast<double>(log_probs.size()));
}

struct ContrastiveOutcome {
  std::string example_id;
  // ppl[image][translation]: image 0/1, translation 0 = a, 1 = b
  double ppl[2][2];
  bool correct[2];
  bool tie[2];
};

struct ContrastiveReport {
  std::vector<ContrastiveOutcome> outcomes;
  int total = 0;
  int correct = 0;
  int ties = 0;
  double accuracy = 0.0;
};

// Scores every item with two comparisons, one per image; a comparison is
// correct when the paired translation's perplexity is <= the other one's.
// Ties within kPplTieEpsilon count as correct but are reported separately.
// score(item, image_index, translation_index) must return a perplexity.
template <typename ScoreFn>
ContrastiveReport contrastive_evaluate_with(ScoreFn&& score,
                                            const std::vector<ContrastiveItem>& items) {
  ContrastiveReport report;
  for (const ContrastiveItem& item : items) {
    ContrastiveOutcome out;
    out.example_id = item.example_id;
    const char truths[2] = {item.correct_for_image_1, item.correct_for_image_2};
    for (int img = 0; img < 2; ++img) {
      for (int tr = 0; tr < 2; ++tr) out.ppl[img][tr] = score(item, img, tr);
      const int truth_idx = truths[img] == 'a' ? 0 : 1;
      const double ppl_true = out.ppl[img][truth_idx];
      const double ppl_false = out.ppl[img][1 - truth_idx];
      out.tie[img] = std::abs(ppl_true - ppl_false) < kPplTieEpsilon;
      out.correct[img] = ppl_true <= ppl_false || out.tie[img];
      ++report.total;
      if (out.correct[img]) ++report.correct;
      if (out.tie[img]) ++report.ties;
    }
    report.outcomes.push_back(std::move(out));
  }
  report.accuracy = report.total == 0
                        ? 0.0
                        : static_cast<double>(report.correct) / report.total;
  return report;
}

inline ContrastiveReport contrastive_evaluate(Model& model,
                                              const std::vector<ContrastiveItem>& items,
                                              GuidanceMode mode = GuidanceMode::kGuided) {
  return contrastive_evaluate_with(
      [&](const ContrastiveItem& item, int img, int tr) {
        const ImageBundle& image = img == 0 ? item.image_1 : item.image_2;
        const std::vector<int>& translation =
            tr == 0 ? item.translation_a : item.translation_b;
        MultimodalInput in = to_model_input(item.source_ids, image);
        if (mode != GuidanceMode::kGuided) in = reduce_input(in, mode);
        std::vector<int> target = {kBosId};
        target.insert(target.end(), translation.begin(), translation.end());
        target.push_back(kEosId);
        return perplexity(model.sequence_log_prob(in, target));
      },
      items);
}

// ---- corpus BLEU ------------------------------------------------------------

namespace bleu_detail {

inline std::map<std::vector<int>, int> ngram_counts(const std::vector<int>& toks,
                                                    int n) {
  std::map<std::vector<int>, int> counts;
  if (static_cast<int>(toks.size()) < n) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size(); ++i)
    ++counts[std::vector<int>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                              toks.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  return counts;
}

}  // namespace bleu_detail

// Standard corpus BLEU: geometric mean of clipped n-gram precisions (n=1..4)
// times the exponential brevity penalty, on a 0..100 scale. Orders longer than
// every hypothesis are skipped so that tiny corpora are still comparable; any
// zero precision yields 0 unless add-one smoothing (applied for n >= 2) is on.
inline double corpus_bleu(const std::vector<std::vector<int>>& hypotheses,
                          const std::vector<std::vector<int>>& references,
                          bool add_one = false) {
  if (hypotheses.size() != references.size())
    throw ValidationError("hypothesis/reference count mismatch");
  if (hypotheses.empty()) throw ValidationError("empty corpus");
  long long hyp_len = 0, ref_len = 0;
  long long matches[4] = {0, 0, 0, 0};
  long long totals[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    hyp_len += static_cast<long long>(hypotheses[i].size());
    ref_len += static_cast<long long>(references[i].size());
    for (int n = 1; n <= 4; ++n) {
      const auto hyp_counts = bleu_detail::ngram_counts(hypotheses[i], n);
      const auto ref_counts = bleu_detail::ngram_counts(references[i], n);
      for (const auto& [gram, count] : hyp_counts) {
        const auto hit = ref_counts.find(gram);
        const int clip = hit == ref_counts.end() ? 0 : hit->second;
        matches[n - 1] += std::min(count, clip);
        totals[n - 1] += count;
      }
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_precision_sum = 0.0;
  int used_orders = 0;
  for (int n = 1; n <= 4; ++n) {
    if (totals[n - 1] == 0) continue;
    double m = static_cast<double>(matches[n - 1]);
    double t = static_cast<double>(totals[n - 1]);
    if (add_one && n >= 2) {
      m += 1.0;
      t += 1.0;
    }
    if (m == 0.0) return 0.0;
    log_precision_sum += std::log(m / t);
    ++used_orders;
  }
  if (used_orders == 0) return 0.0;
  const double geo_mean = std::exp(log_precision_sum / used_orders);
  const double bp = hyp_len < ref_len
                        ? std::exp(1.0 - static_cast<double>(ref_len) / hyp_len)
                        : 1.0;
  return 100.0 * geo_mean * bp;
}

// ---- norm-based attention analysis -----------------------------------------

// Head-averaged matrix of ||alpha_ij * f(x_j)||: attention weight times the
// norm of position j's value vector.
inline Tensor normalized_attention_matrix(const AttentionRecord& rec) {
  if (rec.head_attention.empty())
    throw ValidationError("attention recording not enabled");
  const int s_rows = rec.head_attention[0].rows();
  const int s_cols = rec.head_attention[0].cols();
  Tensor out = Tensor::zeros({s_rows, s_cols});
  const double n_heads = static_cast<double>(rec.head_attention.size());
  for (std::size_t h = 0; h < rec.head_attention.size(); ++h) {
    const Tensor& attn = rec.head_attention[h];
    const std::vector<double>& value_norms = rec.head_value_norms[h];
    for (int i = 0; i < s_rows; ++i)
      for (int j = 0; j < s_cols; ++j)
        out.at(i, j) += attn.at(i, j) * value_norms[static_cast<std::size_t>(j)] /
                        n_heads;
  }
  return out;
}

// layer = -1 averages over all recorded encoder layers.
inline Tensor normalized_attention_scores(const AttentionRecorder& recorder,
                                          int layer = -1) {
  if (recorder.encoder_layers.empty())
    throw ValidationError("attention recording not enabled");
  if (layer >= 0) {
    if (layer >= static_cast<int>(recorder.encoder_layers.size()))
      throw ValidationError("no recorded attention for layer " +
                            std::to_string(layer));
    return normalized_attention_matrix(
        recorder.encoder_layers[static_cast<std::size_t>(layer)]);
  }
  Tensor sum = normalized_attention_matrix(recorder.encoder_layers[0]);
  for (std::size_t l = 1; l < recorder.encoder_layers.size(); ++l) {
    const Tensor next =
        normalized_attention_matrix(recorder.encoder_layers[l]);
    for (int i = 0; i < sum.size(); ++i) sum.at(i) += next.at(i);
  }
  const double n = static_cast<double>(recorder.encoder_layers.size());
  for (int i = 0; i < sum.size(); ++i) sum.at(i) /= n;
  return sum;
}

}  // namespace mmt
