#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmt/adam.hpp"
#include "mmt/checkpoint.hpp"
#include "mmt/data.hpp"
#include "mmt/errors.hpp"
#include "mmt/eval.hpp"
#include "mmt/model.hpp"
#include "mmt/registry.hpp"
#include "mmt/rng.hpp"
#include "mmt/tensor.hpp"

namespace mmt {

struct TrainConfig {
  double p_vmlm = 0.5;
  double mask_rate = 0.25;
  double mask_keep_prob = 0.0;    // BERT-style corruption mix, off by default
  double mask_random_prob = 0.0;
  int batch_size = 16;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double label_smoothing = 0.1;
  int max_steps = 1000;
  int eval_every = 0;  // 0 disables dev evaluation; final step still saved
  int average_tail_steps = 0;  // save the mean of the last N steps' weights (0: last step only)
  std::uint64_t seed = 1;

  // ablation toggles
  bool guided_attention = true;  // false: ignore C in encoder attention
  bool use_local = true;
  bool use_global = true;
  FreezePolicy freeze_policy = FreezePolicy::kFrozenWithAdapters;
  bool vmlm = true;                // false: pure MMT training
  bool disjoint_schedule = false;  // VMLM phase first, then MMT phase

  void validate() const {
    if (p_vmlm < 0 || p_vmlm > 1) throw ValidationError("p_vmlm must be in [0, 1]");
    if (mask_rate < 0 || mask_rate > 1)
      throw ValidationError("mask_rate must be in [0, 1]");
    if (mask_keep_prob < 0 || mask_random_prob < 0 ||
        mask_keep_prob + mask_random_prob > 1.0)
      throw ValidationError(
          "mask corruption probabilities must be in [0, 1] and sum to at most 1");
    if (label_smoothing < 0 || label_smoothing >= 1)
      throw ValidationError("label_smoothing must be in [0, 1)");
    if (batch_size < 1) throw ValidationError("batch_size must be positive");
    if (max_steps < 1) throw ValidationError("max_steps must be positive");
    if (eval_every < 0) throw ValidationError("eval_every must be >= 0");
    if (average_tail_steps < 0)
      throw ValidationError("average_tail_steps must be >= 0");
    if (average_tail_steps > 0 && eval_every > 0)
      throw ValidationError(
          "average_tail_steps requires eval_every == 0; tail averaging and "
          "best-dev selection both decide which weights to keep");
    if (lr <= 0) throw ValidationError("lr must be positive");
  }

  GuidanceMode reduction_mode() const {
    if (use_local && use_global) return GuidanceMode::kGuided;
    if (use_global) return GuidanceMode::kDropLocal;
    if (use_local) return GuidanceMode::kDropGlobal;
    return GuidanceMode::kTextOnly;
  }
};

// Teacher-forced label-smoothed cross-entropy for one example.
inline Tensor mmt_example_loss(Model& model, const MultimodalExample& ex,
                               double smoothing, GuidanceMode mode,
                               Tape* tape) {
  MultimodalInput in = to_model_input(ex);
  if (mode != GuidanceMode::kGuided) in = reduce_input(in, mode);
  const EncoderOutput enc = model.encode(in, tape);
  std::vector<int> prefix = {kBosId};
  prefix.insert(prefix.end(), ex.target_ids.begin(), ex.target_ids.end());
  std::vector<int> targets = ex.target_ids;
  targets.push_back(kEosId);
  const Tensor logits = model.decode(enc, prefix, tape);
  return label_smoothed_ce(logits, targets, smoothing, tape);
}

// Token-weighted mean over the batch.
inline Tensor mmt_loss(Model& model, const std::vector<MultimodalExample>& batch,
                       double smoothing, GuidanceMode mode, Tape* tape) {
  if (batch.empty()) throw ValidationError("empty MMT batch");
  double total_tokens = 0;
  for (const MultimodalExample& ex : batch) {
    if (ex.target_ids.empty())
      throw ValidationError("MMT example without target: " + ex.example_id);
    total_tokens += static_cast<double>(ex.target_ids.size()) + 1;  // + EOS
  }
  Tensor loss = Tensor::scalar(0.0);
  for (const MultimodalExample& ex : batch) {
    const double weight =
        (static_cast<double>(ex.target_ids.size()) + 1) / total_tokens;
    loss = add(loss, scale(mmt_example_loss(model, ex, smoothing, mode, tape),
                           weight, tape),
               tape);
  }
  return loss;
}

// Unsmoothed cross-entropy at the masked positions, predicted from encoder
// states through the tied embedding head.
inline Tensor vmlm_example_loss(Model& model, const MultimodalExample& ex,
                                const MaskResult& mask, GuidanceMode mode,
                                Tape* tape) {
  if (mask.positions.empty())
    throw ValidationError("VMLM example with zero masked positions: " +
                          ex.example_id);
  MultimodalInput in = to_model_input(ex);
  in.text_token_ids = mask.masked_ids;
  if (mode != GuidanceMode::kGuided) in = reduce_input(in, mode);
  const Tensor logits = model.masked_position_logits(in, mask.positions, tape);
  return label_smoothed_ce(logits, mask.originals, 0.0, tape);
}

inline Tensor vmlm_loss(Model& model, const std::vector<MultimodalExample>& batch,
                        const std::vector<MaskResult>& masks, GuidanceMode mode,
                        Tape* tape) {
  if (batch.empty()) throw ValidationError("empty VMLM batch");
  if (batch.size() != masks.size())
    throw ValidationError("VMLM batch/mask size mismatch");
  double total_positions = 0;
  for (const MaskResult& m : masks) {
    if (m.positions.empty())
      throw ValidationError("VMLM batch entry with zero masked positions");
    total_positions += static_cast<double>(m.positions.size());
  }
  Tensor loss = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double weight =
        static_cast<double>(masks[i].positions.size()) / total_positions;
    loss = add(loss,
               scale(vmlm_example_loss(model, batch[i], masks[i], mode, tape),
                     weight, tape),
               tape);
  }
  return loss;
}

struct TrainResult {
  int steps_run = 0;
  double final_loss = 0.0;
  double best_dev_bleu = -1.0;
  int best_step = -1;
  int mmt_steps = 0;
  int vmlm_steps = 0;
};

struct TrainDatasets {
  std::vector<MultimodalExample> parallel;
  std::vector<MultimodalExample> parallel_dev;
  std::vector<MultimodalExample> monolingual;
};

inline double dev_bleu(Model& model, const std::vector<MultimodalExample>& dev,
                       GuidanceMode mode) {
  std::vector<std::vector<int>> hyps, refs;
  for (const MultimodalExample& ex : dev) {
    MultimodalInput in = to_model_input(ex);
    if (mode != GuidanceMode::kGuided) in = reduce_input(in, mode);
    hyps.push_back(model.greedy_translate(in, model.config().max_text_len));
    refs.push_back(ex.target_ids);
  }
  return corpus_bleu(hyps, refs);
}

// Joint training loop. Each step samples one objective and one batch (uniform
// with replacement), takes an Adam step on the trainable parameters, and logs
// one JSON line. With eval_every > 0 the dev set is scored by greedy BLEU and
// the best checkpoint is kept; otherwise the final model is saved.
inline TrainResult train(Model& model, const TrainConfig& cfg,
                         const TrainDatasets& data,
                         const std::string& checkpoint_path,
                         std::ostream* metrics = nullptr) {
  cfg.validate();
  if (data.parallel.empty()) throw ValidationError("no parallel training data");
  const bool want_vmlm = cfg.vmlm && (cfg.p_vmlm > 0 || cfg.disjoint_schedule);
  std::vector<std::size_t> maskable_mono;
  if (want_vmlm) {
    if (cfg.mask_rate <= 0)
      throw ValidationError("VMLM requires a positive mask rate");
    for (std::size_t i = 0; i < data.monolingual.size(); ++i)
      for (int id : data.monolingual[i].source_ids)
        if (id >= kNumReservedIds) {
          maskable_mono.push_back(i);
          break;
        }
    if (maskable_mono.empty())
      throw ValidationError("VMLM enabled but no maskable monolingual data");
  }

  partition_parameters(model.params(), cfg.freeze_policy);
  model.set_attention_gating(cfg.guided_attention);
  const GuidanceMode mode = cfg.reduction_mode();
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  adam_cfg.beta1 = cfg.beta1;
  adam_cfg.beta2 = cfg.beta2;
  Adam opt(model.params(), adam_cfg);
  Rng rng(cfg.seed);

  TrainResult result;
  // Tail averaging: non-frozen weights visited after opt.step collapse to
  // their running mean, which smooths out end-of-run optimizer noise.
  const int tail_start = cfg.average_tail_steps > 0
                             ? std::max(0, cfg.max_steps - cfg.average_tail_steps)
                             : cfg.max_steps;
  std::vector<std::vector<double>> tail_sum;
  int tail_count = 0;
  MaskCorruption corruption;
  corruption.keep_prob = cfg.mask_keep_prob;
  corruption.random_prob = cfg.mask_random_prob;
  corruption.vocab_size = model.config().vocab_size;
  const int vmlm_phase = cfg.disjoint_schedule ? cfg.max_steps / 2 : 0;
  for (int step = 0; step < cfg.max_steps; ++step) {
    Objective objective;
    if (!cfg.vmlm) {
      objective = Objective::kMmt;
    } else if (cfg.disjoint_schedule) {
      objective = step < vmlm_phase ? Objective::kVmlm : Objective::kMmt;
    } else {
      objective = sample_objective(cfg.p_vmlm, rng);
    }

    Tape tape;
    Tensor loss;
    try {
      if (objective == Objective::kMmt) {
        std::vector<MultimodalExample> batch;
        for (int b = 0; b < cfg.batch_size; ++b)
          batch.push_back(data.parallel[rng.below(
              static_cast<std::uint64_t>(data.parallel.size()))]);
        loss = mmt_loss(model, batch, cfg.label_smoothing, mode, &tape);
        ++result.mmt_steps;
      } else {
        std::vector<MultimodalExample> batch;
        std::vector<MaskResult> masks;
        for (int b = 0; b < cfg.batch_size; ++b) {
          const MultimodalExample& ex = data.monolingual[maskable_mono[rng.below(
              static_cast<std::uint64_t>(maskable_mono.size()))]];
          batch.push_back(ex);
          masks.push_back(mask_tokens(ex.source_ids, cfg.mask_rate, rng, corruption));
        }
        loss = vmlm_loss(model, batch, masks, mode, &tape);
        ++result.vmlm_steps;
      }
    } catch (const NumericalError& e) {
      throw DivergenceError("training diverged at step " + std::to_string(step) +
                            ": " + e.what());
    }

    const double loss_value = loss.at(0);
    if (!std::isfinite(loss_value))
      throw DivergenceError("training loss diverged at step " +
                            std::to_string(step));
    tape.backward(loss);
    opt.step(model.params());
    result.final_loss = loss_value;
    ++result.steps_run;

    if (step >= tail_start) {
      std::vector<ParamEntry>& entries = model.params().entries();
      if (tail_sum.empty()) {
        tail_sum.resize(entries.size());
        for (std::size_t i = 0; i < entries.size(); ++i)
          if (!entries[i].frozen)
            tail_sum[i].assign(entries[i].tensor.values().size(), 0.0);
      }
      for (std::size_t i = 0; i < entries.size(); ++i) {
        if (entries[i].frozen) continue;
        const std::vector<double>& v = entries[i].tensor.values();
        for (std::size_t j = 0; j < v.size(); ++j) tail_sum[i][j] += v[j];
      }
      ++tail_count;
    }

    if (metrics) {
      nlohmann::json line = {
          {"step", step},
          {"objective", objective == Objective::kMmt ? "mmt" : "vmlm"},
          {"loss", loss_value}};
      *metrics << line.dump() << "\n";
    }

    const bool last = step + 1 == cfg.max_steps;
    if (cfg.eval_every > 0 && !data.parallel_dev.empty() &&
        ((step + 1) % cfg.eval_every == 0 || last)) {
      const double bleu = dev_bleu(model, data.parallel_dev, mode);
      if (metrics) {
        nlohmann::json line = {{"step", step}, {"dev_bleu", bleu}};
        *metrics << line.dump() << "\n";
      }
      if (bleu > result.best_dev_bleu) {
        result.best_dev_bleu = bleu;
        result.best_step = step;
        if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path, model);
      }
    }
  }
  if (tail_count > 0) {
    std::vector<ParamEntry>& entries = model.params().entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].frozen) continue;
      std::vector<double>& v = entries[i].tensor.values();
      for (std::size_t j = 0; j < v.size(); ++j)
        v[j] = tail_sum[i][j] / tail_count;
    }
  }
  if ((cfg.eval_every == 0 || data.parallel_dev.empty()) &&
      !checkpoint_path.empty())
    save_checkpoint(checkpoint_path, model);
  return result;
}

}  // namespace mmt
