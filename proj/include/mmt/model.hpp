#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mmt/adapters.hpp"
#include "mmt/errors.hpp"
#include "mmt/guidance.hpp"
#include "mmt/registry.hpp"
#include "mmt/rng.hpp"
#include "mmt/tensor.hpp"

namespace mmt {

// Reserved token ids shared across vocabulary, masking, and decoding.
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kMaskId = 4;
inline constexpr int kNumReservedIds = 5;

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_heads = 4;
  int n_encoder_layers = 2;
  int n_decoder_layers = 2;
  int d_ffn = 128;
  int max_text_len = 64;
  int n_local_features = 8;  // most boxes an example may carry
  int d_local_in = 64;
  int d_global_in = 512;
  int adapter_reduction = 8;
  double dropout = 0.0;
  bool use_adapters = true;
  bool adapters_in_decoder = true;
  bool use_local = true;
  bool use_global = true;
  double ln_eps = 1e-5;
  double visual_init_stddev = 0.05;

  int d_head() const { return d_model / n_heads; }
  int d_bottleneck() const { return d_model / adapter_reduction; }

  void validate() const {
    if (vocab_size <= kNumReservedIds)
      throw ValidationError("vocab_size must exceed the " +
                            std::to_string(kNumReservedIds) + " reserved ids");
    if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
      throw ValidationError("d_model must be a positive multiple of n_heads");
    if (n_encoder_layers < 0 || n_decoder_layers < 0)
      throw ValidationError("layer counts must be non-negative");
    if (d_ffn <= 0) throw ValidationError("d_ffn must be positive");
    if (max_text_len < 1) throw ValidationError("max_text_len must be >= 1");
    if (n_local_features < 0)
      throw ValidationError("n_local_features must be non-negative");
    if (d_local_in <= 0 || d_global_in <= 0)
      throw ValidationError("visual input dimensions must be positive");
    if (use_adapters &&
        (adapter_reduction <= 0 || d_model % adapter_reduction != 0))
      throw ValidationError(
          "adapter_reduction must be positive and divide d_model");
    if (dropout < 0.0 || dropout >= 1.0)
      throw ValidationError("dropout must be in [0, 1)");
    if (ln_eps <= 0.0) throw ValidationError("ln_eps must be positive");
  }
};

// One example on the encoder side: token ids plus visual features, with the
// guidance matrix already built over the concatenated layout.
struct MultimodalInput {
  std::vector<int> text_token_ids;
  std::vector<std::vector<double>> local_features;  // each of length d_local_in
  std::vector<double> global_feature;               // length d_global_in
  GuidanceMatrix guidance;
};

struct EncoderOutput {
  Tensor hidden;  // seq_len x d_model
  Layout layout;
};

// Per-layer capture of encoder attention for norm-based analysis: the
// attention matrix of each head and the Euclidean norm of each value row.
struct AttentionRecord {
  std::vector<Tensor> head_attention;
  std::vector<std::vector<double>> head_value_norms;
};

struct AttentionRecorder {
  std::vector<AttentionRecord> encoder_layers;
  std::vector<AttentionRecord> decoder_self_layers;
  std::vector<AttentionRecord> decoder_cross_layers;
};

// Drops feature payloads together with their guidance rows so the input
// stays consistent with the degraded layout.
inline MultimodalInput reduce_input(const MultimodalInput& in, GuidanceMode mode) {
  if (mode == GuidanceMode::kGuided) return in;
  MultimodalInput out = in;
  out.guidance = degrade_guidance(in.guidance, mode);
  if (mode == GuidanceMode::kDropLocal || mode == GuidanceMode::kTextOnly)
    out.local_features.clear();
  if (mode == GuidanceMode::kDropGlobal || mode == GuidanceMode::kTextOnly)
    out.global_feature.clear();
  return out;
}

class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  const ModelConfig& config() const { return cfg_; }
  ParameterRegistry& params() { return reg_; }
  const ParameterRegistry& params() const { return reg_; }

  // When off, encoder self-attention ignores the guidance matrix and runs the
  // ungated softmax: the full-attention ablation.
  void set_attention_gating(bool on) { gating_ = on; }
  bool attention_gating() const { return gating_; }

  void set_training(bool on) { training_ = on; }
  void set_forward_rng(Rng* rng) { forward_rng_ = rng; }

  void init_params(Rng& rng) {
    if (reg_.size() > 0) throw ValidationError("parameters already initialized");
    const int d = cfg_.d_model;
    const double embed_sd = 1.0 / std::sqrt(static_cast<double>(d));
    const double attn_sd = std::sqrt(2.0 / (d + d));
    const double ffn1_sd = std::sqrt(2.0 / (d + cfg_.d_ffn));
    const double ffn2_sd = std::sqrt(2.0 / (cfg_.d_ffn + d));

    reg_.add("embed.tokens", Tensor::randn({cfg_.vocab_size, d}, rng, embed_sd));
    if (cfg_.use_local) {
      reg_.add("visual.local_proj.w",
               Tensor::randn({cfg_.d_local_in, d}, rng, cfg_.visual_init_stddev));
      reg_.add("visual.local_proj.b", Tensor::zeros({d}));
    }
    if (cfg_.use_global) {
      reg_.add("visual.global_proj.w",
               Tensor::randn({cfg_.d_global_in, d}, rng, cfg_.visual_init_stddev));
      reg_.add("visual.global_proj.b", Tensor::zeros({d}));
    }
    auto add_attention = [&](const std::string& p) {
      for (const char* w : {".wq", ".wk", ".wv", ".wo"})
        reg_.add(p + w, Tensor::randn({d, d}, rng, attn_sd));
      for (const char* b : {".bq", ".bk", ".bv", ".bo"})
        reg_.add(p + b, Tensor::zeros({d}));
    };
    auto add_adapter = [&](const std::string& p) {
      const int b = cfg_.d_bottleneck();
      reg_.add(p + ".down", Tensor::randn({d, b}, rng, 0.05));
      reg_.add(p + ".down_b", Tensor::zeros({b}));
      reg_.add(p + ".up", Tensor::zeros({b, d}));
      reg_.add(p + ".up_b", Tensor::zeros({d}));
    };
    auto add_ffn = [&](const std::string& p) {
      reg_.add(p + ".w1", Tensor::randn({d, cfg_.d_ffn}, rng, ffn1_sd));
      reg_.add(p + ".b1", Tensor::zeros({cfg_.d_ffn}));
      reg_.add(p + ".w2", Tensor::randn({cfg_.d_ffn, d}, rng, ffn2_sd));
      reg_.add(p + ".b2", Tensor::zeros({d}));
    };
    auto add_ln = [&](const std::string& p) {
      reg_.add(p + ".gain", Tensor::full({d}, 1.0));
      reg_.add(p + ".bias", Tensor::zeros({d}));
    };
    for (int l = 0; l < cfg_.n_encoder_layers; ++l) {
      const std::string p = "enc." + std::to_string(l);
      add_attention(p + ".attn");
      if (cfg_.use_adapters) add_adapter(p + ".adapter_attn");
      add_ln(p + ".ln1");
      add_ffn(p + ".ffn");
      if (cfg_.use_adapters) add_adapter(p + ".adapter_ffn");
      add_ln(p + ".ln2");
    }
    const bool dec_adapters = cfg_.use_adapters && cfg_.adapters_in_decoder;
    for (int l = 0; l < cfg_.n_decoder_layers; ++l) {
      const std::string p = "dec." + std::to_string(l);
      add_attention(p + ".self_attn");
      if (dec_adapters) add_adapter(p + ".adapter_self");
      add_ln(p + ".ln1");
      add_attention(p + ".cross_attn");
      if (dec_adapters) add_adapter(p + ".adapter_cross");
      add_ln(p + ".ln2");
      add_ffn(p + ".ffn");
      if (dec_adapters) add_adapter(p + ".adapter_ffn");
      add_ln(p + ".ln3");
    }
  }

  static Tensor positional_encoding(int len, int d) {
    Tensor pe({len, d});
    for (int pos = 0; pos < len; ++pos)
      for (int i = 0; i < d; ++i) {
        const double angle =
            pos / std::pow(10000.0, (2.0 * (i / 2)) / static_cast<double>(d));
        pe.at(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
      }
    return pe;
  }

  void validate_input(const MultimodalInput& in) const {
    const int t = static_cast<int>(in.text_token_ids.size());
    if (t < 1) throw ValidationError("input has no text tokens");
    if (t > cfg_.max_text_len)
      throw DimensionError("text length " + std::to_string(t) +
                           " exceeds max_text_len " +
                           std::to_string(cfg_.max_text_len));
    for (int id : in.text_token_ids)
      if (id < 0 || id >= cfg_.vocab_size)
        throw ValidationError("token id " + std::to_string(id) +
                              " outside vocabulary");
    const Layout& lay = in.guidance.layout;
    if (lay.text_len != t)
      throw ValidationError("guidance layout text length " +
                            std::to_string(lay.text_len) +
                            " does not match input length " + std::to_string(t));
    const int n = static_cast<int>(in.local_features.size());
    if (lay.n_local != n)
      throw ValidationError("guidance layout expects " +
                            std::to_string(lay.n_local) +
                            " local features, input has " + std::to_string(n));
    if (!cfg_.use_local && n > 0)
      throw ValidationError("model built without local features");
    if (n > cfg_.n_local_features)
      throw ValidationError("too many local features: " + std::to_string(n) +
                            " > " + std::to_string(cfg_.n_local_features));
    for (const auto& f : in.local_features)
      if (static_cast<int>(f.size()) != cfg_.d_local_in)
        throw ValidationError("local feature dimension " +
                              std::to_string(f.size()) + " != d_local_in " +
                              std::to_string(cfg_.d_local_in));
    if (lay.has_global) {
      if (!cfg_.use_global)
        throw ValidationError("model built without a global feature");
      if (static_cast<int>(in.global_feature.size()) != cfg_.d_global_in)
        throw ValidationError("global feature dimension " +
                              std::to_string(in.global_feature.size()) +
                              " != d_global_in " +
                              std::to_string(cfg_.d_global_in));
    } else if (!in.global_feature.empty()) {
      throw ValidationError("global feature present but layout omits it");
    }
    if (in.guidance.matrix.ndim() != 2 ||
        in.guidance.matrix.rows() != lay.seq_len() ||
        in.guidance.matrix.cols() != lay.seq_len())
      throw ValidationError("guidance matrix shape does not match layout");
  }

  // Text rows get token embeddings (scaled by sqrt(d)) plus sinusoidal
  // positions; visual rows get linear projections and no positional term.
  Tensor embed_inputs(const MultimodalInput& in, Tape* tape = nullptr) {
    validate_input(in);
    const int t = static_cast<int>(in.text_token_ids.size());
    const int d = cfg_.d_model;
    Tensor tok = gather_rows(reg_.get("embed.tokens"), in.text_token_ids, tape);
    tok = scale(tok, std::sqrt(static_cast<double>(d)), tape);
    Tensor text = add(tok, positional_encoding(t, d), tape);
    std::vector<Tensor> parts = {maybe_dropout(text, tape)};
    if (in.guidance.layout.n_local > 0) {
      const int n = static_cast<int>(in.local_features.size());
      Tensor feats({n, cfg_.d_local_in});
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < cfg_.d_local_in; ++j)
          feats.at(i, j) = in.local_features[static_cast<std::size_t>(i)]
                                            [static_cast<std::size_t>(j)];
      parts.push_back(add_bias(matmul(feats, reg_.get("visual.local_proj.w"), tape),
                               reg_.get("visual.local_proj.b"), tape));
    }
    if (in.guidance.layout.has_global) {
      Tensor g({1, cfg_.d_global_in});
      for (int j = 0; j < cfg_.d_global_in; ++j)
        g.at(0, j) = in.global_feature[static_cast<std::size_t>(j)];
      parts.push_back(add_bias(matmul(g, reg_.get("visual.global_proj.w"), tape),
                               reg_.get("visual.global_proj.b"), tape));
    }
    return parts.size() == 1 ? parts[0] : concat_rows(parts, tape);
  }

  EncoderOutput encode(const MultimodalInput& in, Tape* tape = nullptr,
                       AttentionRecorder* rec = nullptr) {
    Tensor h = embed_inputs(in, tape);
    const Tensor* mask = gating_ ? &in.guidance.matrix : nullptr;
    for (int l = 0; l < cfg_.n_encoder_layers; ++l) {
      const std::string p = "enc." + std::to_string(l);
      AttentionRecord record;
      Tensor a = multi_head_attention(p + ".attn", h, h, mask, tape,
                                      rec ? &record : nullptr);
      a = maybe_dropout(a, tape);
      if (cfg_.use_adapters)
        a = adapter_forward(a, adapter(p + ".adapter_attn"), tape);
      h = post_norm(p + ".ln1", h, a, tape);
      Tensor f = feed_forward(p + ".ffn", h, tape);
      f = maybe_dropout(f, tape);
      if (cfg_.use_adapters)
        f = adapter_forward(f, adapter(p + ".adapter_ffn"), tape);
      h = post_norm(p + ".ln2", h, f, tape);
      if (rec) rec->encoder_layers.push_back(std::move(record));
    }
    return {h, in.guidance.layout};
  }

  // Teacher-forced decoder pass: row i holds next-token logits after
  // prefix_ids[0..i].
  Tensor decode(const EncoderOutput& enc, const std::vector<int>& prefix_ids,
                Tape* tape = nullptr, AttentionRecorder* rec = nullptr) {
    if (prefix_ids.empty()) throw ValidationError("decoder prefix is empty");
    for (int id : prefix_ids)
      if (id < 0 || id >= cfg_.vocab_size)
        throw ValidationError("prefix token id " + std::to_string(id) +
                              " outside vocabulary");
    const int p = static_cast<int>(prefix_ids.size());
    const int d = cfg_.d_model;
    Tensor x = gather_rows(reg_.get("embed.tokens"), prefix_ids, tape);
    x = scale(x, std::sqrt(static_cast<double>(d)), tape);
    x = maybe_dropout(add(x, positional_encoding(p, d), tape), tape);
    Tensor causal({p, p});
    for (int i = 0; i < p; ++i)
      for (int j = 0; j <= i; ++j) causal.at(i, j) = 1.0;
    Tensor text_states =
        slice_rows(enc.hidden, 0, enc.layout.text_len, tape);
    const bool dec_adapters = cfg_.use_adapters && cfg_.adapters_in_decoder;
    for (int l = 0; l < cfg_.n_decoder_layers; ++l) {
      const std::string pre = "dec." + std::to_string(l);
      AttentionRecord self_rec, cross_rec;
      Tensor a = multi_head_attention(pre + ".self_attn", x, x, &causal, tape,
                                      rec ? &self_rec : nullptr);
      a = maybe_dropout(a, tape);
      if (dec_adapters)
        a = adapter_forward(a, adapter(pre + ".adapter_self"), tape);
      x = post_norm(pre + ".ln1", x, a, tape);
      Tensor c = multi_head_attention(pre + ".cross_attn", x, text_states,
                                      nullptr, tape, rec ? &cross_rec : nullptr);
      c = maybe_dropout(c, tape);
      if (dec_adapters)
        c = adapter_forward(c, adapter(pre + ".adapter_cross"), tape);
      x = post_norm(pre + ".ln2", x, c, tape);
      Tensor f = feed_forward(pre + ".ffn", x, tape);
      f = maybe_dropout(f, tape);
      if (dec_adapters)
        f = adapter_forward(f, adapter(pre + ".adapter_ffn"), tape);
      x = post_norm(pre + ".ln3", x, f, tape);
      if (rec) {
        rec->decoder_self_layers.push_back(std::move(self_rec));
        rec->decoder_cross_layers.push_back(std::move(cross_rec));
      }
    }
    return matmul_nt(x, reg_.get("embed.tokens"), tape);
  }

  // Logits for the single next token after the prefix.
  Tensor decode_step(const EncoderOutput& enc, const std::vector<int>& prefix_ids,
                     Tape* tape = nullptr) {
    Tensor logits = decode(enc, prefix_ids, tape);
    return slice_rows(logits, logits.rows() - 1, logits.rows(), tape);
  }

  // Log-probability of each target token after BOS; length excludes BOS.
  std::vector<double> sequence_log_prob(const MultimodalInput& in,
                                        const std::vector<int>& target_ids) {
    if (target_ids.size() < 2 || target_ids.front() != kBosId ||
        target_ids.back() != kEosId)
      throw ValidationError("target must start with BOS and end with EOS");
    EncoderOutput enc = encode(in);
    std::vector<int> prefix(target_ids.begin(), target_ids.end() - 1);
    Tensor logits = decode(enc, prefix);
    Tensor lp = log_softmax(logits);
    std::vector<double> out;
    out.reserve(target_ids.size() - 1);
    for (std::size_t i = 1; i < target_ids.size(); ++i)
      out.push_back(lp.at(static_cast<int>(i) - 1, target_ids[i]));
    return out;
  }

  // Argmax decoding from BOS; returns generated ids (EOS included when
  // produced, BOS excluded). Ties break toward the lowest token id.
  // Returns content tokens only; the terminating EOS is consumed, not emitted.
  std::vector<int> greedy_translate(const MultimodalInput& in, int max_len) {
    if (max_len < 1) throw ValidationError("max_len must be >= 1");
    EncoderOutput enc = encode(in);
    std::vector<int> seq = {kBosId};
    std::vector<int> out;
    while (static_cast<int>(out.size()) < max_len) {
      Tensor logits = decode_step(enc, seq);
      int best = 0;
      for (int v = 1; v < cfg_.vocab_size; ++v)
        if (logits.at(0, v) > logits.at(0, best)) best = v;
      if (best == kEosId) break;
      out.push_back(best);
      seq.push_back(best);
    }
    return out;
  }

  // Vocabulary logits at the given text positions of the encoder output,
  // through the tied embedding matrix.
  Tensor masked_position_logits(const MultimodalInput& in,
                                const std::vector<int>& positions,
                                Tape* tape = nullptr) {
    if (positions.empty())
      throw ValidationError("no masked positions to predict");
    const int t = static_cast<int>(in.text_token_ids.size());
    for (int p : positions)
      if (p < 0 || p >= t)
        throw ValidationError("masked position " + std::to_string(p) +
                              " outside the text span");
    EncoderOutput enc = encode(in, tape);
    Tensor states = gather_rows(enc.hidden, positions, tape);
    return matmul_nt(states, reg_.get("embed.tokens"), tape);
  }

 private:
  Tensor maybe_dropout(Tensor x, Tape* tape) {
    if (!training_ || cfg_.dropout == 0.0) return x;
    if (!forward_rng_)
      throw ValidationError("dropout requires a forward RNG in training mode");
    return dropout(x, cfg_.dropout, *forward_rng_, tape);
  }

  BottleneckAdapter adapter(const std::string& prefix) {
    return {reg_.get(prefix + ".down"), reg_.get(prefix + ".down_b"),
            reg_.get(prefix + ".up"), reg_.get(prefix + ".up_b")};
  }

  Tensor post_norm(const std::string& ln, const Tensor& residual,
                   const Tensor& sublayer, Tape* tape) {
    return layer_norm(add(residual, sublayer, tape), reg_.get(ln + ".gain"),
                      reg_.get(ln + ".bias"), cfg_.ln_eps, tape);
  }

  Tensor feed_forward(const std::string& p, const Tensor& x, Tape* tape) {
    Tensor h = gelu(add_bias(matmul(x, reg_.get(p + ".w1"), tape),
                             reg_.get(p + ".b1"), tape),
                    tape);
    return add_bias(matmul(h, reg_.get(p + ".w2"), tape), reg_.get(p + ".b2"),
                    tape);
  }

  Tensor multi_head_attention(const std::string& p, const Tensor& q_in,
                              const Tensor& kv_in, const Tensor* mask,
                              Tape* tape, AttentionRecord* record) {
    Tensor q = add_bias(matmul(q_in, reg_.get(p + ".wq"), tape),
                        reg_.get(p + ".bq"), tape);
    Tensor k = add_bias(matmul(kv_in, reg_.get(p + ".wk"), tape),
                        reg_.get(p + ".bk"), tape);
    Tensor v = add_bias(matmul(kv_in, reg_.get(p + ".wv"), tape),
                        reg_.get(p + ".bv"), tape);
    const int dk = cfg_.d_head();
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
    std::vector<Tensor> heads;
    heads.reserve(static_cast<std::size_t>(cfg_.n_heads));
    for (int h = 0; h < cfg_.n_heads; ++h) {
      Tensor qh = slice_cols(q, h * dk, (h + 1) * dk, tape);
      Tensor kh = slice_cols(k, h * dk, (h + 1) * dk, tape);
      Tensor vh = slice_cols(v, h * dk, (h + 1) * dk, tape);
      Tensor scores = scale(matmul_nt(qh, kh, tape), inv_sqrt_dk, tape);
      Tensor attn = mask ? masked_softmax(scores, *mask, tape)
                         : softmax(scores, tape);
      if (record) {
        record->head_attention.push_back(attn.clone());
        std::vector<double> norms(static_cast<std::size_t>(vh.rows()));
        for (int j = 0; j < vh.rows(); ++j) {
          double s = 0.0;
          for (int c = 0; c < dk; ++c) s += vh.at(j, c) * vh.at(j, c);
          norms[static_cast<std::size_t>(j)] = std::sqrt(s);
        }
        record->head_value_norms.push_back(std::move(norms));
      }
      heads.push_back(matmul(attn, vh, tape));
    }
    Tensor o = concat_cols(heads, tape);
    return add_bias(matmul(o, reg_.get(p + ".wo"), tape), reg_.get(p + ".bo"),
                    tape);
  }

  ModelConfig cfg_;
  ParameterRegistry reg_;
  bool gating_ = true;
  bool training_ = false;
  Rng* forward_rng_ = nullptr;
};

}  // namespace mmt
