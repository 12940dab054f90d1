// Command-line front end: dataset generation, training, translation,
// contrastive/BLEU evaluation, attention inspection, and ablation runs.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mmt/checkpoint.hpp"
#include "mmt/data.hpp"
#include "mmt/errors.hpp"
#include "mmt/eval.hpp"
#include "mmt/generator.hpp"
#include "mmt/model.hpp"
#include "mmt/rng.hpp"
#include "mmt/training.hpp"
#include "mmt/vocab.hpp"

namespace {

using nlohmann::json;

constexpr int kExitUsage = 64;       // bad flags or arguments
constexpr int kExitValidation = 65;  // malformed data or config
constexpr int kExitIo = 66;          // missing or unreadable files
constexpr int kExitDivergence = 70;  // training produced non-finite values

int log_level() {
  static int level = [] {
    const char* v = std::getenv("MMT_LOG");
    if (!v) return 1;
    const std::string s(v);
    if (s == "quiet") return 0;
    if (s == "debug") return 2;
    return 1;
  }();
  return level;
}

void log_info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << msg << "\n";
}

void log_debug(const std::string& msg) {
  if (log_level() >= 2) std::cerr << msg << "\n";
}

// ---------------------------------------------------------------------------
// Config file: one JSON object with optional "generator", "model", and
// "train" sections. Unknown keys are rejected so typos fail loudly.

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw mmt::IoError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw mmt::ValidationError("bad config JSON in " + path + ": " + e.what());
  }
  if (!j.is_object())
    throw mmt::ValidationError("config file must hold a JSON object: " + path);
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (key != "generator" && key != "model" && key != "train")
      throw mmt::ValidationError("unknown config section: " + key);
  }
  return j;
}

template <typename T>
void take(json& section, const char* key, T& out) {
  if (auto it = section.find(key); it != section.end()) {
    try {
      it->get_to(out);
    } catch (const json::exception& e) {
      throw mmt::ValidationError(std::string("bad config value for ") + key +
                                 ": " + e.what());
    }
    section.erase(it);
  }
}

void reject_leftovers(const json& section, const char* name) {
  for (const auto& [key, value] : section.items()) {
    (void)value;
    throw mmt::ValidationError(std::string("unknown ") + name +
                               " config key: " + key);
  }
}

mmt::GeneratorSpec generator_from_config(const json& cfg) {
  mmt::GeneratorSpec spec;
  if (!cfg.contains("generator")) return spec;
  json s = cfg.at("generator");
  take(s, "n_lexemes", spec.n_lexemes);
  take(s, "n_fillers", spec.n_fillers);
  take(s, "n_parallel", spec.n_parallel);
  take(s, "n_parallel_dev", spec.n_parallel_dev);
  take(s, "n_monolingual", spec.n_monolingual);
  take(s, "n_contrastive", spec.n_contrastive);
  take(s, "n_boxes", spec.n_boxes);
  take(s, "d_local", spec.d_local);
  take(s, "d_global", spec.d_global);
  take(s, "signal_amplitude", spec.signal_amplitude);
  take(s, "noise_stddev", spec.noise_stddev);
  take(s, "ambiguous_fraction", spec.ambiguous_fraction);
  take(s, "min_sentence_len", spec.min_sentence_len);
  take(s, "max_sentence_len", spec.max_sentence_len);
  take(s, "signal_in_local", spec.signal_in_local);
  take(s, "shared_filler_vocab", spec.shared_filler_vocab);
  take(s, "sense_filler_fraction", spec.sense_filler_fraction);
  take(s, "min_caption_len", spec.min_caption_len);
  take(s, "max_caption_len", spec.max_caption_len);
  take(s, "single_sense_parallel", spec.single_sense_parallel);
  reject_leftovers(s, "generator");
  return spec;
}

void apply_model_config(const json& cfg, mmt::ModelConfig& mc) {
  if (!cfg.contains("model")) return;
  json s = cfg.at("model");
  take(s, "d_model", mc.d_model);
  take(s, "n_heads", mc.n_heads);
  take(s, "n_encoder_layers", mc.n_encoder_layers);
  take(s, "n_decoder_layers", mc.n_decoder_layers);
  take(s, "d_ffn", mc.d_ffn);
  take(s, "max_text_len", mc.max_text_len);
  take(s, "n_local_features", mc.n_local_features);
  take(s, "adapter_reduction", mc.adapter_reduction);
  take(s, "dropout", mc.dropout);
  take(s, "use_adapters", mc.use_adapters);
  take(s, "adapters_in_decoder", mc.adapters_in_decoder);
  take(s, "use_local", mc.use_local);
  take(s, "use_global", mc.use_global);
  take(s, "visual_init_stddev", mc.visual_init_stddev);
  reject_leftovers(s, "model");
}

mmt::FreezePolicy parse_policy(const std::string& s) {
  if (s == "frozen-with-adapters") return mmt::FreezePolicy::kFrozenWithAdapters;
  if (s == "unfrozen") return mmt::FreezePolicy::kFullyUnfrozenNoAdapters;
  if (s == "text-only") return mmt::FreezePolicy::kTextOnlyNoVisual;
  throw mmt::ValidationError(
      "unknown freeze policy: " + s +
      " (expected frozen-with-adapters, unfrozen, or text-only)");
}

mmt::TrainConfig train_from_config(const json& cfg) {
  mmt::TrainConfig tc;
  if (!cfg.contains("train")) return tc;
  json s = cfg.at("train");
  take(s, "p_vmlm", tc.p_vmlm);
  take(s, "mask_rate", tc.mask_rate);
  take(s, "mask_keep_prob", tc.mask_keep_prob);
  take(s, "mask_random_prob", tc.mask_random_prob);
  take(s, "batch_size", tc.batch_size);
  take(s, "lr", tc.lr);
  take(s, "beta1", tc.beta1);
  take(s, "beta2", tc.beta2);
  take(s, "label_smoothing", tc.label_smoothing);
  take(s, "max_steps", tc.max_steps);
  take(s, "eval_every", tc.eval_every);
  take(s, "average_tail_steps", tc.average_tail_steps);
  take(s, "vmlm", tc.vmlm);
  take(s, "guided_attention", tc.guided_attention);
  take(s, "use_local", tc.use_local);
  take(s, "use_global", tc.use_global);
  take(s, "disjoint_schedule", tc.disjoint_schedule);
  std::string policy;
  take(s, "freeze_policy", policy);
  if (!policy.empty()) tc.freeze_policy = parse_policy(policy);
  reject_leftovers(s, "train");
  return tc;
}

// Ablation presets; each one flips a single design choice off the default.
const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {
      "no-vmlm",   "full-attention", "no-local",
      "no-global", "unfrozen",       "pretrain-then-finetune",
      "text-only"};
  return names;
}

void apply_preset(const std::string& name, mmt::TrainConfig& tc,
                  mmt::ModelConfig& mc) {
  if (name == "no-vmlm") {
    tc.vmlm = false;
  } else if (name == "full-attention") {
    tc.guided_attention = false;
  } else if (name == "no-local") {
    tc.use_local = false;
    mc.use_local = false;
  } else if (name == "no-global") {
    tc.use_global = false;
    mc.use_global = false;
  } else if (name == "unfrozen") {
    tc.freeze_policy = mmt::FreezePolicy::kFullyUnfrozenNoAdapters;
  } else if (name == "pretrain-then-finetune") {
    tc.disjoint_schedule = true;
  } else if (name == "text-only") {
    tc.use_local = false;
    tc.use_global = false;
    tc.freeze_policy = mmt::FreezePolicy::kTextOnlyNoVisual;
    mc.use_local = false;
    mc.use_global = false;
  } else {
    throw mmt::ValidationError("unknown preset: " + name);
  }
}

// ---------------------------------------------------------------------------
// Dataset directory access.

struct Corpus {
  mmt::Vocabulary vocab;
  mmt::DatasetHeader header;
  std::vector<mmt::MultimodalExample> parallel;
  std::vector<mmt::MultimodalExample> parallel_dev;
  std::vector<mmt::MultimodalExample> monolingual;
};

mmt::Vocabulary load_vocab(const std::string& dir) {
  const std::string path =
      (std::filesystem::path(dir) / "vocab.json").string();
  std::ifstream in(path);
  if (!in) throw mmt::IoError("cannot open vocabulary: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw mmt::ValidationError("bad vocabulary JSON in " + path + ": " +
                               e.what());
  }
  return mmt::Vocabulary::from_json(j);
}

Corpus load_corpus_dir(const std::string& dir, bool need_parallel,
                       bool need_monolingual) {
  namespace fs = std::filesystem;
  Corpus c;
  c.vocab = load_vocab(dir);
  const fs::path base(dir);
  auto maybe = [&](const char* file, bool with_target, bool required)
      -> std::vector<mmt::MultimodalExample> {
    const fs::path p = base / file;
    if (!fs::exists(p)) {
      if (required) throw mmt::IoError("missing dataset file: " + p.string());
      return {};
    }
    auto [header, examples] = mmt::load_examples(p.string(), with_target);
    c.header = header;
    return std::move(examples);
  };
  c.parallel = maybe("parallel.jsonl", true, need_parallel);
  c.parallel_dev = maybe("parallel_dev.jsonl", true, false);
  c.monolingual = maybe("monolingual.jsonl", false, need_monolingual);
  return c;
}

int max_boxes(const Corpus& c) {
  std::size_t n = 1;
  for (const auto* split : {&c.parallel, &c.parallel_dev, &c.monolingual})
    for (const auto& ex : *split) n = std::max(n, ex.local_features.size());
  return static_cast<int>(n);
}

int longest_sequence(const Corpus& c) {
  std::size_t n = 4;
  for (const auto* split : {&c.parallel, &c.parallel_dev, &c.monolingual})
    for (const auto& ex : *split) {
      n = std::max(n, ex.source_ids.size());
      n = std::max(n, ex.target_ids.size() + 2);  // BOS + tokens + EOS
    }
  return static_cast<int>(n);
}

// Evaluation-time input reduction implied by how the model was built.
mmt::GuidanceMode mode_for_model(const mmt::Model& model) {
  const mmt::ModelConfig& mc = model.config();
  if (mc.use_local && mc.use_global) return mmt::GuidanceMode::kGuided;
  if (mc.use_global) return mmt::GuidanceMode::kDropLocal;
  if (mc.use_local) return mmt::GuidanceMode::kDropGlobal;
  return mmt::GuidanceMode::kTextOnly;
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode,
                       const char* what) {
  std::ofstream out(path, mode);
  if (!out)
    throw mmt::IoError(std::string("cannot write ") + what + ": " + path);
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands.

int cmd_gen_data(const std::string& out_dir, std::uint64_t seed,
                 const std::string& config_path) {
  const json cfg = load_config(config_path);
  mmt::GeneratorSpec spec = generator_from_config(cfg);
  mmt::Rng rng(seed);
  const mmt::SyntheticCorpus corpus = mmt::generate_synthetic_corpus(spec, rng);
  mmt::save_corpus(corpus, out_dir);
  log_info("wrote synthetic corpus to " + out_dir);
  json summary = {{"out", out_dir},
                  {"seed", seed},
                  {"vocab", corpus.vocab.size()},
                  {"parallel", corpus.parallel.size()},
                  {"parallel_dev", corpus.parallel_dev.size()},
                  {"monolingual", corpus.monolingual.size()},
                  {"contrastive", corpus.contrastive.size()}};
  std::cout << summary.dump() << "\n";
  return 0;
}

struct TrainedRun {
  mmt::Model model;
  mmt::TrainResult result;
  mmt::GuidanceMode eval_mode;
};

TrainedRun run_training(const Corpus& corpus, const json& cfg,
                        const std::vector<std::string>& presets,
                        std::uint64_t seed, const std::string& checkpoint_path,
                        std::ostream* metrics) {
  mmt::ModelConfig mc;
  mc.vocab_size = corpus.vocab.size();
  mc.d_local_in = corpus.header.d_local;
  mc.d_global_in = corpus.header.d_global;
  mc.n_local_features = max_boxes(corpus);
  mc.max_text_len = longest_sequence(corpus);
  apply_model_config(cfg, mc);
  mmt::TrainConfig tc = train_from_config(cfg);
  tc.seed = seed;
  for (const std::string& p : presets) apply_preset(p, tc, mc);

  mmt::Model model(mc);
  mmt::Rng init_rng(seed);
  model.init_params(init_rng);
  log_debug("model parameters: " + std::to_string(model.params().size()));

  const mmt::TrainDatasets data{corpus.parallel, corpus.parallel_dev,
                                corpus.monolingual};
  const mmt::TrainResult result =
      mmt::train(model, tc, data, checkpoint_path, metrics);
  mmt::GuidanceMode eval_mode = tc.reduction_mode();
  return {std::move(model), result, eval_mode};
}

int cmd_train(const std::string& dataset_dir, const std::string& out_dir,
              std::uint64_t seed, const std::string& config_path,
              const std::vector<std::string>& presets) {
  const json cfg = load_config(config_path);
  const Corpus corpus = load_corpus_dir(dataset_dir, true, false);
  log_info("loaded " + std::to_string(corpus.parallel.size()) + " parallel, " +
           std::to_string(corpus.parallel_dev.size()) + " dev, " +
           std::to_string(corpus.monolingual.size()) +
           " monolingual examples");

  std::filesystem::create_directories(out_dir);
  const auto base = std::filesystem::path(out_dir);
  const std::string ck_path = (base / "model.ck").string();
  std::ofstream metrics =
      open_out((base / "metrics.jsonl").string(), std::ios::trunc, "metrics");

  const TrainedRun run =
      run_training(corpus, cfg, presets, seed, ck_path, &metrics);
  log_info("wrote checkpoint to " + ck_path);
  json summary = {{"checkpoint", ck_path},
                  {"steps", run.result.steps_run},
                  {"final_loss", run.result.final_loss},
                  {"mmt_steps", run.result.mmt_steps},
                  {"vmlm_steps", run.result.vmlm_steps}};
  if (run.result.best_step >= 0) {
    summary["best_step"] = run.result.best_step;
    summary["best_dev_bleu"] = run.result.best_dev_bleu;
  }
  std::cout << summary.dump() << "\n";
  return 0;
}

std::vector<mmt::MultimodalExample> pick_split(const Corpus& corpus,
                                               const std::string& split) {
  if (split == "train") return corpus.parallel;
  if (split == "dev") {
    if (!corpus.parallel_dev.empty()) return corpus.parallel_dev;
    return corpus.parallel;
  }
  throw mmt::ValidationError("unknown split: " + split +
                             " (expected train or dev)");
}

int cmd_translate(const std::string& dataset_dir,
                  const std::string& checkpoint_path, const std::string& split,
                  const std::string& out_path) {
  mmt::Model model = mmt::load_checkpoint(checkpoint_path);
  const Corpus corpus = load_corpus_dir(dataset_dir, true, false);
  const auto examples = pick_split(corpus, split);
  const mmt::GuidanceMode mode = mode_for_model(model);

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!out_path.empty()) {
    file = open_out(out_path, std::ios::trunc, "translations");
    out = &file;
  }
  for (const auto& ex : examples) {
    mmt::MultimodalInput in = mmt::to_model_input(ex);
    if (mode != mmt::GuidanceMode::kGuided) in = mmt::reduce_input(in, mode);
    const std::vector<int> ids =
        model.greedy_translate(in, model.config().max_text_len);
    *out << mmt::detokenize(ids, corpus.vocab) << "\n";
  }
  log_info("translated " + std::to_string(examples.size()) + " examples");
  return 0;
}

json report_to_json(const mmt::ContrastiveReport& report) {
  json outcomes = json::array();
  for (const auto& o : report.outcomes) {
    outcomes.push_back({{"example_id", o.example_id},
                        {"ppl", {{o.ppl[0][0], o.ppl[0][1]},
                                 {o.ppl[1][0], o.ppl[1][1]}}},
                        {"correct", {o.correct[0], o.correct[1]}},
                        {"tie", {o.tie[0], o.tie[1]}}});
  }
  return {{"total", report.total},
          {"correct", report.correct},
          {"ties", report.ties},
          {"accuracy", report.accuracy},
          {"outcomes", std::move(outcomes)}};
}

mmt::GuidanceMode eval_mode_with_presets(
    mmt::Model& model, const std::vector<std::string>& presets) {
  const mmt::ModelConfig& mc = model.config();
  bool with_local = mc.use_local, with_global = mc.use_global;
  for (const std::string& p : presets) {
    if (p == "full-attention") {
      model.set_attention_gating(false);
    } else if (p == "text-only") {
      with_local = with_global = false;
    } else if (p == "no-local") {
      with_local = false;
    } else if (p == "no-global") {
      with_global = false;
    } else {
      throw mmt::ValidationError("preset not usable at evaluation time: " + p);
    }
  }
  if (with_local && with_global) return mmt::GuidanceMode::kGuided;
  if (with_global) return mmt::GuidanceMode::kDropLocal;
  if (with_local) return mmt::GuidanceMode::kDropGlobal;
  return mmt::GuidanceMode::kTextOnly;
}

int cmd_eval_contrastive(const std::string& dataset_dir,
                         const std::string& checkpoint_path,
                         const std::vector<std::string>& presets,
                         const std::string& out_path) {
  mmt::Model model = mmt::load_checkpoint(checkpoint_path);
  const std::string items_path =
      (std::filesystem::path(dataset_dir) / "contrastive.jsonl").string();
  const auto [header, items] = mmt::load_contrastive(items_path);
  const mmt::GuidanceMode mode = eval_mode_with_presets(model, presets);

  const mmt::ContrastiveReport report =
      mmt::contrastive_evaluate(model, items, mode);
  const json j = report_to_json(report);
  if (!out_path.empty())
    open_out(out_path, std::ios::trunc, "report") << j.dump(2) << "\n";
  else
    std::cout << j.dump() << "\n";
  std::ostringstream line;
  line << "contrastive accuracy " << report.correct << "/" << report.total
       << " = " << report.accuracy << " (" << report.ties << " ties)";
  log_info(line.str());
  return 0;
}

int cmd_eval_bleu(const std::string& dataset_dir,
                  const std::string& checkpoint_path,
                  const std::string& split) {
  mmt::Model model = mmt::load_checkpoint(checkpoint_path);
  const Corpus corpus = load_corpus_dir(dataset_dir, true, false);
  const auto examples = pick_split(corpus, split);
  if (examples.empty()) throw mmt::ValidationError("no examples to score");
  const mmt::GuidanceMode mode = mode_for_model(model);

  std::vector<std::vector<int>> hyps, refs;
  for (const auto& ex : examples) {
    mmt::MultimodalInput in = mmt::to_model_input(ex);
    if (mode != mmt::GuidanceMode::kGuided) in = mmt::reduce_input(in, mode);
    hyps.push_back(model.greedy_translate(in, model.config().max_text_len));
    refs.push_back(ex.target_ids);
  }
  const double bleu = mmt::corpus_bleu(hyps, refs);
  json summary = {{"split", split},
                  {"count", examples.size()},
                  {"bleu", bleu}};
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_inspect_attention(const std::string& dataset_dir,
                          const std::string& checkpoint_path,
                          const std::string& example_id, int layer,
                          const std::string& out_path) {
  mmt::Model model = mmt::load_checkpoint(checkpoint_path);
  const Corpus corpus = load_corpus_dir(dataset_dir, true, false);

  const mmt::MultimodalExample* picked = nullptr;
  for (const auto* split :
       {&corpus.parallel, &corpus.parallel_dev, &corpus.monolingual}) {
    for (const auto& ex : *split) {
      if (example_id.empty() || ex.example_id == example_id) {
        picked = &ex;
        break;
      }
    }
    if (picked) break;
  }
  if (!picked)
    throw mmt::ValidationError("no example with id: " + example_id);

  mmt::MultimodalInput in = mmt::to_model_input(*picked);
  const mmt::GuidanceMode mode = mode_for_model(model);
  if (mode != mmt::GuidanceMode::kGuided) in = mmt::reduce_input(in, mode);

  mmt::AttentionRecorder recorder;
  model.encode(in, nullptr, &recorder);
  const mmt::Tensor scores = mmt::normalized_attention_scores(recorder, layer);

  std::vector<std::string> labels;
  for (int id : in.text_token_ids) labels.push_back(corpus.vocab.token(id));
  for (std::size_t b = 0; b < in.local_features.size(); ++b)
    labels.push_back("box" + std::to_string(b));
  if (in.guidance.layout.has_global) labels.push_back("global");

  json rows = json::array();
  for (int i = 0; i < scores.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < scores.cols(); ++j) row.push_back(scores.at(i, j));
    rows.push_back(std::move(row));
  }
  json out = {{"example_id", picked->example_id},
              {"layer", layer},
              {"labels", labels},
              {"scores", std::move(rows)}};
  if (!out_path.empty())
    open_out(out_path, std::ios::trunc, "attention scores")
        << out.dump(2) << "\n";
  else
    std::cout << out.dump() << "\n";
  return 0;
}

int cmd_ablate(const std::string& dataset_dir, const std::string& out_dir,
               std::uint64_t seed, const std::string& config_path,
               const std::vector<std::string>& presets) {
  const json cfg = load_config(config_path);
  const Corpus corpus = load_corpus_dir(dataset_dir, true, false);
  const std::string items_path =
      (std::filesystem::path(dataset_dir) / "contrastive.jsonl").string();
  const auto [header, items] = mmt::load_contrastive(items_path);

  std::vector<std::string> runs = {"default"};
  for (const std::string& p : presets)
    if (p != "default") runs.push_back(p);

  json table = json::array();
  double default_accuracy = 0.0;
  for (const std::string& name : runs) {
    log_info("ablation run: " + name);
    const std::vector<std::string> run_presets =
        name == "default" ? std::vector<std::string>{}
                          : std::vector<std::string>{name};
    std::string ck_path;
    if (!out_dir.empty()) {
      std::filesystem::create_directories(out_dir);
      ck_path =
          (std::filesystem::path(out_dir) / (name + ".ck")).string();
    }
    TrainedRun run =
        run_training(corpus, cfg, run_presets, seed, ck_path, nullptr);
    const mmt::ContrastiveReport report =
        mmt::contrastive_evaluate(run.model, items, run.eval_mode);
    if (name == "default") default_accuracy = report.accuracy;
    table.push_back({{"preset", name},
                     {"accuracy", report.accuracy},
                     {"correct", report.correct},
                     {"total", report.total},
                     {"ties", report.ties},
                     {"final_loss", run.result.final_loss},
                     {"delta", report.accuracy - default_accuracy}});
  }

  std::printf("%-24s %10s %6s %8s\n", "preset", "accuracy", "ties", "delta");
  for (const auto& row : table)
    std::printf("%-24s %10.4f %6d %+8.4f\n",
                row["preset"].get<std::string>().c_str(),
                row["accuracy"].get<double>(), row["ties"].get<int>(),
                row["delta"].get<double>());
  if (!out_dir.empty()) {
    const std::string path =
        (std::filesystem::path(out_dir) / "ablate.json").string();
    open_out(path, std::ios::trunc, "ablation table") << table.dump(2) << "\n";
    log_info("wrote " + path);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal translation workbench: synthetic data, guided "
               "attention training, and evaluation"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::simple);

  std::string config_path, dataset_dir, checkpoint_path, out_path;
  std::string split = "dev", example_id;
  std::uint64_t seed = 1;
  int layer = -1;
  std::vector<std::string> presets;

  auto* gen = app.add_subcommand(
      "gen-data", "Generate a synthetic multimodal corpus with a key");
  gen->add_option("--out", out_path, "Output directory for the corpus files")
      ->required();
  gen->add_option("--seed", seed, "Random seed (default 1)");
  gen->add_option("--config", config_path,
                  "JSON config file; \"generator\" section applies");

  auto* train = app.add_subcommand(
      "train", "Train a model on a generated corpus directory");
  train->add_option("--dataset", dataset_dir, "Corpus directory from gen-data")
      ->required();
  train->add_option("--out", out_path,
                    "Output directory for model.ck and metrics.jsonl")
      ->required();
  train->add_option("--seed", seed, "Random seed (default 1)");
  train->add_option("--config", config_path,
                    "JSON config file; \"model\" and \"train\" sections apply");
  train->add_option("--preset", presets,
                    "Ablation preset(s): no-vmlm, full-attention, no-local, "
                    "no-global, unfrozen, pretrain-then-finetune, text-only");

  auto* translate = app.add_subcommand(
      "translate", "Greedy-translate a dataset split with a checkpoint");
  translate
      ->add_option("--dataset", dataset_dir, "Corpus directory from gen-data")
      ->required();
  translate->add_option("--checkpoint", checkpoint_path, "Model checkpoint")
      ->required();
  translate->add_option("--split", split,
                        "Which split to translate: train or dev (default dev)");
  translate->add_option("--out", out_path,
                        "Write translations here instead of stdout");

  auto* evalc = app.add_subcommand(
      "eval-contrastive",
      "Score a contrastive set by perplexity comparison and report accuracy");
  evalc->add_option("--dataset", dataset_dir, "Corpus directory from gen-data")
      ->required();
  evalc->add_option("--checkpoint", checkpoint_path, "Model checkpoint")
      ->required();
  evalc->add_option("--preset", presets,
                    "Evaluation-time ablation(s): full-attention, no-local, "
                    "no-global, text-only");
  evalc->add_option("--out", out_path,
                    "Write the JSON report here instead of stdout");

  auto* evalb = app.add_subcommand(
      "eval-bleu", "Corpus BLEU of greedy translations against references");
  evalb->add_option("--dataset", dataset_dir, "Corpus directory from gen-data")
      ->required();
  evalb->add_option("--checkpoint", checkpoint_path, "Model checkpoint")
      ->required();
  evalb->add_option("--split", split,
                    "Which split to score: train or dev (default dev)");

  auto* inspect = app.add_subcommand(
      "inspect-attention",
      "Emit the norm-weighted encoder attention matrix for one example");
  inspect
      ->add_option("--dataset", dataset_dir, "Corpus directory from gen-data")
      ->required();
  inspect->add_option("--checkpoint", checkpoint_path, "Model checkpoint")
      ->required();
  inspect->add_option("--example", example_id,
                      "Example id to inspect (default: first example)");
  inspect->add_option("--layer", layer,
                      "Encoder layer to show; -1 averages all layers");
  inspect->add_option("--out", out_path,
                      "Write the JSON matrix here instead of stdout");

  auto* ablate = app.add_subcommand(
      "ablate",
      "Train the default and one or more presets, then compare accuracy");
  ablate->add_option("--dataset", dataset_dir, "Corpus directory from gen-data")
      ->required();
  ablate
      ->add_option("--preset", presets,
                   "Preset(s) to compare against the default: no-vmlm, "
                   "full-attention, no-local, no-global, unfrozen, "
                   "pretrain-then-finetune, text-only")
      ->required();
  ablate->add_option("--out", out_path,
                     "Directory for per-run checkpoints and ablate.json");
  ablate->add_option("--seed", seed, "Random seed (default 1)");
  ablate->add_option("--config", config_path,
                     "JSON config file; \"model\" and \"train\" sections apply");

  if (argc <= 1) {
    std::cout << app.help();
    return kExitUsage;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(out_path, seed, config_path);
    if (train->parsed())
      return cmd_train(dataset_dir, out_path, seed, config_path, presets);
    if (translate->parsed())
      return cmd_translate(dataset_dir, checkpoint_path, split, out_path);
    if (evalc->parsed())
      return cmd_eval_contrastive(dataset_dir, checkpoint_path, presets,
                                  out_path);
    if (evalb->parsed())
      return cmd_eval_bleu(dataset_dir, checkpoint_path, split);
    if (inspect->parsed())
      return cmd_inspect_attention(dataset_dir, checkpoint_path, example_id,
                                   layer, out_path);
    if (ablate->parsed())
      return cmd_ablate(dataset_dir, out_path, seed, config_path, presets);
  } catch (const mmt::DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const mmt::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const mmt::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const mmt::DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}
