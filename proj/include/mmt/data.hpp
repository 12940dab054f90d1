#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mmt/errors.hpp"
#include "mmt/guidance.hpp"
#include "mmt/model.hpp"
#include "mmt/rng.hpp"

namespace mmt {

// One training-side example. target_ids hold content tokens only (no BOS or
// EOS; consumers add them) and stay empty for monolingual examples.
struct MultimodalExample {
  std::string example_id;
  std::vector<int> source_ids;
  std::vector<int> target_ids;
  std::vector<std::vector<double>> local_features;
  std::vector<double> global_feature;
  std::vector<AlignmentRecord> alignments;
};

struct ImageBundle {
  std::vector<std::vector<double>> local_features;
  std::vector<double> global_feature;
  std::vector<AlignmentRecord> alignments;
};

struct ContrastiveItem {
  std::string example_id;
  std::vector<int> source_ids;
  std::vector<int> translation_a;
  std::vector<int> translation_b;
  ImageBundle image_1, image_2;
  char correct_for_image_1 = 'a';
  char correct_for_image_2 = 'b';
};

struct DatasetHeader {
  std::string schema;
  int version = 1;
  int d_local = 0;
  int d_global = 0;
};

inline constexpr char kSchemaParallel[] = "parallel-multimodal";
inline constexpr char kSchemaMonolingual[] = "monolingual-multimodal";
inline constexpr char kSchemaContrastive[] = "contrastive";

namespace io_detail {

inline const char* b64_chars() {
  return "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

inline std::string base64_encode(const std::string& bytes) {
  const char* tbl = b64_chars();
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  while (i + 3 <= bytes.size()) {
    const std::uint32_t v = (static_cast<unsigned char>(bytes[i]) << 16) |
                            (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                            static_cast<unsigned char>(bytes[i + 2]);
    out.push_back(tbl[(v >> 18) & 63]);
    out.push_back(tbl[(v >> 12) & 63]);
    out.push_back(tbl[(v >> 6) & 63]);
    out.push_back(tbl[v & 63]);
    i += 3;
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const std::uint32_t v = static_cast<unsigned char>(bytes[i]) << 16;
    out.push_back(tbl[(v >> 18) & 63]);
    out.push_back(tbl[(v >> 12) & 63]);
    out += "==";
  } else if (rest == 2) {
    const std::uint32_t v = (static_cast<unsigned char>(bytes[i]) << 16) |
                            (static_cast<unsigned char>(bytes[i + 1]) << 8);
    out.push_back(tbl[(v >> 18) & 63]);
    out.push_back(tbl[(v >> 12) & 63]);
    out.push_back(tbl[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

inline std::string base64_decode(const std::string& text) {
  static int rev[256];
  static bool ready = false;
  if (!ready) {
    for (int i = 0; i < 256; ++i) rev[i] = -1;
    const char* tbl = b64_chars();
    for (int i = 0; i < 64; ++i)
      rev[static_cast<unsigned char>(tbl[i])] = i;
    ready = true;
  }
  if (text.size() % 4 != 0)
    throw ValidationError("base64 payload length not a multiple of 4");
  std::string out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=') {
        if (i + 4 != text.size() || k < 2)
          throw ValidationError("misplaced base64 padding");
        vals[k] = 0;
        ++pad;
      } else {
        if (pad > 0) throw ValidationError("base64 data after padding");
        vals[k] = rev[static_cast<unsigned char>(c)];
        if (vals[k] < 0)
          throw ValidationError(std::string("invalid base64 character '") + c +
                                "'");
      }
    }
    const std::uint32_t v = (vals[0] << 18) | (vals[1] << 12) | (vals[2] << 6) |
                            vals[3];
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<char>((v >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<char>(v & 0xff));
  }
  return out;
}

// f64 values as little-endian bytes inside base64, for bit-exact round trips.
inline std::string encode_features(const std::vector<double>& v) {
  std::string bytes;
  bytes.reserve(v.size() * 8);
  for (double d : v) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(d));
    std::memcpy(&bits, &d, 8);
    for (int i = 0; i < 8; ++i)
      bytes.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  return base64_encode(bytes);
}

inline std::vector<double> decode_features(const std::string& text,
                                           std::size_t expected) {
  const std::string bytes = base64_decode(text);
  if (bytes.size() != expected * 8)
    throw ValidationError("feature payload holds " +
                          std::to_string(bytes.size() / 8) + " values, expected " +
                          std::to_string(expected));
  std::vector<double> out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k)
      bits |= static_cast<std::uint64_t>(
                  static_cast<unsigned char>(bytes[i * 8 + k]))
              << (8 * k);
    std::memcpy(&out[i], &bits, 8);
  }
  return out;
}

}  // namespace io_detail

// ---- VMLM masking and the per-batch objective draw -------------------------

struct MaskResult {
  std::vector<int> masked_ids;
  std::vector<int> positions;  // ascending
  std::vector<int> originals;  // ids replaced at those positions
};

// How a selected position is rewritten in the encoder input. BERT-style
// corruption: keep the original with keep_prob, substitute a random
// non-reserved token with random_prob, otherwise write the mask token. The
// prediction target is always the original token.
struct MaskCorruption {
  double keep_prob = 0.0;
  double random_prob = 0.0;
  int vocab_size = 0;  // required when random_prob > 0

  void validate() const {
    if (keep_prob < 0 || random_prob < 0 || keep_prob + random_prob > 1.0)
      throw ValidationError("corruption probabilities must be in [0, 1] and sum to at most 1");
    if (random_prob > 0 && vocab_size <= kNumReservedIds)
      throw ValidationError("random corruption needs a vocabulary beyond the reserved ids");
  }
};

// Independently masks each non-reserved position with the given rate; if the
// rate is positive and nothing got selected, one maskable position is forced
// so a VMLM batch always has a target.
inline MaskResult mask_tokens(const std::vector<int>& ids, double rate, Rng& rng,
                              const MaskCorruption& corruption = {}) {
  if (rate < 0.0 || rate > 1.0)
    throw ValidationError("mask rate must be in [0, 1]");
  corruption.validate();
  MaskResult r;
  r.masked_ids = ids;
  std::vector<int> maskable;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] >= kNumReservedIds) maskable.push_back(static_cast<int>(i));
  if (rate > 0.0) {
    for (int i : maskable)
      if (rng.bernoulli(rate)) r.positions.push_back(i);
    if (r.positions.empty() && !maskable.empty())
      r.positions.push_back(
          maskable[rng.below(static_cast<std::uint64_t>(maskable.size()))]);
  }
  for (int p : r.positions) {
    r.originals.push_back(ids[static_cast<std::size_t>(p)]);
    const double u = rng.uniform();
    int replacement = kMaskId;
    if (u < corruption.keep_prob) {
      replacement = ids[static_cast<std::size_t>(p)];
    } else if (u < corruption.keep_prob + corruption.random_prob) {
      replacement =
          kNumReservedIds +
          static_cast<int>(rng.below(static_cast<std::uint64_t>(
              corruption.vocab_size - kNumReservedIds)));
    }
    r.masked_ids[static_cast<std::size_t>(p)] = replacement;
  }
  return r;
}

enum class Objective { kMmt, kVmlm };

inline Objective sample_objective(double p_vmlm, Rng& rng) {
  if (p_vmlm < 0.0 || p_vmlm > 1.0)
    throw ValidationError("p_vmlm must be in [0, 1]");
  return rng.bernoulli(p_vmlm) ? Objective::kVmlm : Objective::kMmt;
}

// ---- bridges to the model ---------------------------------------------------

inline MultimodalInput make_model_input(const std::vector<int>& source_ids,
                                        const std::vector<std::vector<double>>& local,
                                        const std::vector<double>& global,
                                        const std::vector<AlignmentRecord>& aligns) {
  MultimodalInput in;
  in.text_token_ids = source_ids;
  in.local_features = local;
  in.global_feature = global;
  in.guidance = build_guidance(static_cast<int>(source_ids.size()),
                               static_cast<int>(local.size()), aligns);
  return in;
}

inline MultimodalInput to_model_input(const MultimodalExample& ex) {
  return make_model_input(ex.source_ids, ex.local_features, ex.global_feature,
                          ex.alignments);
}

inline MultimodalInput to_model_input(const std::vector<int>& source_ids,
                                      const ImageBundle& img) {
  return make_model_input(source_ids, img.local_features, img.global_feature,
                          img.alignments);
}

// ---- line-delimited dataset files ------------------------------------------

namespace io_detail {

inline nlohmann::json header_to_json(const DatasetHeader& h) {
  return {{"schema", h.schema},
          {"version", h.version},
          {"d_local", h.d_local},
          {"d_global", h.d_global}};
}

inline nlohmann::json alignments_to_json(const std::vector<AlignmentRecord>& a) {
  nlohmann::json out = nlohmann::json::array();
  for (const AlignmentRecord& r : a)
    out.push_back({r.token_start, r.token_end, r.box_index});
  return out;
}

inline std::vector<AlignmentRecord> alignments_from_json(const nlohmann::json& j) {
  std::vector<AlignmentRecord> out;
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 3)
      throw ValidationError("alignment entry must be [start, end, box]");
    out.push_back({e[0].get<int>(), e[1].get<int>(), e[2].get<int>()});
  }
  return out;
}

inline std::vector<double> flatten(const std::vector<std::vector<double>>& rows) {
  std::vector<double> out;
  for (const auto& r : rows) out.insert(out.end(), r.begin(), r.end());
  return out;
}

inline std::vector<std::vector<double>> unflatten(const std::vector<double>& v,
                                                  int n, int d) {
  std::vector<std::vector<double>> rows;
  rows.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    rows.emplace_back(v.begin() + static_cast<std::size_t>(i) * d,
                      v.begin() + static_cast<std::size_t>(i + 1) * d);
  return rows;
}

inline nlohmann::json bundle_to_json(const ImageBundle& b,
                                     const DatasetHeader& h) {
  return {{"n_local", b.local_features.size()},
          {"local", encode_features(flatten(b.local_features))},
          {"global", encode_features(b.global_feature)},
          {"alignments", alignments_to_json(b.alignments)}};
}

inline void validate_alignments(const std::vector<AlignmentRecord>& aligns,
                                int text_len, int n_local) {
  for (const AlignmentRecord& a : aligns) {
    if (a.token_start < 0 || a.token_end > text_len ||
        a.token_start >= a.token_end)
      throw ValidationError("alignment span [" + std::to_string(a.token_start) +
                            ", " + std::to_string(a.token_end) +
                            ") invalid for text length " +
                            std::to_string(text_len));
    if (a.box_index < 0 || a.box_index >= n_local)
      throw ValidationError("alignment box index " +
                            std::to_string(a.box_index) + " invalid for " +
                            std::to_string(n_local) + " local features");
  }
}

inline ImageBundle bundle_from_json(const nlohmann::json& j, int text_len,
                                    const DatasetHeader& h) {
  ImageBundle b;
  const int n = j.at("n_local").get<int>();
  if (n < 0) throw ValidationError("negative n_local");
  b.local_features = unflatten(
      decode_features(j.at("local").get<std::string>(),
                      static_cast<std::size_t>(n) * h.d_local),
      n, h.d_local);
  b.global_feature = decode_features(j.at("global").get<std::string>(),
                                     static_cast<std::size_t>(h.d_global));
  b.alignments = alignments_from_json(j.at("alignments"));
  validate_alignments(b.alignments, text_len, n);
  return b;
}

inline void check_ids(const std::vector<int>& ids, const char* field) {
  if (ids.empty())
    throw ValidationError(std::string(field) + " must not be empty");
  for (int id : ids)
    if (id < 0)
      throw ValidationError(std::string(field) + " holds a negative token id");
}

template <typename Fn>
void read_jsonl(const std::string& path, const std::string& expected_schema,
                DatasetHeader& header, Fn&& per_record) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open dataset: " + path);
  std::string line;
  int lineno = 0;
  bool have_header = false;
  bool any_line = false;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    any_line = true;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path + " line " + std::to_string(lineno) + ": " +
                            e.what());
    }
    try {
      if (!have_header) {
        header.schema = j.at("schema").get<std::string>();
        header.version = j.at("version").get<int>();
        header.d_local = j.at("d_local").get<int>();
        header.d_global = j.at("d_global").get<int>();
        if (header.schema != expected_schema)
          throw ValidationError("schema is '" + header.schema + "', expected '" +
                                expected_schema + "'");
        if (header.version != 1)
          throw ValidationError("unsupported dataset version " +
                                std::to_string(header.version));
        if (header.d_local <= 0 || header.d_global <= 0)
          throw ValidationError("header dimensions must be positive");
        have_header = true;
      } else {
        per_record(j);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path + " line " + std::to_string(lineno) + ": " +
                            e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path + " line " + std::to_string(lineno) + ": " +
                            e.what());
    }
  }
  // A zero-byte file is an empty dataset; a file with records needs a header.
  if (any_line && !have_header)
    throw ValidationError(path + ": missing dataset header line");
}

}  // namespace io_detail

inline void save_examples(const std::string& path, DatasetHeader header,
                          const std::vector<MultimodalExample>& examples,
                          bool with_target) {
  header.schema = with_target ? kSchemaParallel : kSchemaMonolingual;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open dataset for writing: " + path);
  f << io_detail::header_to_json(header).dump() << "\n";
  for (const MultimodalExample& ex : examples) {
    nlohmann::json j = {
        {"id", ex.example_id},
        {"source", ex.source_ids},
        {"n_local", ex.local_features.size()},
        {"local", io_detail::encode_features(io_detail::flatten(ex.local_features))},
        {"global", io_detail::encode_features(ex.global_feature)},
        {"alignments", io_detail::alignments_to_json(ex.alignments)}};
    if (with_target) j["target"] = ex.target_ids;
    f << j.dump() << "\n";
  }
  if (!f) throw IoError("failed writing dataset: " + path);
}

inline std::pair<DatasetHeader, std::vector<MultimodalExample>> load_examples(
    const std::string& path, bool with_target) {
  DatasetHeader header;
  std::vector<MultimodalExample> out;
  io_detail::read_jsonl(
      path, with_target ? kSchemaParallel : kSchemaMonolingual, header,
      [&](const nlohmann::json& j) {
        MultimodalExample ex;
        ex.example_id = j.at("id").get<std::string>();
        ex.source_ids = j.at("source").get<std::vector<int>>();
        io_detail::check_ids(ex.source_ids, "source");
        if (with_target) {
          ex.target_ids = j.at("target").get<std::vector<int>>();
          io_detail::check_ids(ex.target_ids, "target");
        }
        const int n = j.at("n_local").get<int>();
        if (n < 0) throw ValidationError("negative n_local");
        ex.local_features = io_detail::unflatten(
            io_detail::decode_features(j.at("local").get<std::string>(),
                                       static_cast<std::size_t>(n) * header.d_local),
            n, header.d_local);
        ex.global_feature =
            io_detail::decode_features(j.at("global").get<std::string>(),
                                       static_cast<std::size_t>(header.d_global));
        ex.alignments = io_detail::alignments_from_json(j.at("alignments"));
        io_detail::validate_alignments(
            ex.alignments, static_cast<int>(ex.source_ids.size()), n);
        out.push_back(std::move(ex));
      });
  return {header, std::move(out)};
}

inline void save_contrastive(const std::string& path, DatasetHeader header,
                             const std::vector<ContrastiveItem>& items) {
  header.schema = kSchemaContrastive;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open dataset for writing: " + path);
  f << io_detail::header_to_json(header).dump() << "\n";
  for (const ContrastiveItem& it : items) {
    nlohmann::json j = {
        {"id", it.example_id},
        {"source", it.source_ids},
        {"translation_a", it.translation_a},
        {"translation_b", it.translation_b},
        {"image_1", io_detail::bundle_to_json(it.image_1, header)},
        {"image_2", io_detail::bundle_to_json(it.image_2, header)},
        {"pairing",
         {{"image_1", std::string(1, it.correct_for_image_1)},
          {"image_2", std::string(1, it.correct_for_image_2)}}}};
    f << j.dump() << "\n";
  }
  if (!f) throw IoError("failed writing dataset: " + path);
}

inline std::pair<DatasetHeader, std::vector<ContrastiveItem>> load_contrastive(
    const std::string& path) {
  DatasetHeader header;
  std::vector<ContrastiveItem> out;
  io_detail::read_jsonl(path, kSchemaContrastive, header, [&](const nlohmann::json& j) {
    ContrastiveItem it;
    it.example_id = j.at("id").get<std::string>();
    it.source_ids = j.at("source").get<std::vector<int>>();
    io_detail::check_ids(it.source_ids, "source");
    it.translation_a = j.at("translation_a").get<std::vector<int>>();
    it.translation_b = j.at("translation_b").get<std::vector<int>>();
    io_detail::check_ids(it.translation_a, "translation_a");
    io_detail::check_ids(it.translation_b, "translation_b");
    const int t = static_cast<int>(it.source_ids.size());
    it.image_1 = io_detail::bundle_from_json(j.at("image_1"), t, header);
    it.image_2 = io_detail::bundle_from_json(j.at("image_2"), t, header);
    const std::string c1 = j.at("pairing").at("image_1").get<std::string>();
    const std::string c2 = j.at("pairing").at("image_2").get<std::string>();
    if ((c1 != "a" && c1 != "b") || (c2 != "a" && c2 != "b") || c1 == c2)
      throw ValidationError("pairing must assign 'a' and 'b' to distinct images");
    it.correct_for_image_1 = c1[0];
    it.correct_for_image_2 = c2[0];
    out.push_back(std::move(it));
  });
  return {header, std::move(out)};
}

// ---- plain-text alignment records ------------------------------------------
// One record per line: example_id token_start token_end box_index

inline void save_alignment_file(
    const std::string& path,
    const std::map<std::string, std::vector<AlignmentRecord>>& by_example) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open alignment file for writing: " + path);
  for (const auto& [id, records] : by_example)
    for (const AlignmentRecord& r : records)
      f << id << " " << r.token_start << " " << r.token_end << " "
        << r.box_index << "\n";
  if (!f) throw IoError("failed writing alignment file: " + path);
}

inline std::map<std::string, std::vector<AlignmentRecord>> load_alignment_file(
    const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open alignment file: " + path);
  std::map<std::string, std::vector<AlignmentRecord>> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string id;
    AlignmentRecord r;
    if (!(is >> id >> r.token_start >> r.token_end >> r.box_index))
      throw ValidationError(path + " line " + std::to_string(lineno) +
                            ": expected 'id start end box'");
    std::string extra;
    if (is >> extra)
      throw ValidationError(path + " line " + std::to_string(lineno) +
                            ": trailing field '" + extra + "'");
    out[id].push_back(r);
  }
  return out;
}

}  // namespace mmt
