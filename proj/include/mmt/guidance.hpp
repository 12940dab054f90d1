#pragma once

#include <string>
#include <vector>

#include "mmt/errors.hpp"
#include "mmt/tensor.hpp"

namespace mmt {

// Links the text span [token_start, token_end) to one local feature (box).
struct AlignmentRecord {
  int token_start = 0;
  int token_end = 0;
  int box_index = 0;
};

// Position layout of the encoder sequence: text rows first, then local
// visual rows, then (optionally) one global row at the end.
struct Layout {
  int text_len = 0;
  int n_local = 0;
  bool has_global = true;

  int seq_len() const { return text_len + n_local + (has_global ? 1 : 0); }
  bool is_text(int i) const { return i >= 0 && i < text_len; }
  bool is_local(int i) const { return i >= text_len && i < text_len + n_local; }
  bool is_global(int i) const { return has_global && i == seq_len() - 1; }

  bool operator==(const Layout& o) const {
    return text_len == o.text_len && n_local == o.n_local &&
           has_global == o.has_global;
  }
};

struct GuidanceMatrix {
  Tensor matrix;  // seq_len x seq_len, binary
  Layout layout;
};

enum class GuidanceMode { kGuided, kFull, kDropLocal, kDropGlobal, kTextOnly };

inline GuidanceMode parse_guidance_mode(const std::string& name) {
  if (name == "guided") return GuidanceMode::kGuided;
  if (name == "full") return GuidanceMode::kFull;
  if (name == "drop-local") return GuidanceMode::kDropLocal;
  if (name == "drop-global") return GuidanceMode::kDropGlobal;
  if (name == "text-only") return GuidanceMode::kTextOnly;
  throw ValidationError("unknown guidance mode: " + name);
}

inline std::string guidance_mode_name(GuidanceMode m) {
  switch (m) {
    case GuidanceMode::kGuided:
      return "guided";
    case GuidanceMode::kFull:
      return "full";
    case GuidanceMode::kDropLocal:
      return "drop-local";
    case GuidanceMode::kDropGlobal:
      return "drop-global";
    case GuidanceMode::kTextOnly:
      return "text-only";
  }
  throw ValidationError("invalid guidance mode value");
}

// Builds the binary attention-gating matrix: same-modality blocks all-ones,
// the global row/column all-ones, and text<->box entries set only where an
// alignment links them. Symmetric, with an all-ones diagonal.
inline GuidanceMatrix build_guidance(int text_len, int n_local,
                                     const std::vector<AlignmentRecord>& alignments) {
  if (text_len < 1)
    throw ValidationError("guidance needs at least one text position");
  if (n_local < 0)
    throw ValidationError("negative local feature count");
  Layout layout{text_len, n_local, /*has_global=*/true};
  const int s = layout.seq_len();
  Tensor c = Tensor::zeros({s, s});
  auto set_sym = [&](int i, int j) {
    c.at(i, j) = 1.0;
    c.at(j, i) = 1.0;
  };
  for (int i = 0; i < text_len; ++i)
    for (int j = 0; j < text_len; ++j) c.at(i, j) = 1.0;
  for (int i = text_len; i < text_len + n_local; ++i)
    for (int j = text_len; j < text_len + n_local; ++j) c.at(i, j) = 1.0;
  for (int i = 0; i < s; ++i) set_sym(i, s - 1);
  for (std::size_t r = 0; r < alignments.size(); ++r) {
    const AlignmentRecord& a = alignments[r];
    if (a.token_start < 0 || a.token_end > text_len ||
        a.token_start >= a.token_end)
      throw ValidationError("alignment record " + std::to_string(r) +
                            ": token span [" + std::to_string(a.token_start) +
                            ", " + std::to_string(a.token_end) +
                            ") invalid for text length " +
                            std::to_string(text_len));
    if (a.box_index < 0 || a.box_index >= n_local)
      throw ValidationError("alignment record " + std::to_string(r) +
                            ": box index " + std::to_string(a.box_index) +
                            " invalid for " + std::to_string(n_local) +
                            " local features");
    for (int t = a.token_start; t < a.token_end; ++t)
      set_sym(t, text_len + a.box_index);
  }
  return {c, layout};
}

// Ablation transforms. Dropped features shrink the matrix rather than being
// masked, so the resulting layout matches an input without those features.
inline GuidanceMatrix degrade_guidance(const GuidanceMatrix& g, GuidanceMode mode) {
  const Layout& in = g.layout;
  switch (mode) {
    case GuidanceMode::kFull: {
      const int s = in.seq_len();
      return {Tensor::full({s, s}, 1.0), in};
    }
    case GuidanceMode::kDropLocal: {
      Layout out{in.text_len, 0, in.has_global};
      const int s = out.seq_len();
      // text block all-ones plus the global row/column: everything is 1
      return {Tensor::full({s, s}, 1.0), out};
    }
    case GuidanceMode::kDropGlobal: {
      Layout out{in.text_len, in.n_local, false};
      const int s = out.seq_len();
      Tensor c = Tensor::zeros({s, s});
      for (int i = 0; i < s; ++i)
        for (int j = 0; j < s; ++j) c.at(i, j) = g.matrix.at(i, j);
      return {c, out};
    }
    case GuidanceMode::kTextOnly: {
      Layout out{in.text_len, 0, false};
      return {Tensor::full({in.text_len, in.text_len}, 1.0), out};
    }
    case GuidanceMode::kGuided:
      break;
  }
  throw ValidationError("degrade_guidance expects one of: full, drop-local, "
                        "drop-global, text-only");
}

}  // namespace mmt
