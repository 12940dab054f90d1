#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmt/errors.hpp"
#include "mmt/model.hpp"

namespace mmt {

inline constexpr char kCheckpointMagic[9] = "MMTCK001";
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},
          {"d_model", c.d_model},
          {"n_heads", c.n_heads},
          {"n_encoder_layers", c.n_encoder_layers},
          {"n_decoder_layers", c.n_decoder_layers},
          {"d_ffn", c.d_ffn},
          {"max_text_len", c.max_text_len},
          {"n_local_features", c.n_local_features},
          {"d_local_in", c.d_local_in},
          {"d_global_in", c.d_global_in},
          {"adapter_reduction", c.adapter_reduction},
          {"dropout", c.dropout},
          {"use_adapters", c.use_adapters},
          {"adapters_in_decoder", c.adapters_in_decoder},
          {"use_local", c.use_local},
          {"use_global", c.use_global},
          {"ln_eps", c.ln_eps},
          {"visual_init_stddev", c.visual_init_stddev}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    j.at("vocab_size").get_to(c.vocab_size);
    j.at("d_model").get_to(c.d_model);
    j.at("n_heads").get_to(c.n_heads);
    j.at("n_encoder_layers").get_to(c.n_encoder_layers);
    j.at("n_decoder_layers").get_to(c.n_decoder_layers);
    j.at("d_ffn").get_to(c.d_ffn);
    j.at("max_text_len").get_to(c.max_text_len);
    j.at("n_local_features").get_to(c.n_local_features);
    j.at("d_local_in").get_to(c.d_local_in);
    j.at("d_global_in").get_to(c.d_global_in);
    j.at("adapter_reduction").get_to(c.adapter_reduction);
    j.at("dropout").get_to(c.dropout);
    j.at("use_adapters").get_to(c.use_adapters);
    j.at("adapters_in_decoder").get_to(c.adapters_in_decoder);
    j.at("use_local").get_to(c.use_local);
    j.at("use_global").get_to(c.use_global);
    j.at("ln_eps").get_to(c.ln_eps);
    j.at("visual_init_stddev").get_to(c.visual_init_stddev);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace detail {

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline void put_f64_le(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64_le(out, bits);
}

inline double get_f64_le(const unsigned char* p) {
  const std::uint64_t bits = get_u64_le(p);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace detail

// Layout: 8-byte magic, u64 little-endian header length, JSON header
// (config + named parameter descriptors with frozen flags), then all
// parameter values as f64 little-endian in registry order.
inline void save_checkpoint(const std::string& path, const Model& model) {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["config"] = model_config_to_json(model.config());
  nlohmann::json params = nlohmann::json::array();
  std::string blob;
  for (const ParamEntry& e : model.params().entries()) {
    params.push_back(
        {{"name", e.name}, {"shape", e.tensor.shape()}, {"frozen", e.frozen}});
    for (double v : e.tensor.values()) detail::put_f64_le(blob, v);
  }
  header["params"] = std::move(params);
  const std::string header_str = header.dump();
  std::string out;
  out.append(kCheckpointMagic, 8);
  detail::put_u64_le(out, header_str.size());
  out += header_str;
  out += blob;
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing checkpoint: " + path);
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || bytes.compare(0, 8, kCheckpointMagic, 8) != 0)
    throw ValidationError("not a checkpoint file: " + path);
  const auto* base = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint64_t header_len = detail::get_u64_le(base + 8);
  if (16 + header_len > bytes.size())
    throw ValidationError("truncated checkpoint header: " + path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad checkpoint header: ") + e.what());
  }
  try {
    if (!header.contains("format_version") ||
        header["format_version"].get<int>() != kCheckpointVersion)
      throw ValidationError("unsupported checkpoint version in " + path);
    Model model(model_config_from_json(header.at("config")));
    std::size_t off = 16 + header_len;
    for (const auto& p : header.at("params")) {
      const std::string name = p.at("name").get<std::string>();
      const std::vector<int> shape = p.at("shape").get<std::vector<int>>();
      const bool frozen = p.at("frozen").get<bool>();
      Tensor t(shape);
      const std::size_t need = static_cast<std::size_t>(t.size()) * 8;
      if (off + need > bytes.size())
        throw ValidationError("checkpoint data truncated at parameter " + name);
      for (int i = 0; i < t.size(); ++i)
        t.at(i) = detail::get_f64_le(base + off + static_cast<std::size_t>(i) * 8);
      off += need;
      model.params().add(name, std::move(t), frozen);
      model.params().get(name).set_requires_grad(!frozen);
    }
    if (off != bytes.size())
      throw ValidationError("trailing bytes after checkpoint data: " + path);
    // the registry must describe exactly the parameter set this config builds
    Model expect(model.config());
    Rng throwaway(0);
    expect.init_params(throwaway);
    if (expect.params().size() != model.params().size())
      throw ValidationError("checkpoint parameter set does not match its config");
    for (std::size_t i = 0; i < expect.params().size(); ++i) {
      const ParamEntry& want = expect.params().entries()[i];
      const ParamEntry& got = model.params().entries()[i];
      if (want.name != got.name || want.tensor.shape() != got.tensor.shape())
        throw ValidationError("checkpoint parameter mismatch at " + got.name);
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad checkpoint header: ") + e.what());
  }
}

}  // namespace mmt
