#pragma once

// Single-file checkpoints: a magic line, one line of compact JSON manifest,
// then the parameter blocks as consecutive NPY arrays. The manifest records
// each block's byte length and an FNV-1a hash over all block bytes, which
// both detects corruption and keys the pretrained-covariance cache.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "repsim/error.hpp"
#include "repsim/manifold.hpp"
#include "repsim/model.hpp"
#include "repsim/npy.hpp"

namespace repsim {

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct Bundle {
  nlohmann::json manifest;  // user fields; "blocks" and "hash" are filled on encode
  std::vector<std::pair<std::string, Matrix>> blocks;
};

namespace detail {

inline constexpr std::string_view bundle_magic = "REPSIM-BUNDLE 1\n";

inline const Matrix& find_block(const Bundle& b, const std::string& name) {
  for (const auto& [n, m] : b.blocks)
    if (n == name) return m;
  throw ParseError("blocks", "missing block '" + name + "'");
}

inline std::size_t json_size(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number_unsigned()) {
    throw ParseError("manifest", std::string("missing or invalid '") + key + "'");
  }
  return j[key].get<std::size_t>();
}

}  // namespace detail

inline std::string encode_bundle(const Bundle& b) {
  std::string payload;
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& [name, m] : b.blocks) {
    const std::string npy = encode_npy(m, NpyDtype::f64);
    blocks.push_back({{"name", name}, {"bytes", npy.size()}});
    payload += npy;
  }
  nlohmann::json manifest = b.manifest;
  manifest["blocks"] = blocks;
  manifest["hash"] = hex64(fnv1a(payload));
  std::string out(detail::bundle_magic);
  out += manifest.dump();
  out.push_back('\n');
  out += payload;
  return out;
}

inline Bundle decode_bundle(std::string_view bytes) {
  if (bytes.substr(0, detail::bundle_magic.size()) != detail::bundle_magic) {
    throw ParseError("magic", "not a checkpoint file");
  }
  bytes.remove_prefix(detail::bundle_magic.size());
  const auto eol = bytes.find('\n');
  if (eol == std::string_view::npos) throw ParseError("manifest", "unterminated manifest line");
  Bundle b;
  try {
    b.manifest = nlohmann::json::parse(bytes.substr(0, eol));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("manifest", e.what());
  }
  const std::string_view payload = bytes.substr(eol + 1);
  if (!b.manifest.contains("hash") || !b.manifest["hash"].is_string()) {
    throw ParseError("hash", "missing");
  }
  if (b.manifest["hash"].get<std::string>() != hex64(fnv1a(payload))) {
    throw ParseError("hash", "payload does not match the manifest hash");
  }
  if (!b.manifest.contains("blocks") || !b.manifest["blocks"].is_array()) {
    throw ParseError("blocks", "missing block table");
  }
  std::size_t offset = 0;
  for (const auto& entry : b.manifest["blocks"]) {
    if (!entry.contains("name") || !entry["name"].is_string()) throw ParseError("blocks", "unnamed block");
    const std::size_t len = detail::json_size(entry, "bytes");
    if (offset + len > payload.size()) throw ParseError("blocks", "block overruns the file");
    b.blocks.emplace_back(entry["name"].get<std::string>(), decode_npy(payload.substr(offset, len)).values);
    offset += len;
  }
  if (offset != payload.size()) throw ParseError("blocks", "trailing bytes after the last block");
  b.manifest.erase("blocks");
  return b;
}

struct Checkpoint {
  MlpModel model;
  std::uint64_t seed = 0;
  std::string method;      // "pretrain" or a finetune method name
  nlohmann::json config;   // the experiment config that produced the model
  std::string hash;        // filled on save and on load
};

inline Bundle checkpoint_bundle(const Checkpoint& c) {
  const MlpDims& d = c.model.dims();
  Bundle b;
  b.manifest = {{"format", "repsim-checkpoint"},
                {"dims", {{"d_in", d.d_in}, {"d_hidden", d.d_hidden}, {"d_feat", d.d_feat}, {"k", d.k}}},
                {"seed", c.seed},
                {"method", c.method},
                {"config", c.config}};
  for (std::size_t l = 0; l < c.model.layers().size(); ++l) {
    const auto& layer = c.model.layers()[l];
    b.blocks.emplace_back("layer" + std::to_string(l) + ".w", layer.w);
    b.blocks.emplace_back("layer" + std::to_string(l) + ".b",
                          Matrix(layer.b.size(), 1, layer.b));
  }
  return b;
}

inline std::string encode_checkpoint(const Checkpoint& c) { return encode_bundle(checkpoint_bundle(c)); }

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  Bundle b = decode_bundle(bytes);
  const auto& m = b.manifest;
  if (m.value("format", "") != "repsim-checkpoint") throw ParseError("format", "not a model checkpoint");
  if (!m.contains("dims") || !m["dims"].is_object()) throw ParseError("dims", "missing");
  const MlpDims dims{detail::json_size(m["dims"], "d_in"), detail::json_size(m["dims"], "d_hidden"),
                     detail::json_size(m["dims"], "d_feat"), detail::json_size(m["dims"], "k")};
  Checkpoint c;
  c.model = MlpModel(dims);
  for (std::size_t l = 0; l < c.model.layers().size(); ++l) {
    auto& layer = c.model.layers()[l];
    const Matrix& w = detail::find_block(b, "layer" + std::to_string(l) + ".w");
    const Matrix& bias = detail::find_block(b, "layer" + std::to_string(l) + ".b");
    if (w.rows() != layer.w.rows() || w.cols() != layer.w.cols() || bias.size() != layer.b.size()) {
      throw ParseError("blocks", "layer " + std::to_string(l) + " does not match the manifest dims");
    }
    layer.w = w;
    layer.b.assign(bias.values().begin(), bias.values().end());
  }
  c.seed = detail::json_size(m, "seed");
  c.method = m.value("method", "");
  c.config = m.value("config", nlohmann::json::object());
  c.hash = m["hash"].get<std::string>();
  return c;
}

inline std::string save_checkpoint(Checkpoint& c, const std::string& path) {
  const std::string bytes = encode_checkpoint(c);
  write_file(path, bytes);
  c.hash = decode_bundle(bytes).manifest["hash"].get<std::string>();
  return c.hash;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(e.field(), std::string(e.what()).substr(e.field().size() + 2) + " in '" + path + "'");
  }
}

// Cache of the pretrained covariance, stored next to the checkpoint as
// "<checkpoint>.sigma0". It is reused only when both the checkpoint hash and
// a fingerprint of the data it was computed on still match.
inline std::string sigma0_cache_path(const std::string& checkpoint_path) {
  return checkpoint_path + ".sigma0";
}

inline std::string data_fingerprint(const Matrix& x) {
  std::string raw(reinterpret_cast<const char*>(x.values().data()), x.size() * sizeof(double));
  return hex64(fnv1a(raw, fnv1a(x.shape_string())));
}

inline std::optional<CovarianceStats> load_sigma0_cache(const std::string& path,
                                                        const std::string& checkpoint_hash,
                                                        const std::string& fingerprint) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  Bundle b;
  try {
    b = decode_bundle(read_file(path));
  } catch (const Error&) {
    return std::nullopt;  // a damaged cache is simply rebuilt
  }
  if (b.manifest.value("checkpoint_hash", "") != checkpoint_hash ||
      b.manifest.value("data", "") != fingerprint) {
    return std::nullopt;
  }
  const Matrix& mu = detail::find_block(b, "mu");
  return CovarianceStats::from_sigma(detail::find_block(b, "sigma"),
                                     Vector(mu.values().begin(), mu.values().end()),
                                     detail::json_size(b.manifest, "n"));
}

inline void save_sigma0_cache(const std::string& path, const CovarianceStats& s,
                              const std::string& checkpoint_hash, const std::string& fingerprint) {
  Bundle b;
  b.manifest = {{"format", "repsim-sigma0"},
                {"checkpoint_hash", checkpoint_hash},
                {"data", fingerprint},
                {"n", s.n()}};
  b.blocks.emplace_back("mu", Matrix(s.mu().size(), 1, s.mu()));
  b.blocks.emplace_back("sigma", s.sigma());
  write_file(path, encode_bundle(b));
}

}  // namespace repsim
