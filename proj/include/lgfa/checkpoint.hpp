#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lgfa/error.hpp"
#include "lgfa/model.hpp"

namespace lgfa {

// Checkpoint container, little-endian throughout:
//   bytes 0-3   magic "LGFC"
//   u32         format version (1)
//   u32         config length; then that many bytes of config JSON
//   u32         parameter count
//   per parameter:
//     u32       name length; then the name bytes
//     u32       rank; then rank u32 dimensions
//     f32[...]  row-major payload (product of dimensions)
// Parameters appear in the model's registry order.

namespace detail {

inline void ckpt_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t ckpt_read_u32(std::istream& is, const std::string& path, const char* field) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw IoError("checkpoint " + path + ": truncated " + field);
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::filesystem::path& path, LgfaModel<T>& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint " + path.string() + ": cannot open for writing");
  os.write("LGFC", 4);
  detail::ckpt_u32(os, 1);
  const std::string cfg = model.config().to_json().dump();
  detail::ckpt_u32(os, static_cast<std::uint32_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  auto params = model.named_params();
  detail::ckpt_u32(os, static_cast<std::uint32_t>(params.size()));
  for (auto& [name, p] : params) {
    detail::ckpt_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::ckpt_u32(os, static_cast<std::uint32_t>(p.shape().size()));
    for (int d : p.shape()) detail::ckpt_u32(os, static_cast<std::uint32_t>(d));
    for (T v : p.values()) {
      const float f = static_cast<float>(v);
      static_assert(sizeof(float) == 4);
      os.write(reinterpret_cast<const char*>(&f), 4);
    }
  }
  if (!os) throw IoError("checkpoint " + path.string() + ": write failed");
}

template <typename T>
LgfaModel<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint " + path.string() + ": cannot open");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "LGFC", 4) != 0) {
    throw IoError("checkpoint " + path.string() + ": bad magic");
  }
  const std::uint32_t version = detail::ckpt_read_u32(is, path.string(), "version");
  if (version != 1) {
    throw IoError("checkpoint " + path.string() + ": unsupported version " +
                  std::to_string(version));
  }
  const std::uint32_t cfg_len = detail::ckpt_read_u32(is, path.string(), "config length");
  std::string cfg_text(cfg_len, '\0');
  if (!is.read(cfg_text.data(), cfg_len)) {
    throw IoError("checkpoint " + path.string() + ": truncated config");
  }
  LgfaConfig cfg;
  try {
    cfg = LgfaConfig::from_json(nlohmann::json::parse(cfg_text));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint " + path.string() + ": bad config json: " + e.what());
  }

  LgfaModel<T> model(cfg, 0);
  auto params = model.named_params();
  const std::uint32_t count = detail::ckpt_read_u32(is, path.string(), "parameter count");
  if (count != params.size()) {
    throw IoError("checkpoint " + path.string() + ": holds " + std::to_string(count) +
                  " parameters, model expects " + std::to_string(params.size()));
  }
  for (auto& [name, p] : params) {
    const std::uint32_t name_len = detail::ckpt_read_u32(is, path.string(), "name length");
    std::string stored(name_len, '\0');
    if (!is.read(stored.data(), name_len)) {
      throw IoError("checkpoint " + path.string() + ": truncated name");
    }
    if (stored != name) {
      throw IoError("checkpoint " + path.string() + ": parameter '" + stored +
                    "' where model expects '" + name + "'");
    }
    const std::uint32_t rank = detail::ckpt_read_u32(is, path.string(), "rank");
    std::vector<int> dims(rank);
    for (auto& d : dims) {
      d = static_cast<int>(detail::ckpt_read_u32(is, path.string(), "dimension"));
    }
    if (dims != p.shape()) {
      throw IoError("checkpoint " + path.string() + ": parameter '" + name + "' has shape " +
                    shape_str(dims) + ", model expects " + shape_str(p.shape()));
    }
    auto vals = p.values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      float f;
      if (!is.read(reinterpret_cast<char*>(&f), 4)) {
        throw IoError("checkpoint " + path.string() + ": truncated payload of '" + name + "'");
      }
      vals[i] = static_cast<T>(f);
    }
  }
  return model;
}

}  // namespace lgfa
