#include "lgfa/features.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "lgfa/error.hpp"

namespace lgfa {

namespace {

constexpr char kMagic[4] = {'L', 'G', 'F', 'A'};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const char* field, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw IoError("feature file " + path + ": truncated " + field);
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

bool Spectrogram::all_finite() const {
  for (float v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void write_feature_file(const std::filesystem::path& path, const Spectrogram& spec) {
  const std::size_t expect =
      static_cast<std::size_t>(spec.mel_bins) * spec.frames * spec.channels;
  if (spec.values.size() != expect) {
    throw IoError("feature file " + path.string() + ": value count " +
                  std::to_string(spec.values.size()) + " does not match header dims");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("feature file " + path.string() + ": cannot open for writing");
  os.write(kMagic, 4);
  put_u32(os, static_cast<std::uint32_t>(spec.mel_bins));
  put_u32(os, static_cast<std::uint32_t>(spec.frames));
  put_u32(os, static_cast<std::uint32_t>(spec.channels));
  static_assert(sizeof(float) == 4);
  os.write(reinterpret_cast<const char*>(spec.values.data()),
           static_cast<std::streamsize>(spec.values.size() * sizeof(float)));
  if (!os) throw IoError("feature file " + path.string() + ": write failed");
}

Spectrogram read_feature_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("feature file " + path.string() + ": cannot open");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("feature file " + path.string() + ": bad magic");
  }
  Spectrogram spec;
  spec.mel_bins = static_cast<int>(get_u32(is, "band count", path.string()));
  spec.frames = static_cast<int>(get_u32(is, "frame count", path.string()));
  spec.channels = static_cast<int>(get_u32(is, "channel count", path.string()));
  if (spec.mel_bins < 1 || spec.frames < 1 || spec.channels < 1 ||
      static_cast<std::size_t>(spec.mel_bins) * spec.frames * spec.channels > (1u << 28)) {
    throw IoError("feature file " + path.string() + ": implausible dimensions");
  }
  spec.values.resize(static_cast<std::size_t>(spec.mel_bins) * spec.frames * spec.channels);
  if (!is.read(reinterpret_cast<char*>(spec.values.data()),
               static_cast<std::streamsize>(spec.values.size() * sizeof(float)))) {
    throw IoError("feature file " + path.string() + ": truncated payload");
  }
  spec.source_id = path.stem().string();
  return spec;
}

void write_sidecar(const std::filesystem::path& path, const FeatureSidecar& meta) {
  nlohmann::json j{{"source_id", meta.source_id}, {"speaker", meta.speaker}, {"label", meta.label}};
  std::ofstream os(path);
  if (!os) throw IoError("sidecar " + path.string() + ": cannot open for writing");
  os << j.dump(2) << "\n";
}

FeatureSidecar read_sidecar(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("sidecar " + path.string() + ": cannot open");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("sidecar " + path.string() + ": " + e.what());
  }
  FeatureSidecar meta;
  meta.source_id = j.at("source_id").get<std::string>();
  meta.speaker = j.at("speaker").get<std::string>();
  meta.label = j.at("label").get<int>();
  return meta;
}

}  // namespace lgfa
