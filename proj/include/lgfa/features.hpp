#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace lgfa {

// One fixed-size log-mel feature block: (mel band, frame, channel) row-major.
// An utterance longer than `frames` produces several of these.
struct Spectrogram {
  int mel_bins = 0;
  int frames = 0;
  int channels = 0;
  std::vector<float> values;
  std::string source_id;
  double frame_hop_seconds = 0.0;

  float at(int band, int frame, int channel) const {
    return values[(static_cast<std::size_t>(band) * frames + frame) * channels + channel];
  }
  float& at(int band, int frame, int channel) {
    return values[(static_cast<std::size_t>(band) * frames + frame) * channels + channel];
  }
  std::size_t numel() const { return values.size(); }
  bool all_finite() const;
};

// Flat binary layout: magic "LGFA", then u32 band/frame/channel counts,
// then float32 values row-major, all little-endian.
void write_feature_file(const std::filesystem::path& path, const Spectrogram& spec);
Spectrogram read_feature_file(const std::filesystem::path& path);

// JSON sidecar stored next to each feature file.
struct FeatureSidecar {
  std::string source_id;
  std::string speaker;
  int label = -1;
};

void write_sidecar(const std::filesystem::path& path, const FeatureSidecar& meta);
FeatureSidecar read_sidecar(const std::filesystem::path& path);

}  // namespace lgfa
