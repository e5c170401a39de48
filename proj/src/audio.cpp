#include "lgfa/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "lgfa/error.hpp"

namespace lgfa {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::uint32_t read_u32(std::istream& is, const char* field, const std::string& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw IoError("wav " + path + ": truncated " + field);
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint16_t read_u16(std::istream& is, const char* field, const std::string& path) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2)) {
    throw IoError("wav " + path + ": truncated " + field);
  }
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

}  // namespace

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("wav " + path.string() + ": cannot open");
  char tag[4];
  if (!is.read(tag, 4) || std::memcmp(tag, "RIFF", 4) != 0) {
    throw IoError("wav " + path.string() + ": missing RIFF header");
  }
  read_u32(is, "riff size", path.string());
  if (!is.read(tag, 4) || std::memcmp(tag, "WAVE", 4) != 0) {
    throw IoError("wav " + path.string() + ": missing WAVE form type");
  }

  int channels = 0, sample_rate = 0, bits = 0, audio_format = 0;
  bool have_fmt = false;
  std::vector<char> payload;

  while (is.read(tag, 4)) {
    const std::uint32_t chunk_size = read_u32(is, "chunk size", path.string());
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (chunk_size < 16) throw IoError("wav " + path.string() + ": fmt chunk too short");
      audio_format = read_u16(is, "audio_format", path.string());
      channels = read_u16(is, "channels", path.string());
      sample_rate = static_cast<int>(read_u32(is, "sample_rate", path.string()));
      read_u32(is, "byte_rate", path.string());
      read_u16(is, "block_align", path.string());
      bits = read_u16(is, "bits_per_sample", path.string());
      is.ignore(chunk_size - 16 + (chunk_size & 1));
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      payload.resize(chunk_size);
      if (!is.read(payload.data(), chunk_size)) {
        throw IoError("wav " + path.string() + ": truncated data chunk");
      }
      if (chunk_size & 1) is.ignore(1);
    } else {
      is.ignore(chunk_size + (chunk_size & 1));
    }
  }

  if (!have_fmt) throw IoError("wav " + path.string() + ": missing fmt chunk");
  if (audio_format != 1) {
    throw IoError("wav " + path.string() + ": unsupported audio_format " +
                  std::to_string(audio_format) + " (PCM only)");
  }
  if (bits != 16) {
    throw IoError("wav " + path.string() + ": unsupported bits_per_sample " +
                  std::to_string(bits));
  }
  if (channels < 1) throw IoError("wav " + path.string() + ": invalid channel count");
  if (sample_rate < 1) throw IoError("wav " + path.string() + ": invalid sample_rate");
  if (payload.empty()) throw IoError("wav " + path.string() + ": missing or empty data chunk");

  const std::size_t n_frames = payload.size() / (2 * static_cast<std::size_t>(channels));
  if (n_frames == 0) throw IoError("wav " + path.string() + ": empty data chunk");
  AudioClip clip;
  clip.sample_rate = sample_rate;
  clip.samples.resize(n_frames);
  const unsigned char* raw = reinterpret_cast<const unsigned char*>(payload.data());
  for (std::size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      const std::size_t off = (i * channels + c) * 2;
      const std::int16_t v = static_cast<std::int16_t>(raw[off] | (raw[off + 1] << 8));
      acc += static_cast<double>(v) / 32768.0;
    }
    clip.samples[i] = acc / channels;
  }
  return clip;
}

void write_wav(const std::filesystem::path& path,
               const std::vector<std::vector<double>>& channels, int sample_rate) {
  if (channels.empty() || channels[0].empty()) {
    throw IoError("wav " + path.string() + ": nothing to write");
  }
  const std::size_t n = channels[0].size();
  for (const auto& ch : channels) {
    if (ch.size() != n) throw IoError("wav " + path.string() + ": channel lengths disagree");
  }
  const int nch = static_cast<int>(channels.size());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("wav " + path.string() + ": cannot open for writing");
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(n * nch * 2);
  os.write("RIFF", 4);
  write_u32(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  write_u32(os, 16);
  write_u16(os, 1);  // PCM
  write_u16(os, static_cast<std::uint16_t>(nch));
  write_u32(os, static_cast<std::uint32_t>(sample_rate));
  write_u32(os, static_cast<std::uint32_t>(sample_rate * nch * 2));
  write_u16(os, static_cast<std::uint16_t>(nch * 2));
  write_u16(os, 16);
  os.write("data", 4);
  write_u32(os, data_bytes);
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < nch; ++c) {
      const double clamped = std::clamp(channels[c][i], -1.0, 1.0);
      const long scaled = std::lround(clamped * 32768.0);
      const std::int16_t v = static_cast<std::int16_t>(std::clamp(scaled, -32768l, 32767l));
      write_u16(os, static_cast<std::uint16_t>(v));
    }
  }
  if (!os) throw IoError("wav " + path.string() + ": write failed");
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  write_wav(path, {clip.samples}, clip.sample_rate);
}

AudioClip resample(const AudioClip& clip, int target_rate) {
  if (clip.samples.empty()) throw IoError("resample: empty clip");
  if (clip.sample_rate < 1 || target_rate < 1) throw ConfigError("resample: rates must be positive");
  if (clip.sample_rate == target_rate) return clip;
  const std::size_t n = clip.samples.size();
  const std::size_t out_n = static_cast<std::size_t>(std::llround(
      static_cast<double>(n) * target_rate / clip.sample_rate));
  AudioClip out;
  out.sample_rate = target_rate;
  out.samples.resize(std::max<std::size_t>(out_n, 1));
  const double step = static_cast<double>(clip.sample_rate) / target_rate;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    const double pos = i * step;
    const std::size_t lo = std::min(static_cast<std::size_t>(pos), n - 1);
    const std::size_t hi = std::min(lo + 1, n - 1);
    const double frac = pos - static_cast<double>(lo);
    out.samples[i] = clip.samples[lo] * (1.0 - frac) + clip.samples[hi] * frac;
  }
  return out;
}

void FrontendConfig::validate() const {
  if (sample_rate < 1 || window < 1 || hop < 1 || mel_bins < 1 || frames_per_sample < 1) {
    throw ConfigError("frontend: sizes must be positive");
  }
  if ((fft_size & (fft_size - 1)) != 0 || fft_size < window) {
    throw ConfigError("frontend: fft_size must be a power of two >= window");
  }
  if (!(fmin >= 0.0) || !(fmin < fmax) || fmax > sample_rate / 2.0) {
    throw ConfigError("frontend: need 0 <= fmin < fmax <= Nyquist");
  }
  if (!(log_eps > 0.0)) throw ConfigError("frontend: log_eps must be positive");
}

int stft_frame_count(std::size_t n_samples, const FrontendConfig& cfg) {
  if (n_samples < static_cast<std::size_t>(cfg.window)) return 1;
  return static_cast<int>((n_samples - cfg.window) / cfg.hop) + 1;
}

std::vector<double> hamming_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) {
    w[i] = 0.54 - 0.46 * std::cos(2.0 * kPi * i / (n - 1));
  }
  return w;
}

void fft_inplace(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0) throw ConfigError("fft: size must be a power of two");
  // Bit-reversal permutation.
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = -2.0 * kPi / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(angle), std::sin(angle));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

ComplexGrid stft_frames(const AudioClip& clip, const FrontendConfig& cfg) {
  cfg.validate();
  if (clip.sample_rate != cfg.sample_rate) {
    throw ConfigError("stft: clip at " + std::to_string(clip.sample_rate) +
                      " Hz, expected " + std::to_string(cfg.sample_rate));
  }
  const std::vector<double> window = hamming_window(cfg.window);
  ComplexGrid grid;
  grid.n_frames = stft_frame_count(clip.samples.size(), cfg);
  grid.n_bins = cfg.n_bins();
  grid.values.resize(static_cast<std::size_t>(grid.n_frames) * grid.n_bins);
  std::vector<std::complex<double>> buf(cfg.fft_size);
  for (int t = 0; t < grid.n_frames; ++t) {
    const std::size_t start = static_cast<std::size_t>(t) * cfg.hop;
    for (int i = 0; i < cfg.window; ++i) {
      const std::size_t idx = start + i;
      const double s = idx < clip.samples.size() ? clip.samples[idx] : 0.0;
      buf[i] = s * window[i];
    }
    std::fill(buf.begin() + cfg.window, buf.end(), std::complex<double>(0.0, 0.0));
    fft_inplace(buf);
    for (int b = 0; b < grid.n_bins; ++b) {
      grid.values[static_cast<std::size_t>(t) * grid.n_bins + b] = buf[b];
    }
  }
  return grid;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank MelFilterbank::make(int n_mels, int fft_size, int sample_rate, double fmin,
                                  double fmax) {
  if (n_mels < 1) throw ConfigError("mel filterbank: n_mels must be positive");
  if (!(fmin >= 0.0) || !(fmin < fmax) || fmax > sample_rate / 2.0) {
    throw ConfigError("mel filterbank: need 0 <= fmin < fmax <= Nyquist");
  }
  MelFilterbank fb;
  fb.n_mels = n_mels;
  fb.n_bins = fft_size / 2 + 1;
  fb.weights.assign(static_cast<std::size_t>(n_mels) * fb.n_bins, 0.0);
  fb.center_hz.resize(n_mels);

  const double mel_lo = hz_to_mel(fmin);
  const double mel_hi = hz_to_mel(fmax);
  std::vector<double> edges_hz(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i) {
    edges_hz[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (n_mels + 1));
  }
  for (int m = 0; m < n_mels; ++m) fb.center_hz[m] = edges_hz[m + 1];

  const double bin_hz = static_cast<double>(sample_rate) / fft_size;
  for (int m = 0; m < n_mels; ++m) {
    const double left = edges_hz[m], center = edges_hz[m + 1], right = edges_hz[m + 2];
    for (int b = 0; b < fb.n_bins; ++b) {
      const double f = b * bin_hz;
      double w = 0.0;
      if (f > left && f < right) {
        w = f <= center ? (f - left) / (center - left) : (right - f) / (right - center);
      }
      fb.weights[static_cast<std::size_t>(m) * fb.n_bins + b] = std::max(0.0, w);
    }
  }
  return fb;
}

std::vector<double> mel_energy_frames(const AudioClip& clip, const FrontendConfig& cfg) {
  const AudioClip at_rate = clip.sample_rate == cfg.sample_rate ? clip
                                                                : resample(clip, cfg.sample_rate);
  const ComplexGrid grid = stft_frames(at_rate, cfg);
  const MelFilterbank fb =
      MelFilterbank::make(cfg.mel_bins, cfg.fft_size, cfg.sample_rate, cfg.fmin, cfg.fmax);
  std::vector<double> energies(static_cast<std::size_t>(grid.n_frames) * cfg.mel_bins, 0.0);
  std::vector<double> power(grid.n_bins);
  for (int t = 0; t < grid.n_frames; ++t) {
    for (int b = 0; b < grid.n_bins; ++b) {
      power[b] = std::norm(grid.at(t, b));
    }
    for (int m = 0; m < cfg.mel_bins; ++m) {
      const double* w = fb.weights.data() + static_cast<std::size_t>(m) * fb.n_bins;
      double acc = 0.0;
      for (int b = 0; b < grid.n_bins; ++b) acc += w[b] * power[b];
      energies[static_cast<std::size_t>(t) * cfg.mel_bins + m] = acc;
    }
  }
  return energies;
}

std::vector<Spectrogram> log_mel(const AudioClip& clip, const FrontendConfig& cfg,
                                 const std::string& source_id) {
  cfg.validate();
  const std::vector<double> energies = mel_energy_frames(clip, cfg);
  const int n_frames = static_cast<int>(energies.size()) / cfg.mel_bins;
  const int per = cfg.frames_per_sample;
  const int n_samples = (n_frames + per - 1) / per;
  const double pad = std::log(cfg.log_eps);

  std::vector<Spectrogram> out;
  out.reserve(n_samples);
  for (int s = 0; s < n_samples; ++s) {
    Spectrogram spec;
    spec.mel_bins = cfg.mel_bins;
    spec.frames = per;
    spec.channels = 1;
    spec.source_id = source_id;
    spec.frame_hop_seconds = static_cast<double>(cfg.hop) / cfg.sample_rate;
    spec.values.assign(static_cast<std::size_t>(cfg.mel_bins) * per, 0.0f);
    for (int t = 0; t < per; ++t) {
      const int src_t = s * per + t;
      for (int m = 0; m < cfg.mel_bins; ++m) {
        const double v = src_t < n_frames
                             ? std::log(energies[static_cast<std::size_t>(src_t) * cfg.mel_bins + m] +
                                        cfg.log_eps)
                             : pad;
        spec.at(m, t, 0) = static_cast<float>(v);
      }
    }
    if (cfg.standardize) {
      double mean = 0.0;
      for (float v : spec.values) mean += v;
      mean /= static_cast<double>(spec.values.size());
      double var = 0.0;
      for (float v : spec.values) var += (v - mean) * (v - mean);
      var /= static_cast<double>(spec.values.size());
      const double inv = 1.0 / std::sqrt(var + 1e-8);
      for (float& v : spec.values) v = static_cast<float>((v - mean) * inv);
    }
    out.push_back(std::move(spec));
  }
  return out;
}

}  // namespace lgfa
