#pragma once

#include <complex>
#include <filesystem>
#include <string>
#include <vector>

#include "lgfa/features.hpp"

namespace lgfa {

struct AudioClip {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = 0;          // Hz
};

// Decodes PCM 16-bit WAV; multi-channel input is averaged to mono.
AudioClip read_wav(const std::filesystem::path& path);

// Writes interleaved PCM 16-bit; samples are clamped to [-1, 1].
void write_wav(const std::filesystem::path& path, const std::vector<std::vector<double>>& channels,
               int sample_rate);
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

// Linear-interpolation resampling; duration is preserved within one sample
// period. Equal rates pass the clip through bit-identically.
AudioClip resample(const AudioClip& clip, int target_rate);

struct FrontendConfig {
  int sample_rate = 16000;
  int window = 320;  // 20 ms at 16 kHz
  int hop = 160;     // 50% overlap
  int fft_size = 512;
  int mel_bins = 64;
  double fmin = 0.0;
  double fmax = 8000.0;
  int frames_per_sample = 128;
  double log_eps = 1e-6;
  bool standardize = false;  // optional per-sample mean/variance normalization

  int n_bins() const { return fft_size / 2 + 1; }
  void validate() const;
};

// floor((n - window)/hop) + 1 for n >= window; clips shorter than one window
// are zero-padded and produce exactly one frame.
int stft_frame_count(std::size_t n_samples, const FrontendConfig& cfg);

// Coefficients 0.54 - 0.46*cos(2*pi*n/(N-1)).
std::vector<double> hamming_window(int n);

// In-place iterative radix-2 FFT; size must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& a);

struct ComplexGrid {
  int n_frames = 0;
  int n_bins = 0;
  std::vector<std::complex<double>> values;  // (frame, bin) row-major

  std::complex<double> at(int frame, int bin) const {
    return values[static_cast<std::size_t>(frame) * n_bins + bin];
  }
};

// Hamming-windowed FFT frames; the clip must already be at cfg.sample_rate.
ComplexGrid stft_frames(const AudioClip& clip, const FrontendConfig& cfg);

// Triangular filters with centers equally spaced on the HTK mel scale.
struct MelFilterbank {
  int n_mels = 0;
  int n_bins = 0;
  std::vector<double> weights;    // (mel, bin) row-major
  std::vector<double> center_hz;  // peak frequency per filter

  static MelFilterbank make(int n_mels, int fft_size, int sample_rate, double fmin, double fmax);

  double weight(int mel, int bin) const {
    return weights[static_cast<std::size_t>(mel) * n_bins + bin];
  }
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Mel-filtered power energies, (frame, mel) row-major, before the log.
std::vector<double> mel_energy_frames(const AudioClip& clip, const FrontendConfig& cfg);

// Full front end: resample, STFT, mel power, log, then split the time axis
// into consecutive fixed-size blocks, padding the last one with log(eps).
std::vector<Spectrogram> log_mel(const AudioClip& clip, const FrontendConfig& cfg,
                                 const std::string& source_id);

}  // namespace lgfa
