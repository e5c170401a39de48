#include "lgfa/synth.hpp"

#include <cmath>
#include <fstream>
#include <vector>

#include "lgfa/error.hpp"
#include "lgfa/extract.hpp"
#include "lgfa/features.hpp"
#include "lgfa/rng.hpp"

namespace lgfa {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string two_digits(int v) { return (v < 10 ? "0" : "") + std::to_string(v); }

}  // namespace

void SynthConfig::validate() const {
  if (n_speakers < 2) throw ConfigError("synth: need at least 2 speakers");
  if (n_classes < 2) throw ConfigError("synth: need at least 2 classes");
  if (utterances_per_class < 1) throw ConfigError("synth: utterances_per_class must be positive");
  if (sample_rate < 1000) throw ConfigError("synth: sample_rate too low");
  if (!(min_seconds > 0.0) || !(max_seconds >= min_seconds)) {
    throw ConfigError("synth: invalid duration range");
  }
  if (noise_level < 0.0) throw ConfigError("synth: noise_level must be nonnegative");
}

AudioClip synth_utterance(const SynthConfig& cfg, int speaker, int label,
                          std::uint64_t utterance_seed) {
  Rng rng(utterance_seed);
  const double duration = rng.uniform(cfg.min_seconds, cfg.max_seconds);
  const int n = static_cast<int>(duration * cfg.sample_rate);

  // Class identity: burst repetition rate (burst length scaled so every
  // class has the same duty cycle) plus a class center frequency. The
  // per-utterance frequency jitter overlaps neighboring classes, so the
  // spectral cue is only partial and the burst pattern carries the rest.
  const double burst_rate = 2.0 + 2.0 * label;  // bursts per second
  const double burst_len = 0.30 / burst_rate;   // seconds, Hann envelope
  const double center_hz = 600.0 + 140.0 * label;

  // Speaker identity: fixed pitch offset and gain.
  const double pitch_mult =
      std::pow(2.0, (speaker - (cfg.n_speakers - 1) / 2.0) * 0.06);
  const double gain = 0.35 + 0.3 * speaker / std::max(1, cfg.n_speakers - 1);

  const double carrier = center_hz * pitch_mult * rng.uniform(0.90, 1.10);
  const double noise = cfg.noise_level * rng.uniform(0.6, 2.0);
  const double period = 1.0 / burst_rate;
  const double burst_phase = rng.uniform(0.0, period);
  const double carrier_phase = rng.uniform(0.0, 2.0 * kPi);

  AudioClip clip;
  clip.sample_rate = cfg.sample_rate;
  clip.samples.resize(n);
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / cfg.sample_rate;
    const double p = std::fmod(t + burst_phase, period);
    double env = 0.0;
    if (p < burst_len) {
      env = 0.5 * (1.0 - std::cos(2.0 * kPi * p / burst_len));
    }
    double s = gain * env * std::sin(2.0 * kPi * carrier * t + carrier_phase);
    s += noise * rng.normal();
    clip.samples[i] = std::clamp(s, -1.0, 1.0);
  }
  return clip;
}

SynthOutcome synth_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir,
                           const FrontendConfig& frontend, bool run_self_test) {
  cfg.validate();
  SynthOutcome outcome;
  outcome.wav_dir = out_dir / "wav";
  outcome.feature_dir = out_dir / "features";
  outcome.labels_csv = out_dir / "labels.csv";
  std::filesystem::create_directories(outcome.wav_dir);

  std::ofstream csv(outcome.labels_csv);
  if (!csv) throw IoError("synth: cannot write " + outcome.labels_csv.string());
  csv << "file,speaker,label\n";

  std::vector<LabeledWav> inputs;
  for (int s = 0; s < cfg.n_speakers; ++s) {
    for (int c = 0; c < cfg.n_classes; ++c) {
      for (int u = 0; u < cfg.utterances_per_class; ++u) {
        const std::uint64_t utt_seed =
            mix_seed(cfg.seed, (static_cast<std::uint64_t>(s) << 40) |
                                   (static_cast<std::uint64_t>(c) << 20) |
                                   static_cast<std::uint64_t>(u));
        const AudioClip clip = synth_utterance(cfg, s, c, utt_seed);
        const std::string name =
            "spk" + two_digits(s) + "_cls" + two_digits(c) + "_u" + two_digits(u) + ".wav";
        write_wav(outcome.wav_dir / name, clip);
        csv << name << ",spk" << two_digits(s) << ",class_" << two_digits(c) << "\n";
        LabeledWav w;
        w.wav_path = outcome.wav_dir / name;
        w.utterance_id = std::filesystem::path(name).stem().string();
        w.speaker = "spk" + two_digits(s);
        w.label_name = "class_" + two_digits(c);
        inputs.push_back(std::move(w));
        ++outcome.n_wavs;
      }
    }
  }
  csv.close();

  ExtractOptions opt;
  opt.frontend = frontend;
  opt.skip_up_to_date = false;
  ExtractOutcome extracted = extract_corpus(inputs, outcome.feature_dir, opt);
  if (!extracted.failures.empty()) {
    throw IoError("synth: feature extraction failed for " +
                  std::to_string(extracted.failures.size()) + " file(s): " +
                  extracted.failures.front());
  }
  outcome.manifest = std::move(extracted.manifest);
  outcome.manifest_path = extracted.manifest_path;

  if (run_self_test) {
    outcome.centroid_loso_accuracy = centroid_loso_accuracy(outcome.manifest);
    const double chance = 1.0 / cfg.n_classes;
    if (outcome.centroid_loso_accuracy <= chance) {
      throw TrainError("synth self-test: centroid classifier at " +
                       std::to_string(outcome.centroid_loso_accuracy) +
                       " does not beat chance " + std::to_string(chance));
    }
  }
  return outcome;
}

double centroid_loso_accuracy(const DatasetManifest& manifest) {
  manifest.validate();
  const int n_classes = static_cast<int>(manifest.classes.size());

  // Mean feature vector per utterance.
  std::vector<std::vector<double>> utt_mean(manifest.records.size());
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& rec = manifest.records[i];
    std::vector<double> acc;
    for (const auto& rel : rec.feature_paths) {
      const Spectrogram spec = read_feature_file(manifest.resolve(rel));
      if (acc.empty()) acc.assign(spec.values.size(), 0.0);
      for (std::size_t k = 0; k < spec.values.size(); ++k) acc[k] += spec.values[k];
    }
    for (auto& v : acc) v /= static_cast<double>(rec.feature_paths.size());
    utt_mean[i] = std::move(acc);
  }

  long long correct = 0, total = 0;
  for (const auto& fold : loso_split(manifest)) {
    std::vector<std::vector<double>> centroid(n_classes);
    std::vector<int> count(n_classes, 0);
    for (int idx : fold.train_indices) {
      const auto& mean = utt_mean[idx];
      auto& cen = centroid[manifest.records[idx].label];
      if (cen.empty()) cen.assign(mean.size(), 0.0);
      for (std::size_t k = 0; k < mean.size(); ++k) cen[k] += mean[k];
      ++count[manifest.records[idx].label];
    }
    for (int c = 0; c < n_classes; ++c) {
      for (auto& v : centroid[c]) v /= std::max(1, count[c]);
    }
    for (int idx : fold.test_indices) {
      const auto& mean = utt_mean[idx];
      int best = -1;
      double best_dist = 0.0;
      for (int c = 0; c < n_classes; ++c) {
        if (centroid[c].empty()) continue;
        double dist = 0.0;
        for (std::size_t k = 0; k < mean.size(); ++k) {
          const double d = mean[k] - centroid[c][k];
          dist += d * d;
        }
        if (best < 0 || dist < best_dist) {
          best = c;
          best_dist = dist;
        }
      }
      correct += best == manifest.records[idx].label ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace lgfa
