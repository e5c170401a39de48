#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lgfa/dataset.hpp"
#include "lgfa/error.hpp"
#include "lgfa/features.hpp"
#include "lgfa/metrics.hpp"
#include "lgfa/model.hpp"
#include "lgfa/optim.hpp"
#include "lgfa/rng.hpp"
#include "lgfa/tensor.hpp"

namespace lgfa {

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 64;
  int epochs = 30;
  std::uint64_t seed = 0;
  std::string precision = "f32";  // f32 for training, f64 for gradient work
  double weight_decay = 0.01;
  int parallel_folds = 1;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
    if (batch_size < 1) throw ConfigError("train: batch_size must be positive");
    if (epochs < 1) throw ConfigError("train: epochs must be positive");
    if (precision != "f32" && precision != "f64") {
      throw ConfigError("train: precision must be f32 or f64, got '" + precision + "'");
    }
    if (weight_decay < 0.0) throw ConfigError("train: weight_decay must be nonnegative");
    if (parallel_folds < 1) throw ConfigError("train: parallel_folds must be positive");
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"learning_rate", learning_rate}, {"batch_size", batch_size},
                          {"epochs", epochs},               {"seed", seed},
                          {"precision", precision},         {"weight_decay", weight_decay},
                          {"parallel_folds", parallel_folds}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& key = it.key();
      if (key == "learning_rate") c.learning_rate = it.value().get<double>();
      else if (key == "batch_size") c.batch_size = it.value().get<int>();
      else if (key == "epochs") c.epochs = it.value().get<int>();
      else if (key == "seed") c.seed = it.value().get<std::uint64_t>();
      else if (key == "precision") c.precision = it.value().get<std::string>();
      else if (key == "weight_decay") c.weight_decay = it.value().get<double>();
      else if (key == "parallel_folds") c.parallel_folds = it.value().get<int>();
      else throw ConfigError("train config: unknown key '" + key + "'");
    }
    return c;
  }
};

struct LoadedUtterance {
  std::string utterance_id;
  std::string speaker;
  int label = -1;
  std::vector<Spectrogram> samples;
};

// Loads every feature block referenced by the manifest and checks it against
// the configured input shape.
inline std::vector<LoadedUtterance> load_utterances(const DatasetManifest& manifest,
                                                    const LgfaConfig& cfg) {
  manifest.validate();
  std::vector<LoadedUtterance> out;
  out.reserve(manifest.records.size());
  for (const auto& rec : manifest.records) {
    LoadedUtterance u;
    u.utterance_id = rec.utterance_id;
    u.speaker = rec.speaker_id;
    u.label = rec.label;
    for (const auto& rel : rec.feature_paths) {
      Spectrogram spec = read_feature_file(manifest.resolve(rel));
      if (spec.mel_bins != cfg.mel_bins || spec.frames != cfg.frames ||
          spec.channels != cfg.channels) {
        throw ConfigError("manifest: feature '" + rel + "' is " + std::to_string(spec.mel_bins) +
                          "x" + std::to_string(spec.frames) + "x" + std::to_string(spec.channels) +
                          ", config expects " + std::to_string(cfg.mel_bins) + "x" +
                          std::to_string(cfg.frames) + "x" + std::to_string(cfg.channels));
      }
      if (!spec.all_finite()) {
        throw ConfigError("manifest: feature '" + rel + "' contains non-finite values");
      }
      u.samples.push_back(std::move(spec));
    }
    out.push_back(std::move(u));
  }
  return out;
}

// Utterance-level prediction: arithmetic mean of per-sample posteriors,
// argmax with ties broken toward the lowest class index.
template <typename T>
int predict_utterance(LgfaModel<T>& model, const LoadedUtterance& utt) {
  std::vector<double> mean(model.config().n_classes, 0.0);
  for (const auto& spec : utt.samples) {
    const std::vector<double> p = model.posterior(spec);
    for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += p[c];
  }
  int best = 0;
  for (std::size_t c = 1; c < mean.size(); ++c) {
    if (mean[c] > mean[best]) best = static_cast<int>(c);
  }
  return best;
}

template <typename T>
ConfusionMatrix evaluate_utterances(LgfaModel<T>& model,
                                    const std::vector<const LoadedUtterance*>& utts) {
  ConfusionMatrix cm(model.config().n_classes);
  for (const auto* utt : utts) {
    cm.add(utt->label, predict_utterance(model, *utt));
  }
  return cm;
}

template <typename T>
struct FoldOutcome {
  FoldReport report;
  LgfaModel<T> model;
};

// Mini-batch training of one fold followed by held-out evaluation.
template <typename T>
FoldOutcome<T> train_fold(const std::vector<LoadedUtterance>& utterances, const LosoFold& fold,
                          int fold_index, const LgfaConfig& model_cfg,
                          const TrainConfig& train_cfg) {
  const std::uint64_t fold_seed = mix_seed(train_cfg.seed, static_cast<std::uint64_t>(fold_index));
  LgfaModel<T> model(model_cfg, fold_seed);
  AdamW<T> optimizer(model.named_params(),
                     AdamWConfig{train_cfg.learning_rate, 0.9, 0.999, 1e-8,
                                 train_cfg.weight_decay});

  struct TrainSample {
    const Spectrogram* spec;
    int label;
  };
  std::vector<TrainSample> train_samples;
  for (int idx : fold.train_indices) {
    for (const auto& spec : utterances[idx].samples) {
      train_samples.push_back({&spec, utterances[idx].label});
    }
  }
  if (train_samples.empty()) {
    throw TrainError("fold " + std::to_string(fold_index) + ": empty training set");
  }

  Rng shuffle_rng(mix_seed(fold_seed, 0x5bff1e));
  FoldOutcome<T> out{FoldReport{}, std::move(model)};
  out.report.fold_index = fold_index;
  out.report.test_speaker = fold.test_speaker;

  for (int epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(train_samples);
    double loss_sum = 0.0;
    long long correct = 0;
    const int n = static_cast<int>(train_samples.size());
    for (int start = 0; start < n; start += train_cfg.batch_size) {
      const int batch_n = std::min(train_cfg.batch_size, n - start);
      std::vector<Tensor<T>> logits;
      std::vector<int> labels(batch_n);
      logits.reserve(batch_n);
      for (int b = 0; b < batch_n; ++b) {
        logits.push_back(out.model.forward(*train_samples[start + b].spec));
        labels[b] = train_samples[start + b].label;
      }
      Tensor<T> batch_logits = batch_n == 1 ? logits[0] : concat_rows(logits);
      Tensor<T> loss = cross_entropy_mean(batch_logits, labels);
      const double loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value)) {
        throw TrainError("fold " + std::to_string(fold_index) + " diverged: non-finite loss at epoch " +
                         std::to_string(epoch));
      }
      backward(loss);
      optimizer.step();
      loss_sum += loss_value * batch_n;
      for (int b = 0; b < batch_n; ++b) {
        int best = 0;
        for (int c = 1; c < out.model.config().n_classes; ++c) {
          if (batch_logits.at(b, c) > batch_logits.at(b, best)) best = c;
        }
        correct += best == labels[b] ? 1 : 0;
      }
    }
    out.report.epochs.push_back(EpochLog{epoch, loss_sum / n,
                                         static_cast<double>(correct) / n});
  }

  std::vector<const LoadedUtterance*> test;
  for (int idx : fold.test_indices) test.push_back(&utterances[idx]);
  out.report.confusion = evaluate_utterances(out.model, test);
  out.report.n_test_utterances = static_cast<int>(test.size());
  const Metrics m = compute_metrics(out.report.confusion);
  out.report.war = m.war;
  out.report.uar = m.uar;
  return out;
}

// Runs every LOSO fold (optionally a subset), pools the confusion matrices,
// and reports both views. Fold seeds derive from the base seed and the fold
// index, so results do not depend on parallel_folds.
template <typename T>
EvalReport run_loso(
    const DatasetManifest& manifest, const LgfaConfig& model_cfg, const TrainConfig& train_cfg,
    const std::function<void(int, LgfaModel<T>&)>& on_fold_done = nullptr,
    const std::vector<int>& fold_subset = {}) {
  model_cfg.validate();
  train_cfg.validate();
  const std::vector<LoadedUtterance> utterances = load_utterances(manifest, model_cfg);
  const std::vector<LosoFold> folds = loso_split(manifest);

  std::vector<int> selected;
  if (fold_subset.empty()) {
    for (int i = 0; i < static_cast<int>(folds.size()); ++i) selected.push_back(i);
  } else {
    for (int i : fold_subset) {
      if (i < 0 || i >= static_cast<int>(folds.size())) {
        throw ConfigError("train: fold index " + std::to_string(i) + " out of range");
      }
      selected.push_back(i);
    }
  }

  std::vector<FoldReport> reports(selected.size());
  std::vector<std::exception_ptr> errors(selected.size());
  std::size_t next = 0;
  std::mutex next_mutex;
  auto worker = [&] {
    for (;;) {
      std::size_t mine;
      {
        std::lock_guard<std::mutex> lock(next_mutex);
        if (next >= selected.size()) return;
        mine = next++;
      }
      try {
        FoldOutcome<T> outcome =
            train_fold<T>(utterances, folds[selected[mine]], selected[mine], model_cfg, train_cfg);
        reports[mine] = std::move(outcome.report);
        if (on_fold_done) on_fold_done(selected[mine], outcome.model);
      } catch (...) {
        errors[mine] = std::current_exception();
      }
    }
  };

  const int n_threads = std::min<int>(train_cfg.parallel_folds, static_cast<int>(selected.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int i = 0; i < n_threads; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  for (const auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }

  EvalReport report;
  {
    LgfaModel<T> probe(model_cfg, 0);
    report.model = nlohmann::json{{"variant", variant_name(model_cfg.variant)},
                                  {"ablation", ablation_name(model_cfg.ablation)},
                                  {"token_count", probe.token_count()},
                                  {"classifier_input_width", probe.classifier_input_width()},
                                  {"config", model_cfg.to_json()}};
  }
  report.train_config = train_cfg.to_json();
  report.pooled = ConfusionMatrix(model_cfg.n_classes);
  for (auto& fr : reports) {
    report.pooled += fr.confusion;
    report.folds.push_back(std::move(fr));
  }
  const Metrics pooled = compute_metrics(report.pooled);
  report.pooled_war = pooled.war;
  report.pooled_uar = pooled.uar;
  return report;
}

}  // namespace lgfa
