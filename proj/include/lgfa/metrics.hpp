#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace lgfa {

struct ConfusionMatrix {
  int n_classes = 0;
  std::vector<long long> counts;  // (true, predicted) row-major

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int n) : n_classes(n), counts(static_cast<std::size_t>(n) * n, 0) {}

  long long at(int truth, int pred) const {
    return counts[static_cast<std::size_t>(truth) * n_classes + pred];
  }
  void add(int truth, int pred, long long n = 1) {
    counts[static_cast<std::size_t>(truth) * n_classes + pred] += n;
  }
  long long total() const;
  long long row_sum(int truth) const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

  nlohmann::json to_json() const;
  static ConfusionMatrix from_json(const nlohmann::json& j);
};

struct Metrics {
  double war = 0.0;  // trace over total
  double uar = 0.0;  // mean per-class recall over represented classes
  std::vector<int> excluded_classes;  // zero row sums, left out of UAR
};

// Throws MetricsError on an all-zero matrix.
Metrics compute_metrics(const ConfusionMatrix& confusion);

// Per-epoch training log entry.
struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double train_war = 0.0;
};

struct FoldReport {
  int fold_index = 0;
  std::string test_speaker;
  ConfusionMatrix confusion;
  double war = 0.0;
  double uar = 0.0;
  int n_test_utterances = 0;
  std::vector<EpochLog> epochs;
};

// Full cross-validation outcome: per-fold confusions plus the pooled view.
struct EvalReport {
  nlohmann::json model;         // variant/ablation/shape facts
  nlohmann::json train_config;  // hyperparameters used
  std::vector<FoldReport> folds;
  ConfusionMatrix pooled;
  double pooled_war = 0.0;
  double pooled_uar = 0.0;

  nlohmann::json to_json() const;
  std::string to_text() const;  // plain summary table
};

}  // namespace lgfa
