#include "lgfa/metrics.hpp"

#include <cstdio>
#include <iostream>
#include <sstream>

#include "lgfa/error.hpp"

namespace lgfa {

long long ConfusionMatrix::total() const {
  long long t = 0;
  for (long long v : counts) t += v;
  return t;
}

long long ConfusionMatrix::row_sum(int truth) const {
  long long t = 0;
  for (int j = 0; j < n_classes; ++j) t += at(truth, j);
  return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (n_classes == 0) {
    *this = other;
    return *this;
  }
  if (other.n_classes != n_classes) {
    throw ShapeError("confusion: cannot pool " + std::to_string(n_classes) + "-class with " +
                     std::to_string(other.n_classes) + "-class matrix");
  }
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  return *this;
}

nlohmann::json ConfusionMatrix::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < n_classes; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < n_classes; ++j) row.push_back(at(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

ConfusionMatrix ConfusionMatrix::from_json(const nlohmann::json& j) {
  ConfusionMatrix cm(static_cast<int>(j.size()));
  for (int i = 0; i < cm.n_classes; ++i) {
    for (int jj = 0; jj < cm.n_classes; ++jj) {
      cm.add(i, jj, j.at(i).at(jj).get<long long>());
    }
  }
  return cm;
}

Metrics compute_metrics(const ConfusionMatrix& confusion) {
  const long long total = confusion.total();
  if (confusion.n_classes == 0 || total == 0) {
    throw MetricsError("metrics: confusion matrix is empty, WAR/UAR undefined");
  }
  for (long long v : confusion.counts) {
    if (v < 0) throw MetricsError("metrics: negative confusion count");
  }
  Metrics m;
  long long diag = 0;
  double recall_sum = 0.0;
  int represented = 0;
  for (int c = 0; c < confusion.n_classes; ++c) {
    diag += confusion.at(c, c);
    const long long row = confusion.row_sum(c);
    if (row == 0) {
      m.excluded_classes.push_back(c);
      continue;
    }
    recall_sum += static_cast<double>(confusion.at(c, c)) / static_cast<double>(row);
    ++represented;
  }
  m.war = static_cast<double>(diag) / static_cast<double>(total);
  m.uar = recall_sum / static_cast<double>(represented);
  if (!m.excluded_classes.empty()) {
    std::cerr << "warning: UAR computed over " << represented << "/" << confusion.n_classes
              << " classes; " << m.excluded_classes.size()
              << " class(es) absent from the test set\n";
  }
  return m;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json folds_json = nlohmann::json::array();
  for (const auto& f : folds) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : f.epochs) {
      epochs.push_back({{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"train_war", e.train_war}});
    }
    folds_json.push_back({{"fold", f.fold_index},
                          {"test_speaker", f.test_speaker},
                          {"confusion", f.confusion.to_json()},
                          {"war", f.war},
                          {"uar", f.uar},
                          {"n_test_utterances", f.n_test_utterances},
                          {"epochs", epochs}});
  }
  return nlohmann::json{{"model", model},
                        {"train_config", train_config},
                        {"folds", folds_json},
                        {"pooled",
                         {{"confusion", pooled.to_json()},
                          {"war", pooled_war},
                          {"uar", pooled_uar}}}};
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  char buf[128];
  os << "fold  speaker            WAR      UAR      test-utts\n";
  for (const auto& f : folds) {
    std::snprintf(buf, sizeof(buf), "%-5d %-18s %.4f   %.4f   %d\n", f.fold_index,
                  f.test_speaker.c_str(), f.war, f.uar, f.n_test_utterances);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "%-5s %-18s %.4f   %.4f\n", "all", "(pooled)", pooled_war,
                pooled_uar);
  os << buf;
  return os.str();
}

}  // namespace lgfa
