#pragma once

#include <cmath>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "lgfa/error.hpp"
#include "lgfa/tensor.hpp"

namespace lgfa {

struct AdamWConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // decoupled
};

// AdamW with bias correction and decoupled weight decay. A step whose
// gradients contain non-finite values is skipped entirely and counted.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<std::pair<std::string, Tensor<T>>> params, AdamWConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].second.numel(), 0.0);
      v_[i].assign(params_[i].second.numel(), 0.0);
    }
  }

  int step_count() const { return t_; }
  int skipped_steps() const { return skipped_; }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  // Applies one update from the gradients currently held by the parameters.
  // Returns false when the step was skipped because of non-finite gradients.
  bool step() {
    for (auto& [name, p] : params_) {
      if (!p.has_grad()) {
        throw TrainError("adamw: parameter '" + name + "' has no gradient");
      }
      for (T g : p.grad()) {
        if (!std::isfinite(static_cast<double>(g))) {
          ++skipped_;
          std::cerr << "warning: non-finite gradient in '" << name << "', step "
                    << (t_ + 1) << " skipped\n";
          return false;
        }
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto vals = params_[i].second.values();
      auto grads = params_[i].second.grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < vals.size(); ++k) {
        const double g = static_cast<double>(grads[k]);
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
        const double m_hat = m[k] / bc1;
        const double v_hat = v[k] / bc2;
        double x = static_cast<double>(vals[k]);
        x -= cfg_.learning_rate * cfg_.weight_decay * x;
        x -= cfg_.learning_rate * m_hat / (std::sqrt(v_hat) + cfg_.eps);
        vals[k] = static_cast<T>(x);
      }
    }
    return true;
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  int t_ = 0;
  int skipped_ = 0;
};

}  // namespace lgfa
