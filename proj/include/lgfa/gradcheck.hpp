#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "lgfa/model.hpp"
#include "lgfa/nn.hpp"
#include "lgfa/rng.hpp"
#include "lgfa/tensor.hpp"

namespace lgfa {

struct GradCheckSettings {
  double step = 1e-4;
  double rel_tol = 1e-4;
  double abs_floor = 1e-6;
};

struct GradCheckResult {
  std::string name;
  bool passed = false;
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
};

// One named check: a set of perturbable leaf tensors and a loss builder that
// re-runs the forward graph from their current values.
struct GradCheckCase {
  std::string name;
  std::vector<std::pair<std::string, Tensor<double>>> params;
  std::function<Tensor<double>()> loss;
};

// Central finite differences against the recorded analytic gradients.
// A coordinate passes when |analytic - numeric| stays below
// max(rel_tol * max(|analytic|, |numeric|), abs_floor); the reported error is
// normalized so that `err < rel_tol` is exactly that condition.
inline GradCheckResult run_grad_check(GradCheckCase& c, const GradCheckSettings& s = {}) {
  GradCheckResult res;
  res.name = c.name;
  Tensor<double> loss0 = c.loss();
  backward(loss0);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(c.params.size());
  for (auto& [name, p] : c.params) {
    if (!p.has_grad()) {
      analytic.emplace_back(p.numel(), 0.0);
    } else {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    }
  }
  const double denom_floor = s.abs_floor / s.rel_tol;
  res.passed = true;
  for (std::size_t pi = 0; pi < c.params.size(); ++pi) {
    auto vals = c.params[pi].second.values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + s.step;
      const double up = c.loss().item();
      vals[i] = saved - s.step;
      const double down = c.loss().item();
      vals[i] = saved;
      const double numeric = (up - down) / (2.0 * s.step);
      const double a = analytic[pi][i];
      const double err =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), denom_floor});
      ++res.coords_checked;
      if (err > res.max_rel_err) {
        res.max_rel_err = err;
        res.worst_param = c.params[pi].first;
        res.worst_index = i;
        res.worst_analytic = a;
        res.worst_numeric = numeric;
      }
      if (!(err < s.rel_tol)) res.passed = false;
    }
  }
  return res;
}

namespace detail {

// Weighted sum against a fixed random matrix; a plain sum would hide index
// permutation bugs in structural ops.
inline Tensor<double> weighted_sum(const Tensor<double>& t, const Tensor<double>& w) {
  return sum(mul(t, w));
}

inline Tensor<double> random_tensor(std::vector<int> shape, Rng& rng, bool grad) {
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = rng.normal();
  Tensor<double> t = Tensor<double>::from(std::move(shape), std::move(data));
  t.set_requires_grad(grad);
  return t;
}

}  // namespace detail

// Registry of per-primitive checks on seeded random small inputs.
inline std::vector<GradCheckCase> primitive_grad_cases(std::uint64_t seed) {
  auto rng = std::make_shared<Rng>(mix_seed(seed, 0x9c));
  std::vector<GradCheckCase> cases;
  auto rand = [rng](std::vector<int> shape, bool grad = true) {
    return detail::random_tensor(std::move(shape), *rng, grad);
  };

  {
    auto a = rand({3, 4}), b = rand({4, 2}), w = rand({3, 2}, false);
    cases.push_back({"matmul",
                     {{"a", a}, {"b", b}},
                     [=] { return detail::weighted_sum(matmul(a, b), w); }});
  }
  {
    auto x = rand({3, 4}), wm = rand({4, 2}), b = rand({2}), w = rand({3, 2}, false);
    cases.push_back({"linear",
                     {{"x", x}, {"w", wm}, {"b", b}},
                     [=] { return detail::weighted_sum(linear(x, wm, b), w); }});
  }
  {
    auto x = rand({4, 8}), g = rand({8}), b = rand({8}), w = rand({4, 8}, false);
    cases.push_back({"layer_norm",
                     {{"x", x}, {"gamma", g}, {"beta", b}},
                     [=] { return detail::weighted_sum(layer_norm(x, g, b, 1e-5), w); }});
  }
  {
    auto x = rand({4, 5}), w = rand({4, 5}, false);
    cases.push_back(
        {"softmax_rows", {{"x", x}}, [=] { return detail::weighted_sum(softmax_rows(x), w); }});
  }
  {
    auto x = rand({3, 7}), w = rand({3, 7}, false);
    cases.push_back({"gelu", {{"x", x}}, [=] { return detail::weighted_sum(gelu(x), w); }});
  }
  {
    auto a = rand({3, 4}), b = rand({3, 4}), w = rand({3, 4}, false);
    cases.push_back(
        {"add", {{"a", a}, {"b", b}}, [=] { return detail::weighted_sum(add(a, b), w); }});
  }
  {
    auto a = rand({3, 4}), b = rand({3, 4}), w = rand({3, 4}, false);
    cases.push_back(
        {"mul", {{"a", a}, {"b", b}}, [=] { return detail::weighted_sum(mul(a, b), w); }});
  }
  {
    auto a = rand({3, 4}), w = rand({3, 4}, false);
    cases.push_back(
        {"scale", {{"a", a}}, [=] { return detail::weighted_sum(scale(a, 1.7), w); }});
  }
  {
    auto a = rand({3, 4}), w = rand({4, 3}, false);
    cases.push_back(
        {"transpose", {{"a", a}}, [=] { return detail::weighted_sum(transpose(a), w); }});
  }
  {
    auto a = rand({3, 4}), w = rand({2, 6}, false);
    cases.push_back(
        {"reshape", {{"a", a}}, [=] { return detail::weighted_sum(reshape(a, {2, 6}), w); }});
  }
  {
    auto a = rand({5, 6}), w = rand({2, 6}, false);
    cases.push_back({"slice_rows",
                     {{"a", a}},
                     [=] { return detail::weighted_sum(slice_rows(a, 1, 2), w); }});
  }
  {
    auto a = rand({5, 6}), w = rand({5, 3}, false);
    cases.push_back({"slice_cols",
                     {{"a", a}},
                     [=] { return detail::weighted_sum(slice_cols(a, 2, 3), w); }});
  }
  {
    auto a = rand({2, 4}), b = rand({3, 4}), w = rand({5, 4}, false);
    cases.push_back({"concat_rows",
                     {{"a", a}, {"b", b}},
                     [=] { return detail::weighted_sum(concat_rows<double>({a, b}), w); }});
  }
  {
    auto a = rand({3, 2}), b = rand({3, 5}, true), w = rand({3, 7}, false);
    cases.push_back({"concat_cols",
                     {{"a", a}, {"b", b}},
                     [=] { return detail::weighted_sum(concat_cols<double>({a, b}), w); }});
  }
  {
    auto a = rand({3, 4});
    cases.push_back({"sum", {{"a", a}}, [=] { return sum(a); }});
  }
  {
    Rng prng(mix_seed(seed, 0xa77));
    auto x = rand({3, 8});
    auto attn = AttentionParams<double>::init(8, prng);
    auto w = rand({3, 8}, false);
    GradCheckCase c;
    c.name = "multi_head_self_attention";
    c.params = {{"x", x},       {"wq", attn.wq}, {"bq", attn.bq}, {"wk", attn.wk},
                {"bk", attn.bk}, {"wv", attn.wv}, {"bv", attn.bv}, {"wo", attn.wo},
                {"bo", attn.bo}};
    c.loss = [=] { return detail::weighted_sum(multi_head_self_attention(x, attn, 2), w); };
    cases.push_back(std::move(c));
  }
  {
    Rng prng(mix_seed(seed, 0xb31));
    auto x = rand({4, 16});
    auto mlp = MlpParams<double>::init(16, kMlpWidthFactor * 16, prng);
    auto w = rand({4, 16}, false);
    GradCheckCase c;
    c.name = "mlp_block";
    c.params = {{"x", x}, {"w1", mlp.w1}, {"b1", mlp.b1}, {"w2", mlp.w2}, {"b2", mlp.b2}};
    c.loss = [=] { return detail::weighted_sum(mlp_block(x, mlp), w); };
    cases.push_back(std::move(c));
  }
  {
    auto z = rand({4, 3});
    std::vector<int> labels{0, 2, 1, 2};
    cases.push_back(
        {"cross_entropy", {{"logits", z}}, [=] { return cross_entropy_mean(z, labels); }});
  }
  return cases;
}

// Desk-scale configuration small enough for exhaustive finite differences.
inline LgfaConfig reduced_grad_config() {
  LgfaConfig cfg;
  cfg.mel_bins = 8;
  cfg.frames = 8;
  cfg.channels = 1;
  cfg.frames_per_segment = 2;
  cfg.bands_per_segment = 2;
  cfg.blocks = 1;
  cfg.frame_dim = 4;
  cfg.segment_dim = 8;
  cfg.frame_heads = 2;
  cfg.segment_heads = 2;
  cfg.n_classes = 3;
  return cfg;
}

inline Spectrogram random_spectrogram(const LgfaConfig& cfg, std::uint64_t seed) {
  Spectrogram spec;
  spec.mel_bins = cfg.mel_bins;
  spec.frames = cfg.frames;
  spec.channels = cfg.channels;
  spec.source_id = "random";
  spec.values.resize(static_cast<std::size_t>(cfg.mel_bins) * cfg.frames * cfg.channels);
  Rng rng(mix_seed(seed, 0x5bec));
  for (auto& v : spec.values) v = static_cast<float>(rng.normal());
  return spec;
}

// Cross-entropy loss of the full reduced model on a random input, checked
// against every parameter.
inline GradCheckCase end_to_end_grad_case(std::uint64_t seed,
                                          LgfaConfig cfg = reduced_grad_config()) {
  auto model = std::make_shared<LgfaModel<double>>(cfg, seed);
  auto spec = std::make_shared<Spectrogram>(random_spectrogram(cfg, seed));
  GradCheckCase c;
  c.name = "lgfa_end_to_end";
  c.params = model->named_params();
  c.loss = [model, spec] {
    return cross_entropy_mean(model->forward(*spec), std::vector<int>{1});
  };
  return c;
}

}  // namespace lgfa
