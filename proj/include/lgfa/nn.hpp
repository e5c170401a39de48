#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lgfa/tensor.hpp"

namespace lgfa {

inline constexpr double kLayerNormEps = 1e-5;
// Feed-forward hidden width as a multiple of the embedding dim.
inline constexpr int kMlpWidthFactor = 4;

template <typename T>
using ParamVisitor = std::function<void(const std::string&, Tensor<T>&)>;

template <typename T>
double fan_in_bound(int fan_in) {
  return 1.0 / std::sqrt(static_cast<double>(fan_in));
}

template <typename T>
struct LayerNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;

  static LayerNormParams init(int dim) {
    LayerNormParams p;
    p.gamma = Tensor<T>::filled({dim}, T(1));
    p.gamma.set_requires_grad(true);
    p.beta = Tensor<T>::param_zeros({dim});
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".gamma", gamma);
    fn(prefix + ".beta", beta);
  }
};

template <typename T>
struct AttentionParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;

  static AttentionParams init(int dim, Rng& rng) {
    const double bound = fan_in_bound<T>(dim);
    AttentionParams p;
    p.wq = Tensor<T>::param_uniform({dim, dim}, rng, bound);
    p.bq = Tensor<T>::param_uniform({dim}, rng, bound);
    p.wk = Tensor<T>::param_uniform({dim, dim}, rng, bound);
    p.bk = Tensor<T>::param_uniform({dim}, rng, bound);
    p.wv = Tensor<T>::param_uniform({dim, dim}, rng, bound);
    p.bv = Tensor<T>::param_uniform({dim}, rng, bound);
    p.wo = Tensor<T>::param_uniform({dim, dim}, rng, bound);
    p.bo = Tensor<T>::param_uniform({dim}, rng, bound);
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".wq", wq);
    fn(prefix + ".bq", bq);
    fn(prefix + ".wk", wk);
    fn(prefix + ".bk", bk);
    fn(prefix + ".wv", wv);
    fn(prefix + ".bv", bv);
    fn(prefix + ".wo", wo);
    fn(prefix + ".bo", bo);
  }
};

template <typename T>
struct MlpParams {
  Tensor<T> w1, b1, w2, b2;

  static MlpParams init(int dim, int hidden, Rng& rng) {
    MlpParams p;
    p.w1 = Tensor<T>::param_uniform({dim, hidden}, rng, fan_in_bound<T>(dim));
    p.b1 = Tensor<T>::param_uniform({hidden}, rng, fan_in_bound<T>(dim));
    p.w2 = Tensor<T>::param_uniform({hidden, dim}, rng, fan_in_bound<T>(hidden));
    p.b2 = Tensor<T>::param_uniform({dim}, rng, fan_in_bound<T>(hidden));
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".w1", w1);
    fn(prefix + ".b1", b1);
    fn(prefix + ".w2", w2);
    fn(prefix + ".b2", b2);
  }
};

// One pre-norm transformer block: LN -> MSA -> residual, LN -> MLP -> residual.
template <typename T>
struct BlockParams {
  LayerNormParams<T> ln1;
  AttentionParams<T> attn;
  LayerNormParams<T> ln2;
  MlpParams<T> mlp;

  static BlockParams init(int dim, Rng& rng) {
    BlockParams p;
    p.ln1 = LayerNormParams<T>::init(dim);
    p.attn = AttentionParams<T>::init(dim, rng);
    p.ln2 = LayerNormParams<T>::init(dim);
    p.mlp = MlpParams<T>::init(dim, kMlpWidthFactor * dim, rng);
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    ln1.visit(prefix + ".ln1", fn);
    attn.visit(prefix + ".attn", fn);
    ln2.visit(prefix + ".ln2", fn);
    mlp.visit(prefix + ".mlp", fn);
  }
};

// Scaled dot-product attention with per-head scale 1/sqrt(d/heads), heads
// concatenated, output projection applied. Output shape equals input shape.
// attn_maps, when given, receives one softmaxed weight matrix per head.
template <typename T>
Tensor<T> multi_head_self_attention(const Tensor<T>& x, const AttentionParams<T>& p, int heads,
                                    std::vector<Tensor<T>>* attn_maps = nullptr) {
  detail::require_2d("multi_head_self_attention", x);
  const int d = x.cols();
  if (heads < 1 || d % heads != 0) {
    throw ConfigError("multi_head_self_attention: dim " + std::to_string(d) +
                      " not divisible by " + std::to_string(heads) + " heads");
  }
  const int dh = d / heads;
  const T inv_sqrt_dh = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));
  Tensor<T> q = linear(x, p.wq, p.bq);
  Tensor<T> k = linear(x, p.wk, p.bk);
  Tensor<T> v = linear(x, p.wv, p.bv);
  std::vector<Tensor<T>> head_outputs;
  head_outputs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Tensor<T> qh = slice_cols(q, h * dh, dh);
    Tensor<T> kh = slice_cols(k, h * dh, dh);
    Tensor<T> vh = slice_cols(v, h * dh, dh);
    Tensor<T> scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
    Tensor<T> weights = softmax_rows(scores);
    if (attn_maps) attn_maps->push_back(weights);
    head_outputs.push_back(matmul(weights, vh));
  }
  return linear(heads == 1 ? head_outputs[0] : concat_cols(head_outputs), p.wo, p.bo);
}

// Two linear layers with GELU between.
template <typename T>
Tensor<T> mlp_block(const Tensor<T>& x, const MlpParams<T>& p) {
  return linear(gelu(linear(x, p.w1, p.b1)), p.w2, p.b2);
}

template <typename T>
Tensor<T> transformer_block(const Tensor<T>& x, const BlockParams<T>& p, int heads,
                            std::vector<Tensor<T>>* attn_maps = nullptr) {
  const T eps = static_cast<T>(kLayerNormEps);
  Tensor<T> attended =
      add(multi_head_self_attention(layer_norm(x, p.ln1.gamma, p.ln1.beta, eps), p.attn, heads,
                                    attn_maps),
          x);
  return add(mlp_block(layer_norm(attended, p.ln2.gamma, p.ln2.beta, eps), p.mlp), attended);
}

template <typename T>
Tensor<T> transformer_stack(Tensor<T> x, std::vector<BlockParams<T>>& blocks, int heads,
                            std::vector<Tensor<T>>* attn_maps = nullptr) {
  for (auto& block : blocks) x = transformer_block(x, block, heads, attn_maps);
  return x;
}

}  // namespace lgfa
