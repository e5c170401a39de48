#include <cmath>
#include <set>

#include "doctest.h"
#include "lgfa/gradcheck.hpp"
#include "lgfa/nn.hpp"
#include "lgfa/rng.hpp"
#include "lgfa/tensor.hpp"

using namespace lgfa;

namespace {

Tensor<double> randn(std::vector<int> shape, Rng& rng, bool grad = true) {
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = rng.normal();
  auto t = Tensor<double>::from(std::move(shape), std::move(data));
  t.set_requires_grad(grad);
  return t;
}

}  // namespace

TEST_CASE("matmul identity and dot-product cases") {
  auto eye = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  auto b = Tensor<double>::from({2, 2}, {3, 4, 5, 6});
  auto prod = matmul(eye, b);
  CHECK(prod.values()[0] == 3.0);
  CHECK(prod.values()[1] == 4.0);
  CHECK(prod.values()[2] == 5.0);
  CHECK(prod.values()[3] == 6.0);

  auto row = Tensor<double>::from({1, 2}, {1, 2});
  auto col = Tensor<double>::from({2, 1}, {3, 4});
  CHECK(matmul(row, col).item() == 11.0);
}

TEST_CASE("matmul rejects mismatched inner dimensions naming both shapes") {
  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({4, 5});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), ShapeError);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[4x5]"), ShapeError);
}

TEST_CASE("linear zero weights and identity-plus-bias cases") {
  auto x = Tensor<double>::from({2, 2}, {7, -1, 2, 5});
  auto w0 = Tensor<double>::zeros({2, 3});
  auto b0 = Tensor<double>::zeros({3});
  auto zero_out = linear(x, w0, b0);
  for (double v : zero_out.values()) CHECK(v == 0.0);

  auto eye = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  auto w = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  auto b = Tensor<double>::from({2}, {1, 1});
  auto y = linear(eye, w, b);
  CHECK(y.at(0, 0) == 2.0);
  CHECK(y.at(0, 1) == 1.0);
  CHECK(y.at(1, 0) == 1.0);
  CHECK(y.at(1, 1) == 2.0);
}

TEST_CASE("layer_norm collapses constant rows to beta and keeps unit rows") {
  auto x = Tensor<double>::from({1, 4}, {5, 5, 5, 5});
  auto gamma = Tensor<double>::filled({4}, 1.0);
  auto beta = Tensor<double>::zeros({4});
  auto collapsed = layer_norm(x, gamma, beta, 1e-5);
  for (double v : collapsed.values()) CHECK(v == doctest::Approx(0.0));

  auto x2 = Tensor<double>::from({1, 2}, {1, -1});
  auto g2 = Tensor<double>::filled({2}, 1.0);
  auto b2 = Tensor<double>::zeros({2});
  auto y2 = layer_norm(x2, g2, b2, 1e-12);
  CHECK(y2.values()[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(y2.values()[1] == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("layer_norm output statistics on random rows") {
  Rng rng(11);
  auto x = randn({6, 16}, rng, false);
  auto gamma = Tensor<double>::filled({16}, 1.0);
  auto beta = Tensor<double>::zeros({16});
  auto y = layer_norm(x, gamma, beta, 1e-5);
  for (int i = 0; i < 6; ++i) {
    double mean = 0.0;
    for (int j = 0; j < 16; ++j) mean += y.at(i, j);
    mean /= 16.0;
    double var = 0.0;
    for (int j = 0; j < 16; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
    var /= 16.0;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("softmax_rows closed forms and shift invariance") {
  auto x = Tensor<double>::from({1, 3}, {2.5, 2.5, 2.5});
  auto uniform_rows = softmax_rows(x);
  for (double v : uniform_rows.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

  auto y = softmax_rows(Tensor<double>::from({1, 2}, {0.0, std::log(3.0)}));
  CHECK(y.values()[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(y.values()[1] == doctest::Approx(0.75).epsilon(1e-12));

  Rng rng(3);
  auto a = randn({4, 6}, rng, false);
  std::vector<double> shifted(a.values().begin(), a.values().end());
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 6; ++j) shifted[i * 6 + j] += 13.75;
  }
  auto sa = softmax_rows(a);
  auto sb = softmax_rows(Tensor<double>::from({4, 6}, shifted));
  for (std::size_t i = 0; i < sa.numel(); ++i) {
    CHECK(std::abs(sa.values()[i] - sb.values()[i]) < 1e-9);
  }
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(17);
  auto s = softmax_rows(randn({8, 13}, rng, false));
  for (int i = 0; i < 8; ++i) {
    double total = 0.0;
    for (int j = 0; j < 13; ++j) total += s.at(i, j);
    CHECK(std::abs(total - 1.0) < 1e-6);
    for (int j = 0; j < 13; ++j) CHECK(s.at(i, j) >= 0.0);
  }
}

TEST_CASE("backward on sum gives all-ones; on elementwise square gives 2x") {
  Rng rng(5);
  auto x = randn({3, 4}, rng);
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  auto y = randn({2, 5}, rng);
  backward(sum(mul(y, y)));
  for (std::size_t i = 0; i < y.numel(); ++i) {
    CHECK(y.grad()[i] == doctest::Approx(2.0 * y.values()[i]).epsilon(1e-12));
  }
}

TEST_CASE("backward requires a scalar loss") {
  auto x = Tensor<double>::zeros({2, 2});
  x.set_requires_grad(true);
  CHECK_THROWS_AS(backward(add(x, x)), ShapeError);
}

TEST_CASE("two backward passes on the same graph give identical gradients") {
  Rng rng(23);
  auto x = randn({4, 4}, rng);
  auto w = randn({4, 4}, rng);
  auto loss = sum(mul(matmul(x, w), matmul(x, w)));
  backward(loss);
  std::vector<double> first(x.grad().begin(), x.grad().end());
  std::vector<double> first_w(w.grad().begin(), w.grad().end());
  backward(loss);
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(x.grad()[i] == first[i]);
  for (std::size_t i = 0; i < first_w.size(); ++i) CHECK(w.grad()[i] == first_w[i]);
}

TEST_CASE("computation record is topologically ordered") {
  Rng rng(29);
  auto a = randn({3, 3}, rng);
  auto b = randn({3, 3}, rng);
  auto c = add(matmul(a, b), mul(a, b));
  auto loss = sum(c);
  auto record = ComputationRecord<double>::trace(loss);
  CHECK(record.size() >= 5);
  std::set<const detail::Node<double>*> seen;
  for (const auto& node : record.ops()) {
    for (const auto& input : node->inputs) {
      CHECK(seen.count(input.get()) == 1);
    }
    seen.insert(node.get());
  }
  // The final entry is the traced root.
  CHECK(record.ops().back().get() == loss.node().get());
}

TEST_CASE("reachable parameters all receive gradients") {
  Rng rng(31);
  auto x = randn({2, 6}, rng);
  auto w1 = randn({6, 6}, rng);
  auto b1 = randn({6}, rng);
  auto loss = sum(gelu(linear(x, w1, b1)));
  backward(loss);
  CHECK(x.has_grad());
  CHECK(w1.has_grad());
  CHECK(b1.has_grad());
}

TEST_CASE("primitive gradients match central finite differences") {
  auto cases = primitive_grad_cases(1234);
  for (auto& c : cases) {
    auto res = run_grad_check(c);
    INFO(c.name, ": max rel err ", res.max_rel_err, " at ", res.worst_param);
    CHECK(res.passed);
    CHECK(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("gradient checker flags an injected wrong gradient rule naming the op") {
  Rng rng(7);
  auto x = randn({2, 3}, rng);
  // Elementwise square with a deliberately wrong local gradient (3x, not 2x).
  auto bad_square = [x]() {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * x.values()[i];
    auto t = detail::make_op<double>("bad_square", x.shape(), std::move(out), {x},
                                     [](detail::Node<double>& n) {
                                       auto& nx = *n.inputs[0];
                                       for (std::size_t i = 0; i < n.grad.size(); ++i) {
                                         nx.accumulate_grad(i, n.grad[i] * 3.0 * nx.value[i]);
                                       }
                                     });
    return sum(t);
  };
  GradCheckCase c{"bad_square", {{"x", x}}, bad_square};
  auto res = run_grad_check(c);
  CHECK_FALSE(res.passed);
  CHECK(res.name == "bad_square");
  CHECK(res.worst_param == "x");
}

TEST_CASE("multi-head attention with a single token reduces to projection chain") {
  Rng rng(41);
  auto attn = AttentionParams<double>::init(4, rng);
  auto x = randn({1, 4}, rng, false);

  std::vector<Tensor<double>> maps;
  auto y = multi_head_self_attention(x, attn, 2, &maps);
  CHECK(y.rows() == 1);
  CHECK(y.cols() == 4);
  REQUIRE(maps.size() == 2);
  for (const auto& m : maps) {
    REQUIRE(m.numel() == 1);
    CHECK(m.item() == doctest::Approx(1.0).epsilon(1e-12));
  }

  // Attention weight 1 on the only token: output = (x Wv + bv) Wo + bo.
  auto expected = linear(linear(x, attn.wv, attn.bv), attn.wo, attn.bo);
  for (std::size_t i = 0; i < y.numel(); ++i) {
    CHECK(y.values()[i] == doctest::Approx(expected.values()[i]).epsilon(1e-12));
  }
}

TEST_CASE("multi-head attention preserves shape and rejects bad head counts") {
  Rng rng(43);
  auto attn = AttentionParams<double>::init(256, rng);
  auto x = randn({17, 256}, rng, false);
  auto y = multi_head_self_attention(x, attn, 4);
  CHECK(y.rows() == 17);
  CHECK(y.cols() == 256);
  CHECK_THROWS_AS(multi_head_self_attention(x, attn, 3), ConfigError);
}

TEST_CASE("multi-head attention is permutation-equivariant without positions") {
  Rng rng(47);
  auto attn = AttentionParams<double>::init(8, rng);
  auto x = randn({6, 8}, rng, false);
  // Fixed permutation of rows.
  const int perm[6] = {3, 0, 5, 1, 4, 2};
  std::vector<double> permuted(x.numel());
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 8; ++j) permuted[i * 8 + j] = x.at(perm[i], j);
  }
  auto y = multi_head_self_attention(x, attn, 2);
  auto yp = multi_head_self_attention(Tensor<double>::from({6, 8}, permuted), attn, 2);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 8; ++j) {
      CHECK(std::abs(yp.at(i, j) - y.at(perm[i], j)) < 1e-6);
    }
  }
}

TEST_CASE("mlp_block zero weights give zero output and shapes are preserved") {
  MlpParams<double> p;
  p.w1 = Tensor<double>::param_zeros({16, 64});
  p.b1 = Tensor<double>::param_zeros({64});
  p.w2 = Tensor<double>::param_zeros({64, 16});
  p.b2 = Tensor<double>::param_zeros({16});
  Rng rng(53);
  auto x = randn({16, 16}, rng, false);
  auto y = mlp_block(x, p);
  CHECK(y.rows() == 16);
  CHECK(y.cols() == 16);
  for (double v : y.values()) CHECK(v == 0.0);
}
