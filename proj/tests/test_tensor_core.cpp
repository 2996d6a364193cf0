#include <doctest.h>

#include <cmath>
#include <vector>

#include "fluencygan/gradcheck.hpp"
#include "fluencygan/ops.hpp"

using namespace fluencygan;

namespace {

using Tf = Tensor<float>;
using Td = Tensor<double>;

template <typename S>
RowMatrix<S> mat(int rows, int cols, std::initializer_list<S> values) {
  RowMatrix<S> m(rows, cols);
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

}  // namespace

TEST_CASE("matmul identity, zero and shape errors") {
  Graph<float> g;
  auto a = g.constant(Tf::from_matrix(mat<float>(2, 2, {1, 2, 3, 4})));
  auto eye = g.constant(Tf::from_matrix(RowMatrix<float>::Identity(2, 2)));
  auto zero = g.constant(Tf({2, 2}));
  CHECK(matmul(a, eye).value() == a.value());
  CHECK(matmul(a, zero).value().isZero());

  auto bad = g.constant(Tf({3, 2}));
  try {
    matmul(a, bad);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x2]") != std::string::npos);
    CHECK(msg.find("[3x2]") != std::string::npos);
  }
}

TEST_CASE("softmax stability and reference values") {
  Graph<float> g;
  auto half = softmax(g.constant(Tf({2}, {0.f, 0.f})));
  CHECK(half.value()(0, 0) == doctest::Approx(0.5));
  CHECK(half.value()(0, 1) == doctest::Approx(0.5));

  auto big = softmax(g.constant(Tf({2}, {1000.f, 1000.f})));
  CHECK(big.value()(0, 0) == doctest::Approx(0.5));
  CHECK(std::isfinite(big.value()(0, 1)));

  auto y = softmax(g.constant(Tf({3}, {1.f, 2.f, 3.f})));
  const long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
  for (int i = 0; i < 3; ++i) {
    const double ref = static_cast<double>(std::exp(static_cast<long double>(i + 1)) / z);
    CHECK(y.value()(0, i) == doctest::Approx(ref).epsilon(1e-6));
  }
}

TEST_CASE("softmax along axis 0 normalises columns") {
  Graph<double> g;
  auto x = g.constant(Td::from_matrix(mat<double>(2, 3, {1, 2, 3, 4, 5, 6})));
  auto y = softmax(x, 0);
  for (int c = 0; c < 3; ++c) CHECK(y.value().col(c).sum() == doctest::Approx(1.0));
  CHECK_THROWS_AS(softmax(g.constant(Td({2, 2, 2})), 1), ParameterError);
}

TEST_CASE("softmax and gumbel_softmax rows are distributions") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Graph<float> g;
    Tf logits({4, 9});
    for (auto& v : logits.values()) v = static_cast<float>(rng.uniform(-8, 8));
    auto x = g.constant(logits);
    const auto noise = sample_gumbel<float>(logits.shape(), rng);
    for (auto y : {softmax(x), gumbel_softmax(x, 0.7f, noise)}) {
      CHECK((y.value().array() >= 0.f).all());
      for (int r = 0; r < 4; ++r) CHECK(std::abs(y.value().row(r).sum() - 1.f) < 1e-5f);
    }
  }
}

TEST_CASE("gumbel_softmax with zero noise and unit temperature is softmax bit for bit") {
  Rng rng(3);
  Graph<float> g;
  Tf logits({3, 7});
  for (auto& v : logits.values()) v = static_cast<float>(rng.uniform(-3, 3));
  auto x = g.constant(logits);
  auto a = softmax(x);
  auto b = gumbel_softmax(x, 1.0f, Tf(logits.shape()));
  CHECK(a.value() == b.value());
}

TEST_CASE("gumbel noise of u = 1/e is zero") {
  CHECK(Rng::gumbel_from_uniform(std::exp(-1.0)) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("gumbel_softmax approaches the one-hot argmax as tau shrinks") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    Graph<double> g;
    Td logits({5, 6});
    for (auto& v : logits.values()) v = rng.uniform(-2, 2);
    const auto noise = sample_gumbel<double>(logits.shape(), rng);
    auto y = gumbel_softmax(g.constant(logits), 0.01, noise);
    for (int r = 0; r < 5; ++r) {
      // brute-force argmax of perturbed logits
      int best = 0;
      double best_v = -1e300;
      double second = -1e300;
      for (int c = 0; c < 6; ++c) {
        const double v = logits.matrix()(r, c) + noise.matrix()(r, c);
        if (v > best_v) {
          second = best_v;
          best_v = v;
          best = c;
        } else if (v > second) {
          second = v;
        }
      }
      if (best_v - second < 0.1) continue;  // near-ties are not one-hot at tau = 0.01
      for (int c = 0; c < 6; ++c) {
        CHECK(std::abs(y.value()(r, c) - (c == best ? 1.0 : 0.0)) < 1e-3);
      }
    }
  }
}

TEST_CASE("gumbel_softmax rejects non-positive temperature") {
  Graph<float> g;
  auto x = g.constant(Tf({2, 3}));
  CHECK_THROWS_AS(gumbel_softmax(x, 0.0f, Tf({2, 3})), ParameterError);
  CHECK_THROWS_AS(gumbel_softmax(x, -1.0f, Tf({2, 3})), ParameterError);
  CHECK_THROWS_AS(gumbel_softmax(x, 1.0f, Tf({3, 2})), DimensionError);
}

TEST_CASE("conv1d shapes, zero kernel and short input") {
  Graph<float> g;
  Rng rng(1);
  Tf input({5, 4});
  for (auto& v : input.values()) v = static_cast<float>(rng.uniform(-1, 1));
  auto x = g.constant(input);
  auto bias = g.constant(Tf({2}, {0.25f, -1.5f}));
  auto y = conv1d(x, g.constant(Tf({3, 4, 2})), bias);
  CHECK(y.shape() == Shape{3, 2});
  for (int r = 0; r < 3; ++r) {
    CHECK(y.value()(r, 0) == 0.25f);
    CHECK(y.value()(r, 1) == -1.5f);
  }
  auto batched = conv1d(g.constant(Tf({2, 5, 4})), g.constant(Tf({3, 4, 2})), bias);
  CHECK(batched.shape() == Shape{2, 3, 2});
  CHECK_THROWS_AS(conv1d(x, g.constant(Tf({6, 4, 2})), bias), DimensionError);
}

TEST_CASE("conv1d matches a direct sliding-window sum") {
  Graph<double> g;
  Rng rng(5);
  Td input({2, 6, 3}), kernel({3, 3, 2}), bias({2});
  for (auto* t : {&input, &kernel, &bias}) {
    for (auto& v : t->values()) v = rng.uniform(-1, 1);
  }
  auto y = conv1d(g.constant(input), g.constant(kernel), g.constant(bias));
  for (int b = 0; b < 2; ++b) {
    for (int t = 0; t < 4; ++t) {
      for (int f = 0; f < 2; ++f) {
        double acc = bias[f];
        for (int j = 0; j < 3; ++j) {
          for (int e = 0; e < 3; ++e) acc += input[(b * 6 + t + j) * 3 + e] * kernel[(j * 3 + e) * 2 + f];
        }
        CHECK(y.value()(b * 4 + t, f) == doctest::Approx(acc));
      }
    }
  }
}

TEST_CASE("elementwise suite basics") {
  Graph<float> g;
  CHECK(sigmoid(g.constant(Tf({1}, {0.f}))).item() == 0.5f);

  auto constant_row = g.constant(Tf({1, 4}, {3.f, 3.f, 3.f, 3.f}));
  auto ln = layer_norm(constant_row, g.constant(Tf({4}, {1.f, 1.f, 1.f, 1.f})), g.constant(Tf({4})));
  CHECK(ln.value().isZero());
  CHECK(ln.value().allFinite());

  Rng rng(2);
  Tf table({6, 3});
  for (auto& v : table.values()) v = static_cast<float>(rng.uniform(-1, 1));
  auto tv = g.constant(table);
  const std::vector<int> ids{4, 0, 5};
  Tf onehot({3, 6});
  for (int i = 0; i < 3; ++i) onehot.matrix()(i, ids[i]) = 1.f;
  CHECK(embedding_lookup<float>(tv, ids).value() == embedding_lookup(tv, g.constant(onehot)).value());
  CHECK_THROWS_AS(embedding_lookup<float>(tv, std::vector<int>{6}), DimensionError);

  auto pooled = max_pool_over_time(g.constant(Tf({3, 2}, {1.f, 5.f, 4.f, -1.f, 2.f, 0.f})));
  CHECK(pooled.shape() == Shape{2});
  CHECK(pooled.value()(0, 0) == 4.f);
  CHECK(pooled.value()(0, 1) == 5.f);

  CHECK_THROWS_AS(add(g.constant(Tf({2, 3})), g.constant(Tf({3, 2}))), DimensionError);
}

TEST_CASE("backward: analytic gradients, independence and accumulation") {
  Graph<double> g;
  auto x = g.leaf(Td({2}, {1.0, 2.0}));
  g.backward(sum(mul(x, x)));
  CHECK(x.grad()(0, 0) == 2.0);
  CHECK(x.grad()(0, 1) == 4.0);

  Graph<double> g2;
  auto a = g2.leaf(Td({2}, {1.0, 2.0}));
  auto b = g2.leaf(Td({2}, {3.0, 4.0}));
  (void)a;
  g2.backward(sum(b));
  CHECK(a.grad().isZero());

  CHECK_THROWS_AS(g2.backward(b), ContractError);

  ParameterSet<double> params;
  auto& w = params.add("w", {2});
  w.matrix() << 1.0, -1.0;
  Graph<double> g3;
  auto loss = sum(mul(g3.param(w), g3.param(w)));
  g3.backward(loss);
  g3.backward(loss);
  CHECK(w.grad()(0, 0) == 4.0);
  CHECK(w.grad()(0, 1) == -4.0);
}

TEST_CASE("frozen parameters and disabled gradients") {
  ParameterSet<float> params;
  auto& w = params.add("w", {2});
  w.matrix() << 1.f, 2.f;
  Graph<float> g;
  g.freeze(params);
  auto x = g.leaf(Tf({2}, {3.f, 4.f}));
  g.backward(sum(mul(x, g.param(w))));
  CHECK(w.grad().isZero());
  CHECK(x.grad()(0, 0) == 1.f);

  Graph<float> off;
  off.set_grad_enabled(false);
  auto y = off.param(w);
  CHECK_FALSE(tanh(y).requires_grad());
}

TEST_CASE("backward is deterministic") {
  auto run = [] {
    Rng rng(99);
    Graph<float> g;
    Tf a({4, 5}), b({5, 3});
    for (auto* t : {&a, &b}) {
      for (auto& v : t->values()) v = static_cast<float>(rng.uniform(-1, 1));
    }
    auto va = g.leaf(a);
    auto vb = g.leaf(b);
    g.backward(sum(softmax(matmul(tanh(va), vb))));
    return std::pair{va.grad(), vb.grad()};
  };
  const auto first = run();
  const auto second = run();
  CHECK(first.first == second.first);
  CHECK(first.second == second.second);
}

TEST_CASE("attention ops honour masks") {
  Graph<double> g;
  Rng rng(4);
  const int batch = 2, steps = 3, units = 4, hidden = 5;
  Td ep({steps * batch, units}), dp({batch, units}), v({units, 1}), eo({steps * batch, hidden});
  for (auto* t : {&ep, &dp, &v, &eo}) {
    for (auto& x : t->values()) x = rng.uniform(-1, 1);
  }
  // batch row 0 sees only step 1; batch row 1 sees steps 0 and 2.
  const std::vector<std::uint8_t> mask{0, 1, 1, 0, 0, 1};
  RowMatrix<double> weights;
  auto ctx = additive_attention<double>(g.constant(ep), g.constant(dp), g.constant(v), g.constant(eo), mask,
                                        batch, &weights);
  CHECK((ctx.value().row(0) - eo.matrix().row(1 * batch + 0)).norm() < 1e-12);
  CHECK(weights(0, 0) == 0.0);
  CHECK(weights(1, 1) == 0.0);
  CHECK(weights.row(1).sum() == doctest::Approx(1.0));

  // v = 0 gives uniform scores, so the context is the mean of unmasked outputs.
  auto flat = additive_attention<double>(g.constant(ep), g.constant(dp), g.constant(Td({units, 1})),
                                         g.constant(eo), mask, batch);
  RowMatrix<double> expect = (eo.matrix().row(0 * batch + 1) + eo.matrix().row(2 * batch + 1)) / 2.0;
  CHECK((flat.value().row(1) - expect).norm() < 1e-12);

  const std::vector<std::uint8_t> dead{0, 1, 0, 1, 0, 1};
  CHECK_THROWS_AS(additive_attention<double>(g.constant(ep), g.constant(dp), g.constant(v),
                                             g.constant(eo), dead, batch),
                  ContractError);

  RowMatrix<double> probs;
  Td q({batch * steps, 4});
  for (auto& x : q.values()) x = rng.uniform(-1, 1);
  const std::vector<std::uint8_t> keys{1, 1, 1, 1, 1, 0};
  multi_head_attention<double>(g.constant(q), g.constant(q), g.constant(q), batch, 2, keys, true, &probs);
  for (int block = 0; block < batch * 2; ++block) {
    for (int i = 0; i < steps; ++i) {
      const auto row = probs.row(block * steps + i);
      CHECK(row.sum() == doctest::Approx(1.0));
      for (int j = i + 1; j < steps; ++j) CHECK(row(j) == 0.0);
    }
  }
  CHECK(probs(2 * steps + 2, 2) == 0.0);  // batch 1, head 0, masked key 2
}

TEST_CASE("every differentiable op passes the finite-difference check") {
  const auto reports = gradcheck::op_suite(20240601, 5);
  CHECK(reports.size() >= 30);
  for (const auto& r : reports) {
    INFO(r.name << " rel err " << r.max_rel_error);
    CHECK(r.instances >= 5);
    CHECK(r.passed());
  }
}
