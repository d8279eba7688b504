#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "diffcod/iam.hpp"
#include "support/oracles.hpp"

using namespace diffcod;
using ag::Var;

namespace {

Var<double> random_var(const Shape& shape, std::mt19937_64& rng, bool grad = false) {
  Tensor<double> t(shape);
  std::normal_distribution<double> n;
  for (auto& v : t.span()) v = n(rng);
  return Var<double>(t, grad);
}

IAMParameters<double> random_params(int d, std::mt19937_64& rng, bool grad = false) {
  nn::ParameterStore<double> store;
  auto p = IAMParameters<double>::create(store, rng, "iam", d);
  if (!grad) return p;
  for (auto* w : {&p.wq_d, &p.wk_d, &p.wv_d, &p.wp_f, &p.wv_f}) *w = Var<double>(w->value(), true);
  return p;
}

Var<double> identity(int d) {
  Tensor<double> t({d, d});
  for (int i = 0; i < d; ++i) t[static_cast<std::size_t>(i) * d + i] = 1;
  return Var<double>(t);
}

}  // namespace

TEST_CASE("hand-executed two-token example") {
  const int d = 2;
  IAMParameters<double> p{identity(d), identity(d), identity(d), identity(d), identity(d)};
  TokenizedFeature<double> dt{Var<double>(Tensor<double>({1, 2, 2}, std::vector<double>{1, 0, 0, 1})), 1, 2};
  TokenizedFeature<double> ft{Var<double>(Tensor<double>({1, 2, 2}, std::vector<double>{1, 1, 0, 2})), 1, 2};
  const auto r = iam_forward(dt, ft, p);
  // Scores Q P^T / sqrt(2) = [[1, 0], [1, 2]] / sqrt(2); each softmax row
  // is (e^a / (1 + e^a), 1 / (1 + e^a)) in some order, a = 1 / sqrt(2).
  const double hi = 0.66976155, lo = 0.33023845;
  const double m_expected[4] = {hi, lo, lo, hi};
  for (int i = 0; i < 4; ++i) {
    CHECK(r.m1.value()[i] == doctest::Approx(m_expected[i]).epsilon(1e-7));
    CHECK(r.m2.value()[i] == doctest::Approx(m_expected[i]).epsilon(1e-7));
  }
  // V + V_F = [[2, 1], [0, 3]]; M2 * that = [[1.3395231, 1.6604769],
  // [0.6604769, 2.3395231]]; M1 * that gives the output below.
  const double o_expected[4] = {1.11527593, 1.88472407, 0.88472407, 2.11527593};
  for (int i = 0; i < 4; ++i) CHECK(r.output.tokens.value()[i] == doctest::Approx(o_expected[i]).epsilon(1e-7));
}

TEST_CASE("attention maps are row-stochastic and output keeps the token shape") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const int b = 1 + trial % 3, n = 2 + trial % 5, d = 1 + trial % 4;
    const auto p = random_params(d, rng);
    TokenizedFeature<double> dt{random_var({b, n, d}, rng), 1, n};
    TokenizedFeature<double> ft{random_var({b, n, d}, rng), 1, n};
    for (bool transpose : {false, true}) {
      const auto r = iam_forward(dt, ft, p, transpose);
      CHECK(r.output.tokens.shape() == Shape{b, n, d});
      CHECK(r.m1.shape() == Shape{b, n, n});
      for (const auto* m : {&r.m1, &r.m2})
        for (int row = 0; row < b * n; ++row) {
          double s = 0;
          for (int j = 0; j < n; ++j) s += m->value()[static_cast<std::size_t>(row) * n + j];
          CHECK(std::abs(s - 1) < 1e-6);
        }
    }
  }
}

TEST_CASE("joint token permutation permutes the output") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 3 + trial % 4, d = 2 + trial % 3;
    const auto p = random_params(d, rng);
    const auto dv = random_var({1, n, d}, rng), fv = random_var({1, n, d}, rng);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto permute = [&](const Var<double>& x) {
      Tensor<double> t(x.shape());
      for (int i = 0; i < n; ++i)
        for (int c = 0; c < d; ++c) t[static_cast<std::size_t>(i) * d + c] = x.value()[static_cast<std::size_t>(perm[i]) * d + c];
      return Var<double>(t);
    };
    const auto base = iam_forward<double>({dv, 1, n}, {fv, 1, n}, p);
    const auto moved = iam_forward<double>({permute(dv), 1, n}, {permute(fv), 1, n}, p);
    const auto expected = permute(base.output.tokens);
    for (std::size_t i = 0; i < expected.value().size(); ++i) {
      CHECK(moved.output.tokens.value()[i] == doctest::Approx(expected.value()[i]).epsilon(1e-10));
    }
  }
}

TEST_CASE("transposed variant differs on asymmetric maps") {
  std::mt19937_64 rng(4);
  const auto p = random_params(3, rng);
  TokenizedFeature<double> dt{random_var({1, 4, 3}, rng), 2, 2};
  TokenizedFeature<double> ft{random_var({1, 4, 3}, rng), 2, 2};
  const auto a = iam_forward(dt, ft, p, false).output.tokens.value();
  const auto b = iam_forward(dt, ft, p, true).output.tokens.value();
  double diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  CHECK(diff > 1e-6);
}

TEST_CASE("projection gradients match finite differences") {
  std::mt19937_64 rng(5);
  const auto p = random_params(3, rng, true);
  TokenizedFeature<double> dt{random_var({2, 4, 3}, rng), 2, 2};
  TokenizedFeature<double> ft{random_var({2, 4, 3}, rng), 2, 2};
  const auto w = random_var({2, 4, 3}, rng);
  const std::vector<Var<double>> params{p.wq_d, p.wk_d, p.wv_d, p.wp_f, p.wv_f};
  std::vector<std::pair<std::size_t, std::size_t>> entries;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t e = 0; e < 9; ++e) entries.emplace_back(i, e);
  for (bool transpose : {false, true}) {
    auto loss = [&] {
      return ag::mean_all(ag::mul(iam_forward(dt, ft, p, transpose).output.tokens, w));
    };
    const auto r = oracle::finite_difference(loss, params, entries);
    CHECK(r.checked == 45);
    CHECK(r.max_scaled_error < 1e-7);
  }
}

TEST_CASE("token map round trip and shape errors") {
  std::mt19937_64 rng(6);
  const auto map = random_var({2, 3, 2, 4}, rng);
  const auto tok = TokenizedFeature<double>::from_map(map);
  CHECK(tok.num_tokens() == 8);
  CHECK(tok.channels() == 3);
  // Token n = y * W + x holds channel c of pixel (y, x).
  CHECK(tok.tokens.value()[(8 + 5) * 3 + 2] == map.value().at(1, 2, 1, 1));
  CHECK(tok.to_map().value().storage() == map.value().storage());

  const auto p = random_params(3, rng);
  TokenizedFeature<double> a{random_var({1, 4, 3}, rng), 2, 2};
  TokenizedFeature<double> b{random_var({1, 5, 3}, rng), 1, 5};
  TokenizedFeature<double> c{random_var({1, 4, 2}, rng), 2, 2};
  CHECK_THROWS_AS(iam_forward(a, b, p), ShapeError);
  CHECK_THROWS_AS(iam_forward(c, c, p), ShapeError);
}
