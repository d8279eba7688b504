#include <doctest.h>

#include <cmath>
#include <random>

#include "diffcod/diffusion.hpp"
#include "diffcod/gaussian.hpp"
#include "support/oracles.hpp"

using namespace diffcod;
namespace dd = diffcod::diffusion;

namespace {

Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor<double> t(shape);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.span()) v = u(rng);
  return t;
}

Tensor<double> normal_tensor(const Shape& shape, std::mt19937_64& rng) {
  Tensor<double> t(shape);
  std::normal_distribution<double> n;
  for (auto& v : t.span()) v = n(rng);
  return t;
}

// Mean and variance over the batch axis for each of the P pixels of a
// [B, 1, 1, P] tensor.
std::pair<std::vector<double>, std::vector<double>> batch_moments(const Tensor<double>& x) {
  const int b = x.dim(0), p = x.dim(3);
  std::vector<double> m(p, 0.0), v(p, 0.0);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < p; ++j) m[j] += x[static_cast<std::size_t>(i) * p + j] / b;
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < p; ++j) {
      const double d = x[static_cast<std::size_t>(i) * p + j] - m[j];
      v[j] += d * d / (b - 1);
    }
  return {m, v};
}

}  // namespace

TEST_CASE("mask space conversions") {
  Tensor<double> d({1, 1, 1, 3}, std::vector<double>{-1, 0, 1});
  const auto p = MaskTensor<double>::in_diffusion_space(d).to_probability();
  CHECK(p.space == MaskSpace::probability);
  CHECK(p.data[0] == 0.0);
  CHECK(p.data[1] == 0.5);
  CHECK(p.data[2] == 1.0);
  const auto back = p.to_diffusion();
  for (int i = 0; i < 3; ++i) CHECK(back.data[i] == d[i]);
  Tensor<double> wide({1, 1, 1, 2}, std::vector<double>{-0.5, 1.5});
  const auto clamped = MaskTensor<double>::in_probability_space(wide);
  CHECK(clamped.data[0] == 0.0);
  CHECK(clamped.data[1] == 1.0);
  CHECK_THROWS_AS(MaskTensor<double>::in_diffusion_space(Tensor<double>({1, 2, 1, 1})), ShapeError);
}

TEST_CASE("q_sample closed form and limits") {
  const auto s = make_linear_schedule(10);
  std::mt19937_64 rng(1);
  const auto y0 = random_tensor({3, 1, 2, 2}, rng, -1, 1);
  const auto eps = normal_tensor({3, 1, 2, 2}, rng);
  const dd::Timesteps t{1, 5, 10};
  const auto yt = dd::q_sample(y0, t, eps, s);
  for (int b = 0; b < 3; ++b)
    for (int i = 0; i < 4; ++i) {
      const std::size_t k = static_cast<std::size_t>(b) * 4 + i;
      const double ab = s.alpha_bar(t[b]);
      CHECK(yt[k] == doctest::Approx(std::sqrt(ab) * y0[k] + std::sqrt(1 - ab) * eps[k]));
    }
  const auto zero = dd::q_sample(Tensor<double>(y0.shape()), t, eps, s);
  for (int b = 0; b < 3; ++b)
    for (int i = 0; i < 4; ++i) {
      const std::size_t k = static_cast<std::size_t>(b) * 4 + i;
      CHECK(zero[k] == doctest::Approx(std::sqrt(1 - s.alpha_bar(t[b])) * eps[k]));
    }
  // A schedule whose first alpha_bar is numerically 1 leaves y0 unchanged.
  const NoiseSchedule tiny(std::vector<double>{1e-300});
  const auto same = dd::q_sample(y0.reshaped({1, 1, 3, 4}), {1},
                                 eps.reshaped({1, 1, 3, 4}), tiny);
  for (std::size_t k = 0; k < same.size(); ++k) CHECK(same[k] == y0[k]);
  CHECK_THROWS_AS(dd::q_sample(y0, {0, 1, 2}, eps, s), IndexError);
  CHECK_THROWS_AS(dd::q_sample(y0, {1, 2, 11}, eps, s), IndexError);
}

TEST_CASE("literal non-square-root marginal differs from the standard one") {
  const auto s = make_linear_schedule(10);
  Tensor<double> y0({1, 1, 1, 1}, 0.5);
  Tensor<double> eps({1, 1, 1, 1}, 1.0);
  const double std_form = dd::q_sample(y0, {5}, eps, s)[0];
  const double literal = dd::q_sample_literal(y0, {5}, eps, s)[0];
  const double ab = s.alpha_bar(5);
  CHECK(literal == doctest::Approx(std::sqrt(ab) * 0.5 + (1 - ab)));
  CHECK(std::abs(std_form - literal) > 1e-3);
}

TEST_CASE("terminal sample is nearly uncorrelated with y0") {
  const auto s = make_linear_schedule(1000);
  std::mt19937_64 rng(11);
  const int n = 10000;
  Tensor<double> y0({n, 1, 1, 1});
  std::bernoulli_distribution coin(0.5);
  for (auto& v : y0.span()) v = coin(rng) ? 1.0 : -1.0;
  const auto eps = normal_tensor(y0.shape(), rng);
  const auto yt = dd::q_sample(y0, dd::Timesteps(n, 1000), eps, s);
  double mx = 0, my = 0;
  for (int i = 0; i < n; ++i) {
    mx += y0[i] / n;
    my += yt[i] / n;
  }
  double sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < n; ++i) {
    sxy += (y0[i] - mx) * (yt[i] - my);
    sxx += (y0[i] - mx) * (y0[i] - mx);
    syy += (yt[i] - my) * (yt[i] - my);
  }
  CHECK(std::abs(sxy / std::sqrt(sxx * syy)) < 0.05);
}

TEST_CASE("iterative forward process matches the marginal in distribution") {
  const auto s = make_linear_schedule(10);
  const int n = 20000;
  const double pixels[4] = {-1.0, -0.3, 0.4, 1.0};
  Tensor<double> y0({n, 1, 1, 4});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 4; ++j) y0[static_cast<std::size_t>(i) * 4 + j] = pixels[j];
  for (int t : {1, 5, 10}) {
    const auto yt = dd::q_sample_iterative(y0, t, 100 + t, s);
    const auto [m, v] = batch_moments(yt);
    const double ab = s.alpha_bar(t);
    for (int j = 0; j < 4; ++j) {
      const double var = 1 - ab;
      CHECK(std::abs(m[j] - std::sqrt(ab) * pixels[j]) < 3 * std::sqrt(var / n));
      // Standard error of a Gaussian sample variance: var * sqrt(2 / (n - 1)).
      CHECK(std::abs(v[j] - var) < 3 * var * std::sqrt(2.0 / (n - 1)));
    }
  }
  CHECK_THROWS_AS(dd::q_sample_iterative(y0, 11, 1, s), IndexError);
}

TEST_CASE("q_sample_iterative is seed-deterministic") {
  const auto s = make_linear_schedule(10);
  Tensor<double> y0({2, 1, 2, 2}, 0.25);
  const auto a = dd::q_sample_iterative(y0, 7, 42, s);
  const auto b = dd::q_sample_iterative(y0, 7, 42, s);
  const auto c = dd::q_sample_iterative(y0, 7, 43, s);
  CHECK(a.storage() == b.storage());
  CHECK(a.storage() != c.storage());
}

TEST_CASE("predict_y0_from_eps inverts q_sample") {
  const auto s = make_linear_schedule(10);
  std::mt19937_64 rng(5);
  const auto y0 = random_tensor({4, 1, 3, 3}, rng, -1, 1);
  const auto eps = normal_tensor(y0.shape(), rng);
  const dd::Timesteps t{5, 5, 1, 10};
  const auto yt = dd::q_sample(y0, t, eps, s);
  const auto rec = dd::predict_y0_from_eps(yt, t, eps, s, false);
  for (std::size_t i = 0; i < y0.size(); ++i) CHECK(std::abs(rec[i] - y0[i]) < 1e-5);

  const auto zero_eps = dd::predict_y0_from_eps(yt, t, Tensor<double>(y0.shape()), s);
  for (int b = 0; b < 4; ++b)
    for (int i = 0; i < 9; ++i) {
      const std::size_t k = static_cast<std::size_t>(b) * 9 + i;
      CHECK(zero_eps[k] == doctest::Approx(std::clamp(yt[k] / std::sqrt(s.alpha_bar(t[b])), -1.0, 1.0)));
    }
}

TEST_CASE("q_posterior matches the direct formula") {
  const auto s = make_linear_schedule(10);
  std::mt19937_64 rng(8);
  const auto y0 = random_tensor({2, 1, 2, 2}, rng, -1, 1);
  const auto yt = random_tensor({2, 1, 2, 2}, rng, -2, 2);
  const dd::Timesteps t{5, 1};
  const auto post = dd::q_posterior(y0, yt, t, s);
  for (int b = 0; b < 2; ++b) {
    const int step = t[b];
    const double ab = s.alpha_bar(step);
    const double prev = step == 1 ? 1.0 : s.alpha_bar(step - 1);
    const double beta = s.beta(step);
    for (int i = 0; i < 4; ++i) {
      const std::size_t k = static_cast<std::size_t>(b) * 4 + i;
      const double mean = std::sqrt(prev) * beta / (1 - ab) * y0[k] +
                          std::sqrt(1 - beta) * (1 - prev) / (1 - ab) * yt[k];
      CHECK(post.mean[k] == doctest::Approx(mean).epsilon(1e-12));
      CHECK(post.variance[k] == doctest::Approx(beta * (1 - prev) / (1 - ab)).epsilon(1e-12));
    }
  }
  // t = 1: zero variance, mean equal to y0, finite clipped log-variance.
  for (int i = 4; i < 8; ++i) {
    CHECK(post.variance[i] == 0.0);
    CHECK(post.mean[i] == doctest::Approx(y0[i]).epsilon(1e-12));
    CHECK(post.log_variance[i] == doctest::Approx(std::log(s.posterior_variance(2))));
  }
}

TEST_CASE("p_mean_variance endpoints and posterior consistency") {
  const auto s = make_linear_schedule(1000);
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> pick(1, 1000);
  std::bernoulli_distribution coin(0.5);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Tensor<double> y0({1, 1, 4, 4});
    for (auto& v : y0.span()) v = coin(rng) ? 1.0 : -1.0;
    const auto eps = normal_tensor(y0.shape(), rng);
    const dd::Timesteps t{pick(rng)};
    const auto yt = dd::q_sample(y0, t, eps, s);
    const auto out = dd::p_mean_variance(eps, Tensor<double>(y0.shape(), 0.5), yt, t, s);
    const auto post = dd::q_posterior(y0, yt, t, s);
    for (std::size_t i = 0; i < y0.size(); ++i) worst = std::max(worst, std::abs(out.mean[i] - post.mean[i]));
  }
  CHECK(worst < 1e-5);

  Tensor<double> yt({1, 1, 2, 2}, 0.3);
  Tensor<double> eps({1, 1, 2, 2}, 0.1);
  for (int t : {1, 2, 500}) {
    const auto hi = dd::p_mean_variance(eps, Tensor<double>(yt.shape(), 1.0), yt, {t}, s);
    const auto lo = dd::p_mean_variance(eps, Tensor<double>(yt.shape(), 0.0), yt, {t}, s);
    for (int i = 0; i < 4; ++i) {
      CHECK(hi.variance[i] == doctest::Approx(s.beta(t)).epsilon(1e-12));
      CHECK(hi.variance[i] == doctest::Approx(std::exp(hi.log_variance[i])).epsilon(1e-6));
      if (t > 1) CHECK(lo.variance[i] == doctest::Approx(s.posterior_variance(t)).epsilon(1e-12));
      else CHECK(lo.log_variance[i] == doctest::Approx(std::log(s.posterior_variance(2))));
      CHECK(hi.pred_y0[i] >= -1.0);
      CHECK(hi.pred_y0[i] <= 1.0);
    }
  }
}

TEST_CASE("p_sample_step noise statistics and determinism") {
  const auto s = make_linear_schedule(10);
  const int n = 10000;
  Tensor<double> yt({n, 1, 1, 1}, 0.2);
  Tensor<double> eps({n, 1, 1, 1}, -0.3);
  Tensor<double> v({n, 1, 1, 1}, 0.4);
  const auto step = dd::p_mean_variance(eps, v, yt, dd::Timesteps(n, 6), s);
  std::mt19937_64 rng(9);
  const auto x = dd::p_sample_step(step, dd::Timesteps(n, 6), rng);
  double m = 0, var = 0;
  for (int i = 0; i < n; ++i) m += x[i] / n;
  for (int i = 0; i < n; ++i) var += (x[i] - m) * (x[i] - m) / (n - 1);
  const double sigma2 = step.variance[0];
  CHECK(std::abs(var - sigma2) < 3 * sigma2 * std::sqrt(2.0 / (n - 1)));
  CHECK(std::abs(m - step.mean[0]) < 3 * std::sqrt(sigma2 / n));

  std::mt19937_64 r1(4), r2(4);
  const auto a = dd::p_sample_step(step, dd::Timesteps(n, 6), r1);
  const auto b = dd::p_sample_step(step, dd::Timesteps(n, 6), r2);
  CHECK(a.storage() == b.storage());

  const auto last = dd::p_mean_variance(eps, v, yt, dd::Timesteps(n, 1), s);
  std::mt19937_64 r3(4);
  const auto final_step = dd::p_sample_step(last, dd::Timesteps(n, 1), r3);
  CHECK(final_step.storage() == last.mean.storage());
}

TEST_CASE("vlb terms") {
  const auto s = make_linear_schedule(1000);
  std::mt19937_64 rng(31);
  // The true noise with v chosen so the model variance equals the posterior
  // variance gives a zero KL.
  Tensor<double> y0({1, 1, 3, 3});
  std::bernoulli_distribution coin(0.5);
  for (auto& x : y0.span()) x = coin(rng) ? 1.0 : -1.0;
  const auto eps = normal_tensor(y0.shape(), rng);
  for (int t : {2, 50, 700}) {
    const auto yt = dd::q_sample(y0, {t}, eps, s);
    const auto terms = dd::vlb_terms(y0, yt, {t}, eps, Tensor<double>(y0.shape(), 0.0), s);
    for (std::size_t i = 0; i < terms.size(); ++i) CHECK(std::abs(terms[i]) < 1e-8);
    const auto other = dd::vlb_terms(y0, yt, {t}, Tensor<double>(y0.shape(), 0.3),
                                     Tensor<double>(y0.shape(), 0.7), s);
    for (std::size_t i = 0; i < other.size(); ++i) CHECK(other[i] >= -1e-10);
  }
  // t = 1 uses the discretized likelihood: an on-grid value with the exact
  // mean puts over half the mass in the edge bin.
  const auto yt1 = dd::q_sample(y0, {1}, eps, s);
  const auto nll = dd::vlb_terms(y0, yt1, {1}, eps, Tensor<double>(y0.shape(), 0.0), s);
  const auto out = dd::p_mean_variance(eps, Tensor<double>(y0.shape(), 0.0), yt1, {1}, s);
  for (std::size_t i = 0; i < nll.size(); ++i) {
    const double sd = std::exp(0.5 * out.log_variance[i]);
    // Edge bins extend to infinity, so the oracle is a one-sided tail.
    const double c = (y0[i] - out.mean[i]) / sd;
    const double half = (1.0 / 255.0) / sd;
    const double p = y0[i] > 0 ? 0.5 * std::erfc((c - half) / std::sqrt(2.0))
                               : 0.5 * std::erfc(-(c + half) / std::sqrt(2.0));
    CHECK(nll[i] == doctest::Approx(-std::log(p)).epsilon(1e-9));
    CHECK(nll[i] < std::log(2.0));
  }
}

TEST_CASE("discretized likelihood of an interior value") {
  const double x = 0.2, mean = 0.19, lv = std::log(1e-4);
  const double sd = 1e-2;
  const double expected = -std::log(0.5 * std::erfc(-(x + 1 / 255.0 - mean) / sd / std::sqrt(2.0)) -
                                    0.5 * std::erfc(-(x - 1 / 255.0 - mean) / sd / std::sqrt(2.0)));
  CHECK(gaussian::discretized_nll(x, mean, lv) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("prior KL of the default schedule is below 1e-4 nats") {
  const auto s = make_linear_schedule(1000);
  Tensor<double> y0({1, 1, 1, 21});
  for (int i = 0; i <= 20; ++i) y0[i] = -1.0 + 0.1 * i;
  const auto kl = dd::prior_kl(y0, s);
  const double ab = s.alpha_bar(1000);
  for (int i = 0; i <= 20; ++i) {
    const double m = std::sqrt(ab) * y0[i], var = 1 - ab;
    const double ref = 0.5 * (var + m * m - 1 - std::log(var));
    CHECK(kl[i] == doctest::Approx(ref).epsilon(1e-9));
    CHECK(kl[i] < 1e-4);
    CHECK(kl[i] >= 0);
  }
}
