#include <doctest.h>

#include <filesystem>
#include <random>

#include "diffcod/image_io.hpp"
#include "diffcod/metrics.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace diffcod;

namespace {

Plane flipped(const Plane& p) {
  Plane out(p.height, p.width);
  for (int y = 0; y < p.height; ++y)
    for (int x = 0; x < p.width; ++x) out.at(y, x) = p.at(y, p.width - 1 - x);
  return out;
}

Plane complement(const Plane& p) {
  Plane out = p;
  for (double& v : out.values) v = 1 - v;
  return out;
}

Plane binary_3x3(int bits) {
  Plane p(3, 3);
  for (int i = 0; i < 9; ++i) p.values[i] = (bits >> i) & 1;
  return p;
}

}  // namespace

TEST_CASE("metrics agree with reference oracles on random 8x8 instances") {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 200; ++i) {
    const double frac = 0.05 + 0.9 * (i % 10) / 9.0;
    const Plane gt = oracle::random_mask(8, 8, frac, rng);
    Plane pred = oracle::random_plane(8, 8, rng);
    if (i % 4 == 1) pred = oracle::random_mask(8, 8, 0.5, rng);
    CHECK(mae(pred, gt) == doctest::Approx(oracle::ref_mae(pred, gt)).epsilon(1e-12));
    CHECK(std::abs(s_measure(pred, gt) - oracle::ref_s_measure(pred, gt)) < 1e-6);
    CHECK(std::abs(weighted_f(pred, gt) - oracle::ref_weighted_f(pred, gt)) < 1e-6);
    CHECK(std::abs(mean_f(pred, gt) - oracle::ref_mean_f(pred, gt)) < 1e-6);
    CHECK(std::abs(e_measure(pred, gt) - oracle::ref_e_measure(pred, gt)) < 1e-6);
    CHECK(std::abs(mean_f(pred, gt, false) - oracle::ref_mean_f(pred, gt, false)) < 1e-6);
    CHECK(std::abs(e_measure(pred, gt, false) - oracle::ref_e_measure(pred, gt, false)) < 1e-6);
  }
}

TEST_CASE("binary 3x3 pairs score perfectly exactly when equal") {
  for (int g = 0; g < 512; ++g) {
    const Plane gt = binary_3x3(g);
    for (int p = 0; p < 512; ++p) {
      const Plane pred = binary_3x3(p);
      const auto s = evaluate_pair(pred, gt);
      if (p == g) {
        CHECK(s.mae == 0.0);
        CHECK(s.s_alpha > 1 - 1e-6);
        CHECK(s.f_w > 1 - 1e-6);
        CHECK(s.f_m > 1 - 1e-6);
        CHECK(s.e_m > 1 - 1e-6);
      } else {
        CHECK(s.mae > 0);
        CHECK(s.s_alpha < 1 - 1e-6);
        CHECK(s.f_w < 1 - 1e-6);
        CHECK(s.f_m < 1 - 1e-6);
        CHECK(s.e_m < 1 - 1e-6);
      }
    }
  }
}

TEST_CASE("metric edge cases") {
  const Plane zeros(4, 4, 0.0), ones(4, 4, 1.0);
  CHECK(mae(ones, zeros) == 1.0);
  CHECK(mae(Plane(5, 3, 0.25), Plane(5, 3, 0.0)) == 0.25);
  // Empty ground truth.
  CHECK(s_measure(Plane(4, 4, 0.2), zeros) == doctest::Approx(0.8));
  CHECK(weighted_f(zeros, zeros) == 1.0);
  CHECK(weighted_f(Plane(4, 4, 0.7), zeros) == 0.0);
  CHECK(mean_f(zeros, zeros) == 1.0);
  // Full ground truth.
  CHECK(s_measure(Plane(4, 4, 0.6), ones) == doctest::Approx(0.6));
  // Zero prediction on a nonempty mask has no recall. The object sits at
  // least 3 pixels from the border so the zero-padded 7x7 window never
  // dilutes the error.
  Plane big(12, 12, 0.0);
  big.at(5, 5) = big.at(5, 6) = big.at(6, 5) = 1;
  CHECK(std::abs(weighted_f(Plane(12, 12, 0.0), big)) < 1e-9);
  Plane gt(4, 4, 0.0);
  gt.at(1, 1) = gt.at(1, 2) = gt.at(2, 1) = 1;
  // A uniform field at the foreground rate is worse than a perfect mask.
  CHECK(s_measure(Plane(4, 4, 3.0 / 16), gt) < s_measure(gt, gt));
  CHECK_THROWS_AS(mae(Plane(2, 2), Plane(2, 3)), ShapeError);
  CHECK_THROWS_AS(s_measure(Plane(2, 2), Plane(3, 2)), ShapeError);
  CHECK_THROWS_AS(weighted_f(Plane(2, 2), Plane(3, 2)), ShapeError);
  CHECK_THROWS_AS(mean_f(Plane(2, 2), Plane(3, 2)), ShapeError);
  CHECK_THROWS_AS(e_measure(Plane(2, 2), Plane(3, 2)), ShapeError);
}

TEST_CASE("mean F on a uniform half prediction by hand") {
  const Plane pred(2, 2, 0.5);
  const Plane gt(2, 2, std::vector<double>{1, 1, 0, 0});
  // Thresholds k/256 <= 0.5 (k = 1..128) mark everything positive: P = 0.5,
  // R = 1, F = 1.3 * 0.5 / (0.3 * 0.5 + 1). The rest have no positives.
  const double f = 1.3 * 0.5 / (0.15 + 1.0);
  CHECK(mean_f(pred, gt) == doctest::Approx(f * 128 / 256).epsilon(1e-12));
  CHECK(mean_f(pred, gt) == doctest::Approx(0.2826087).epsilon(1e-6));
}

TEST_CASE("scaling a prediction changes mean F under fixed thresholds") {
  std::mt19937_64 rng(5);
  const Plane gt = oracle::random_mask(8, 8, 0.4, rng);
  const Plane pred = oracle::random_plane(8, 8, rng);
  Plane half = pred;
  for (double& v : half.values) v *= 0.5;
  const double a = mean_f(pred, gt, false), b = mean_f(half, gt, false);
  CHECK(a == doctest::Approx(oracle::ref_mean_f(pred, gt, false)).epsilon(1e-12));
  CHECK(b == doctest::Approx(oracle::ref_mean_f(half, gt, false)).epsilon(1e-12));
  CHECK(a != b);
}

TEST_CASE("E-measure of the complement on a balanced mask is zero") {
  Plane gt(4, 4);
  for (int i = 0; i < 8; ++i) gt.values[i] = 1;
  CHECK(e_measure(complement(gt), gt) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("flip and complement properties") {
  std::mt19937_64 rng(77);
  for (int i = 0; i < 50; ++i) {
    const Plane gt = oracle::random_mask(8, 9, 0.3, rng);
    const Plane pred = oracle::random_plane(8, 9, rng);
    const auto a = evaluate_pair(pred, gt);
    const auto b = evaluate_pair(flipped(pred), flipped(gt));
    CHECK(a.mae == doctest::Approx(b.mae).epsilon(1e-12));
    CHECK(a.f_w == doctest::Approx(b.f_w).epsilon(1e-12));
    CHECK(a.f_m == doctest::Approx(b.f_m).epsilon(1e-12));
    CHECK(a.e_m == doctest::Approx(b.e_m).epsilon(1e-12));
    CHECK(mae(pred, gt) == doctest::Approx(mae(complement(pred), complement(gt))).epsilon(1e-12));
    for (double v : {a.s_alpha, a.f_w, a.f_m, a.e_m, a.mae}) {
      CHECK(v >= 0);
      CHECK(v <= 1);
    }
  }
}

TEST_CASE("nearest foreground matches brute force") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const int h = 3 + trial % 6, w = 2 + trial % 7;
    const Plane gt = oracle::random_mask(h, w, 0.2, rng);
    const Plane val = oracle::random_plane(h, w, rng);
    std::vector<bool> fg(gt.size());
    for (std::size_t i = 0; i < fg.size(); ++i) fg[i] = gt.values[i] == 1;
    const auto nf = nearest_foreground(fg, h, w, val);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double best = std::numeric_limits<double>::infinity(), v = 0;
        for (int yy = 0; yy < h; ++yy)
          for (int xx = 0; xx < w; ++xx) {
            if (!fg[static_cast<std::size_t>(yy) * w + xx]) continue;
            const double d = (yy - y) * (yy - y) + (xx - x) * (xx - x);
            if (d < best) {
              best = d;
              v = val.at(yy, xx);
            } else if (d == best) {
              v = std::max(v, val.at(yy, xx));
            }
          }
        CHECK(nf.dist2.at(y, x) == best);
        if (std::isfinite(best)) CHECK(nf.value.at(y, x) == v);
      }
  }
}

TEST_CASE("dataset evaluation") {
  test::TempDir dir;
  const auto pred = dir.path() / "pred", gt = dir.path() / "gt";
  std::filesystem::create_directories(pred);
  std::filesystem::create_directories(gt);
  // Two images with MAE 0.1 and 0.3 against an all-zero ground truth; 0.2
  // and 0.6 are exact 8-bit levels (51 and 153).
  Tensor<float> zero({1, 2, 2}, 0.0f);
  Tensor<float> a({1, 2, 2}, std::vector<float>{0.2f, 0.0f, 0.2f, 0.0f});
  Tensor<float> b({1, 2, 2}, std::vector<float>{0.6f, 0.6f, 0.0f, 0.0f});
  write_image(gt / "a.png", zero);
  write_image(gt / "b.png", zero);
  write_image(gt / "c.png", zero);
  write_image(pred / "a.png", a);
  write_image(pred / "b.png", b);
  write_image(pred / "z.png", b);
  const auto report = evaluate_dataset(pred, gt);
  REQUIRE(report.names == std::vector<std::string>{"a", "b"});
  CHECK(report.per_image[0].mae == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(report.per_image[1].mae == doctest::Approx(0.3).epsilon(1e-6));
  CHECK(report.mean.mae == doctest::Approx(0.2).epsilon(1e-6));
  CHECK(report.unmatched.size() == 2);

  const auto single = evaluate_dataset(pred, gt, {}, {"b"});
  REQUIRE(single.per_image.size() == 1);
  CHECK(single.mean.mae == single.per_image[0].mae);
  CHECK(single.mean.s_alpha == single.per_image[0].s_alpha);

  const auto self = evaluate_dataset(gt, gt);
  CHECK(self.mean.mae == 0.0);
  CHECK(self.mean.s_alpha > 1 - 1e-6);

  write_report_csv(dir.path() / "r.csv", report);
  write_report_json(dir.path() / "r.json", report);
  CHECK(test::read_text(dir.path() / "r.csv").rfind("image,s_alpha,f_w,f_m,e_m,mae\n", 0) == 0);
  CHECK(test::read_text(dir.path() / "r.csv").find("MEAN,") != std::string::npos);
  CHECK(test::read_text(dir.path() / "r.json").find("\"mae\"") != std::string::npos);

  CHECK_THROWS_AS(evaluate_dataset(pred, gt, {}, {"nothing"}), IoError);
  write_image(pred / "c.png", Tensor<float>({1, 3, 2}, 0.0f));
  CHECK_THROWS_AS(evaluate_dataset(pred, gt), ShapeError);
}
