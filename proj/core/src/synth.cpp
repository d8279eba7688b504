#include "diffcod/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "diffcod/errors.hpp"
#include "diffcod/image_io.hpp"
#include "diffcod/random.hpp"

namespace diffcod {

namespace fs = std::filesystem;

namespace {

constexpr double kBoundaryWobble = 0.15;
constexpr double kMinFraction = 0.02;
constexpr double kMaxFraction = 0.5;

double smoothstep(double x) { return x * x * (3.0 - 2.0 * x); }

struct Blob {
  double cx, cy, ra, rb, angle;
  std::array<double, 3> amp, phase;
  std::array<int, 3> freq;

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (c * dx + s * dy) / ra;
    const double v = (-s * dx + c * dy) / rb;
    const double phi = std::atan2(v, u);
    double wobble = 1.0;
    for (int k = 0; k < 3; ++k) wobble += amp[k] * std::sin(freq[k] * phi + phase[k]);
    return u * u + v * v <= wobble * wobble;
  }
};

std::vector<Blob> draw_blobs(const SynthConfig& cfg, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> count(cfg.blob_min, cfg.blob_max);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double s = cfg.image_size;
  std::vector<Blob> blobs(static_cast<std::size_t>(count(rng)));
  for (auto& b : blobs) {
    b.ra = (cfg.radius_min + (cfg.radius_max - cfg.radius_min) * unit(rng)) * s;
    b.rb = (cfg.radius_min + (cfg.radius_max - cfg.radius_min) * unit(rng)) * s;
    b.angle = std::numbers::pi * unit(rng);
    double total = 0;
    for (int k = 0; k < 3; ++k) {
      b.amp[k] = unit(rng);
      total += b.amp[k];
      b.phase[k] = 2.0 * std::numbers::pi * unit(rng);
      b.freq[k] = 2 + k + static_cast<int>(3 * unit(rng));
    }
    for (auto& a : b.amp) a *= kBoundaryWobble / total;
    // Keep the whole (wobbled) outline inside the frame.
    const double reach = std::max(b.ra, b.rb) * (1.0 + kBoundaryWobble) + 1.0;
    const double lo = reach, hi = std::max(reach, s - reach);
    b.cx = lo + (hi - lo) * unit(rng);
    b.cy = lo + (hi - lo) * unit(rng);
  }
  return blobs;
}

}  // namespace

void SynthConfig::validate() const {
  if (count < 1) throw ConfigError("synth count must be at least 1");
  if (image_size < 32 || image_size % 32 != 0) {
    throw ConfigError("synth image_size must be a positive multiple of 32");
  }
  if (!(contrast > 0.0 && contrast <= 1.0)) throw ConfigError("contrast must be in (0, 1]");
  if (octaves < 1 || frequency <= 0) throw ConfigError("noise octaves and frequency must be positive");
  if (blob_min < 1 || blob_max < blob_min) throw ConfigError("invalid blob count range");
  if (!(radius_min > 0 && radius_min <= radius_max && radius_max < 0.5)) {
    throw ConfigError("invalid blob radius range");
  }
  if (!(test_fraction >= 0 && test_fraction < 1)) throw ConfigError("test_fraction must be in [0, 1)");
}

std::vector<double> value_noise(int size, int octaves, double frequency, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> out(static_cast<std::size_t>(size) * size, 0.0);
  double amplitude = 1.0, total = 0.0, freq = frequency;
  for (int o = 0; o < octaves; ++o) {
    const int cells = std::max(1, static_cast<int>(std::ceil(freq)));
    const int n = cells + 1;
    std::vector<double> lattice(static_cast<std::size_t>(n) * n);
    for (auto& v : lattice) v = unit(rng);
    for (int y = 0; y < size; ++y) {
      const double gy = (y + 0.5) / size * cells;
      const int y0 = std::min(static_cast<int>(gy), cells - 1);
      const double fy = smoothstep(gy - y0);
      for (int x = 0; x < size; ++x) {
        const double gx = (x + 0.5) / size * cells;
        const int x0 = std::min(static_cast<int>(gx), cells - 1);
        const double fx = smoothstep(gx - x0);
        auto at = [&](int yy, int xx) { return lattice[static_cast<std::size_t>(yy) * n + xx]; };
        const double top = at(y0, x0) + fx * (at(y0, x0 + 1) - at(y0, x0));
        const double bottom = at(y0 + 1, x0) + fx * (at(y0 + 1, x0 + 1) - at(y0 + 1, x0));
        out[static_cast<std::size_t>(y) * size + x] += amplitude * (top + fy * (bottom - top));
      }
    }
    total += amplitude;
    amplitude *= 0.5;
    freq *= 2.0;
  }
  for (auto& v : out) v /= total;
  return out;
}

ImageMaskPair generate_pair(const SynthConfig& cfg, int index) {
  cfg.validate();
  const int s = cfg.image_size;
  const std::size_t n = static_cast<std::size_t>(s) * s;
  std::mt19937_64 rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(index)}));

  std::vector<std::uint8_t> inside(n);
  for (int attempt = 0;; ++attempt) {
    const auto blobs = draw_blobs(cfg, rng);
    std::size_t fg = 0;
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        bool hit = false;
        for (const auto& b : blobs) hit = hit || b.contains(x + 0.5, y + 0.5);
        inside[static_cast<std::size_t>(y) * s + x] = hit;
        fg += hit;
      }
    }
    const double frac = static_cast<double>(fg) / static_cast<double>(n);
    if ((frac >= kMinFraction && frac <= kMaxFraction) || attempt >= 100) break;
  }

  const auto bg_noise = value_noise(s, cfg.octaves, cfg.frequency, rng());
  const auto fg_noise = value_noise(s, cfg.octaves, cfg.frequency, rng());
  // Per-image palette, monotone in intensity on every channel.
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::array<double, 3> lo{}, hi{};
  for (int c = 0; c < 3; ++c) {
    lo[c] = 0.35 * unit(rng);
    hi[c] = lo[c] + 0.5 + 0.15 * unit(rng);
  }

  ImageMaskPair pair{Tensor<float>({3, s, s}), Tensor<float>({1, s, s})};
  const double d = cfg.contrast;
  for (std::size_t i = 0; i < n; ++i) {
    const double level = inside[i] ? d + (1.0 - d) * fg_noise[i] : (1.0 - d) * bg_noise[i];
    pair.mask[i] = inside[i] ? 1.0f : 0.0f;
    for (int c = 0; c < 3; ++c) {
      pair.image[c * n + i] = static_cast<float>(lo[c] + (hi[c] - lo[c]) * level);
    }
  }
  return pair;
}

DatasetSpec generate_synthetic(const SynthConfig& cfg, const fs::path& out_root) {
  cfg.validate();
  DatasetSpec spec;
  spec.root = out_root;
  std::error_code ec;
  fs::create_directories(out_root / spec.image_dir, ec);
  fs::create_directories(out_root / spec.gt_dir, ec);
  if (ec || !fs::is_directory(out_root / spec.gt_dir)) {
    throw IoError("cannot create dataset directories under " + out_root.string());
  }
  const int test_count = static_cast<int>(std::lround(cfg.count * cfg.test_fraction));
  std::vector<std::string> train, test;
  for (int i = 0; i < cfg.count; ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "synth_%05d", i);
    const auto pair = generate_pair(cfg, i);
    write_image(out_root / spec.image_dir / (std::string(stem) + ".png"), pair.image);
    write_image(out_root / spec.gt_dir / (std::string(stem) + ".png"), pair.mask);
    (i < cfg.count - test_count ? train : test).push_back(stem);
    spec.stems.push_back(stem);
  }
  write_manifest(out_root / "train.txt", train);
  write_manifest(out_root / "test.txt", test);
  return spec;
}

}  // namespace diffcod
