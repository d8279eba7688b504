#include "diffcod/augment.hpp"

#include <algorithm>
#include <cmath>

namespace diffcod {

namespace {

Tensor<float> crop(const Tensor<float>& chw, int top, int left, int height, int width) {
  const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  Tensor<float> out({c, height, width});
  for (int k = 0; k < c; ++k)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        out[(static_cast<std::size_t>(k) * height + y) * width + x] =
            chw[(static_cast<std::size_t>(k) * h + top + y) * w + left + x];
  return out;
}

void flip_horizontal(Tensor<float>& chw) {
  const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  for (int k = 0; k < c; ++k)
    for (int y = 0; y < h; ++y) {
      float* row = chw.data() + (static_cast<std::size_t>(k) * h + y) * w;
      std::reverse(row, row + w);
    }
}

void jitter_colors(Tensor<float>& chw, std::mt19937_64& rng, double j) {
  std::uniform_real_distribution<double> factor(1.0 - j, 1.0 + j);
  const double brightness = factor(rng);
  const double contrast = factor(rng);
  const double saturation = factor(rng);
  const std::size_t n = chw.size() / 3;
  float* r = chw.data();
  float* g = r + n;
  float* b = g + n;
  auto luma = [&](std::size_t i) { return 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]; };

  for (auto& v : chw.span()) v = static_cast<float>(std::clamp(v * brightness, 0.0, 1.0));
  double mean = 0;
  for (std::size_t i = 0; i < n; ++i) mean += luma(i);
  mean /= static_cast<double>(n);
  for (auto& v : chw.span()) {
    v = static_cast<float>(std::clamp(mean + (v - mean) * contrast, 0.0, 1.0));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double gray = luma(i);
    for (float* ch : {r, g, b}) {
      ch[i] = static_cast<float>(std::clamp(gray + (ch[i] - gray) * saturation, 0.0, 1.0));
    }
  }
}

}  // namespace

Tensor<float> resize_bilinear(const Tensor<float>& chw, int height, int width) {
  const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  if (h == height && w == width) return chw;
  auto taps = [](int in, int out, int i, int& i0, int& i1, double& frac) {
    const double src = std::max(0.0, (i + 0.5) * in / out - 0.5);
    i0 = std::min(static_cast<int>(src), in - 1);
    i1 = std::min(i0 + 1, in - 1);
    frac = src - i0;
  };
  Tensor<float> out({c, height, width});
  for (int y = 0; y < height; ++y) {
    int y0, y1;
    double fy;
    taps(h, height, y, y0, y1, fy);
    for (int x = 0; x < width; ++x) {
      int x0, x1;
      double fx;
      taps(w, width, x, x0, x1, fx);
      for (int k = 0; k < c; ++k) {
        auto at = [&](int yy, int xx) {
          return static_cast<double>(chw[(static_cast<std::size_t>(k) * h + yy) * w + xx]);
        };
        const double top = at(y0, x0) + fx * (at(y0, x1) - at(y0, x0));
        const double bottom = at(y1, x0) + fx * (at(y1, x1) - at(y1, x0));
        out[(static_cast<std::size_t>(k) * height + y) * width + x] =
            static_cast<float>(top + fy * (bottom - top));
      }
    }
  }
  return out;
}

Tensor<float> resize_nearest(const Tensor<float>& chw, int height, int width) {
  const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  if (h == height && w == width) return chw;
  Tensor<float> out({c, height, width});
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(static_cast<int>((y + 0.5) * h / height), h - 1);
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(static_cast<int>((x + 0.5) * w / width), w - 1);
      for (int k = 0; k < c; ++k) {
        out[(static_cast<std::size_t>(k) * height + y) * width + x] =
            chw[(static_cast<std::size_t>(k) * h + sy) * w + sx];
      }
    }
  }
  return out;
}

ImageMaskPair augment(const ImageMaskPair& pair, std::mt19937_64& rng,
                      const AugmentConfig& config) {
  if (pair.image.dim(1) != pair.mask.dim(1) || pair.image.dim(2) != pair.mask.dim(2)) {
    throw ShapeError("augment: image " + to_string(pair.image.shape()) + " and mask " +
                     to_string(pair.mask.shape()) + " are not aligned");
  }
  ImageMaskPair out = pair;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (config.flip && unit(rng) < 0.5) {
    flip_horizontal(out.image);
    flip_horizontal(out.mask);
  }
  if (config.crop) {
    const int h = out.image.dim(1), w = out.image.dim(2);
    const double lo = config.crop_min_scale;
    const int ch = std::max(1, static_cast<int>(std::lround(h * (lo + (1 - lo) * unit(rng)))));
    const int cw = std::max(1, static_cast<int>(std::lround(w * (lo + (1 - lo) * unit(rng)))));
    std::uniform_int_distribution<int> top(0, h - ch), left(0, w - cw);
    const int y = top(rng), x = left(rng);
    out.image = crop(out.image, y, x, ch, cw);
    out.mask = crop(out.mask, y, x, ch, cw);
  }
  if (config.color_jitter && out.image.dim(0) == 3) jitter_colors(out.image, rng, config.jitter);
  out.image = resize_bilinear(out.image, config.image_size, config.image_size);
  out.mask = resize_nearest(out.mask, config.image_size, config.image_size);
  return out;
}

}  // namespace diffcod
