#include <doctest.h>

#include <filesystem>
#include <random>
#include <set>

#include "diffcod/augment.hpp"
#include "diffcod/checkpoint.hpp"
#include "diffcod/image_io.hpp"
#include "diffcod/keyvalue.hpp"
#include "diffcod/synth.hpp"
#include "support/tempdir.hpp"

using namespace diffcod;
namespace fs = std::filesystem;

TEST_CASE("png round trip of a binary mask") {
  test::TempDir dir;
  Tensor<float> mask({1, 5, 7});
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = (i * 7 % 3 == 0) ? 1.0f : 0.0f;
  write_image(dir.path() / "m.png", mask);
  const auto back = read_mask(dir.path() / "m.png");
  CHECK(back.shape() == mask.shape());
  CHECK(back.storage() == mask.storage());
  Tensor<float> rgb({3, 4, 6});
  for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = static_cast<float>(i % 256) / 255.0f;
  write_image(dir.path() / "i.png", rgb);
  const auto img = read_image(dir.path() / "i.png");
  REQUIRE(img.shape() == rgb.shape());
  for (std::size_t i = 0; i < rgb.size(); ++i) CHECK(img[i] == doctest::Approx(rgb[i]).epsilon(1e-6));
}

TEST_CASE("mask binarization threshold is 128") {
  test::TempDir dir;
  Raster8 r{1, 4, 1, {0, 127, 128, 255}};
  write_png(dir.path() / "g.png", r);
  const auto m = read_mask(dir.path() / "g.png");
  CHECK(m[0] == 0.0f);
  CHECK(m[1] == 0.0f);
  CHECK(m[2] == 1.0f);
  CHECK(m[3] == 1.0f);
  const auto g = read_gray(dir.path() / "g.png");
  CHECK(g[1] == doctest::Approx(127.0 / 255));
}

TEST_CASE("corrupt and missing files are io errors") {
  test::TempDir dir;
  test::write_text(dir.path() / "bad.png", "\x89PNG\r\n\x1a\n garbage");
  test::write_text(dir.path() / "bad.jpg", "not a jpeg");
  CHECK_THROWS_AS(read_image(dir.path() / "bad.png"), IoError);
  CHECK_THROWS_AS(read_image(dir.path() / "bad.jpg"), IoError);
  CHECK_THROWS_AS(read_image(dir.path() / "absent.png"), IoError);
}

TEST_CASE("dataset resolution") {
  test::TempDir dir;
  fs::create_directories(dir.path() / "Imgs");
  fs::create_directories(dir.path() / "GT");
  write_image(dir.path() / "Imgs" / "a.png", Tensor<float>({3, 4, 4}, 0.5f));
  write_image(dir.path() / "GT" / "a.png", Tensor<float>({1, 4, 4}, 1.0f));
  write_image(dir.path() / "Imgs" / "b.png", Tensor<float>({3, 4, 4}, 0.5f));
  write_image(dir.path() / "GT" / "b.png", Tensor<float>({1, 4, 5}, 1.0f));
  write_image(dir.path() / "Imgs" / "c.png", Tensor<float>({3, 4, 4}, 0.5f));

  SUBCASE("manifest stems resolve in order") {
    write_manifest(dir.path() / "m.txt", {"a"});
    const auto spec = DatasetSpec::open(dir.path(), "m.txt");
    CHECK(spec.stems == std::vector<std::string>{"a"});
    const auto pair = load_pair(spec, "a");
    CHECK(pair.image.shape() == Shape{3, 4, 4});
    CHECK(pair.mask[0] == 1.0f);
  }
  SUBCASE("missing ground truth names the stem") {
    write_manifest(dir.path() / "m.txt", {"a", "c"});
    try {
      DatasetSpec::open(dir.path(), dir.path() / "m.txt");
      FAIL("expected an error");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("'c'") != std::string::npos);
    }
  }
  SUBCASE("size mismatch") {
    write_manifest(dir.path() / "m.txt", {"b"});
    const auto spec = DatasetSpec::open(dir.path(), dir.path() / "m.txt");
    CHECK_THROWS_AS(load_pair(spec, "b"), IoError);
  }
  SUBCASE("ambiguous stem") {
    write_image(dir.path() / "Imgs" / "a.jpg", Tensor<float>({3, 4, 4}, 0.5f));
    write_manifest(dir.path() / "m.txt", {"a"});
    CHECK_THROWS_AS(DatasetSpec::open(dir.path(), dir.path() / "m.txt"), IoError);
  }
  CHECK_THROWS_AS(DatasetSpec::open(dir.path() / "nowhere"), IoError);
}

TEST_CASE("synthetic generator statistics") {
  SynthConfig cfg;
  int in_range = 0;
  for (int i = 0; i < 100; ++i) {
    const auto p = generate_pair(cfg, i);
    double fg = 0;
    for (float v : p.mask.span()) {
      CHECK((v == 0.0f || v == 1.0f));
      fg += v;
    }
    const double frac = fg / static_cast<double>(p.mask.size());
    in_range += frac >= 0.02 && frac <= 0.5;
    for (float v : p.image.span()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  CHECK(in_range == 100);
}

TEST_CASE("maximal contrast separates object from background") {
  SynthConfig cfg;
  cfg.contrast = 1.0;
  for (int i = 0; i < 10; ++i) {
    const auto p = generate_pair(cfg, i);
    const std::size_t n = p.mask.size();
    for (int c = 0; c < 3; ++c) {
      float fg_min = 2, bg_max = -1;
      for (std::size_t k = 0; k < n; ++k) {
        const float v = p.image[c * n + k];
        if (p.mask[k] > 0.5f) fg_min = std::min(fg_min, v);
        else bg_max = std::max(bg_max, v);
      }
      CHECK(fg_min > bg_max);
    }
  }
}

TEST_CASE("synthetic dataset is byte-reproducible") {
  test::TempDir a, b, c;
  SynthConfig cfg;
  cfg.count = 12;
  const auto sa = generate_synthetic(cfg, a.path());
  generate_synthetic(cfg, b.path());
  cfg.seed = 8;
  generate_synthetic(cfg, c.path());
  CHECK(sa.stems.size() == 12);
  CHECK(read_manifest(a.path() / "train.txt").size() == 11);
  CHECK(read_manifest(a.path() / "test.txt").size() == 1);
  bool differs = false;
  for (const auto& stem : sa.stems) {
    for (const char* sub : {"Imgs", "GT"}) {
      const auto rel = fs::path(sub) / (stem + ".png");
      CHECK(test::read_text(a.path() / rel) == test::read_text(b.path() / rel));
      differs = differs || test::read_text(a.path() / rel) != test::read_text(c.path() / rel);
    }
  }
  CHECK(differs);
  cfg.image_size = 48;
  CHECK_THROWS_AS(generate_synthetic(cfg, c.path()), ConfigError);
  cfg.image_size = 64;
  cfg.contrast = 0;
  CHECK_THROWS_AS(generate_synthetic(cfg, c.path()), ConfigError);
}

TEST_CASE("value noise is bounded and seeded") {
  const auto a = value_noise(32, 4, 4.0, 3);
  CHECK(a == value_noise(32, 4, 4.0, 3));
  CHECK(a != value_noise(32, 4, 4.0, 4));
  CHECK(*std::min_element(a.begin(), a.end()) >= 0.0);
  CHECK(*std::max_element(a.begin(), a.end()) <= 1.0);
}

namespace {

ImageMaskPair block_pair(int h, int w) {
  ImageMaskPair p{Tensor<float>({3, h, w}), Tensor<float>({1, h, w})};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float m = (x < w / 3 && y > h / 4) ? 1.0f : 0.0f;
      p.mask[static_cast<std::size_t>(y) * w + x] = m;
      p.image[static_cast<std::size_t>(y) * w + x] = m;
      p.image[static_cast<std::size_t>(h * w + y * w + x)] = static_cast<float>(x) / w;
      p.image[static_cast<std::size_t>(2 * h * w + y * w + x)] = 0.5f;
    }
  return p;
}

}  // namespace

TEST_CASE("augmentation with every switch off only resizes") {
  AugmentConfig cfg{false, false, false, 0.8, 0.2, 64};
  const auto p = block_pair(64, 64);
  std::mt19937_64 rng(1);
  const auto out = augment(p, rng, cfg);
  CHECK(out.image.storage() == p.image.storage());
  CHECK(out.mask.storage() == p.mask.storage());
  cfg.image_size = 32;
  const auto small = augment(p, rng, cfg);
  CHECK(small.image.shape() == Shape{3, 32, 32});
  CHECK(small.mask.shape() == Shape{1, 32, 32});
}

TEST_CASE("flip mirrors image and mask together") {
  AugmentConfig cfg{true, false, false, 0.8, 0.2, 64};
  const auto p = block_pair(64, 64);
  int flipped = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const auto out = augment(p, rng, cfg);
    const bool is_flipped = out.mask.storage() != p.mask.storage();
    flipped += is_flipped;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const int sx = is_flipped ? 63 - x : x;
        CHECK(out.mask[static_cast<std::size_t>(y) * 64 + x] == p.mask[static_cast<std::size_t>(y) * 64 + sx]);
        CHECK(out.image[static_cast<std::size_t>(64 * 64 + y * 64 + x)] ==
              p.image[static_cast<std::size_t>(64 * 64 + y * 64 + sx)]);
      }
  }
  CHECK(flipped > 0);
  CHECK(flipped < 20);
}

TEST_CASE("crop keeps the mask binary and aligned") {
  AugmentConfig cfg{true, true, false, 0.6, 0.2, 64};
  const auto p = block_pair(80, 96);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const auto out = augment(p, rng, cfg);
    REQUIRE(out.mask.shape() == Shape{1, 64, 64});
    int agree = 0;
    for (std::size_t i = 0; i < out.mask.size(); ++i) {
      const float m = out.mask[i];
      CHECK((m == 0.0f || m == 1.0f));
      agree += (out.image[i] > 0.5f) == (m > 0.5f);
    }
    CHECK(agree > static_cast<int>(0.9 * out.mask.size()));
  }
}

TEST_CASE("augmentation rejects misaligned pairs") {
  ImageMaskPair bad{Tensor<float>({3, 8, 8}), Tensor<float>({1, 8, 9})};
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(augment(bad, rng, AugmentConfig{}), ShapeError);
}

TEST_CASE("checkpoint round trip") {
  test::TempDir dir;
  Checkpoint c;
  c.step = 42;
  c.config = {{"T", "1000"}, {"seed", "7"}};
  c.tensors.emplace_back("w", Tensor<float>({2, 3}, std::vector<float>{1, 2, 3, 4, 5, -6.5f}));
  c.tensors.emplace_back("b", Tensor<float>({1}, 0.25f));
  save_checkpoint(dir.path() / "c.ckpt", c);
  const auto back = load_checkpoint(dir.path() / "c.ckpt");
  CHECK(back.version == kCheckpointFormatVersion);
  CHECK(back.step == 42);
  CHECK(back.config == c.config);
  REQUIRE(back.tensors.size() == 2);
  CHECK(back.find("w")->storage() == c.tensors[0].second.storage());
  CHECK(back.find("w")->shape() == Shape{2, 3});
  CHECK(back.find("nope") == nullptr);

  auto bytes = test::read_text(dir.path() / "c.ckpt");
  test::write_text(dir.path() / "trunc.ckpt", bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "trunc.ckpt"), IoError);
  bytes[0] = 'X';
  test::write_text(dir.path() / "magic.ckpt", bytes);
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "magic.ckpt"), IoError);
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "absent.ckpt"), IoError);
  save_checkpoint(dir.path() / "nested" / "dir" / "c.ckpt", c);
  CHECK(load_checkpoint(dir.path() / "nested" / "dir" / "c.ckpt").step == 42);
  CHECK_THROWS_AS(save_checkpoint(dir.path() / "c.ckpt" / "inner.ckpt", c), IoError);
}

TEST_CASE("key-value text") {
  const auto kv = parse_key_values("# comment\n a = 1 \n\nb=x y\n");
  CHECK(kv.at("a") == "1");
  CHECK(kv.at("b") == "x y");
  CHECK(parse_key_values(format_key_values(kv)) == kv);
  CHECK_THROWS_AS(parse_key_values("novalue\n"), ConfigError);
  CHECK(parse_integer("k", "12") == 12);
  CHECK(parse_real("k", "1e-4") == 1e-4);
  CHECK(parse_flag("k", "on"));
  CHECK_FALSE(parse_flag("k", "0"));
  CHECK(parse_int_list("k", "1,5, 10") == std::vector<int>{1, 5, 10});
  for (auto bad : {"1.5", "x", ""}) {
    try {
      parse_integer("batch_size", bad);
      FAIL("expected an error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("batch_size") != std::string::npos);
    }
  }
  CHECK_THROWS_AS(parse_flag("k", "maybe"), ConfigError);
  CHECK(std::stod(format_real(0.1)) == 0.1);
}
