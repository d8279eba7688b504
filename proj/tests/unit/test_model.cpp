#include <doctest.h>

#include <random>

#include "diffcod/model.hpp"
#include "support/oracles.hpp"
#include "support/toy_model.hpp"

using namespace diffcod;
using ag::Var;

namespace {

Var<double> random_image(int n, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  Tensor<double> t({n, 3, size, size});
  for (auto& v : t.span()) v = u(rng);
  return Var<double>(t);
}

}  // namespace

TEST_CASE("toy encoder pyramid strides") {
  nn::ParameterStore<double> store;
  std::mt19937_64 rng(1);
  ConditioningConfig c;
  const auto enc = make_encoder<double>(c, store, rng, "encoder");
  const auto pyr = extract_features(random_image(2, 64, 1), *enc);
  CHECK(pyr.x1.shape() == Shape{2, 32, 8, 8});
  CHECK(pyr.x2.shape() == Shape{2, 48, 4, 4});
  CHECK(pyr.x3.shape() == Shape{2, 64, 2, 2});
  CHECK(enc->name() == "toy");
  CHECK_THROWS_AS(extract_features(random_image(1, 48, 1), *enc), ShapeError);
  c.encoder = "pvt_v2_b4";
  CHECK_THROWS_AS(make_encoder<double>(c, store, rng, "other"), ConfigError);
}

TEST_CASE("feature fusion output and static mask") {
  for (bool use_ff : {true, false}) {
    nn::ParameterStore<double> store;
    std::mt19937_64 rng(2);
    ConditioningConfig c;
    c.use_ff = use_ff;
    const auto enc = make_encoder<double>(c, store, rng, "encoder");
    const std::size_t before = store.entries().size();
    FeatureFusion<double> ff(store, rng, "fusion", enc->channels(), c);
    const std::size_t fusion_params = store.entries().size() - before;
    CHECK(fusion_params == (use_ff ? 14u : 2u));
    const auto f = ff(extract_features(random_image(2, 64, 3), *enc));
    CHECK(f.f.shape() == Shape{2, 64, 2, 2});
    StaticMaskHead<double> head(store, rng, "static_head", 64);
    const auto m = head(f, 64, 64);
    CHECK(m.shape() == Shape{2, 1, 64, 64});
    for (double v : m.value().span()) {
      CHECK(v > 0);
      CHECK(v < 1);
    }
  }
}

TEST_CASE("sinusoidal embedding") {
  const auto e = sinusoidal_embedding<double>({0, 7}, 8);
  REQUIRE(e.shape() == Shape{2, 8});
  for (int i = 0; i < 4; ++i) {
    CHECK(e[i] == 0.0);
    CHECK(e[4 + i] == 1.0);
    const double freq = std::pow(10000.0, -i / 4.0);
    CHECK(e[8 + i] == doctest::Approx(std::sin(7 * freq)).epsilon(1e-12));
    CHECK(e[12 + i] == doctest::Approx(std::cos(7 * freq)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(sinusoidal_embedding<double>({1}, 3), ConfigError);
}

TEST_CASE("res block group divisibility") {
  nn::ParameterStore<double> store;
  std::mt19937_64 rng(4);
  CHECK_THROWS_AS(ResBlock<double>(store, rng, "rb", 12, 16, 8, 8), ConfigError);
}

TEST_CASE("denoiser output contract and zero-initialized head") {
  DiffCodModel<double> model(toy::config());
  const auto img = random_image(2, 32, 5);
  Tensor<double> yt({2, 1, 32, 32}, 0.3);
  const auto f = model.condition(img);
  const auto out = model.denoise(img, Var<double>(yt), {1, 500}, f);
  CHECK(out.eps.shape() == Shape{2, 1, 32, 32});
  CHECK(out.v.shape() == Shape{2, 1, 32, 32});
  for (double v : out.eps.value().span()) CHECK(v == 0.0);
  for (double v : out.v.value().span()) CHECK(v == 0.5);
}

TEST_CASE("injection variants") {
  const auto img = random_image(1, 32, 6);
  Tensor<double> yt({1, 1, 32, 32}, -0.2);
  {
    DiffCodModel<double> model(toy::config(false));
    const auto f = model.condition(img);
    const auto state = model.denoiser().encode(img, Var<double>(yt), {3});
    const auto fused = model.denoiser().inject(state.bottleneck, f);
    CHECK(fused.value().storage() == state.bottleneck.value().storage());
    for (const auto& [name, var] : model.parameters().entries()) {
      CHECK(name.find("iam") == std::string::npos);
    }
  }
  {
    DiffCodModel<double> model(toy::config(true));
    const auto f = model.condition(img);
    const auto state = model.denoiser().encode(img, Var<double>(yt), {3});
    const auto fused = model.denoiser().inject(state.bottleneck, f);
    const auto o = iam_forward(TokenizedFeature<double>::from_map(state.bottleneck),
                               TokenizedFeature<double>::from_map(f.f), model.denoiser().iam())
                       .output.to_map();
    REQUIRE(fused.shape() == state.bottleneck.shape());
    for (std::size_t i = 0; i < o.value().size(); ++i) {
      CHECK(fused.value()[i] == doctest::Approx(state.bottleneck.value()[i] + o.value()[i]));
    }
  }
}

TEST_CASE("model construction is seed-deterministic") {
  DiffCodModel<double> a(toy::config()), b(toy::config());
  auto cfg = toy::config();
  cfg.init_seed = 6;
  DiffCodModel<double> c(cfg);
  const auto& ea = a.parameters().entries();
  const auto& eb = b.parameters().entries();
  const auto& ec = c.parameters().entries();
  REQUIRE(ea.size() == eb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < ea.size(); ++i) {
    CHECK(ea[i].first == eb[i].first);
    CHECK(ea[i].second.value().storage() == eb[i].second.value().storage());
    if (ea[i].second.value().storage() != ec[i].second.value().storage()) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("model config key-value round trip") {
  auto m = toy::config(false, false);
  m.denoiser.iam_transpose = true;
  const auto back = model_config_from(to_key_values(m));
  CHECK(back.conditioning.encoder_widths == m.conditioning.encoder_widths);
  CHECK(back.conditioning.cond_width == 8);
  CHECK(back.conditioning.use_ff == false);
  CHECK(back.denoiser.widths == m.denoiser.widths);
  CHECK(back.denoiser.use_iam == false);
  CHECK(back.denoiser.iam_transpose == true);
  CHECK(back.denoiser.bottleneck_width == 8);
  CHECK(back.init_seed == 5);
  CHECK_THROWS_AS(model_config_from({{"unet_widths", "8,8"}}), ConfigError);
}

TEST_CASE("conditioning counter") {
  DiffCodModel<double> model(toy::config());
  CHECK(model.conditioning_evaluations() == 0);
  model.condition(random_image(1, 32, 7));
  model.condition(random_image(1, 32, 7));
  CHECK(model.conditioning_evaluations() == 2);
  model.reset_conditioning_counter();
  CHECK(model.conditioning_evaluations() == 0);
}

TEST_CASE("full objective gradients match finite differences") {
  DiffCodModel<double> model(toy::config());
  toy::randomize_output_conv(model, 11);
  const auto s = make_linear_schedule(1000);
  const auto b = toy::batch(2, 32, s, 12);
  ObjectiveOptions opt;
  opt.detach_vlb_mean = false;
  opt.lambda_vlb = 1.0;  // make the vlb path visible in the check
  const auto vars = model.parameters().vars();
  std::vector<std::pair<std::size_t, std::size_t>> entries;
  std::mt19937_64 rng(13);
  for (std::size_t p = 0; p < vars.size(); ++p) {
    const std::size_t n = vars[p].value().size();
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    entries.emplace_back(p, pick(rng));
  }
  const auto r = oracle::finite_difference(
      [&] { return toy::objective(model, b, s, opt).total; }, vars, entries);
  CHECK(r.checked == static_cast<int>(vars.size()));
  CHECK(r.max_scaled_error < 1e-5);
}
