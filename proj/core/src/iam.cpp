#include "diffcod/iam.hpp"

#include <cmath>

namespace diffcod {

template <typename T>
TokenizedFeature<T> TokenizedFeature<T>::from_map(const ag::Var<T>& map) {
  if (map.shape().size() != 4) throw ShapeError("expected [B, C, H, W], got " + to_string(map.shape()));
  return {ag::to_tokens(map), map.shape()[2], map.shape()[3]};
}

template <typename T>
ag::Var<T> TokenizedFeature<T>::to_map() const {
  return ag::from_tokens(tokens, height, width);
}

template <typename T>
IAMParameters<T> IAMParameters<T>::create(nn::ParameterStore<T>& store, std::mt19937_64& rng,
                                          const std::string& prefix, int width) {
  if (width < 1) throw ConfigError("IAM width must be positive");
  auto make = [&](const char* name) {
    return store.add(prefix + "." + name, nn::fan_in_uniform<T>({width, width}, width, rng));
  };
  IAMParameters p;
  p.wq_d = make("wq_d");
  p.wk_d = make("wk_d");
  p.wv_d = make("wv_d");
  p.wp_f = make("wp_f");
  p.wv_f = make("wv_f");
  return p;
}

template <typename T>
IAMResult<T> iam_forward(const TokenizedFeature<T>& d, const TokenizedFeature<T>& f,
                         const IAMParameters<T>& params, bool transpose_m2) {
  const Shape& ds = d.tokens.shape();
  const Shape& fs = f.tokens.shape();
  if (ds.size() != 3 || ds != fs) {
    throw ShapeError("IAM inputs must share [B, N, d]: " + to_string(ds) + " vs " + to_string(fs));
  }
  if (ds[2] != params.width()) {
    throw ShapeError("IAM width " + std::to_string(params.width()) + " does not match tokens " +
                     to_string(ds));
  }
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(ds[2]));
  const auto q = ag::project_tokens(d.tokens, params.wq_d);
  const auto k = ag::project_tokens(d.tokens, params.wk_d);
  const auto v = ag::project_tokens(d.tokens, params.wv_d);
  const auto p = ag::project_tokens(f.tokens, params.wp_f);
  const auto vf = ag::project_tokens(f.tokens, params.wv_f);

  const auto m1 = ag::softmax_lastdim(ag::scale(ag::bmm_nt(q, p), inv_sqrt_d));
  const auto m2 = ag::softmax_lastdim(ag::scale(ag::bmm_nt(k, p), inv_sqrt_d));
  const auto values = ag::add(v, vf);
  const auto mixed = transpose_m2 ? ag::bmm(ag::bmm_nt(m1, m2), values)
                                  : ag::bmm(m1, ag::bmm(m2, values));
  return {{mixed, d.height, d.width}, m1, m2};
}

#define DIFFCOD_INSTANTIATE_IAM(T)                                                        \
  template struct TokenizedFeature<T>;                                                    \
  template struct IAMParameters<T>;                                                       \
  template IAMResult<T> iam_forward(const TokenizedFeature<T>&, const TokenizedFeature<T>&, \
                                    const IAMParameters<T>&, bool);

DIFFCOD_INSTANTIATE_IAM(float)
DIFFCOD_INSTANTIATE_IAM(double)

#undef DIFFCOD_INSTANTIATE_IAM

}  // namespace diffcod
