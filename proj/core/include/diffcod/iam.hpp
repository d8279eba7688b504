#pragma once

#include <random>
#include <string>

#include "diffcod/nn.hpp"

namespace diffcod {

/// Feature map flattened to [B, N, d] tokens, N = height * width.
template <typename T>
struct TokenizedFeature {
  ag::Var<T> tokens;
  int height = 0;
  int width = 0;

  static TokenizedFeature from_map(const ag::Var<T>& map);
  ag::Var<T> to_map() const;
  int num_tokens() const { return height * width; }
  int channels() const { return tokens.shape().back(); }
};

/// Five bias-free d x d projections. Tokens are row vectors, so a projection
/// is tokens * W.
template <typename T>
struct IAMParameters {
  ag::Var<T> wq_d;
  ag::Var<T> wk_d;
  ag::Var<T> wv_d;
  ag::Var<T> wp_f;
  ag::Var<T> wv_f;

  static IAMParameters create(nn::ParameterStore<T>& store, std::mt19937_64& rng,
                              const std::string& prefix, int width);
  int width() const { return wq_d.shape()[0]; }
};

template <typename T>
struct IAMResult {
  TokenizedFeature<T> output;
  ag::Var<T> m1;  // [B, N, N]
  ag::Var<T> m2;  // [B, N, N]
};

/// O = M1 * M2 * (V_D + V_F) with M1 = softmax(Q_D P_F^T / sqrt(d)) and
/// M2 = softmax(K_D P_F^T / sqrt(d)). `transpose_m2` swaps in M1 * M2^T.
template <typename T>
IAMResult<T> iam_forward(const TokenizedFeature<T>& d, const TokenizedFeature<T>& f,
                         const IAMParameters<T>& params, bool transpose_m2 = false);

}  // namespace diffcod
