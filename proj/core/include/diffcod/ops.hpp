#pragma once

#include <vector>

#include "diffcod/autograd.hpp"

// Differentiable operations over Var<T>. Image tensors are NCHW; token
// tensors are [batch, tokens, width]. Scalars are single-element tensors.
namespace diffcod::ag {

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& x, T factor);

/// y[b, ...] = factor[b] * x[b, ...] + shift[b]; the coefficients are constants.
template <typename T>
Var<T> affine_per_batch(const Var<T>& x, const std::vector<double>& factor,
                        const std::vector<double>& shift);

template <typename T> Var<T> silu(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);
template <typename T> Var<T> clamp(const Var<T>& x, T lo, T hi);

/// Same value, no gradient path.
template <typename T> Var<T> detach(const Var<T>& x);

/// 2-D convolution with square kernel; `bias` may be undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad);

template <typename T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int groups,
                  T eps = T(1e-5));

/// x[N, in] -> x * W^T + b with W[out, in].
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// x[N, C, H, W] + v[N, C] broadcast over the spatial axes.
template <typename T> Var<T> add_channel_vector(const Var<T>& x, const Var<T>& v);

template <typename T> Var<T> concat_channels(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> slice_channels(const Var<T>& x, int begin, int count);

template <typename T> Var<T> upsample_nearest2x(const Var<T>& x);

/// Bilinear resize with half-pixel centers (align_corners = false).
template <typename T> Var<T> resize_bilinear(const Var<T>& x, int out_h, int out_w);

/// [B, C, H, W] -> [B, H*W, C] and back.
template <typename T> Var<T> to_tokens(const Var<T>& x);
template <typename T> Var<T> from_tokens(const Var<T>& tokens, int height, int width);

/// tokens[B, N, d] * W[d, e] -> [B, N, e].
template <typename T> Var<T> project_tokens(const Var<T>& tokens, const Var<T>& weight);

/// Batched a[B, M, K] * b[B, K, N].
template <typename T> Var<T> bmm(const Var<T>& a, const Var<T>& b);
/// Batched a[B, M, K] * b[B, N, K]^T.
template <typename T> Var<T> bmm_nt(const Var<T>& a, const Var<T>& b);

/// Softmax along the last axis.
template <typename T> Var<T> softmax_lastdim(const Var<T>& x);

template <typename T> Var<T> mean_all(const Var<T>& x);
template <typename T> Var<T> mse(const Var<T>& a, const Var<T>& b);

/// Per-element variational bound terms for a Gaussian reverse step. Batch
/// elements flagged in `first_step` use the discretized decoder NLL against
/// `y0`; the rest use KL(true || model). Gradients flow to `mean` and
/// `log_variance`.
template <typename T>
Var<T> gaussian_vlb(const Var<T>& mean, const Var<T>& log_variance, const Tensor<T>& true_mean,
                    const Tensor<T>& true_log_variance, const Tensor<T>& y0,
                    const std::vector<bool>& first_step);

}  // namespace diffcod::ag
