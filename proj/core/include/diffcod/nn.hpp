#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "diffcod/ops.hpp"

namespace diffcod::nn {

/// Ordered, named collection of trainable tensors. Registration order is the
/// serialization order and the order parameters are initialized in.
template <typename T>
class ParameterStore {
 public:
  ag::Var<T> add(const std::string& name, Tensor<T> init);
  ag::Var<T> get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::pair<std::string, ag::Var<T>>>& entries() const { return entries_; }
  std::vector<ag::Var<T>> vars() const;
  std::size_t total_size() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, ag::Var<T>>> entries_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
template <typename T>
Tensor<T> fan_in_uniform(const Shape& shape, int fan_in, std::mt19937_64& rng);

template <typename T>
struct Conv2d {
  ag::Var<T> weight;
  ag::Var<T> bias;
  int stride = 1;
  int pad = 0;

  static Conv2d create(ParameterStore<T>& store, std::mt19937_64& rng, const std::string& name,
                       int in_channels, int out_channels, int kernel, int stride = 1,
                       bool zero_init = false);
  ag::Var<T> operator()(const ag::Var<T>& x) const {
    return ag::conv2d(x, weight, bias, stride, pad);
  }
};

template <typename T>
struct GroupNorm {
  ag::Var<T> gamma;
  ag::Var<T> beta;
  int groups = 8;

  static GroupNorm create(ParameterStore<T>& store, const std::string& name, int channels,
                          int groups);
  ag::Var<T> operator()(const ag::Var<T>& x) const {
    return ag::group_norm(x, gamma, beta, groups);
  }
};

template <typename T>
struct Linear {
  ag::Var<T> weight;
  ag::Var<T> bias;

  static Linear create(ParameterStore<T>& store, std::mt19937_64& rng, const std::string& name,
                       int in_features, int out_features);
  ag::Var<T> operator()(const ag::Var<T>& x) const { return ag::linear(x, weight, bias); }
};

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(const std::vector<ag::Var<T>>& params, double max_norm);

/// Adam with bias correction, no weight decay.
template <typename T>
class Adam {
 public:
  struct Options {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam(std::vector<ag::Var<T>> params, Options options);

  void step();
  void zero_grad();

  long step_count() const { return step_count_; }
  void set_step_count(long n) { step_count_ = n; }
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }
  const Options& options() const { return options_; }

 private:
  std::vector<ag::Var<T>> params_;
  Options options_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  long step_count_ = 0;
};

}  // namespace diffcod::nn
