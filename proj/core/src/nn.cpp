#include "diffcod/nn.hpp"

#include <cmath>

namespace diffcod::nn {

template <typename T>
ag::Var<T> ParameterStore<T>::add(const std::string& name, Tensor<T> init) {
  if (contains(name)) throw ConfigError("duplicate parameter name: " + name);
  ag::Var<T> v(std::move(init), true);
  entries_.emplace_back(name, v);
  return v;
}

template <typename T>
ag::Var<T> ParameterStore<T>::get(const std::string& name) const {
  for (const auto& [n, v] : entries_)
    if (n == name) return v;
  throw ConfigError("unknown parameter: " + name);
}

template <typename T>
bool ParameterStore<T>::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.first == name) return true;
  return false;
}

template <typename T>
std::vector<ag::Var<T>> ParameterStore<T>::vars() const {
  std::vector<ag::Var<T>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

template <typename T>
std::size_t ParameterStore<T>::total_size() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.value().size();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

template <typename T>
Tensor<T> fan_in_uniform(const Shape& shape, int fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Conv2d<T> Conv2d<T>::create(ParameterStore<T>& store, std::mt19937_64& rng,
                            const std::string& name, int in_channels, int out_channels,
                            int kernel, int stride, bool zero_init) {
  Conv2d c;
  const int fan_in = in_channels * kernel * kernel;
  Shape wshape{out_channels, in_channels, kernel, kernel};
  c.weight = store.add(name + ".weight",
                       zero_init ? Tensor<T>(wshape) : fan_in_uniform<T>(wshape, fan_in, rng));
  c.bias = store.add(name + ".bias", zero_init ? Tensor<T>({out_channels})
                                               : fan_in_uniform<T>({out_channels}, fan_in, rng));
  c.stride = stride;
  c.pad = kernel / 2;
  return c;
}

template <typename T>
GroupNorm<T> GroupNorm<T>::create(ParameterStore<T>& store, const std::string& name, int channels,
                                  int groups) {
  GroupNorm g;
  g.gamma = store.add(name + ".gamma", Tensor<T>({channels}, T(1)));
  g.beta = store.add(name + ".beta", Tensor<T>({channels}));
  g.groups = groups;
  return g;
}

template <typename T>
Linear<T> Linear<T>::create(ParameterStore<T>& store, std::mt19937_64& rng,
                            const std::string& name, int in_features, int out_features) {
  Linear l;
  l.weight = store.add(name + ".weight",
                       fan_in_uniform<T>({out_features, in_features}, in_features, rng));
  l.bias = store.add(name + ".bias", fan_in_uniform<T>({out_features}, in_features, rng));
  return l;
}

template <typename T>
double clip_grad_norm(const std::vector<ag::Var<T>>& params, double max_norm) {
  double sq = 0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (T g : p.grad().span()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const T f = static_cast<T>(max_norm / norm);
    for (auto p : params) {
      if (!p.has_grad()) continue;
      for (T& g : p.grad_mut().span()) g *= f;
    }
  }
  return norm;
}

template <typename T>
Adam<T>::Adam(std::vector<ag::Var<T>> params, Options options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

template <typename T>
void Adam<T>::step() {
  ++step_count_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
  const double lr = options_.learning_rate;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad()) continue;
    auto& w = p.value_mut();
    const auto& g = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      m[i] = static_cast<T>(b1 * m[i] + (1 - b1) * gi);
      v[i] = static_cast<T>(b2 * v[i] + (1 - b2) * gi * gi);
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] = static_cast<T>(w[i] - lr * mhat / (std::sqrt(vhat) + options_.eps));
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template struct Conv2d<float>;
template struct Conv2d<double>;
template struct GroupNorm<float>;
template struct GroupNorm<double>;
template struct Linear<float>;
template struct Linear<double>;
template class Adam<float>;
template class Adam<double>;
template Tensor<float> fan_in_uniform(const Shape&, int, std::mt19937_64&);
template Tensor<double> fan_in_uniform(const Shape&, int, std::mt19937_64&);
template double clip_grad_norm(const std::vector<ag::Var<float>>&, double);
template double clip_grad_norm(const std::vector<ag::Var<double>>&, double);

}  // namespace diffcod::nn
