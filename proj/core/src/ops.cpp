#include "diffcod/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>

#include "diffcod/gaussian.hpp"

namespace diffcod::ag {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
void accumulate(Node<T>& parent, const Tensor<T>& g) {
  if (!parent.requires_grad) return;
  auto& buf = parent.grad_buffer();
  T* dst = buf.data();
  const T* src = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

template <typename T>
Node<T>& parent(Node<T>& self, std::size_t i) {
  return *self.parents[i];
}

void require_rank(const Shape& s, int rank, const char* what) {
  if (static_cast<int>(s.size()) != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(s));
  }
}

template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& x, F f, DF df) {
  Tensor<T> out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_result<T>(std::move(out), {x}, [df](Node<T>& self) {
    auto& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(p.value[i], self.value[i]);
  });
}

// Column buffer [Ci*k*k, Ho*Wo] for one sample.
template <typename T>
void im2col(const T* x, int channels, int h, int w, int k, int stride, int pad, int ho, int wo,
            T* cols) {
  const int hw_out = ho * wo;
  for (int c = 0; c < channels; ++c) {
    const T* plane = x + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = cols + (static_cast<std::size_t>(c) * k * k + ki * k + kj) * hw_out;
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * stride - pad + ki;
          T* dst = row + oh * wo;
          if (ih < 0 || ih >= h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(ih) * w;
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow * stride - pad + kj;
            dst[ow] = (iw >= 0 && iw < w) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, int channels, int h, int w, int k, int stride, int pad, int ho, int wo,
            T* x) {
  const int hw_out = ho * wo;
  for (int c = 0; c < channels; ++c) {
    T* plane = x + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = cols + (static_cast<std::size_t>(c) * k * k + ki * k + kj) * hw_out;
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= h) continue;
          const T* src = row + oh * wo;
          T* dst = plane + static_cast<std::size_t>(ih) * w;
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow * stride - pad + kj;
            if (iw >= 0 && iw < w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

// Source index pair and weight for one output coordinate of a bilinear resize.
struct LerpTap {
  int i0;
  int i1;
  double frac;
};

std::vector<LerpTap> lerp_taps(int in, int out) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    taps[static_cast<std::size_t>(o)] = {i0, i1, src - i0};
  }
  return taps;
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    accumulate(parent(self, 0), self.grad);
    accumulate(parent(self, 1), self.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    accumulate(parent(self, 0), self.grad);
    auto& pb = parent(self, 1);
    if (!pb.requires_grad) return;
    auto& g = pb.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * factor;
  return make_result<T>(std::move(out), {x}, [factor](Node<T>& self) {
    auto& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Var<T> affine_per_batch(const Var<T>& x, const std::vector<double>& factor,
                        const std::vector<double>& shift) {
  const int batch = x.value().dim(0);
  if (static_cast<int>(factor.size()) != batch || static_cast<int>(shift.size()) != batch) {
    throw ShapeError("affine_per_batch: coefficient count does not match batch");
  }
  const std::size_t per = x.value().size() / static_cast<std::size_t>(batch);
  Tensor<T> out(x.shape());
  for (int b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < per; ++i) {
      const std::size_t j = b * per + i;
      out[j] = static_cast<T>(factor[b] * x.value()[j] + shift[b]);
    }
  }
  return make_result<T>(std::move(out), {x}, [factor, per](Node<T>& self) {
    auto& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t b = 0; b < factor.size(); ++b) {
      for (std::size_t i = 0; i < per; ++i) {
        g[b * per + i] += static_cast<T>(factor[b]) * self.grad[b * per + i];
      }
    }
  });
}

template <typename T>
Var<T> silu(const Var<T>& x) {
  return unary(
      x, [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v, T) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary(
      x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  return unary(
      x, [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](T v, T) { return (v > lo && v < hi) ? T(1) : T(0); });
}

template <typename T>
Var<T> detach(const Var<T>& x) {
  return Var<T>(x.value(), false);
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  require_rank(xs, 4, "conv2d input");
  require_rank(ws, 4, "conv2d weight");
  const int n = xs[0], ci = xs[1], h = xs[2], w = xs[3];
  const int co = ws[0], k = ws[2];
  if (ws[1] != ci || ws[3] != k) {
    throw ShapeError("conv2d: weight " + to_string(ws) + " incompatible with input " +
                     to_string(xs));
  }
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (w + 2 * pad - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: empty output for input " + to_string(xs));
  const int kk = ci * k * k;
  const int hw = ho * wo;
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);

  Tensor<T> out({n, co, ho, wo});
  std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(kk) * hw);
  CMapMat<T> wmat(weight.value().data(), co, kk);
  for (int b = 0; b < n; ++b) {
    const T* xb = x.value().data() + static_cast<std::size_t>(b) * ci * h * w;
    const T* colp = xb;
    if (!pointwise) {
      im2col(xb, ci, h, w, k, stride, pad, ho, wo, cols.data());
      colp = cols.data();
    }
    MapMat<T> omat(out.data() + static_cast<std::size_t>(b) * co * hw, co, hw);
    omat.noalias() = wmat * CMapMat<T>(colp, kk, hw);
    if (bias.defined()) {
      for (int c = 0; c < co; ++c) omat.row(c).array() += bias.value()[c];
    }
  }

  std::vector<Var<T>> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_result<T>(
      std::move(out), std::move(parents),
      [=](Node<T>& self) {
        auto& px = parent(self, 0);
        auto& pw = parent(self, 1);
        Node<T>* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
        std::vector<T> colbuf(pointwise ? 0 : static_cast<std::size_t>(kk) * hw);
        std::vector<T> dcols(static_cast<std::size_t>(kk) * hw);
        CMapMat<T> wm(pw.value.data(), co, kk);
        for (int b = 0; b < n; ++b) {
          CMapMat<T> dy(self.grad.data() + static_cast<std::size_t>(b) * co * hw, co, hw);
          if (pw.requires_grad) {
            const T* xb = px.value.data() + static_cast<std::size_t>(b) * ci * h * w;
            const T* colp = xb;
            if (!pointwise) {
              im2col(xb, ci, h, w, k, stride, pad, ho, wo, colbuf.data());
              colp = colbuf.data();
            }
            MapMat<T> dw(pw.grad_buffer().data(), co, kk);
            dw.noalias() += dy * CMapMat<T>(colp, kk, hw).transpose();
          }
          if (pb && pb->requires_grad) {
            auto& g = pb->grad_buffer();
            // Fixed summation order regardless of buffer alignment.
            for (int c = 0; c < co; ++c) {
              T acc = 0;
              for (int i = 0; i < hw; ++i) acc += dy(c, i);
              g[c] += acc;
            }
          }
          if (px.requires_grad) {
            T* dxb = px.grad_buffer().data() + static_cast<std::size_t>(b) * ci * h * w;
            if (pointwise) {
              MapMat<T> dx(dxb, kk, hw);
              dx.noalias() += wm.transpose() * dy;
            } else {
              MapMat<T> dc(dcols.data(), kk, hw);
              dc.noalias() = wm.transpose() * dy;
              col2im(dcols.data(), ci, h, w, k, stride, pad, ho, wo, dxb);
            }
          }
        }
      });
}

template <typename T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int groups, T eps) {
  const auto& xs = x.shape();
  require_rank(xs, 4, "group_norm");
  const int n = xs[0], c = xs[1];
  const int hw = xs[2] * xs[3];
  if (groups <= 0 || c % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(c) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  }
  const int cg = c / groups;
  const std::size_t group_size = static_cast<std::size_t>(cg) * hw;

  Tensor<T> out(xs);
  auto xhat = std::make_shared<std::vector<T>>(x.value().size());
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * groups);
  for (int b = 0; b < n; ++b) {
    for (int g = 0; g < groups; ++g) {
      const std::size_t base = (static_cast<std::size_t>(b) * c + g * cg) * hw;
      const T* xv = x.value().data() + base;
      double mean = 0;
      for (std::size_t i = 0; i < group_size; ++i) mean += xv[i];
      mean /= static_cast<double>(group_size);
      double var = 0;
      for (std::size_t i = 0; i < group_size; ++i) var += (xv[i] - mean) * (xv[i] - mean);
      var /= static_cast<double>(group_size);
      const T istd = static_cast<T>(1.0 / std::sqrt(var + eps));
      (*inv_std)[static_cast<std::size_t>(b) * groups + g] = istd;
      for (int cc = 0; cc < cg; ++cc) {
        const int ch = g * cg + cc;
        const T ga = gamma.value()[ch];
        const T be = beta.value()[ch];
        for (int i = 0; i < hw; ++i) {
          const std::size_t j = base + static_cast<std::size_t>(cc) * hw + i;
          const T xh = static_cast<T>((x.value()[j] - mean) * istd);
          (*xhat)[j] = xh;
          out[j] = ga * xh + be;
        }
      }
    }
  }

  return make_result<T>(std::move(out), {x, gamma, beta}, [=](Node<T>& self) {
    auto& px = parent(self, 0);
    auto& pg = parent(self, 1);
    auto& pbeta = parent(self, 2);
    for (int b = 0; b < n; ++b) {
      for (int g = 0; g < groups; ++g) {
        const std::size_t base = (static_cast<std::size_t>(b) * c + g * cg) * hw;
        double sum_dxh = 0;
        double sum_dxh_xh = 0;
        for (int cc = 0; cc < cg; ++cc) {
          const int ch = g * cg + cc;
          const T ga = pg.value[ch];
          double dg = 0, db = 0;
          for (int i = 0; i < hw; ++i) {
            const std::size_t j = base + static_cast<std::size_t>(cc) * hw + i;
            const T dy = self.grad[j];
            const T xh = (*xhat)[j];
            dg += dy * xh;
            db += dy;
            sum_dxh += dy * ga;
            sum_dxh_xh += dy * ga * xh;
          }
          if (pg.requires_grad) pg.grad_buffer()[ch] += static_cast<T>(dg);
          if (pbeta.requires_grad) pbeta.grad_buffer()[ch] += static_cast<T>(db);
        }
        if (!px.requires_grad) continue;
        auto& dx = px.grad_buffer();
        const double m1 = sum_dxh / static_cast<double>(group_size);
        const double m2 = sum_dxh_xh / static_cast<double>(group_size);
        const T istd = (*inv_std)[static_cast<std::size_t>(b) * groups + g];
        for (int cc = 0; cc < cg; ++cc) {
          const T ga = pg.value[g * cg + cc];
          for (int i = 0; i < hw; ++i) {
            const std::size_t j = base + static_cast<std::size_t>(cc) * hw + i;
            const double dxh = self.grad[j] * ga;
            dx[j] += static_cast<T>(istd * (dxh - m1 - (*xhat)[j] * m2));
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require_rank(x.shape(), 2, "linear input");
  const int n = x.shape()[0], in = x.shape()[1];
  const int out_f = weight.shape()[0];
  if (weight.shape()[1] != in) throw ShapeError("linear: weight/input width mismatch");
  Tensor<T> out({n, out_f});
  MapMat<T> om(out.data(), n, out_f);
  om.noalias() = CMapMat<T>(x.value().data(), n, in) *
                 CMapMat<T>(weight.value().data(), out_f, in).transpose();
  if (bias.defined()) {
    for (int r = 0; r < n; ++r)
      for (int o = 0; o < out_f; ++o) om(r, o) += bias.value()[o];
  }
  std::vector<Var<T>> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_result<T>(std::move(out), std::move(parents), [=](Node<T>& self) {
    auto& px = parent(self, 0);
    auto& pw = parent(self, 1);
    CMapMat<T> dy(self.grad.data(), n, out_f);
    if (px.requires_grad) {
      MapMat<T>(px.grad_buffer().data(), n, in).noalias() +=
          dy * CMapMat<T>(pw.value.data(), out_f, in);
    }
    if (pw.requires_grad) {
      MapMat<T>(pw.grad_buffer().data(), out_f, in).noalias() +=
          dy.transpose() * CMapMat<T>(px.value.data(), n, in);
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      auto& g = self.parents[2]->grad_buffer();
      for (int r = 0; r < n; ++r)
        for (int o = 0; o < out_f; ++o) g[o] += dy(r, o);
    }
  });
}

template <typename T>
Var<T> add_channel_vector(const Var<T>& x, const Var<T>& v) {
  const auto& xs = x.shape();
  require_rank(xs, 4, "add_channel_vector");
  const int n = xs[0], c = xs[1], hw = xs[2] * xs[3];
  if (v.shape() != Shape{n, c}) throw ShapeError("add_channel_vector: vector must be [N, C]");
  Tensor<T> out(xs);
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const T add_v = v.value()[static_cast<std::size_t>(b) * c + ch];
      const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
      for (int i = 0; i < hw; ++i) out[base + i] = x.value()[base + i] + add_v;
    }
  return make_result<T>(std::move(out), {x, v}, [=](Node<T>& self) {
    accumulate(parent(self, 0), self.grad);
    auto& pv = parent(self, 1);
    if (!pv.requires_grad) return;
    auto& g = pv.grad_buffer();
    for (int b = 0; b < n; ++b)
      for (int ch = 0; ch < c; ++ch) {
        const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * hw;
        T s = 0;
        for (int i = 0; i < hw; ++i) s += self.grad[base + i];
        g[static_cast<std::size_t>(b) * c + ch] += s;
      }
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  require_rank(as, 4, "concat_channels");
  require_rank(bs, 4, "concat_channels");
  if (as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3]) {
    throw ShapeError("concat_channels: " + to_string(as) + " vs " + to_string(bs));
  }
  const int n = as[0], ca = as[1], cb = bs[1];
  const std::size_t hw = static_cast<std::size_t>(as[2]) * as[3];
  Tensor<T> out({n, ca + cb, as[2], as[3]});
  for (int i = 0; i < n; ++i) {
    std::copy_n(a.value().data() + i * ca * hw, ca * hw, out.data() + i * (ca + cb) * hw);
    std::copy_n(b.value().data() + i * cb * hw, cb * hw, out.data() + (i * (ca + cb) + ca) * hw);
  }
  return make_result<T>(std::move(out), {a, b}, [=](Node<T>& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    for (int i = 0; i < n; ++i) {
      const T* g = self.grad.data() + i * (ca + cb) * hw;
      if (pa.requires_grad) {
        T* d = pa.grad_buffer().data() + i * ca * hw;
        for (std::size_t j = 0; j < ca * hw; ++j) d[j] += g[j];
      }
      if (pb.requires_grad) {
        T* d = pb.grad_buffer().data() + i * cb * hw;
        for (std::size_t j = 0; j < cb * hw; ++j) d[j] += g[ca * hw + j];
      }
    }
  });
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, int begin, int count) {
  const auto& xs = x.shape();
  require_rank(xs, 4, "slice_channels");
  const int n = xs[0], c = xs[1];
  if (begin < 0 || count <= 0 || begin + count > c) throw ShapeError("slice_channels: bad range");
  const std::size_t hw = static_cast<std::size_t>(xs[2]) * xs[3];
  Tensor<T> out({n, count, xs[2], xs[3]});
  for (int i = 0; i < n; ++i) {
    std::copy_n(x.value().data() + (i * c + begin) * hw, count * hw, out.data() + i * count * hw);
  }
  return make_result<T>(std::move(out), {x}, [=](Node<T>& self) {
    auto& p = parent(self, 0);
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (int i = 0; i < n; ++i)
      for (std::size_t j = 0; j < count * hw; ++j)
        g[(i * c + begin) * hw + j] += self.grad[i * count * hw + j];
  });
}

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x) {
  const auto& xs = x.shape();
  require_rank(xs, 4, "upsample_nearest2x");
  const int planes = xs[0] * xs[1], h = xs[2], w = xs[3];
  Tensor<T> out({xs[0], xs[1], 2 * h, 2 * w});
  for (int p = 0; p < planes; ++p) {
    const T* src = x.value().data() + static_cast<std::size_t>(p) * h * w;
    T* dst = out.data() + static_cast<std::size_t>(p) * 4 * h * w;
    for (int i = 0; i < 2 * h; ++i)
      for (int j = 0; j < 2 * w; ++j) dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
  }
  return make_result<T>(std::move(out), {x}, [=](Node<T>& self) {
    auto& px = parent(self, 0);
    if (!px.requires_grad) return;
    auto& g = px.grad_buffer();
    for (int p = 0; p < planes; ++p) {
      const T* src = self.grad.data() + static_cast<std::size_t>(p) * 4 * h * w;
      T* dst = g.data() + static_cast<std::size_t>(p) * h * w;
      for (int i = 0; i < 2 * h; ++i)
        for (int j = 0; j < 2 * w; ++j) dst[(i / 2) * w + j / 2] += src[i * 2 * w + j];
    }
  });
}

template <typename T>
Var<T> resize_bilinear(const Var<T>& x, int out_h, int out_w) {
  const auto& xs = x.shape();
  require_rank(xs, 4, "resize_bilinear");
  const int planes = xs[0] * xs[1], h = xs[2], w = xs[3];
  const auto rows = lerp_taps(h, out_h);
  const auto cols = lerp_taps(w, out_w);
  Tensor<T> out({xs[0], xs[1], out_h, out_w});
  for (int p = 0; p < planes; ++p) {
    const T* src = x.value().data() + static_cast<std::size_t>(p) * h * w;
    T* dst = out.data() + static_cast<std::size_t>(p) * out_h * out_w;
    for (int i = 0; i < out_h; ++i) {
      const auto& r = rows[i];
      for (int j = 0; j < out_w; ++j) {
        const auto& c = cols[j];
        const double top = src[r.i0 * w + c.i0] * (1 - c.frac) + src[r.i0 * w + c.i1] * c.frac;
        const double bot = src[r.i1 * w + c.i0] * (1 - c.frac) + src[r.i1 * w + c.i1] * c.frac;
        dst[i * out_w + j] = static_cast<T>(top * (1 - r.frac) + bot * r.frac);
      }
    }
  }
  return make_result<T>(std::move(out), {x}, [=](Node<T>& self) {
    auto& px = parent(self, 0);
    if (!px.requires_grad) return;
    auto& g = px.grad_buffer();
    for (int p = 0; p < planes; ++p) {
      const T* src = self.grad.data() + static_cast<std::size_t>(p) * out_h * out_w;
      T* dst = g.data() + static_cast<std::size_t>(p) * h * w;
      for (int i = 0; i < out_h; ++i) {
        const auto& r = rows[i];
        for (int j = 0; j < out_w; ++j) {
          const auto& c = cols[j];
          const double gv = src[i * out_w + j];
          dst[r.i0 * w + c.i0] += static_cast<T>(gv * (1 - r.frac) * (1 - c.frac));
          dst[r.i0 * w + c.i1] += static_cast<T>(gv * (1 - r.frac) * c.frac);
          dst[r.i1 * w + c.i0] += static_cast<T>(gv * r.frac * (1 - c.frac));
          dst[r.i1 * w + c.i1] += static_cast<T>(gv * r.frac * c.frac);
        }
      }
    }
  });
}

template <typename T>
Var<T> to_tokens(const Var<T>& x) {
  const auto& xs = x.shape();
  require_rank(xs, 4, "to_tokens");
  const int b = xs[0], c = xs[1], hw = xs[2] * xs[3];
  Tensor<T> out({b, hw, c});
  for (int i = 0; i < b; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int p = 0; p < hw; ++p)
        out[(static_cast<std::size_t>(i) * hw + p) * c + ch] =
            x.value()[(static_cast<std::size_t>(i) * c + ch) * hw + p];
  return make_result<T>(std::move(out), {x}, [=](Node<T>& self) {
    auto& px = parent(self, 0);
    if (!px.requires_grad) return;
    auto& g = px.grad_buffer();
    for (int i = 0; i < b; ++i)
      for (int ch = 0; ch < c; ++ch)
        for (int p = 0; p < hw; ++p)
          g[(static_cast<std::size_t>(i) * c + ch) * hw + p] +=
              self.grad[(static_cast<std::size_t>(i) * hw + p) * c + ch];
  });
}

template <typename T>
Var<T> from_tokens(const Var<T>& tokens, int height, int width) {
  const auto& ts = tokens.shape();
  require_rank(ts, 3, "from_tokens");
  const int b = ts[0], hw = ts[1], c = ts[2];
  if (hw != height * width) throw ShapeError("from_tokens: token count does not match H*W");
  Tensor<T> out({b, c, height, width});
  for (int i = 0; i < b; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int p = 0; p < hw; ++p)
        out[(static_cast<std::size_t>(i) * c + ch) * hw + p] =
            tokens.value()[(static_cast<std::size_t>(i) * hw + p) * c + ch];
  return make_result<T>(std::move(out), {tokens}, [=](Node<T>& self) {
    auto& pt = parent(self, 0);
    if (!pt.requires_grad) return;
    auto& g = pt.grad_buffer();
    for (int i = 0; i < b; ++i)
      for (int ch = 0; ch < c; ++ch)
        for (int p = 0; p < hw; ++p)
          g[(static_cast<std::size_t>(i) * hw + p) * c + ch] +=
              self.grad[(static_cast<std::size_t>(i) * c + ch) * hw + p];
  });
}

template <typename T>
Var<T> project_tokens(const Var<T>& tokens, const Var<T>& weight) {
  const auto& ts = tokens.shape();
  require_rank(ts, 3, "project_tokens");
  require_rank(weight.shape(), 2, "project_tokens weight");
  const int rows = ts[0] * ts[1], d = ts[2];
  const int e = weight.shape()[1];
  if (weight.shape()[0] != d) throw ShapeError("project_tokens: weight rows must equal token width");
  Tensor<T> out({ts[0], ts[1], e});
  MapMat<T>(out.data(), rows, e).noalias() =
      CMapMat<T>(tokens.value().data(), rows, d) * CMapMat<T>(weight.value().data(), d, e);
  return make_result<T>(std::move(out), {tokens, weight}, [=](Node<T>& self) {
    auto& pt = parent(self, 0);
    auto& pw = parent(self, 1);
    CMapMat<T> dy(self.grad.data(), rows, e);
    if (pt.requires_grad) {
      MapMat<T>(pt.grad_buffer().data(), rows, d).noalias() +=
          dy * CMapMat<T>(pw.value.data(), d, e).transpose();
    }
    if (pw.requires_grad) {
      MapMat<T>(pw.grad_buffer().data(), d, e).noalias() +=
          CMapMat<T>(pt.value.data(), rows, d).transpose() * dy;
    }
  });
}

template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  require_rank(as, 3, "bmm");
  require_rank(bs, 3, "bmm");
  if (as[0] != bs[0] || as[2] != bs[1]) {
    throw ShapeError("bmm: " + to_string(as) + " x " + to_string(bs));
  }
  const int nb = as[0], m = as[1], k = as[2], n = bs[2];
  Tensor<T> out({nb, m, n});
  for (int i = 0; i < nb; ++i) {
    MapMat<T>(out.data() + static_cast<std::size_t>(i) * m * n, m, n).noalias() =
        CMapMat<T>(a.value().data() + static_cast<std::size_t>(i) * m * k, m, k) *
        CMapMat<T>(b.value().data() + static_cast<std::size_t>(i) * k * n, k, n);
  }
  return make_result<T>(std::move(out), {a, b}, [=](Node<T>& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    for (int i = 0; i < nb; ++i) {
      CMapMat<T> dc(self.grad.data() + static_cast<std::size_t>(i) * m * n, m, n);
      if (pa.requires_grad) {
        MapMat<T>(pa.grad_buffer().data() + static_cast<std::size_t>(i) * m * k, m, k).noalias() +=
            dc * CMapMat<T>(pb.value.data() + static_cast<std::size_t>(i) * k * n, k, n).transpose();
      }
      if (pb.requires_grad) {
        MapMat<T>(pb.grad_buffer().data() + static_cast<std::size_t>(i) * k * n, k, n).noalias() +=
            CMapMat<T>(pa.value.data() + static_cast<std::size_t>(i) * m * k, m, k).transpose() * dc;
      }
    }
  });
}

template <typename T>
Var<T> bmm_nt(const Var<T>& a, const Var<T>& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  require_rank(as, 3, "bmm_nt");
  require_rank(bs, 3, "bmm_nt");
  if (as[0] != bs[0] || as[2] != bs[2]) {
    throw ShapeError("bmm_nt: " + to_string(as) + " x " + to_string(bs) + "^T");
  }
  const int nb = as[0], m = as[1], k = as[2], n = bs[1];
  Tensor<T> out({nb, m, n});
  for (int i = 0; i < nb; ++i) {
    MapMat<T>(out.data() + static_cast<std::size_t>(i) * m * n, m, n).noalias() =
        CMapMat<T>(a.value().data() + static_cast<std::size_t>(i) * m * k, m, k) *
        CMapMat<T>(b.value().data() + static_cast<std::size_t>(i) * n * k, n, k).transpose();
  }
  return make_result<T>(std::move(out), {a, b}, [=](Node<T>& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    for (int i = 0; i < nb; ++i) {
      CMapMat<T> dc(self.grad.data() + static_cast<std::size_t>(i) * m * n, m, n);
      if (pa.requires_grad) {
        MapMat<T>(pa.grad_buffer().data() + static_cast<std::size_t>(i) * m * k, m, k).noalias() +=
            dc * CMapMat<T>(pb.value.data() + static_cast<std::size_t>(i) * n * k, n, k);
      }
      if (pb.requires_grad) {
        MapMat<T>(pb.grad_buffer().data() + static_cast<std::size_t>(i) * n * k, n, k).noalias() +=
            dc.transpose() * CMapMat<T>(pa.value.data() + static_cast<std::size_t>(i) * m * k, m, k);
      }
    }
  });
}

template <typename T>
Var<T> softmax_lastdim(const Var<T>& x) {
  const int n = x.shape().back();
  const std::size_t rows = x.value().size() / static_cast<std::size_t>(n);
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.value().data() + r * n;
    T* dst = out.data() + r * n;
    T mx = *std::max_element(src, src + n);
    T sum = 0;
    for (int j = 0; j < n; ++j) {
      dst[j] = std::exp(src[j] - mx);
      sum += dst[j];
    }
    for (int j = 0; j < n; ++j) dst[j] /= sum;
  }
  return make_result<T>(std::move(out), {x}, [=](Node<T>& self) {
    auto& px = parent(self, 0);
    if (!px.requires_grad) return;
    auto& g = px.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * n;
      const T* dy = self.grad.data() + r * n;
      T dot = 0;
      for (int j = 0; j < n; ++j) dot += dy[j] * y[j];
      for (int j = 0; j < n; ++j) g[r * n + j] += y[j] * (dy[j] - dot);
    }
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
  const std::size_t count = x.value().size();
  double s = 0;
  for (std::size_t i = 0; i < count; ++i) s += x.value()[i];
  Tensor<T> out({1}, static_cast<T>(s / static_cast<double>(count)));
  return make_result<T>(std::move(out), {x}, [count](Node<T>& self) {
    auto& px = parent(self, 0);
    if (!px.requires_grad) return;
    auto& g = px.grad_buffer();
    const T gv = self.grad[0] / static_cast<T>(count);
    for (std::size_t i = 0; i < count; ++i) g[i] += gv;
  });
}

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "mse");
  const std::size_t count = a.value().size();
  double s = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const double d = static_cast<double>(a.value()[i]) - b.value()[i];
    s += d * d;
  }
  Tensor<T> out({1}, static_cast<T>(s / static_cast<double>(count)));
  return make_result<T>(std::move(out), {a, b}, [count](Node<T>& self) {
    auto& pa = parent(self, 0);
    auto& pb = parent(self, 1);
    const T k = T(2) * self.grad[0] / static_cast<T>(count);
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < count; ++i) g[i] += k * (pa.value[i] - pb.value[i]);
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < count; ++i) g[i] -= k * (pa.value[i] - pb.value[i]);
    }
  });
}

template <typename T>
Var<T> gaussian_vlb(const Var<T>& mean, const Var<T>& log_variance, const Tensor<T>& true_mean,
                    const Tensor<T>& true_log_variance, const Tensor<T>& y0,
                    const std::vector<bool>& first_step) {
  require_same_shape(mean.value(), log_variance.value(), "gaussian_vlb");
  require_same_shape(mean.value(), true_mean, "gaussian_vlb");
  require_same_shape(mean.value(), true_log_variance, "gaussian_vlb");
  require_same_shape(mean.value(), y0, "gaussian_vlb");
  const int batch = mean.value().dim(0);
  if (static_cast<int>(first_step.size()) != batch) {
    throw ShapeError("gaussian_vlb: first_step flags do not match batch");
  }
  const std::size_t per = mean.value().size() / static_cast<std::size_t>(batch);
  Tensor<T> out(mean.shape());
  auto d_mean = std::make_shared<std::vector<T>>(out.size());
  auto d_lv = std::make_shared<std::vector<T>>(out.size());
  for (int b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < per; ++i) {
      const std::size_t j = b * per + i;
      double dm = 0, dl = 0;
      double v = 0;
      if (first_step[static_cast<std::size_t>(b)]) {
        v = gaussian::discretized_nll(y0[j], mean.value()[j], log_variance.value()[j], &dm, &dl);
      } else {
        v = gaussian::normal_kl(true_mean[j], true_log_variance[j], mean.value()[j],
                                log_variance.value()[j]);
        gaussian::normal_kl_grad(true_mean[j], true_log_variance[j], mean.value()[j],
                                 log_variance.value()[j], dm, dl);
      }
      out[j] = static_cast<T>(v);
      (*d_mean)[j] = static_cast<T>(dm);
      (*d_lv)[j] = static_cast<T>(dl);
    }
  }
  return make_result<T>(std::move(out), {mean, log_variance}, [d_mean, d_lv](Node<T>& self) {
    auto& pm = parent(self, 0);
    auto& pl = parent(self, 1);
    if (pm.requires_grad) {
      auto& g = pm.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*d_mean)[i];
    }
    if (pl.requires_grad) {
      auto& g = pl.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*d_lv)[i];
    }
  });
}

#define DIFFCOD_INSTANTIATE_OPS(T)                                                              \
  template Var<T> add(const Var<T>&, const Var<T>&);                                            \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                            \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                            \
  template Var<T> scale(const Var<T>&, T);                                                      \
  template Var<T> affine_per_batch(const Var<T>&, const std::vector<double>&,                   \
                                   const std::vector<double>&);                                 \
  template Var<T> silu(const Var<T>&);                                                          \
  template Var<T> sigmoid(const Var<T>&);                                                       \
  template Var<T> clamp(const Var<T>&, T, T);                                                   \
  template Var<T> detach(const Var<T>&);                                                        \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int, int);                \
  template Var<T> group_norm(const Var<T>&, const Var<T>&, const Var<T>&, int, T);              \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                          \
  template Var<T> add_channel_vector(const Var<T>&, const Var<T>&);                             \
  template Var<T> concat_channels(const Var<T>&, const Var<T>&);                                \
  template Var<T> slice_channels(const Var<T>&, int, int);                                      \
  template Var<T> upsample_nearest2x(const Var<T>&);                                            \
  template Var<T> resize_bilinear(const Var<T>&, int, int);                                     \
  template Var<T> to_tokens(const Var<T>&);                                                     \
  template Var<T> from_tokens(const Var<T>&, int, int);                                         \
  template Var<T> project_tokens(const Var<T>&, const Var<T>&);                                 \
  template Var<T> bmm(const Var<T>&, const Var<T>&);                                            \
  template Var<T> bmm_nt(const Var<T>&, const Var<T>&);                                         \
  template Var<T> softmax_lastdim(const Var<T>&);                                               \
  template Var<T> mean_all(const Var<T>&);                                                      \
  template Var<T> mse(const Var<T>&, const Var<T>&);                                            \
  template Var<T> gaussian_vlb(const Var<T>&, const Var<T>&, const Tensor<T>&,                  \
                               const Tensor<T>&, const Tensor<T>&, const std::vector<bool>&);

DIFFCOD_INSTANTIATE_OPS(float)
DIFFCOD_INSTANTIATE_OPS(double)

#undef DIFFCOD_INSTANTIATE_OPS

}  // namespace diffcod::ag
