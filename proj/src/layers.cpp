#include "brainseg/layers.hpp"

#include <algorithm>
#include <cmath>

#include "brainseg/error.hpp"
#include "brainseg/parallel.hpp"

namespace brainseg::nn::layers {

namespace {

struct ConvGeometry {
  std::size_t batch, in[3], out[3], cin, cout, k;
  int pad;
  Stride stride;
};

template <typename T>
ConvGeometry geometry(const Tensor<T> &x, const Tensor<T> &kernel, const Stride &stride) {
  if (x.rank() != 5 || kernel.rank() != 5) raise(Errc::ShapeMismatch, "conv3d expects rank-5 input and kernel");
  if (kernel.dim(3) != x.dim(4))
    raise(Errc::ChannelMismatch, "kernel expects " + std::to_string(kernel.dim(3)) + " input channels, got " +
                                     std::to_string(x.dim(4)));
  ConvGeometry g{};
  g.batch = x.dim(0);
  g.k = kernel.dim(0);
  g.pad = static_cast<int>(g.k / 2);
  g.cin = kernel.dim(3);
  g.cout = kernel.dim(4);
  g.stride = stride;
  for (int a = 0; a < 3; ++a) {
    g.in[a] = x.dim(a + 1);
    const auto s = static_cast<std::size_t>(stride[a]);
    g.out[a] = (g.in[a] + s - 1) / s;
  }
  return g;
}

} // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T> &x, const Tensor<T> &kernel, const Tensor<T> &bias, const Stride &stride) {
  const ConvGeometry g = geometry(x, kernel, stride);
  Tensor<T> out({g.batch, g.out[0], g.out[1], g.out[2], g.cout});
  const T *xp = x.ptr();
  const T *wp = kernel.ptr();
  const T *bp = bias.ptr();
  T *op = out.ptr();
  const long k = static_cast<long>(g.k);
  const std::size_t rows = g.batch * g.out[0];
  parallel_for(rows, [&](std::size_t r_begin, std::size_t r_end) {
    for (std::size_t r = r_begin; r < r_end; ++r) {
      const std::size_t b = r / g.out[0], o0 = r % g.out[0];
      for (std::size_t o1 = 0; o1 < g.out[1]; ++o1)
        for (std::size_t o2 = 0; o2 < g.out[2]; ++o2) {
          T *orow = op + (((b * g.out[0] + o0) * g.out[1] + o1) * g.out[2] + o2) * g.cout;
          for (std::size_t co = 0; co < g.cout; ++co) orow[co] = bp[co];
          for (long t0 = 0; t0 < k; ++t0) {
            const long i0 = static_cast<long>(o0) * g.stride[0] + t0 - g.pad;
            if (i0 < 0 || i0 >= static_cast<long>(g.in[0])) continue;
            for (long t1 = 0; t1 < k; ++t1) {
              const long i1 = static_cast<long>(o1) * g.stride[1] + t1 - g.pad;
              if (i1 < 0 || i1 >= static_cast<long>(g.in[1])) continue;
              for (long t2 = 0; t2 < k; ++t2) {
                const long i2 = static_cast<long>(o2) * g.stride[2] + t2 - g.pad;
                if (i2 < 0 || i2 >= static_cast<long>(g.in[2])) continue;
                const T *xrow = xp + (((b * g.in[0] + i0) * g.in[1] + i1) * g.in[2] + i2) * g.cin;
                const T *wtap = wp + ((t0 * k + t1) * k + t2) * g.cin * g.cout;
                for (std::size_t ci = 0; ci < g.cin; ++ci) {
                  const T v = xrow[ci];
                  const T *wrow = wtap + ci * g.cout;
                  for (std::size_t co = 0; co < g.cout; ++co) orow[co] += v * wrow[co];
                }
              }
            }
          }
        }
    }
  });
  return out;
}

template <typename T>
void conv3d_backward(const Tensor<T> &x, const Tensor<T> &kernel, const Stride &stride, const Tensor<T> &dout,
                     Tensor<T> *dx, Tensor<T> &dkernel, Tensor<T> &dbias) {
  const ConvGeometry g = geometry(x, kernel, stride);
  const long k = static_cast<long>(g.k);
  const T *xp = x.ptr();
  const T *wp = kernel.ptr();
  const T *dp = dout.ptr();

  // Bias: sum of upstream gradient over all voxels.
  dbias = Tensor<T>({g.cout});
  {
    std::vector<double> acc(g.cout, 0.0);
    const std::size_t n = dout.size() / g.cout;
    for (std::size_t v = 0; v < n; ++v)
      for (std::size_t co = 0; co < g.cout; ++co) acc[co] += dp[v * g.cout + co];
    for (std::size_t co = 0; co < g.cout; ++co) dbias[co] = static_cast<T>(acc[co]);
  }

  // Kernel: each tap owns a disjoint slice of dkernel.
  dkernel = Tensor<T>(kernel.shape());
  T *dwp = dkernel.ptr();
  const std::size_t taps = g.k * g.k * g.k;
  parallel_for(taps, [&](std::size_t tap_begin, std::size_t tap_end) {
    for (std::size_t tap = tap_begin; tap < tap_end; ++tap) {
      const long t0 = static_cast<long>(tap / (g.k * g.k));
      const long t1 = static_cast<long>((tap / g.k) % g.k);
      const long t2 = static_cast<long>(tap % g.k);
      T *dwtap = dwp + tap * g.cin * g.cout;
      for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t o0 = 0; o0 < g.out[0]; ++o0) {
          const long i0 = static_cast<long>(o0) * g.stride[0] + t0 - g.pad;
          if (i0 < 0 || i0 >= static_cast<long>(g.in[0])) continue;
          for (std::size_t o1 = 0; o1 < g.out[1]; ++o1) {
            const long i1 = static_cast<long>(o1) * g.stride[1] + t1 - g.pad;
            if (i1 < 0 || i1 >= static_cast<long>(g.in[1])) continue;
            for (std::size_t o2 = 0; o2 < g.out[2]; ++o2) {
              const long i2 = static_cast<long>(o2) * g.stride[2] + t2 - g.pad;
              if (i2 < 0 || i2 >= static_cast<long>(g.in[2])) continue;
              const T *xrow = xp + (((b * g.in[0] + i0) * g.in[1] + i1) * g.in[2] + i2) * g.cin;
              const T *drow = dp + (((b * g.out[0] + o0) * g.out[1] + o1) * g.out[2] + o2) * g.cout;
              for (std::size_t ci = 0; ci < g.cin; ++ci) {
                const T v = xrow[ci];
                T *dwrow = dwtap + ci * g.cout;
                for (std::size_t co = 0; co < g.cout; ++co) dwrow[co] += v * drow[co];
              }
            }
          }
        }
    }
  });

  if (!dx) return;
  // Input: gather formulation, each input voxel collects from the outputs it fed.
  *dx = Tensor<T>(x.shape());
  T *dxp = dx->ptr();
  const std::size_t rows = g.batch * g.in[0];
  parallel_for(rows, [&](std::size_t r_begin, std::size_t r_end) {
    std::vector<T> acc(g.cin);
    for (std::size_t r = r_begin; r < r_end; ++r) {
      const std::size_t b = r / g.in[0], i0 = r % g.in[0];
      for (std::size_t i1 = 0; i1 < g.in[1]; ++i1)
        for (std::size_t i2 = 0; i2 < g.in[2]; ++i2) {
          std::fill(acc.begin(), acc.end(), T{});
          for (long t0 = 0; t0 < k; ++t0) {
            const long n0 = static_cast<long>(i0) + g.pad - t0;
            if (n0 < 0 || n0 % g.stride[0]) continue;
            const long o0 = n0 / g.stride[0];
            if (o0 >= static_cast<long>(g.out[0])) continue;
            for (long t1 = 0; t1 < k; ++t1) {
              const long n1 = static_cast<long>(i1) + g.pad - t1;
              if (n1 < 0 || n1 % g.stride[1]) continue;
              const long o1 = n1 / g.stride[1];
              if (o1 >= static_cast<long>(g.out[1])) continue;
              for (long t2 = 0; t2 < k; ++t2) {
                const long n2 = static_cast<long>(i2) + g.pad - t2;
                if (n2 < 0 || n2 % g.stride[2]) continue;
                const long o2 = n2 / g.stride[2];
                if (o2 >= static_cast<long>(g.out[2])) continue;
                const T *drow = dp + (((b * g.out[0] + o0) * g.out[1] + o1) * g.out[2] + o2) * g.cout;
                const T *wtap = wp + ((t0 * k + t1) * k + t2) * g.cin * g.cout;
                for (std::size_t ci = 0; ci < g.cin; ++ci) {
                  const T *wrow = wtap + ci * g.cout;
                  T s{};
                  for (std::size_t co = 0; co < g.cout; ++co) s += wrow[co] * drow[co];
                  acc[ci] += s;
                }
              }
            }
          }
          T *dxrow = dxp + (((b * g.in[0] + i0) * g.in[1] + i1) * g.in[2] + i2) * g.cin;
          std::copy(acc.begin(), acc.end(), dxrow);
        }
    }
  });
}

template <typename T>
Tensor<T> bn_lrelu(const Tensor<T> &x, const Tensor<T> &gamma, const Tensor<T> &beta, const Tensor<T> &running_mean,
                   const Tensor<T> &running_var, double eps, double leakiness, bool batch_stats, BnStats &stats) {
  const std::size_t c = x.channels();
  if (gamma.size() != c || beta.size() != c) raise(Errc::ChannelMismatch, "batch-norm parameter size mismatch");
  const std::size_t n = x.size() / c;
  const T *xp = x.ptr();
  stats.mean.assign(c, 0.0);
  stats.var.assign(c, 0.0);
  stats.inv_std.assign(c, 0.0);
  if (batch_stats) {
    for (std::size_t v = 0; v < n; ++v)
      for (std::size_t ch = 0; ch < c; ++ch) stats.mean[ch] += xp[v * c + ch];
    for (auto &m : stats.mean) m /= static_cast<double>(n);
    for (std::size_t v = 0; v < n; ++v)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double d = xp[v * c + ch] - stats.mean[ch];
        stats.var[ch] += d * d;
      }
    for (auto &s : stats.var) s /= static_cast<double>(n);
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      stats.mean[ch] = running_mean[ch];
      stats.var[ch] = running_var[ch];
    }
  }
  for (std::size_t ch = 0; ch < c; ++ch) stats.inv_std[ch] = 1.0 / std::sqrt(stats.var[ch] + eps);

  std::vector<T> scale(c), shift(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    scale[ch] = static_cast<T>(gamma[ch] * stats.inv_std[ch]);
    shift[ch] = static_cast<T>(beta[ch] - gamma[ch] * stats.mean[ch] * stats.inv_std[ch]);
  }
  Tensor<T> y(x.shape());
  T *yp = y.ptr();
  const T leak = static_cast<T>(leakiness);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T z = xp[v * c + ch] * scale[ch] + shift[ch];
      yp[v * c + ch] = z > T{} ? z : leak * z;
    }
  return y;
}

template <typename T>
void bn_lrelu_backward(const Tensor<T> &x, const Tensor<T> &y, const Tensor<T> &gamma, const BnStats &stats,
                       double leakiness, const Tensor<T> &dy, Tensor<T> &dx, Tensor<T> &dgamma, Tensor<T> &dbeta) {
  const std::size_t c = x.channels();
  const std::size_t n = x.size() / c;
  const T *xp = x.ptr();
  const T *yp = y.ptr();
  const T *dyp = dy.ptr();
  // dz: gradient w.r.t. the batch-norm output.
  std::vector<T> dz(x.size());
  const T leak = static_cast<T>(leakiness);
  for (std::size_t i = 0; i < x.size(); ++i) dz[i] = yp[i] > T{} ? dyp[i] : leak * dyp[i];

  std::vector<double> sum_dz(c, 0.0), sum_dz_xhat(c, 0.0);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double xhat = (xp[v * c + ch] - stats.mean[ch]) * stats.inv_std[ch];
      sum_dz[ch] += dz[v * c + ch];
      sum_dz_xhat[ch] += dz[v * c + ch] * xhat;
    }
  dgamma = Tensor<T>({c});
  dbeta = Tensor<T>({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    dgamma[ch] = static_cast<T>(sum_dz_xhat[ch]);
    dbeta[ch] = static_cast<T>(sum_dz[ch]);
  }
  dx = Tensor<T>(x.shape());
  T *dxp = dx.ptr();
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t i = v * c + ch;
      const double xhat = (xp[i] - stats.mean[ch]) * stats.inv_std[ch];
      const double g = gamma[ch] * stats.inv_std[ch];
      dxp[i] = static_cast<T>(g * (dz[i] - inv_n * sum_dz[ch] - xhat * inv_n * sum_dz_xhat[ch]));
    }
}

namespace {

// Resizes spatial axis `axis` (1..3) of a 5D tensor by factor 2.
template <typename T> Tensor<T> resize_axis(const Tensor<T> &x, int axis) {
  Shape shape = x.shape();
  const std::size_t n = shape[axis];
  shape[axis] = 2 * n;
  Tensor<T> out(shape);
  std::size_t outer = 1, inner = 1;
  for (int a = 0; a < axis; ++a) outer *= x.dim(a);
  for (std::size_t a = axis + 1; a < x.rank(); ++a) inner *= x.dim(a);
  const T *xp = x.ptr();
  T *op = out.ptr();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < 2 * n; ++i) {
      // Source position (i + 0.5) / 2 - 0.5: neighbours at i/2 and i/2 -/+ 1 with weights 3/4, 1/4.
      const std::size_t near = i / 2;
      const std::size_t far = (i % 2 == 0) ? (near == 0 ? 0 : near - 1) : std::min(near + 1, n - 1);
      const T *a = xp + (o * n + near) * inner;
      const T *b = xp + (o * n + far) * inner;
      T *dst = op + (o * 2 * n + i) * inner;
      for (std::size_t j = 0; j < inner; ++j) dst[j] = T(0.75) * a[j] + T(0.25) * b[j];
    }
  return out;
}

template <typename T> Tensor<T> resize_axis_backward(const Tensor<T> &dout, int axis) {
  Shape shape = dout.shape();
  const std::size_t n = shape[axis] / 2;
  shape[axis] = n;
  Tensor<T> dx(shape);
  std::size_t outer = 1, inner = 1;
  for (int a = 0; a < axis; ++a) outer *= dout.dim(a);
  for (std::size_t a = axis + 1; a < dout.rank(); ++a) inner *= dout.dim(a);
  const T *dp = dout.ptr();
  T *xp = dx.ptr();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < 2 * n; ++i) {
      const std::size_t near = i / 2;
      const std::size_t far = (i % 2 == 0) ? (near == 0 ? 0 : near - 1) : std::min(near + 1, n - 1);
      T *a = xp + (o * n + near) * inner;
      T *b = xp + (o * n + far) * inner;
      const T *src = dp + (o * 2 * n + i) * inner;
      for (std::size_t j = 0; j < inner; ++j) {
        a[j] += T(0.75) * src[j];
        b[j] += T(0.25) * src[j];
      }
    }
  return dx;
}

} // namespace

template <typename T> Tensor<T> upsample(const Tensor<T> &x, const Stride &factor) {
  Tensor<T> cur = x;
  for (int a = 0; a < 3; ++a) {
    if (factor[a] == 1) continue;
    if (factor[a] != 2) raise(Errc::InvalidArgument, "upsampling supports factors 1 and 2");
    cur = resize_axis(cur, a + 1);
  }
  return cur;
}

template <typename T> Tensor<T> upsample_backward(const Tensor<T> &dout, const Stride &factor, const Shape &in_shape) {
  Tensor<T> cur = dout;
  for (int a = 2; a >= 0; --a) {
    if (factor[a] == 1) continue;
    cur = resize_axis_backward(cur, a + 1);
  }
  if (cur.shape() != in_shape) raise(Errc::ShapeMismatch, "upsample backward shape mismatch");
  return cur;
}

template <typename T> Tensor<T> add(const Tensor<T> &a, const Tensor<T> &b) {
  if (a.shape() != b.shape())
    raise(Errc::ShapeMismatch, "cannot add " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T> Tensor<T> softmax(const Tensor<T> &logits) {
  const std::size_t c = logits.channels();
  const std::size_t n = logits.size() / c;
  Tensor<T> out(logits.shape());
  for (std::size_t v = 0; v < n; ++v) {
    const T *l = logits.ptr() + v * c;
    T *p = out.ptr() + v * c;
    const T m = *std::max_element(l, l + c);
    double sum = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) sum += std::exp(static_cast<double>(l[ch] - m));
    for (std::size_t ch = 0; ch < c; ++ch) p[ch] = static_cast<T>(std::exp(static_cast<double>(l[ch] - m)) / sum);
  }
  return out;
}

#define BRAINSEG_INSTANTIATE(T)                                                                                    \
  template Tensor<T> conv3d(const Tensor<T> &, const Tensor<T> &, const Tensor<T> &, const Stride &);             \
  template void conv3d_backward(const Tensor<T> &, const Tensor<T> &, const Stride &, const Tensor<T> &,          \
                                Tensor<T> *, Tensor<T> &, Tensor<T> &);                                            \
  template Tensor<T> bn_lrelu(const Tensor<T> &, const Tensor<T> &, const Tensor<T> &, const Tensor<T> &,         \
                              const Tensor<T> &, double, double, bool, BnStats &);                                \
  template void bn_lrelu_backward(const Tensor<T> &, const Tensor<T> &, const Tensor<T> &, const BnStats &,       \
                                  double, const Tensor<T> &, Tensor<T> &, Tensor<T> &, Tensor<T> &);              \
  template Tensor<T> upsample(const Tensor<T> &, const Stride &);                                                  \
  template Tensor<T> upsample_backward(const Tensor<T> &, const Stride &, const Shape &);                          \
  template Tensor<T> add(const Tensor<T> &, const Tensor<T> &);                                                    \
  template Tensor<T> softmax(const Tensor<T> &);

BRAINSEG_INSTANTIATE(float)
BRAINSEG_INSTANTIATE(double)

#undef BRAINSEG_INSTANTIATE

} // namespace brainseg::nn::layers
