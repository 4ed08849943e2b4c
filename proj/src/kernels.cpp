#include "vdcnet/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace vdcnet::kernels {

namespace {

int g_threads = 0;

int threads() {
#ifdef _OPENMP
  return g_threads > 0 ? g_threads : omp_get_max_threads();
#else
  return 1;
#endif
}

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <class T>
using MutMap = Eigen::Map<RowMat<T>>;

bool is_pointwise(const ConvGeometry& g) {
  return g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.pad_top == 0 && g.pad_left == 0;
}

// Unfolds one (C, H, W) sample into a (C*kh*kw, OH*OW) patch matrix.
template <class T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t out_plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const T* xc = x + c * g.in_h * g.in_w;
    for (std::size_t i = 0; i < g.kernel_h; ++i)
      for (std::size_t j = 0; j < g.kernel_w; ++j) {
        T* row = cols + ((c * g.kernel_h + i) * g.kernel_w + j) * out_plane;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = long(oh * g.stride + i) - long(g.pad_top);
          T* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= long(g.in_h)) {
            std::fill(dst, dst + g.out_w, T{0});
            continue;
          }
          const T* src = xc + ih * g.in_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = long(ow * g.stride + j) - long(g.pad_left);
            dst[ow] = (iw < 0 || iw >= long(g.in_w)) ? T{0} : src[iw];
          }
        }
      }
  }
}

// Folds a patch-matrix gradient back onto one (C, H, W) sample, accumulating.
template <class T>
void col2im(const T* cols, const ConvGeometry& g, T* dx) {
  const std::size_t out_plane = g.out_h * g.out_w;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    T* dc = dx + c * g.in_h * g.in_w;
    for (std::size_t i = 0; i < g.kernel_h; ++i)
      for (std::size_t j = 0; j < g.kernel_w; ++j) {
        const T* row = cols + ((c * g.kernel_h + i) * g.kernel_w + j) * out_plane;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = long(oh * g.stride + i) - long(g.pad_top);
          if (ih < 0 || ih >= long(g.in_h)) continue;
          T* dst = dc + ih * g.in_w;
          const T* src = row + oh * g.out_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = long(ow * g.stride + j) - long(g.pad_left);
            if (iw >= 0 && iw < long(g.in_w)) dst[iw] += src[ow];
          }
        }
      }
  }
}

}  // namespace

void set_num_threads(int n) { g_threads = n < 0 ? 0 : n; }
int num_threads() { return threads(); }

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, const ConvGeometry& g) {
  Tensor<T> y(g.output_shape());
  const std::size_t patch = g.in_channels * g.kernel_h * g.kernel_w;
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t in_sample = g.in_channels * g.in_h * g.in_w;
  const bool pointwise = is_pointwise(g);
  const long batch = long(g.batch);
  ConstMap<T> w(kernel.data(), long(g.filters), long(patch));
#pragma omp parallel num_threads(threads())
  {
    Buffer<T> cols(pointwise ? 0 : patch * out_plane);
#pragma omp for schedule(static)
    for (long n = 0; n < batch; ++n) {
      const T* src = x.data() + n * in_sample;
      if (!pointwise) {
        im2col(src, g, cols.data());
        src = cols.data();
      }
      ConstMap<T> b(src, long(patch), long(out_plane));
      MutMap<T> out(y.data() + n * g.filters * out_plane, long(g.filters), long(out_plane));
      out.noalias() = w * b;
      if (!bias.empty()) {
        for (std::size_t f = 0; f < g.filters; ++f) out.row(long(f)).array() += bias[f];
      }
    }
  }
  return y;
}

template <class T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& dy, const ConvGeometry& g,
                             bool need_input, bool need_params) {
  ConvGrads<T> grads;
  const std::size_t patch = g.in_channels * g.kernel_h * g.kernel_w;
  const std::size_t out_plane = g.out_h * g.out_w;
  const std::size_t in_sample = g.in_channels * g.in_h * g.in_w;
  const std::size_t kernel_size = g.filters * patch;
  const bool pointwise = is_pointwise(g);
  const long batch = long(g.batch);
  if (need_input) grads.input = Tensor<T>(x.shape());
  // Per-sample partial parameter gradients, reduced in sample order below.
  Buffer<T> partial_kernel(need_params ? g.batch * kernel_size : 0);
  Buffer<T> partial_bias(need_params ? g.batch * g.filters : 0);
  ConstMap<T> w(kernel.data(), long(g.filters), long(patch));
#pragma omp parallel num_threads(threads())
  {
    Buffer<T> cols(pointwise ? 0 : patch * out_plane);
    Buffer<T> dcols(pointwise ? 0 : patch * out_plane);
#pragma omp for schedule(static)
    for (long n = 0; n < batch; ++n) {
      ConstMap<T> up(dy.data() + n * g.filters * out_plane, long(g.filters), long(out_plane));
      if (need_input) {
        if (pointwise) {
          MutMap<T> dx(grads.input.data() + n * in_sample, long(patch), long(out_plane));
          dx.noalias() = w.transpose() * up;
        } else {
          MutMap<T> dc(dcols.data(), long(patch), long(out_plane));
          dc.noalias() = w.transpose() * up;
          col2im(dcols.data(), g, grads.input.data() + n * in_sample);
        }
      }
      if (need_params) {
        const T* src = x.data() + n * in_sample;
        if (!pointwise) {
          im2col(src, g, cols.data());
          src = cols.data();
        }
        ConstMap<T> b(src, long(patch), long(out_plane));
        MutMap<T> dk(partial_kernel.data() + n * kernel_size, long(g.filters), long(patch));
        dk.noalias() = up * b.transpose();
        for (std::size_t f = 0; f < g.filters; ++f) partial_bias[n * g.filters + f] = up.row(long(f)).sum();
      }
    }
  }
  if (need_params) {
    grads.kernel = Tensor<T>(kernel.shape());
    grads.bias = Tensor<T>({g.filters});
    for (std::size_t n = 0; n < g.batch; ++n) {
      const T* pk = partial_kernel.data() + n * kernel_size;
      for (std::size_t i = 0; i < kernel_size; ++i) grads.kernel[i] += pk[i];
      for (std::size_t f = 0; f < g.filters; ++f) grads.bias[f] += partial_bias[n * g.filters + f];
    }
  }
  return grads;
}

template <class T>
PoolResult<T> maxpool2d_forward(const Tensor<T>& x, std::size_t pool) {
  require_nchw(x, "maxpool2d");
  if (pool == 0) throw ArgumentError("maxpool2d: pool size must be positive");
  const auto& s = x.shape();
  if (s[2] % pool != 0 || s[3] % pool != 0) {
    throw ShapeError("maxpool2d: spatial extent " + shape_to_string(s) + " not divisible by pool " +
                     std::to_string(pool));
  }
  const std::size_t oh_n = s[2] / pool, ow_n = s[3] / pool;
  PoolResult<T> r;
  r.output = Tensor<T>({s[0], s[1], oh_n, ow_n});
  r.argmax.resize(r.output.size());
  const long planes = long(s[0] * s[1]);
#pragma omp parallel for schedule(static) num_threads(threads())
  for (long nc = 0; nc < planes; ++nc) {
    const std::size_t base = std::size_t(nc) * s[2] * s[3];
    const T* src = x.data() + base;
    for (std::size_t oh = 0; oh < oh_n; ++oh)
      for (std::size_t ow = 0; ow < ow_n; ++ow) {
        std::size_t best = (oh * pool) * s[3] + ow * pool;
        for (std::size_t i = 0; i < pool; ++i)
          for (std::size_t j = 0; j < pool; ++j) {
            const std::size_t idx = (oh * pool + i) * s[3] + ow * pool + j;
            if (src[idx] > src[best]) best = idx;
          }
        const std::size_t o = std::size_t(nc) * oh_n * ow_n + oh * ow_n + ow;
        r.output[o] = src[best];
        r.argmax[o] = static_cast<std::uint32_t>(base + best);
      }
  }
  return r;
}

template <class T>
Tensor<T> maxpool2d_backward(const Tensor<T>& dy, const std::vector<std::uint32_t>& argmax, const Shape& input_shape) {
  Tensor<T> dx(input_shape);
  // Windows never overlap, so each input cell receives at most one write.
  const long total = long(dy.size());
#pragma omp parallel for schedule(static) num_threads(threads())
  for (long o = 0; o < total; ++o) dx[argmax[std::size_t(o)]] = dy[std::size_t(o)];
  return dx;
}

template <class T>
BatchNormForward<T> batchnorm_forward_train(const Tensor<T>& x, const Buffer<T>& gamma,
                                            const Buffer<T>& beta, T epsilon) {
  require_nchw(x, "batchnorm2d");
  const auto& s = x.shape();
  const std::size_t plane = s[2] * s[3];
  const double count = double(s[0] * plane);
  BatchNormForward<T> r;
  r.output = Tensor<T>(s);
  r.mean.assign(s[1], T{0});
  r.variance.assign(s[1], T{0});
  const long channels = long(s[1]);
#pragma omp parallel for schedule(static) num_threads(threads())
  for (long c = 0; c < channels; ++c) {
    double sum = 0;
    for (std::size_t n = 0; n < s[0]; ++n) {
      const T* p = x.data() + (n * s[1] + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
    }
    const double mean = sum / count;
    double sq = 0;
    for (std::size_t n = 0; n < s[0]; ++n) {
      const T* p = x.data() + (n * s[1] + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = p[i] - mean;
        sq += d * d;
      }
    }
    const double var = sq / count;
    r.mean[c] = T(mean);
    r.variance[c] = T(var);
    const T scale = T(double(gamma[c]) / std::sqrt(var + double(epsilon)));
    const T shift = T(double(beta[c]) - mean * double(scale));
    for (std::size_t n = 0; n < s[0]; ++n) {
      const T* p = x.data() + (n * s[1] + c) * plane;
      T* q = r.output.data() + (n * s[1] + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) q[i] = p[i] * scale + shift;
    }
  }
  return r;
}

template <class T>
Tensor<T> batchnorm_forward_infer(const Tensor<T>& x, const Buffer<T>& gamma, const Buffer<T>& beta,
                                  const Buffer<T>& mean, const Buffer<T>& variance, T epsilon) {
  require_nchw(x, "batchnorm2d");
  const auto& s = x.shape();
  const std::size_t plane = s[2] * s[3];
  Tensor<T> y(s);
  const long planes = long(s[0] * s[1]);
#pragma omp parallel for schedule(static) num_threads(threads())
  for (long nc = 0; nc < planes; ++nc) {
    const std::size_t c = std::size_t(nc) % s[1];
    const T scale = gamma[c] / std::sqrt(variance[c] + epsilon);
    const T shift = beta[c] - mean[c] * scale;
    const T* p = x.data() + nc * plane;
    T* q = y.data() + nc * plane;
    for (std::size_t i = 0; i < plane; ++i) q[i] = p[i] * scale + shift;
  }
  return y;
}

template <class T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& x, const Tensor<T>& dy, const Buffer<T>& gamma,
                                     const Buffer<T>& mean, const Buffer<T>& variance, T epsilon,
                                     bool batch_stats) {
  const auto& s = x.shape();
  const std::size_t plane = s[2] * s[3];
  const double count = double(s[0] * plane);
  BatchNormGrads<T> g;
  g.input = Tensor<T>(s);
  g.gamma.assign(s[1], T{0});
  g.beta.assign(s[1], T{0});
  const long channels = long(s[1]);
#pragma omp parallel for schedule(static) num_threads(threads())
  for (long c = 0; c < channels; ++c) {
    const double inv = 1.0 / std::sqrt(double(variance[c]) + double(epsilon));
    const double mu = mean[c];
    double dgamma = 0, dbeta = 0;
    for (std::size_t n = 0; n < s[0]; ++n) {
      const T* px = x.data() + (n * s[1] + c) * plane;
      const T* pd = dy.data() + (n * s[1] + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        dgamma += double(pd[i]) * (px[i] - mu) * inv;
        dbeta += pd[i];
      }
    }
    g.gamma[c] = T(dgamma);
    g.beta[c] = T(dbeta);
    const double k = double(gamma[c]) * inv;
    for (std::size_t n = 0; n < s[0]; ++n) {
      const T* px = x.data() + (n * s[1] + c) * plane;
      const T* pd = dy.data() + (n * s[1] + c) * plane;
      T* q = g.input.data() + (n * s[1] + c) * plane;
      if (batch_stats) {
        const double a = dbeta / count;
        const double b = dgamma / count * inv;
        for (std::size_t i = 0; i < plane; ++i) q[i] = T(k * (pd[i] - a - (px[i] - mu) * b));
      } else {
        for (std::size_t i = 0; i < plane; ++i) q[i] = T(k * pd[i]);
      }
    }
  }
  return g;
}

template <class T>
PoolResult<T> global_pool_forward(const Tensor<T>& x, PoolMode mode) {
  require_nchw(x, "global_pool");
  const auto& s = x.shape();
  const std::size_t plane = s[2] * s[3];
  if (plane == 0) throw ShapeError("global_pool: empty spatial extent");
  PoolResult<T> r;
  r.output = Tensor<T>({s[0], s[1]});
  if (mode == PoolMode::max) r.argmax.resize(s[0] * s[1]);
  const long planes = long(s[0] * s[1]);
#pragma omp parallel for schedule(static) num_threads(threads())
  for (long nc = 0; nc < planes; ++nc) {
    const T* p = x.data() + nc * plane;
    if (mode == PoolMode::avg) {
      double sum = 0;
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      r.output[nc] = T(sum / double(plane));
    } else {
      const std::size_t best = std::size_t(std::max_element(p, p + plane) - p);
      r.output[nc] = p[best];
      r.argmax[nc] = static_cast<std::uint32_t>(nc * plane + best);
    }
  }
  return r;
}

template <class T>
Tensor<T> global_pool_backward(const Tensor<T>& dy, const std::vector<std::uint32_t>& argmax, const Shape& input_shape,
                               PoolMode mode) {
  Tensor<T> dx(input_shape);
  const std::size_t plane = input_shape[2] * input_shape[3];
  const long planes = long(dy.size());
#pragma omp parallel for schedule(static) num_threads(threads())
  for (long nc = 0; nc < planes; ++nc) {
    if (mode == PoolMode::avg) {
      std::fill_n(dx.data() + nc * plane, plane, dy[nc] / T(plane));
    } else {
      dx[argmax[nc]] = dy[nc];
    }
  }
  return dx;
}

template <class T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias) {
  if (x.rank() != 2 || weights.rank() != 2 || x.dim(1) != weights.dim(0) || bias.size() != weights.dim(1)) {
    throw ShapeError("dense: incompatible shapes " + shape_to_string(x.shape()) + " x " +
                     shape_to_string(weights.shape()) + " + " + shape_to_string(bias.shape()));
  }
  const long n = long(x.dim(0)), d = long(x.dim(1)), u = long(weights.dim(1));
  Tensor<T> y({x.dim(0), weights.dim(1)});
  MutMap<T> out(y.data(), n, u);
  out.noalias() = ConstMap<T>(x.data(), n, d) * ConstMap<T>(weights.data(), d, u);
  for (long i = 0; i < n; ++i)
    for (long k = 0; k < u; ++k) out(i, k) += bias[std::size_t(k)];
  return y;
}

template <class T>
DenseGrads<T> dense_backward(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& dy) {
  const long n = long(x.dim(0)), d = long(x.dim(1)), u = long(weights.dim(1));
  DenseGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(weights.shape()), Tensor<T>({weights.dim(1)})};
  ConstMap<T> up(dy.data(), n, u);
  MutMap<T>(g.input.data(), n, d).noalias() = up * ConstMap<T>(weights.data(), d, u).transpose();
  MutMap<T>(g.weights.data(), d, u).noalias() = ConstMap<T>(x.data(), n, d).transpose() * up;
  for (long k = 0; k < u; ++k) g.bias[std::size_t(k)] = up.col(k).sum();
  return g;
}

#define VDCNET_INSTANTIATE(T)                                                                                     \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvGeometry&);  \
  template ConvGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvGeometry&, \
                                        bool, bool);                                                              \
  template PoolResult<T> maxpool2d_forward(const Tensor<T>&, std::size_t);                                        \
  template Tensor<T> maxpool2d_backward(const Tensor<T>&, const std::vector<std::uint32_t>&, const Shape&);       \
  template BatchNormForward<T> batchnorm_forward_train(const Tensor<T>&, const Buffer<T>&,                   \
                                                       const Buffer<T>&, T);                                 \
  template Tensor<T> batchnorm_forward_infer(const Tensor<T>&, const Buffer<T>&, const Buffer<T>&,     \
                                             const Buffer<T>&, const Buffer<T>&, T);                    \
  template BatchNormGrads<T> batchnorm_backward(const Tensor<T>&, const Tensor<T>&, const Buffer<T>&,       \
                                                const Buffer<T>&, const Buffer<T>&, T, bool);           \
  template PoolResult<T> global_pool_forward(const Tensor<T>&, PoolMode);                                         \
  template Tensor<T> global_pool_backward(const Tensor<T>&, const std::vector<std::uint32_t>&, const Shape&,     \
                                          PoolMode);                                                              \
  template Tensor<T> dense_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                         \
  template DenseGrads<T> dense_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

VDCNET_INSTANTIATE(float)
VDCNET_INSTANTIATE(double)
#undef VDCNET_INSTANTIATE

}  // namespace vdcnet::kernels
