// Serial direct-loop kernels. Slow and obvious on purpose: they back the
// parallel kernels in tests and in the benchmark.

#include <algorithm>
#include <cmath>
#include <limits>

#include "vdcnet/kernels.hpp"

namespace vdcnet {

ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, long stride, Padding padding) {
  if (input.size() != 4) throw ShapeError("conv2d: input must be (N, C, H, W), got " + shape_to_string(input));
  if (kernel.size() != 4) throw ShapeError("conv2d: kernel must be (F, C, kh, kw), got " + shape_to_string(kernel));
  if (stride <= 0) throw ArgumentError("conv2d: stride must be positive, got " + std::to_string(stride));
  if (kernel[1] != input[1]) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernel[1]) + " input channels, input has " +
                     std::to_string(input[1]));
  }
  ConvGeometry g;
  g.batch = input[0];
  g.in_channels = input[1];
  g.in_h = input[2];
  g.in_w = input[3];
  g.filters = kernel[0];
  g.kernel_h = kernel[2];
  g.kernel_w = kernel[3];
  g.stride = static_cast<std::size_t>(stride);
  if (g.kernel_h == 0 || g.kernel_w == 0) throw ShapeError("conv2d: empty kernel");
  if (padding == Padding::same) {
    g.out_h = (g.in_h + g.stride - 1) / g.stride;
    g.out_w = (g.in_w + g.stride - 1) / g.stride;
    const long pad_h = std::max<long>(0, static_cast<long>((g.out_h - 1) * g.stride + g.kernel_h) - long(g.in_h));
    const long pad_w = std::max<long>(0, static_cast<long>((g.out_w - 1) * g.stride + g.kernel_w) - long(g.in_w));
    g.pad_top = static_cast<std::size_t>(pad_h / 2);
    g.pad_left = static_cast<std::size_t>(pad_w / 2);
  } else {
    if (g.in_h < g.kernel_h || g.in_w < g.kernel_w) throw ShapeError("conv2d: kernel larger than valid input");
    g.out_h = (g.in_h - g.kernel_h) / g.stride + 1;
    g.out_w = (g.in_w - g.kernel_w) / g.stride + 1;
  }
  return g;
}

namespace reference {

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, const ConvGeometry& g) {
  Tensor<T> y(g.output_shape());
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t f = 0; f < g.filters; ++f)
      for (std::size_t oh = 0; oh < g.out_h; ++oh)
        for (std::size_t ow = 0; ow < g.out_w; ++ow) {
          T acc = bias.empty() ? T{0} : bias[f];
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t i = 0; i < g.kernel_h; ++i)
              for (std::size_t j = 0; j < g.kernel_w; ++j) {
                const long ih = long(oh * g.stride + i) - long(g.pad_top);
                const long iw = long(ow * g.stride + j) - long(g.pad_left);
                if (ih < 0 || iw < 0 || ih >= long(g.in_h) || iw >= long(g.in_w)) continue;
                acc += x.at(n, c, ih, iw) * kernel.at(f, c, i, j);
              }
          y.at(n, f, oh, ow) = acc;
        }
  return y;
}

template <class T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& dy, const ConvGeometry& g,
                             bool need_input, bool need_params) {
  ConvGrads<T> grads;
  if (need_input) grads.input = Tensor<T>(x.shape());
  if (need_params) {
    grads.kernel = Tensor<T>(kernel.shape());
    grads.bias = Tensor<T>({g.filters});
  }
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t f = 0; f < g.filters; ++f)
      for (std::size_t oh = 0; oh < g.out_h; ++oh)
        for (std::size_t ow = 0; ow < g.out_w; ++ow) {
          const T up = dy.at(n, f, oh, ow);
          if (need_params) grads.bias[f] += up;
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t i = 0; i < g.kernel_h; ++i)
              for (std::size_t j = 0; j < g.kernel_w; ++j) {
                const long ih = long(oh * g.stride + i) - long(g.pad_top);
                const long iw = long(ow * g.stride + j) - long(g.pad_left);
                if (ih < 0 || iw < 0 || ih >= long(g.in_h) || iw >= long(g.in_w)) continue;
                if (need_input) grads.input.at(n, c, ih, iw) += up * kernel.at(f, c, i, j);
                if (need_params) grads.kernel.at(f, c, i, j) += up * x.at(n, c, ih, iw);
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
  PoolResult<T> r;
  r.output = Tensor<T>({s[0], s[1], s[2] / pool, s[3] / pool});
  r.argmax.resize(r.output.size());
  std::size_t o = 0;
  for (std::size_t n = 0; n < s[0]; ++n)
    for (std::size_t c = 0; c < s[1]; ++c)
      for (std::size_t oh = 0; oh < s[2] / pool; ++oh)
        for (std::size_t ow = 0; ow < s[3] / pool; ++ow, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_idx = 0;
          bool first = true;
          for (std::size_t i = 0; i < pool; ++i)
            for (std::size_t j = 0; j < pool; ++j) {
              const std::size_t idx = ((n * s[1] + c) * s[2] + oh * pool + i) * s[3] + ow * pool + j;
              if (first || x[idx] > best) {
                best = x[idx];
                best_idx = idx;
                first = false;
              }
            }
          r.output[o] = best;
          r.argmax[o] = static_cast<std::uint32_t>(best_idx);
        }
  return r;
}

template <class T>
Tensor<T> maxpool2d_backward(const Tensor<T>& dy, const std::vector<std::uint32_t>& argmax, const Shape& input_shape) {
  Tensor<T> dx(input_shape);
  for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax[o]] += dy[o];
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
  for (std::size_t c = 0; c < s[1]; ++c) {
    double sum = 0;
    for (std::size_t n = 0; n < s[0]; ++n)
      for (std::size_t p = 0; p < plane; ++p) sum += x[(n * s[1] + c) * plane + p];
    const double mean = sum / count;
    double sq = 0;
    for (std::size_t n = 0; n < s[0]; ++n)
      for (std::size_t p = 0; p < plane; ++p) {
        const double d = x[(n * s[1] + c) * plane + p] - mean;
        sq += d * d;
      }
    const double var = sq / count;
    r.mean[c] = T(mean);
    r.variance[c] = T(var);
    const double inv = 1.0 / std::sqrt(var + double(epsilon));
    for (std::size_t n = 0; n < s[0]; ++n)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t idx = (n * s[1] + c) * plane + p;
        r.output[idx] = T(double(gamma[c]) * (x[idx] - mean) * inv + double(beta[c]));
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
  for (std::size_t n = 0; n < s[0]; ++n)
    for (std::size_t c = 0; c < s[1]; ++c) {
      const T inv = T(1) / std::sqrt(variance[c] + epsilon);
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t idx = (n * s[1] + c) * plane + p;
        y[idx] = gamma[c] * (x[idx] - mean[c]) * inv + beta[c];
      }
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
  for (std::size_t c = 0; c < s[1]; ++c) {
    const double inv = 1.0 / std::sqrt(double(variance[c]) + double(epsilon));
    double dgamma = 0, dbeta = 0;
    for (std::size_t n = 0; n < s[0]; ++n)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t idx = (n * s[1] + c) * plane + p;
        const double xhat = (x[idx] - double(mean[c])) * inv;
        dgamma += dy[idx] * xhat;
        dbeta += dy[idx];
      }
    g.gamma[c] = T(dgamma);
    g.beta[c] = T(dbeta);
    for (std::size_t n = 0; n < s[0]; ++n)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t idx = (n * s[1] + c) * plane + p;
        if (batch_stats) {
          const double xhat = (x[idx] - double(mean[c])) * inv;
          g.input[idx] = T(double(gamma[c]) * inv / count * (count * dy[idx] - dbeta - xhat * dgamma));
        } else {
          g.input[idx] = T(double(dy[idx]) * double(gamma[c]) * inv);
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
  for (std::size_t nc = 0; nc < s[0] * s[1]; ++nc) {
    const T* p = x.data() + nc * plane;
    if (mode == PoolMode::avg) {
      double sum = 0;
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      r.output[nc] = T(sum / double(plane));
    } else {
      std::size_t best = 0;
      for (std::size_t i = 1; i < plane; ++i)
        if (p[i] > p[best]) best = i;
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
  for (std::size_t nc = 0; nc < dy.size(); ++nc) {
    if (mode == PoolMode::avg) {
      const T share = dy[nc] / T(plane);
      for (std::size_t i = 0; i < plane; ++i) dx[nc * plane + i] = share;
    } else {
      dx[argmax[nc]] += dy[nc];
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
  const std::size_t n = x.dim(0), d = x.dim(1), u = weights.dim(1);
  Tensor<T> y({n, u});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < u; ++k) {
      T acc = bias[k];
      for (std::size_t j = 0; j < d; ++j) acc += x[i * d + j] * weights[j * u + k];
      y[i * u + k] = acc;
    }
  return y;
}

template <class T>
DenseGrads<T> dense_backward(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& dy) {
  const std::size_t n = x.dim(0), d = x.dim(1), u = weights.dim(1);
  DenseGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(weights.shape()), Tensor<T>({u})};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < u; ++k) {
      const T up = dy[i * u + k];
      g.bias[k] += up;
      for (std::size_t j = 0; j < d; ++j) {
        g.input[i * d + j] += up * weights[j * u + k];
        g.weights[j * u + k] += up * x[i * d + j];
      }
    }
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

}  // namespace reference
}  // namespace vdcnet
