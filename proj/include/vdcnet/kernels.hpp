#pragma once

// Layer kernels in two flavours with identical signatures:
//   vdcnet::kernels    OpenMP-parallel, im2col + GEMM convolution (used in training)
//   vdcnet::reference  serial direct loops (test oracle and benchmark baseline)
//
// Parallel kernels are bitwise deterministic for any thread count: every
// reduction is either owned by one thread or combined in a fixed order.

#include <cstdint>
#include <vector>

#include "vdcnet/tensor.hpp"

namespace vdcnet {

enum class Padding { same, valid };
enum class PoolMode { avg, max };

struct ConvGeometry {
  std::size_t batch = 0, in_channels = 0, in_h = 0, in_w = 0;
  std::size_t filters = 0, kernel_h = 0, kernel_w = 0;
  std::size_t stride = 1;
  std::size_t pad_top = 0, pad_left = 0;
  std::size_t out_h = 0, out_w = 0;

  Shape output_shape() const { return {batch, filters, out_h, out_w}; }
};

// Validates shapes and resolves padding (TensorFlow "same" convention: extra
// padding row/column goes to the bottom/right).
ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, long stride, Padding padding);

template <class T>
struct ConvGrads {
  Tensor<T> input, kernel, bias;
};

template <class T>
struct PoolResult {
  Tensor<T> output;
  std::vector<std::uint32_t> argmax;  // flat index into the input, one per output cell
};

template <class T>
struct BatchNormForward {
  Tensor<T> output;
  Buffer<T> mean, variance;  // biased batch statistics per channel
};

template <class T>
struct BatchNormGrads {
  Tensor<T> input;
  Buffer<T> gamma, beta;
};

template <class T>
struct DenseGrads {
  Tensor<T> input, weights, bias;
};

#define VDCNET_DECLARE_KERNELS                                                                          \
  template <class T>                                                                                    \
  Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,          \
                           const ConvGeometry& g);                                                      \
  template <class T>                                                                                    \
  ConvGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& dy,        \
                               const ConvGeometry& g, bool need_input, bool need_params);               \
  template <class T>                                                                                    \
  PoolResult<T> maxpool2d_forward(const Tensor<T>& x, std::size_t pool);                               \
  template <class T>                                                                                    \
  Tensor<T> maxpool2d_backward(const Tensor<T>& dy, const std::vector<std::uint32_t>& argmax,          \
                               const Shape& input_shape);                                               \
  template <class T>                                                                                    \
  BatchNormForward<T> batchnorm_forward_train(const Tensor<T>& x, const Buffer<T>& gamma,          \
                                              const Buffer<T>& beta, T epsilon);                   \
  template <class T>                                                                                    \
  Tensor<T> batchnorm_forward_infer(const Tensor<T>& x, const Buffer<T>& gamma,                    \
                                    const Buffer<T>& beta, const Buffer<T>& mean,             \
                                    const Buffer<T>& variance, T epsilon);                         \
  template <class T>                                                                                    \
  BatchNormGrads<T> batchnorm_backward(const Tensor<T>& x, const Tensor<T>& dy,                         \
                                       const Buffer<T>& gamma, const Buffer<T>& mean,         \
                                       const Buffer<T>& variance, T epsilon, bool batch_stats);    \
  template <class T>                                                                                    \
  PoolResult<T> global_pool_forward(const Tensor<T>& x, PoolMode mode);                                 \
  template <class T>                                                                                    \
  Tensor<T> global_pool_backward(const Tensor<T>& dy, const std::vector<std::uint32_t>& argmax,        \
                                 const Shape& input_shape, PoolMode mode);                              \
  template <class T>                                                                                    \
  Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias);         \
  template <class T>                                                                                    \
  DenseGrads<T> dense_backward(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& dy);

namespace kernels {
VDCNET_DECLARE_KERNELS

// Number of OpenMP threads the parallel kernels use; 0 restores the runtime default.
void set_num_threads(int threads);
int num_threads();
}  // namespace kernels

namespace reference {
VDCNET_DECLARE_KERNELS
}  // namespace reference

#undef VDCNET_DECLARE_KERNELS

}  // namespace vdcnet
