// Parallel kernels against the serial reference on layer shapes from the
// half-scale VDCNet (batch 6, 176x176 input, width 1/16).
//
//   ./bench_kernels --benchmark_filter=conv_forward

#include <benchmark/benchmark.h>

#include <random>

#include "vdcnet/kernels.hpp"
#include "vdcnet/rng.hpp"

namespace {

using namespace vdcnet;

Tensor<float> random_tensor(const Shape& shape, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::normal_distribution<float> dist(0.f, 1.f);
  Tensor<float> t(shape);
  for (auto& v : t.storage()) v = dist(rng);
  return t;
}

struct Parallel {
  template <class... A>
  static auto conv_fwd(const A&... a) { return kernels::conv2d_forward<float>(a...); }
  template <class... A>
  static auto conv_bwd(const A&... a) { return kernels::conv2d_backward<float>(a...); }
  template <class... A>
  static auto bn_fwd(const A&... a) { return kernels::batchnorm_forward_train<float>(a...); }
  template <class... A>
  static auto pool_fwd(const A&... a) { return kernels::maxpool2d_forward<float>(a...); }
};

struct Serial {
  template <class... A>
  static auto conv_fwd(const A&... a) { return reference::conv2d_forward<float>(a...); }
  template <class... A>
  static auto conv_bwd(const A&... a) { return reference::conv2d_backward<float>(a...); }
  template <class... A>
  static auto bn_fwd(const A&... a) { return reference::batchnorm_forward_train<float>(a...); }
  template <class... A>
  static auto pool_fwd(const A&... a) { return reference::maxpool2d_forward<float>(a...); }
};

// args: channels in, filters, spatial size, kernel size
template <class Impl>
void conv_forward(benchmark::State& state) {
  const auto c = std::size_t(state.range(0)), f = std::size_t(state.range(1));
  const auto s = std::size_t(state.range(2)), k = std::size_t(state.range(3));
  const auto x = random_tensor({6, c, s, s}, 1);
  const auto w = random_tensor({f, c, k, k}, 2);
  const auto b = random_tensor({f}, 3);
  const auto g = conv_geometry(x.shape(), w.shape(), 1, Padding::same);
  for (auto _ : state) benchmark::DoNotOptimize(Impl::conv_fwd(x, w, b, g));
  state.SetItemsProcessed(state.iterations() * std::int64_t(6 * f * s * s * c * k * k));
}

template <class Impl>
void conv_backward(benchmark::State& state) {
  const auto c = std::size_t(state.range(0)), f = std::size_t(state.range(1));
  const auto s = std::size_t(state.range(2)), k = std::size_t(state.range(3));
  const auto x = random_tensor({6, c, s, s}, 1);
  const auto w = random_tensor({f, c, k, k}, 2);
  const auto g = conv_geometry(x.shape(), w.shape(), 1, Padding::same);
  const auto dy = random_tensor(g.output_shape(), 4);
  for (auto _ : state) benchmark::DoNotOptimize(Impl::conv_bwd(x, w, dy, g, true, true));
  state.SetItemsProcessed(state.iterations() * std::int64_t(12 * f * s * s * c * k * k));
}

// args: channels, spatial size
template <class Impl>
void batchnorm_train(benchmark::State& state) {
  const auto c = std::size_t(state.range(0)), s = std::size_t(state.range(1));
  const auto x = random_tensor({6, c, s, s}, 5);
  Buffer<float> gamma(c, 1.f), beta(c, 0.f);
  for (auto _ : state) benchmark::DoNotOptimize(Impl::bn_fwd(x, gamma, beta, 1e-3f));
}

template <class Impl>
void maxpool(benchmark::State& state) {
  const auto c = std::size_t(state.range(0)), s = std::size_t(state.range(1));
  const auto x = random_tensor({6, c, s, s}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(Impl::pool_fwd(x, std::size_t(2)));
}

void conv_shapes(benchmark::internal::Benchmark* b) {
  b->Args({3, 3, 176, 3})      // stem
      ->Args({3, 5, 176, 3})   // block1 3x3
      ->Args({15, 20, 44, 3})  // block3 3x3
      ->Args({40, 40, 11, 3})  // block5 3x3
      ->Args({157, 256, 11, 1})
      ->Unit(benchmark::kMillisecond);
}

void map_shapes(benchmark::internal::Benchmark* b) {
  b->Args({8, 176})->Args({38, 44})->Args({157, 22})->Unit(benchmark::kMicrosecond);
}

BENCHMARK_TEMPLATE(conv_forward, Parallel)->Apply(conv_shapes)->UseRealTime();
BENCHMARK_TEMPLATE(conv_forward, Serial)->Apply(conv_shapes);
BENCHMARK_TEMPLATE(conv_backward, Parallel)->Apply(conv_shapes)->UseRealTime();
BENCHMARK_TEMPLATE(conv_backward, Serial)->Apply(conv_shapes);
BENCHMARK_TEMPLATE(batchnorm_train, Parallel)->Apply(map_shapes)->UseRealTime();
BENCHMARK_TEMPLATE(batchnorm_train, Serial)->Apply(map_shapes);
BENCHMARK_TEMPLATE(maxpool, Parallel)->Apply(map_shapes)->UseRealTime();
BENCHMARK_TEMPLATE(maxpool, Serial)->Apply(map_shapes);

}  // namespace

BENCHMARK_MAIN();
