#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vdcnet/autograd.hpp"
#include "vdcnet/weights_io.hpp"

namespace vdcnet {

enum class LayerKind { input, batchnorm, relu, conv, maxpool, concat, add, global_pool, dense, sigmoid };

const char* to_string(LayerKind kind);
const char* to_string(PoolMode mode);
PoolMode parse_pool_mode(const std::string& text);

struct LayerSpec {
  LayerKind kind = LayerKind::input;
  std::string name;
  std::vector<std::size_t> inputs;  // indices of earlier layers
  std::size_t kernel = 0;           // conv
  std::size_t filters = 0;          // conv
  std::size_t pool = 0;             // maxpool
  std::size_t units = 0;            // dense
  PoolMode pool_mode = PoolMode::avg;
  std::string tap;                  // optional tap name
  Shape output;                     // per-sample shape: {C, H, W} or {D}
};

inline constexpr const char* kLastConvTap = "last_conv";

// Immutable layer DAG in topological order. Layer 0 is the input.
class ModelGraph {
 public:
  ModelGraph(std::string name, std::size_t input_channels, std::size_t input_size);

  const std::string& name() const noexcept { return name_; }
  std::size_t input_size() const noexcept { return input_size_; }
  std::size_t input_channels() const noexcept { return input_channels_; }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  const LayerSpec& layer(std::size_t i) const { return layers_.at(i); }
  std::size_t output_layer() const { return layers_.size() - 1; }

  std::size_t count(LayerKind kind) const;
  std::size_t conv_count() const { return count(LayerKind::conv); }
  std::size_t maxpool_count() const { return count(LayerKind::maxpool); }
  std::optional<std::size_t> find_tap(const std::string& tap) const;
  std::optional<std::size_t> find_layer(const std::string& name) const;

  // Appends a layer, inferring its output shape. Returns its index.
  std::size_t add(LayerSpec spec);

  // Builder shorthands.
  std::size_t batchnorm(std::size_t in, const std::string& name);
  std::size_t relu(std::size_t in, const std::string& name);
  std::size_t conv(std::size_t in, std::size_t kernel, std::size_t filters, const std::string& name);
  std::size_t maxpool(std::size_t in, std::size_t pool, const std::string& name);
  std::size_t concat(std::size_t a, std::size_t b, const std::string& name);
  std::size_t add_skip(std::size_t a, std::size_t b, const std::string& name);
  std::size_t global_pool(std::size_t in, PoolMode mode, const std::string& name);
  std::size_t dense(std::size_t in, std::size_t units, const std::string& name);
  std::size_t sigmoid(std::size_t in, const std::string& name);
  void set_tap(std::size_t layer, const std::string& tap);

 private:
  std::string name_;
  std::size_t input_channels_, input_size_;
  std::vector<LayerSpec> layers_;
};

std::size_t layer_param_count(const ModelGraph& graph, std::size_t layer);
// Trainable parameters: kernels, biases, dense weights, BN gamma/beta.
std::size_t count_params(const ModelGraph& graph);

struct HeadSummary {
  bool valid = false;     // last conv -> act -> global pool -> dense(1) -> sigmoid
  PoolMode pool = PoolMode::avg;
  std::size_t dense_units = 0;
  std::size_t dense_layer = 0;
};
HeadSummary head_summary(const ModelGraph& graph);

// One line per layer with output shape and parameter count, then totals.
std::string describe(const ModelGraph& graph);

struct VdcNetConfig {
  double width_multiplier = 1.0;
  std::size_t input_size = 352;
  std::size_t input_channels = 3;
  PoolMode head_pool = PoolMode::avg;
  std::size_t stem_filters = 40;
  std::array<std::size_t, 6> block_widths = {80, 160, 320, 640, 640, 640};
  std::size_t final_filters = 4096;
};

// Pre-activation bottleneck [BN-ReLU-conv1x1(w1)] [BN-ReLU-conv3x3(w2)]
// [BN-ReLU-conv1x1(w3)], block input concatenated in front of the result,
// optionally followed by 2x2 max pooling. Output channels = in + w3.
std::size_t build_conv_block(ModelGraph& graph, std::size_t in, const std::array<std::size_t, 3>& widths,
                             bool with_pool, const std::string& prefix);

// Stem (BN on raw input, conv3x3) -> 4 pooled blocks -> 2 unpooled blocks ->
// BN-ReLU-conv1x1(final) -> ReLU (tap "last_conv") -> global pool -> dense(1) -> sigmoid.
ModelGraph build_vdcnet(const VdcNetConfig& config);

struct ReferenceNetConfig {
  double width_multiplier = 1.0;
  std::size_t input_size = 352;
  std::size_t input_channels = 3;
  PoolMode head_pool = PoolMode::avg;
  std::size_t stem_filters = 64;
  std::array<std::size_t, 5> stage_widths = {64, 128, 256, 512, 1024};
  std::size_t final_filters = 2048;
};

// Pre-activation residual block with element-wise addition skip; a 1x1
// projection is inserted on the skip when channel counts differ.
std::size_t build_residual_block(ModelGraph& graph, std::size_t in, std::size_t out_channels, bool with_pool,
                                 const std::string& prefix);

// Five residual stages each followed by 2x2 max pooling; tap at input / 32.
ModelGraph build_reference_net(const ReferenceNetConfig& config);

struct ForwardResult {
  Var logits;
  Var probs;
  std::map<std::string, Var> taps;
};

// Mutable per-run state for one graph: weights, BN statistics, init seed.
// One session must only be used by one thread at a time.
class Session {
 public:
  Session(std::shared_ptr<const ModelGraph> graph, std::uint64_t seed);

  const ModelGraph& graph() const noexcept { return *graph_; }
  std::shared_ptr<const ModelGraph> graph_ptr() const noexcept { return graph_; }

  // Records an inference/training pass. `batch` is (N, C, S, S) in [0, 1].
  ForwardResult forward(Tape<float>& tape, const Tensor<float>& batch, Mode mode);

  std::vector<Parameter<float>*> trainable();
  std::vector<NamedTensor<float>> export_weights() const;
  void import_weights(const std::vector<NamedTensor<float>>& records);
  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

  const Parameter<float>& dense_weights() const;
  const BatchNormState<float>* batchnorm_state(std::size_t layer) const;
  BatchNormState<float>* batchnorm_state(std::size_t layer);
  Parameter<float>* kernel(std::size_t layer);
  Parameter<float>* bias(std::size_t layer);

 private:
  struct LayerState {
    std::optional<Parameter<float>> kernel, bias;
    std::optional<BatchNormState<float>> bn;
  };

  std::shared_ptr<const ModelGraph> graph_;
  std::vector<LayerState> state_;
};

// Convenience wrapper matching the forward-with-taps contract.
ForwardResult forward_with_taps(Session& session, Tape<float>& tape, const Tensor<float>& batch, Mode mode);

}  // namespace vdcnet
