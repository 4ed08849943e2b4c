#include "vdcnet/model.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "vdcnet/rng.hpp"

namespace vdcnet {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::input: return "input";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::conv: return "conv";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::concat: return "concat";
    case LayerKind::add: return "add";
    case LayerKind::global_pool: return "global_pool";
    case LayerKind::dense: return "dense";
    case LayerKind::sigmoid: return "sigmoid";
  }
  return "?";
}

const char* to_string(PoolMode mode) { return mode == PoolMode::avg ? "avg" : "max"; }

PoolMode parse_pool_mode(const std::string& text) {
  if (text == "avg" || text == "gap") return PoolMode::avg;
  if (text == "max" || text == "gmp") return PoolMode::max;
  throw ConfigError("unknown pooling mode '" + text + "' (expected avg or max)");
}

// ---------------------------------------------------------------------------
// ModelGraph

ModelGraph::ModelGraph(std::string name, std::size_t input_channels, std::size_t input_size)
    : name_(std::move(name)), input_channels_(input_channels), input_size_(input_size) {
  if (input_channels == 0 || input_size == 0) throw ArgumentError("model input must be non-empty");
  LayerSpec in;
  in.kind = LayerKind::input;
  in.name = "input";
  in.output = {input_channels, input_size, input_size};
  layers_.push_back(std::move(in));
}

std::size_t ModelGraph::count(LayerKind kind) const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.kind == kind;
  return n;
}

std::optional<std::size_t> ModelGraph::find_tap(const std::string& tap) const {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (layers_[i].tap == tap) return i;
  return std::nullopt;
}

std::optional<std::size_t> ModelGraph::find_layer(const std::string& name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (layers_[i].name == name) return i;
  return std::nullopt;
}

std::size_t ModelGraph::add(LayerSpec spec) {
  for (std::size_t in : spec.inputs) {
    if (in >= layers_.size()) throw ArgumentError("layer " + spec.name + " references a later layer");
  }
  auto input_shape = [&](std::size_t k) -> const Shape& { return layers_[spec.inputs.at(k)].output; };
  auto require_spatial = [&](const Shape& s) {
    if (s.size() != 3) throw ShapeError(spec.name + ": expected a spatial (C, H, W) input");
  };
  switch (spec.kind) {
    case LayerKind::input: throw ArgumentError("only one input layer is allowed");
    case LayerKind::batchnorm:
    case LayerKind::relu:
    case LayerKind::sigmoid:
      spec.output = input_shape(0);
      break;
    case LayerKind::conv: {
      const Shape& s = input_shape(0);
      require_spatial(s);
      if (spec.filters == 0 || spec.kernel == 0 || spec.kernel % 2 == 0) {
        throw ArgumentError(spec.name + ": conv needs positive filters and an odd kernel");
      }
      spec.output = {spec.filters, s[1], s[2]};
      break;
    }
    case LayerKind::maxpool: {
      const Shape& s = input_shape(0);
      require_spatial(s);
      if (spec.pool == 0 || s[1] % spec.pool || s[2] % spec.pool) {
        throw ArgumentError(spec.name + ": spatial size " + std::to_string(s[1]) + " not divisible by pool " +
                            std::to_string(spec.pool));
      }
      spec.output = {s[0], s[1] / spec.pool, s[2] / spec.pool};
      break;
    }
    case LayerKind::concat: {
      const Shape& a = input_shape(0);
      const Shape& b = input_shape(1);
      require_spatial(a);
      require_spatial(b);
      if (a[1] != b[1] || a[2] != b[2]) throw ShapeError(spec.name + ": concat spatial mismatch");
      spec.output = {a[0] + b[0], a[1], a[2]};
      break;
    }
    case LayerKind::add: {
      if (input_shape(0) != input_shape(1)) {
        throw ShapeError(spec.name + ": addition skip shape mismatch " + shape_to_string(input_shape(0)) + " vs " +
                         shape_to_string(input_shape(1)));
      }
      spec.output = input_shape(0);
      break;
    }
    case LayerKind::global_pool: {
      const Shape& s = input_shape(0);
      require_spatial(s);
      spec.output = {s[0]};
      break;
    }
    case LayerKind::dense: {
      if (input_shape(0).size() != 1) throw ShapeError(spec.name + ": dense expects a flat input");
      if (spec.units == 0) throw ArgumentError(spec.name + ": dense needs at least one unit");
      spec.output = {spec.units};
      break;
    }
  }
  layers_.push_back(std::move(spec));
  return layers_.size() - 1;
}

std::size_t ModelGraph::batchnorm(std::size_t in, const std::string& name) {
  LayerSpec s;
  s.kind = LayerKind::batchnorm;
  s.name = name;
  s.inputs = {in};
  return add(std::move(s));
}

std::size_t ModelGraph::relu(std::size_t in, const std::string& name) {
  LayerSpec s;
  s.kind = LayerKind::relu;
  s.name = name;
  s.inputs = {in};
  return add(std::move(s));
}

std::size_t ModelGraph::conv(std::size_t in, std::size_t kernel, std::size_t filters, const std::string& name) {
  LayerSpec s;
  s.kind = LayerKind::conv;
  s.name = name;
  s.inputs = {in};
  s.kernel = kernel;
  s.filters = filters;
  return add(std::move(s));
}

std::size_t ModelGraph::maxpool(std::size_t in, std::size_t pool, const std::string& name) {
  LayerSpec s;
  s.kind = LayerKind::maxpool;
  s.name = name;
  s.inputs = {in};
  s.pool = pool;
  return add(std::move(s));
}

std::size_t ModelGraph::concat(std::size_t a, std::size_t b, const std::string& name) {
  LayerSpec s;
  s.kind = LayerKind::concat;
  s.name = name;
  s.inputs = {a, b};
  return add(std::move(s));
}

std::size_t ModelGraph::add_skip(std::size_t a, std::size_t b, const std::string& name) {
  LayerSpec s;
  s.kind = LayerKind::add;
  s.name = name;
  s.inputs = {a, b};
  return add(std::move(s));
}

std::size_t ModelGraph::global_pool(std::size_t in, PoolMode mode, const std::string& name) {
  LayerSpec s;
  s.kind = LayerKind::global_pool;
  s.name = name;
  s.inputs = {in};
  s.pool_mode = mode;
  return add(std::move(s));
}

std::size_t ModelGraph::dense(std::size_t in, std::size_t units, const std::string& name) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.name = name;
  s.inputs = {in};
  s.units = units;
  return add(std::move(s));
}

std::size_t ModelGraph::sigmoid(std::size_t in, const std::string& name) {
  LayerSpec s;
  s.kind = LayerKind::sigmoid;
  s.name = name;
  s.inputs = {in};
  return add(std::move(s));
}

void ModelGraph::set_tap(std::size_t layer, const std::string& tap) { layers_.at(layer).tap = tap; }

// ---------------------------------------------------------------------------
// Introspection

std::size_t layer_param_count(const ModelGraph& graph, std::size_t i) {
  const LayerSpec& l = graph.layer(i);
  switch (l.kind) {
    case LayerKind::conv: {
      const std::size_t cin = graph.layer(l.inputs[0]).output[0];
      return l.kernel * l.kernel * cin * l.filters + l.filters;
    }
    case LayerKind::batchnorm: return 2 * l.output[0];
    case LayerKind::dense: return graph.layer(l.inputs[0]).output[0] * l.units + l.units;
    default: return 0;
  }
}

std::size_t count_params(const ModelGraph& graph) {
  std::size_t total = 0;
  for (std::size_t i = 0; i < graph.layers().size(); ++i) total += layer_param_count(graph, i);
  return total;
}

HeadSummary head_summary(const ModelGraph& graph) {
  HeadSummary h;
  const auto& layers = graph.layers();
  const std::size_t out = graph.output_layer();
  if (layers[out].kind != LayerKind::sigmoid) return h;
  const std::size_t d = layers[out].inputs[0];
  if (layers[d].kind != LayerKind::dense) return h;
  const std::size_t p = layers[d].inputs[0];
  if (layers[p].kind != LayerKind::global_pool) return h;
  h.valid = true;
  h.pool = layers[p].pool_mode;
  h.dense_units = layers[d].units;
  h.dense_layer = d;
  return h;
}

std::string describe(const ModelGraph& graph) {
  std::ostringstream os;
  os << "model " << graph.name() << "  input " << graph.input_channels() << "x" << graph.input_size() << "x"
     << graph.input_size() << "\n";
  os << std::left << std::setw(5) << "#" << std::setw(26) << "layer" << std::setw(13) << "kind" << std::setw(18)
     << "output" << std::right << std::setw(12) << "params" << "  tap\n";
  for (std::size_t i = 0; i < graph.layers().size(); ++i) {
    const LayerSpec& l = graph.layer(i);
    std::string kind = to_string(l.kind);
    if (l.kind == LayerKind::conv) kind += std::to_string(l.kernel) + "x" + std::to_string(l.kernel);
    if (l.kind == LayerKind::global_pool) kind = std::string("global_") + to_string(l.pool_mode);
    std::string out;
    for (std::size_t k = 0; k < l.output.size(); ++k) out += (k ? "x" : "") + std::to_string(l.output[k]);
    os << std::left << std::setw(5) << i << std::setw(26) << l.name << std::setw(13) << kind << std::setw(18) << out
       << std::right << std::setw(12) << layer_param_count(graph, i) << "  " << l.tap << "\n";
  }
  const HeadSummary head = head_summary(graph);
  os << "trainable parameters: " << count_params(graph) << "\n";
  os << "conv layers: " << graph.conv_count() << "\n";
  os << "maxpool layers: " << graph.maxpool_count() << "\n";
  os << "batchnorm layers: " << graph.count(LayerKind::batchnorm) << "\n";
  os << "concat skips: " << graph.count(LayerKind::concat) << "\n";
  os << "add skips: " << graph.count(LayerKind::add) << "\n";
  if (head.valid) {
    os << "head: global_" << to_string(head.pool) << "_pool -> dense(" << head.dense_units << ") -> sigmoid\n";
  } else {
    os << "head: nonstandard\n";
  }
  if (auto tap = graph.find_tap(kLastConvTap)) {
    const Shape& s = graph.layer(*tap).output;
    os << "last_conv tap: " << s[0] << "x" << s[1] << "x" << s[2] << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Builders

namespace {

std::size_t scaled(std::size_t base, double m) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(double(base) * m)));
}

}  // namespace

std::size_t build_conv_block(ModelGraph& g, std::size_t in, const std::array<std::size_t, 3>& widths, bool with_pool,
                             const std::string& prefix) {
  static constexpr std::array<std::size_t, 3> kernels = {1, 3, 1};
  std::size_t x = in;
  for (std::size_t i = 0; i < 3; ++i) {
    if (widths[i] == 0) throw ArgumentError(prefix + ": block widths must be positive");
    const std::string tag = prefix + "." + std::to_string(i + 1);
    x = g.batchnorm(x, tag + ".bn");
    x = g.relu(x, tag + ".relu");
    x = g.conv(x, kernels[i], widths[i], tag + ".conv");
  }
  x = g.concat(in, x, prefix + ".concat");
  if (with_pool) x = g.maxpool(x, 2, prefix + ".pool");
  return x;
}

ModelGraph build_vdcnet(const VdcNetConfig& c) {
  if (c.input_size == 0 || c.input_size % 16 != 0) {
    throw ArgumentError("VDCNet input size must be a positive multiple of 16, got " + std::to_string(c.input_size));
  }
  if (!(c.width_multiplier > 0)) throw ArgumentError("width multiplier must be positive");
  const double m = c.width_multiplier;
  ModelGraph g(c.head_pool == PoolMode::avg ? "vdcnet" : "vdcnet-gmp", c.input_channels, c.input_size);
  std::size_t x = g.batchnorm(0, "stem.bn");
  x = g.conv(x, 3, scaled(c.stem_filters, m), "stem.conv");
  for (std::size_t b = 0; b < 6; ++b) {
    const std::size_t w = scaled(c.block_widths[b], m);
    x = build_conv_block(g, x, {w, w, w}, b < 4, "block" + std::to_string(b + 1));
  }
  x = g.batchnorm(x, "final.bn");
  x = g.relu(x, "final.relu");
  x = g.conv(x, 1, scaled(c.final_filters, m), "final.conv");
  x = g.relu(x, "final.act");
  g.set_tap(x, kLastConvTap);
  x = g.global_pool(x, c.head_pool, "head.pool");
  x = g.dense(x, 1, "head.dense");
  g.sigmoid(x, "head.sigmoid");
  return g;
}

std::size_t build_residual_block(ModelGraph& g, std::size_t in, std::size_t out_channels, bool with_pool,
                                 const std::string& prefix) {
  const std::size_t in_channels = g.layer(in).output[0];
  const std::size_t mid = std::max<std::size_t>(1, out_channels / 4);
  static constexpr std::array<std::size_t, 3> kernels = {1, 3, 1};
  const std::array<std::size_t, 3> widths = {mid, mid, out_channels};
  std::size_t x = in;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string tag = prefix + "." + std::to_string(i + 1);
    x = g.batchnorm(x, tag + ".bn");
    x = g.relu(x, tag + ".relu");
    x = g.conv(x, kernels[i], widths[i], tag + ".conv");
  }
  std::size_t skip = in;
  if (in_channels != out_channels) skip = g.conv(in, 1, out_channels, prefix + ".proj");
  x = g.add_skip(skip, x, prefix + ".add");
  if (with_pool) x = g.maxpool(x, 2, prefix + ".pool");
  return x;
}

ModelGraph build_reference_net(const ReferenceNetConfig& c) {
  if (c.input_size == 0 || c.input_size % 32 != 0) {
    throw ArgumentError("reference net input size must be a positive multiple of 32, got " +
                        std::to_string(c.input_size));
  }
  if (!(c.width_multiplier > 0)) throw ArgumentError("width multiplier must be positive");
  const double m = c.width_multiplier;
  ModelGraph g("reference-resnet", c.input_channels, c.input_size);
  std::size_t x = g.batchnorm(0, "stem.bn");
  x = g.conv(x, 3, scaled(c.stem_filters, m), "stem.conv");
  for (std::size_t s = 0; s < 5; ++s) {
    x = build_residual_block(g, x, scaled(c.stage_widths[s], m), true, "stage" + std::to_string(s + 1));
  }
  x = g.batchnorm(x, "final.bn");
  x = g.relu(x, "final.relu");
  x = g.conv(x, 1, scaled(c.final_filters, m), "final.conv");
  x = g.relu(x, "final.act");
  g.set_tap(x, kLastConvTap);
  x = g.global_pool(x, c.head_pool, "head.pool");
  x = g.dense(x, 1, "head.dense");
  g.sigmoid(x, "head.sigmoid");
  return g;
}

// ---------------------------------------------------------------------------
// Session

Session::Session(std::shared_ptr<const ModelGraph> graph, std::uint64_t seed) : graph_(std::move(graph)) {
  if (!graph_) throw ArgumentError("session needs a graph");
  state_.resize(graph_->layers().size());
  for (std::size_t i = 0; i < graph_->layers().size(); ++i) {
    const LayerSpec& l = graph_->layer(i);
    LayerState& st = state_[i];
    Rng rng = make_rng(seed, {fnv1a(l.name)});
    if (l.kind == LayerKind::conv || l.kind == LayerKind::dense) {
      const std::size_t fan_in = l.kind == LayerKind::conv
                                     ? graph_->layer(l.inputs[0]).output[0] * l.kernel * l.kernel
                                     : graph_->layer(l.inputs[0]).output[0];
      const Shape shape = l.kind == LayerKind::conv
                              ? Shape{l.filters, graph_->layer(l.inputs[0]).output[0], l.kernel, l.kernel}
                              : Shape{graph_->layer(l.inputs[0]).output[0], l.units};
      std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / double(fan_in)));
      Tensor<float> w(shape);
      for (auto& v : w.values()) v = float(normal(rng));
      st.kernel.emplace(l.name + ".kernel", std::move(w));
      st.bias.emplace(l.name + ".bias", Tensor<float>({l.kind == LayerKind::conv ? l.filters : l.units}));
    } else if (l.kind == LayerKind::batchnorm) {
      st.bn.emplace(l.output[0], l.name);
    }
  }
}

ForwardResult Session::forward(Tape<float>& tape, const Tensor<float>& batch, Mode mode) {
  const ModelGraph& g = *graph_;
  if (batch.rank() != 4 || batch.dim(1) != g.input_channels() || batch.dim(2) != g.input_size() ||
      batch.dim(3) != g.input_size()) {
    throw ShapeError("model " + g.name() + " expects (N, " + std::to_string(g.input_channels()) + ", " +
                     std::to_string(g.input_size()) + ", " + std::to_string(g.input_size()) + ") input, got " +
                     shape_to_string(batch.shape()));
  }
  ForwardResult r;
  std::vector<Var> vars(g.layers().size());
  for (std::size_t i = 0; i < g.layers().size(); ++i) {
    const LayerSpec& l = g.layer(i);
    LayerState& st = state_[i];
    auto in = [&](std::size_t k) { return vars[l.inputs[k]]; };
    switch (l.kind) {
      case LayerKind::input: vars[i] = tape.constant(batch); break;
      case LayerKind::batchnorm: vars[i] = ops::batchnorm2d(tape, in(0), *st.bn, mode); break;
      case LayerKind::relu: vars[i] = ops::relu(tape, in(0)); break;
      case LayerKind::conv:
        vars[i] = ops::conv2d(tape, in(0), tape.parameter(*st.kernel), tape.parameter(*st.bias));
        break;
      case LayerKind::maxpool: vars[i] = ops::maxpool2d(tape, in(0), l.pool); break;
      case LayerKind::concat: vars[i] = ops::concat_channels(tape, in(0), in(1)); break;
      case LayerKind::add: vars[i] = ops::add(tape, in(0), in(1)); break;
      case LayerKind::global_pool: vars[i] = ops::global_pool(tape, in(0), l.pool_mode); break;
      case LayerKind::dense:
        vars[i] = ops::dense(tape, in(0), tape.parameter(*st.kernel), tape.parameter(*st.bias));
        break;
      case LayerKind::sigmoid:
        r.logits = in(0);
        vars[i] = ops::sigmoid(tape, in(0));
        break;
    }
    if (!l.tap.empty()) r.taps[l.tap] = vars[i];
  }
  r.probs = vars.back();
  if (!r.logits.valid()) r.logits = r.probs;
  return r;
}

ForwardResult forward_with_taps(Session& session, Tape<float>& tape, const Tensor<float>& batch, Mode mode) {
  return session.forward(tape, batch, mode);
}

std::vector<Parameter<float>*> Session::trainable() {
  std::vector<Parameter<float>*> out;
  for (auto& st : state_) {
    if (st.kernel) out.push_back(&*st.kernel);
    if (st.bias) out.push_back(&*st.bias);
    if (st.bn) {
      out.push_back(&st.bn->gamma);
      out.push_back(&st.bn->beta);
    }
  }
  return out;
}

std::vector<NamedTensor<float>> Session::export_weights() const {
  std::vector<NamedTensor<float>> out;
  for (const auto& st : state_) {
    if (st.kernel) out.push_back({st.kernel->name, st.kernel->value});
    if (st.bias) out.push_back({st.bias->name, st.bias->value});
    if (st.bn) {
      out.push_back({st.bn->gamma.name, st.bn->gamma.value});
      out.push_back({st.bn->beta.name, st.bn->beta.value});
      out.push_back({st.bn->moving_mean.name, st.bn->moving_mean.value});
      out.push_back({st.bn->moving_variance.name, st.bn->moving_variance.value});
    }
  }
  return out;
}

void Session::import_weights(const std::vector<NamedTensor<float>>& records) {
  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& r : records) by_name[r.name] = &r.value;
  auto assign = [&](Parameter<float>& p) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw IoError("weights are missing tensor '" + p.name + "'");
    if (it->second->shape() != p.value.shape()) {
      throw ShapeError("tensor '" + p.name + "' has shape " + shape_to_string(it->second->shape()) + ", model expects " +
                       shape_to_string(p.value.shape()));
    }
    p.value = *it->second;
    p.zero_grad();
  };
  for (auto& st : state_) {
    if (st.kernel) assign(*st.kernel);
    if (st.bias) assign(*st.bias);
    if (st.bn) {
      assign(st.bn->gamma);
      assign(st.bn->beta);
      assign(st.bn->moving_mean);
      assign(st.bn->moving_variance);
    }
  }
}

void Session::save(const std::filesystem::path& path) const { save_weights(path, export_weights()); }

void Session::load(const std::filesystem::path& path) { import_weights(load_weights<float>(path)); }

const Parameter<float>& Session::dense_weights() const {
  const HeadSummary head = head_summary(*graph_);
  if (!head.valid) throw UnsupportedArchitecture("model has no global-pool -> dense -> sigmoid head");
  return *state_[head.dense_layer].kernel;
}

const BatchNormState<float>* Session::batchnorm_state(std::size_t layer) const {
  const auto& st = state_.at(layer);
  return st.bn ? &*st.bn : nullptr;
}

BatchNormState<float>* Session::batchnorm_state(std::size_t layer) {
  auto& st = state_.at(layer);
  return st.bn ? &*st.bn : nullptr;
}

Parameter<float>* Session::kernel(std::size_t layer) {
  auto& st = state_.at(layer);
  return st.kernel ? &*st.kernel : nullptr;
}

Parameter<float>* Session::bias(std::size_t layer) {
  auto& st = state_.at(layer);
  return st.bias ? &*st.bias : nullptr;
}

}  // namespace vdcnet
