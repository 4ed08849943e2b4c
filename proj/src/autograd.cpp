#include "vdcnet/autograd.hpp"

#include <algorithm>
#include <cmath>

namespace vdcnet {

#define VDCNET_DISPATCH(tape, fn, ...) \
  ((tape).backend() == Backend::parallel ? kernels::fn(__VA_ARGS__) : reference::fn(__VA_ARGS__))

// ---------------------------------------------------------------------------
// Tape

template <class T>
typename Tape<T>::Node& Tape<T>::node(Var v) {
  if (!v.valid() || v.id >= nodes_.size()) throw StateError("variable does not belong to this tape");
  return nodes_[v.id];
}

template <class T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw StateError("variable does not belong to this tape");
  return nodes_[v.id];
}

template <class T>
Var Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <class T>
Var Tape<T>::variable(Tensor<T> value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <class T>
Var Tape<T>::parameter(Parameter<T>& p) {
  Node n;
  n.external = &p.value;
  n.requires_grad = p.trainable;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <class T>
Var Tape<T>::record(Tensor<T> value, std::vector<Var> parents, BackwardFn backward) {
  if (check_finite_) require_finite(value, "op output #" + std::to_string(nodes_.size()));
  Node n;
  n.owned = std::move(value);
  n.requires_grad = std::any_of(parents.begin(), parents.end(), [&](Var p) { return node(p).requires_grad; });
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <class T>
const Tensor<T>& Tape<T>::value(Var v) const {
  const Node& n = node(v);
  return n.external ? *n.external : n.owned;
}

template <class T>
Tensor<T> Tape<T>::grad(Var v) const {
  const Node& n = node(v);
  if (n.has_grad) return n.grad;
  return Tensor<T>(value(v).shape());
}

template <class T>
bool Tape<T>::requires_grad(Var v) const {
  return node(v).requires_grad;
}

template <class T>
void Tape<T>::accumulate(Var v, const Tensor<T>& g) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
    return;
  }
  if (n.grad.shape() != g.shape()) throw ShapeError("gradient shape mismatch during backward");
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

template <class T>
void Tape<T>::accumulate(Var v, Tensor<T>&& g) {
  Node& n = node(v);
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = std::move(g);
    n.has_grad = true;
    return;
  }
  accumulate(v, static_cast<const Tensor<T>&>(g));
}

template <class T>
void Tape<T>::backward(Var loss) {
  if (nodes_.empty()) throw StateError("backward: no forward pass was recorded");
  if (swept_) throw StateError("backward: tape was already swept; record a new forward pass");
  Node& root = node(loss);
  if (root.external ? root.external->size() != 1 : root.owned.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + shape_to_string(value(loss).shape()));
  }
  swept_ = true;
  if (!root.requires_grad) return;
  root.grad = Tensor<T>(value(loss).shape(), T{1});
  root.has_grad = true;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param && accumulate_params_) {
      Parameter<T>& p = *n.param;
      if (p.grad.shape() != p.value.shape()) p.zero_grad();
      for (std::size_t k = 0; k < n.grad.size(); ++k) p.grad[k] += n.grad[k];
    }
  }
}

template class Tape<float>;
template class Tape<double>;

// ---------------------------------------------------------------------------
// BatchNormState

template <class T>
BatchNormState<T>::BatchNormState(std::size_t channels, const std::string& prefix, T momentum_, T epsilon_)
    : gamma(prefix + ".gamma", Tensor<T>({channels}, T{1})),
      beta(prefix + ".beta", Tensor<T>({channels}, T{0})),
      moving_mean(prefix + ".moving_mean", Tensor<T>({channels}, T{0}), false),
      moving_variance(prefix + ".moving_variance", Tensor<T>({channels}, T{1}), false),
      momentum(momentum_),
      epsilon(epsilon_) {
  if (!(momentum > T{0} && momentum < T{1})) throw ArgumentError("batchnorm momentum must lie in (0, 1)");
  if (!(epsilon > T{0})) throw ArgumentError("batchnorm epsilon must be positive");
}

template struct BatchNormState<float>;
template struct BatchNormState<double>;

// ---------------------------------------------------------------------------
// Ops

namespace ops {

template <class T>
Var conv2d(Tape<T>& tape, Var x, Var kernel, Var bias, long stride, Padding padding) {
  const Tensor<T>& xv = tape.value(x);
  const Tensor<T>& kv = tape.value(kernel);
  const ConvGeometry g = conv_geometry(xv.shape(), kv.shape(), stride, padding);
  const Tensor<T>& bv = tape.value(bias);
  if (bv.size() != g.filters) throw ShapeError("conv2d: bias length must equal filter count");
  Tensor<T> y = VDCNET_DISPATCH(tape, conv2d_forward, xv, kv, bv, g);
  return tape.record(std::move(y), {x, kernel, bias}, [=](Tape<T>& t, const Tensor<T>& dy) {
    const bool need_input = t.requires_grad(x);
    const bool need_params = t.requires_grad(kernel) || t.requires_grad(bias);
    auto grads = VDCNET_DISPATCH(t, conv2d_backward, t.value(x), t.value(kernel), dy, g, need_input, need_params);
    if (need_input) t.accumulate(x, std::move(grads.input));
    if (need_params) {
      t.accumulate(kernel, std::move(grads.kernel));
      t.accumulate(bias, std::move(grads.bias));
    }
  });
}

template <class T>
Var maxpool2d(Tape<T>& tape, Var x, std::size_t pool) {
  auto r = VDCNET_DISPATCH(tape, maxpool2d_forward, tape.value(x), pool);
  const Shape in_shape = tape.value(x).shape();
  return tape.record(std::move(r.output), {x},
                     [x, in_shape, argmax = std::move(r.argmax)](Tape<T>& t, const Tensor<T>& dy) {
                       t.accumulate(x, VDCNET_DISPATCH(t, maxpool2d_backward, dy, argmax, in_shape));
                     });
}

template <class T>
Var batchnorm2d(Tape<T>& tape, Var x, Var gamma, Var beta, BatchNormState<T>& state, Mode mode) {
  const Tensor<T>& xv = tape.value(x);
  require_nchw(xv, "batchnorm2d");
  if (xv.dim(1) != state.channels()) {
    throw ShapeError("batchnorm2d: input has " + std::to_string(xv.dim(1)) + " channels, state has " +
                     std::to_string(state.channels()));
  }
  const Buffer<T>& g = tape.value(gamma).storage();
  const Buffer<T>& b = tape.value(beta).storage();
  Buffer<T> mean, variance;
  Tensor<T> y;
  const bool batch_stats = mode == Mode::train;
  if (batch_stats) {
    auto r = VDCNET_DISPATCH(tape, batchnorm_forward_train, xv, g, b, state.epsilon);
    y = std::move(r.output);
    mean = std::move(r.mean);
    variance = std::move(r.variance);
    auto& mm = state.moving_mean.value;
    auto& mv = state.moving_variance.value;
    for (std::size_t c = 0; c < state.channels(); ++c) {
      mm[c] = state.momentum * mm[c] + (T{1} - state.momentum) * mean[c];
      mv[c] = state.momentum * mv[c] + (T{1} - state.momentum) * variance[c];
    }
    ++state.updates;
  } else {
    mean = state.moving_mean.value.storage();
    variance = state.moving_variance.value.storage();
    if (state.updates == 0 && std::all_of(mean.begin(), mean.end(), [](T v) { return v == T{0}; }) &&
        std::all_of(variance.begin(), variance.end(), [](T v) { return v == T{1}; })) {
      tape.warn("batchnorm2d(" + state.gamma.name +
                "): inference before any training update, using initial statistics (mean 0, variance 1)");
    }
    y = VDCNET_DISPATCH(tape, batchnorm_forward_infer, xv, g, b, mean, variance, state.epsilon);
  }
  const T eps = state.epsilon;
  return tape.record(std::move(y), {x, gamma, beta},
                     [=, mean = std::move(mean), variance = std::move(variance)](Tape<T>& t, const Tensor<T>& dy) {
                       auto grads = VDCNET_DISPATCH(t, batchnorm_backward, t.value(x), dy, t.value(gamma).storage(),
                                                    mean, variance, eps, batch_stats);
                       t.accumulate(x, std::move(grads.input));
                       const std::size_t c = grads.gamma.size();
                       t.accumulate(gamma, Tensor<T>({c}, std::move(grads.gamma)));
                       t.accumulate(beta, Tensor<T>({c}, std::move(grads.beta)));
                     });
}

template <class T>
Var batchnorm2d(Tape<T>& tape, Var x, BatchNormState<T>& state, Mode mode) {
  const Var gamma = tape.parameter(state.gamma);
  const Var beta = tape.parameter(state.beta);
  return batchnorm2d(tape, x, gamma, beta, state, mode);
}

template <class T>
Var relu(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = xv[i] > T{0} ? xv[i] : T{0};
  return tape.record(std::move(y), {x}, [x](Tape<T>& t, const Tensor<T>& dy) {
    const Tensor<T>& xv = t.value(x);
    Tensor<T> dx(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) dx[i] = xv[i] > T{0} ? dy[i] : T{0};
    t.accumulate(x, std::move(dx));
  });
}

template <class T>
Var add(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  if (av.shape() != bv.shape()) {
    throw ShapeError("add: shape mismatch " + shape_to_string(av.shape()) + " vs " + shape_to_string(bv.shape()));
  }
  Tensor<T> y = av;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return tape.record(std::move(y), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& dy) {
    t.accumulate(a, dy);
    t.accumulate(b, dy);
  });
}

template <class T>
Var concat_channels(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  require_nchw(av, "concat_channels");
  require_nchw(bv, "concat_channels");
  const Shape& sa = av.shape();
  const Shape& sb = bv.shape();
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3]) {
    throw ShapeError("concat_channels: batch/spatial mismatch " + shape_to_string(sa) + " vs " + shape_to_string(sb));
  }
  const std::size_t plane = sa[2] * sa[3];
  const std::size_t ca = sa[1], cb = sb[1];
  Tensor<T> y({sa[0], ca + cb, sa[2], sa[3]});
  for (std::size_t n = 0; n < sa[0]; ++n) {
    std::copy_n(av.data() + n * ca * plane, ca * plane, y.data() + n * (ca + cb) * plane);
    std::copy_n(bv.data() + n * cb * plane, cb * plane, y.data() + (n * (ca + cb) + ca) * plane);
  }
  return tape.record(std::move(y), {a, b}, [a, b, ca](Tape<T>& t, const Tensor<T>& dy) {
    auto [da, db] = split_channels(dy, ca);
    t.accumulate(a, std::move(da));
    t.accumulate(b, std::move(db));
  });
}

template <class T>
Var global_pool(Tape<T>& tape, Var x, PoolMode mode) {
  auto r = VDCNET_DISPATCH(tape, global_pool_forward, tape.value(x), mode);
  const Shape in_shape = tape.value(x).shape();
  return tape.record(std::move(r.output), {x},
                     [x, in_shape, mode, argmax = std::move(r.argmax)](Tape<T>& t, const Tensor<T>& dy) {
                       t.accumulate(x, VDCNET_DISPATCH(t, global_pool_backward, dy, argmax, in_shape, mode));
                     });
}

template <class T>
Var dense(Tape<T>& tape, Var x, Var weights, Var bias) {
  Tensor<T> y = VDCNET_DISPATCH(tape, dense_forward, tape.value(x), tape.value(weights), tape.value(bias));
  return tape.record(std::move(y), {x, weights, bias}, [=](Tape<T>& t, const Tensor<T>& dy) {
    auto g = VDCNET_DISPATCH(t, dense_backward, t.value(x), t.value(weights), dy);
    t.accumulate(x, std::move(g.input));
    t.accumulate(weights, std::move(g.weights));
    t.accumulate(bias, std::move(g.bias));
  });
}

template <class T>
Var sigmoid(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  Tensor<T> y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = T(sigmoid_value(double(xv[i])));
  return tape.record(std::move(y), {x}, [x](Tape<T>& t, const Tensor<T>& dy) {
    const Tensor<T>& xv = t.value(x);
    Tensor<T> dx(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double p = sigmoid_value(double(xv[i]));
      dx[i] = T(double(dy[i]) * p * (1.0 - p));
    }
    t.accumulate(x, std::move(dx));
  });
}

template <class T>
Var sum(Tape<T>& tape, Var x) {
  const Tensor<T>& xv = tape.value(x);
  double s = 0;
  for (T v : xv.values()) s += double(v);
  return tape.record(Tensor<T>({1}, T(s)), {x}, [x](Tape<T>& t, const Tensor<T>& dy) {
    t.accumulate(x, Tensor<T>(t.value(x).shape(), dy[0]));
  });
}

template <class T>
Var weighted_sum(Tape<T>& tape, Var x, const Tensor<T>& weights) {
  const Tensor<T>& xv = tape.value(x);
  if (xv.size() != weights.size()) throw ShapeError("weighted_sum: weight tensor size mismatch");
  double s = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += double(xv[i]) * double(weights[i]);
  return tape.record(Tensor<T>({1}, T(s)), {x}, [x, weights](Tape<T>& t, const Tensor<T>& dy) {
    Tensor<T> dx(t.value(x).shape());
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = dy[0] * weights[i];
    t.accumulate(x, std::move(dx));
  });
}

template <class T>
BceResult<T> sigmoid_bce(Tape<T>& tape, Var logits, const Tensor<T>& labels) {
  const Tensor<T>& z = tape.value(logits);
  if (z.size() != labels.size()) {
    throw ShapeError("sigmoid_bce: " + std::to_string(z.size()) + " logits vs " + std::to_string(labels.size()) +
                     " labels");
  }
  for (T y : labels.values()) {
    if (y != T{0} && y != T{1}) throw ArgumentError("sigmoid_bce: labels must be 0 or 1");
  }
  const Var probs = sigmoid(tape, logits);
  const Tensor<T>& p = tape.value(probs);
  double total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) total += bce_value(double(p[i]), double(labels[i]));
  const double n = double(p.size());
  const Var loss = tape.record(Tensor<T>({1}, T(total / n)), {logits}, [logits, labels, n](Tape<T>& t, const Tensor<T>& dy) {
    const Tensor<T>& z = t.value(logits);
    Tensor<T> dz(z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) {
      dz[i] = T(double(dy[0]) * (sigmoid_value(double(z[i])) - double(labels[i])) / n);
    }
    t.accumulate(logits, std::move(dz));
  });
  return {probs, loss};
}

#define VDCNET_INSTANTIATE(T)                                                              \
  template Var conv2d(Tape<T>&, Var, Var, Var, long, Padding);                             \
  template Var maxpool2d(Tape<T>&, Var, std::size_t);                                      \
  template Var batchnorm2d(Tape<T>&, Var, Var, Var, BatchNormState<T>&, Mode);             \
  template Var batchnorm2d(Tape<T>&, Var, BatchNormState<T>&, Mode);                       \
  template Var relu(Tape<T>&, Var);                                                        \
  template Var add(Tape<T>&, Var, Var);                                                    \
  template Var concat_channels(Tape<T>&, Var, Var);                                        \
  template Var global_pool(Tape<T>&, Var, PoolMode);                                       \
  template Var dense(Tape<T>&, Var, Var, Var);                                             \
  template Var sigmoid(Tape<T>&, Var);                                                     \
  template Var sum(Tape<T>&, Var);                                                         \
  template Var weighted_sum(Tape<T>&, Var, const Tensor<T>&);                              \
  template BceResult<T> sigmoid_bce(Tape<T>&, Var, const Tensor<T>&);

VDCNET_INSTANTIATE(float)
VDCNET_INSTANTIATE(double)
#undef VDCNET_INSTANTIATE

}  // namespace ops

template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, std::size_t first_channels) {
  require_nchw(x, "split_channels");
  const Shape& s = x.shape();
  if (first_channels > s[1]) throw ShapeError("split_channels: split point beyond channel count");
  const std::size_t plane = s[2] * s[3];
  const std::size_t ca = first_channels, cb = s[1] - first_channels;
  Tensor<T> a({s[0], ca, s[2], s[3]});
  Tensor<T> b({s[0], cb, s[2], s[3]});
  for (std::size_t n = 0; n < s[0]; ++n) {
    std::copy_n(x.data() + n * s[1] * plane, ca * plane, a.data() + n * ca * plane);
    std::copy_n(x.data() + (n * s[1] + ca) * plane, cb * plane, b.data() + n * cb * plane);
  }
  return {std::move(a), std::move(b)};
}

template std::pair<Tensor<float>, Tensor<float>> split_channels(const Tensor<float>&, std::size_t);
template std::pair<Tensor<double>, Tensor<double>> split_channels(const Tensor<double>&, std::size_t);

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double bce_value(double p, double label) {
  const double pc = std::clamp(p, ops::kBceEpsilon, 1.0 - ops::kBceEpsilon);
  return -(label * std::log(pc) + (1.0 - label) * std::log(1.0 - pc));
}

}  // namespace vdcnet
