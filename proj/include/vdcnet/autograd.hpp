#pragma once

// Reverse-mode automatic differentiation over a linear tape.
//
// A Tape records every op of one forward pass together with a closure that
// maps the op's output gradient onto its parents. backward() replays the tape
// in reverse once; parameter gradients are accumulated into Parameter::grad.

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "vdcnet/kernels.hpp"
#include "vdcnet/tensor.hpp"

namespace vdcnet {

enum class Mode { train, infer };
enum class Backend { parallel, reference };

struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const noexcept { return id != npos; }
};

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v, bool is_trainable = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(is_trainable) {}

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    grad.fill(T{0});
  }
};

template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>&)>;

  explicit Tape(Backend backend = Backend::parallel) : backend_(backend) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Backend backend() const noexcept { return backend_; }

  // Leaf that never receives a gradient.
  Var constant(Tensor<T> value);
  // Leaf whose gradient is kept and readable through grad().
  Var variable(Tensor<T> value);
  // Leaf bound to a parameter; the value is referenced, not copied.
  Var parameter(Parameter<T>& p);

  Var record(Tensor<T> value, std::vector<Var> parents, BackwardFn backward);

  const Tensor<T>& value(Var v) const;
  // Gradient of the last backward() target; all-zero if none flowed here.
  Tensor<T> grad(Var v) const;
  bool requires_grad(Var v) const;

  void accumulate(Var v, const Tensor<T>& g);
  void accumulate(Var v, Tensor<T>&& g);

  // Reverse sweep from a scalar node. Throws StateError if nothing was recorded
  // or the tape was already swept.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }

  // Debug mode: every recorded value is checked for NaN/Inf.
  void set_check_finite(bool on) noexcept { check_finite_ = on; }

  // When false, backward() leaves Parameter::grad untouched (CAM passes).
  void set_accumulate_parameters(bool on) noexcept { accumulate_params_ = on; }

  void warn(std::string message) { warnings_.push_back(std::move(message)); }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  Node& node(Var v);
  const Node& node(Var v) const;

  Backend backend_;
  std::vector<Node> nodes_;
  std::vector<std::string> warnings_;
  bool swept_ = false;
  bool check_finite_ = false;
  bool accumulate_params_ = true;
};

template <class T>
struct BatchNormState {
  Parameter<T> gamma, beta;
  Parameter<T> moving_mean, moving_variance;  // non-trainable buffers
  T momentum = T(0.99);
  T epsilon = T(1e-3);
  std::size_t updates = 0;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels, const std::string& prefix = "bn", T momentum_ = T(0.99),
                          T epsilon_ = T(1e-3));
  std::size_t channels() const noexcept { return gamma.value.size(); }
};

namespace ops {

template <class T>
Var conv2d(Tape<T>& tape, Var x, Var kernel, Var bias, long stride = 1, Padding padding = Padding::same);

template <class T>
Var maxpool2d(Tape<T>& tape, Var x, std::size_t pool = 2);

// Train mode normalizes by batch statistics and folds them into the moving
// averages: moving = momentum * moving + (1 - momentum) * batch.
template <class T>
Var batchnorm2d(Tape<T>& tape, Var x, Var gamma, Var beta, BatchNormState<T>& state, Mode mode);
template <class T>
Var batchnorm2d(Tape<T>& tape, Var x, BatchNormState<T>& state, Mode mode);

template <class T>
Var relu(Tape<T>& tape, Var x);

template <class T>
Var add(Tape<T>& tape, Var a, Var b);

template <class T>
Var concat_channels(Tape<T>& tape, Var a, Var b);

template <class T>
Var global_pool(Tape<T>& tape, Var x, PoolMode mode);

template <class T>
Var dense(Tape<T>& tape, Var x, Var weights, Var bias);

template <class T>
Var sigmoid(Tape<T>& tape, Var x);

template <class T>
Var sum(Tape<T>& tape, Var x);

// sum(x * weights) for a fixed weight tensor of the same shape.
template <class T>
Var weighted_sum(Tape<T>& tape, Var x, const Tensor<T>& weights);

// Probability clamp used by the cross-entropy.
inline constexpr double kBceEpsilon = 1e-7;

template <class T>
struct BceResult {
  Var probs;
  Var loss;
};

// probs = sigmoid(logits); loss = mean binary cross-entropy with p clamped to
// [1e-7, 1 - 1e-7]. d loss / d logit = (p - y) / N.
template <class T>
BceResult<T> sigmoid_bce(Tape<T>& tape, Var logits, const Tensor<T>& labels);

}  // namespace ops

template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, std::size_t first_channels);

// Plain (tape-free) helpers shared by the training loop and the tests.
double sigmoid_value(double x);
double bce_value(double p, double label);

}  // namespace vdcnet
