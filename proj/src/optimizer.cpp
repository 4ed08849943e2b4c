#include "vdcnet/optimizer.hpp"

#include <cmath>

namespace vdcnet {

template <class T>
Adam<T>::Adam(AdamConfig config) : config_(config) {
  set_learning_rate(config.learning_rate);
}

template <class T>
void Adam<T>::set_learning_rate(double lr) {
  if (!(lr > 0)) throw ArgumentError("learning rate must be positive");
  config_.learning_rate = lr;
}

template <class T>
void Adam<T>::step(const std::vector<Parameter<T>*>& params) {
  if (first_.empty()) {
    first_.resize(params.size());
    second_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      first_[i].assign(params[i]->value.size(), T{0});
      second_[i].assign(params[i]->value.size(), T{0});
    }
  }
  if (first_.size() != params.size()) throw ShapeError("Adam: parameter list changed between steps");
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double t = double(steps_);
  const double alpha = config_.learning_rate * std::sqrt(1.0 - std::pow(b2, t)) / (1.0 - std::pow(b1, t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = *params[i];
    if (!p.trainable) continue;
    if (p.grad.size() != p.value.size() || first_[i].size() != p.value.size()) {
      throw ShapeError("Adam: gradient/moment shape mismatch for " + p.name);
    }
    auto& m = first_[i];
    auto& v = second_[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const T g = p.grad[k];
      m[k] = T(b1 * m[k] + (1.0 - b1) * g);
      v[k] = T(b2 * v[k] + (1.0 - b2) * g * g);
      p.value[k] -= T(alpha * m[k] / (std::sqrt(double(v[k])) + config_.epsilon));
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace vdcnet
