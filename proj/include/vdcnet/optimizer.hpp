#pragma once

#include <cstddef>
#include <vector>

#include "vdcnet/autograd.hpp"

namespace vdcnet {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

// Adaptive moment estimation. The learning rate is mutable so that a
// plateau scheduler can rewrite it between epochs.
template <class T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {});

  // Applies one update to every trainable parameter in `params`. The list must
  // name the same parameters, in the same order, on every call.
  void step(const std::vector<Parameter<T>*>& params);

  double learning_rate() const noexcept { return config_.learning_rate; }
  void set_learning_rate(double lr);
  std::size_t steps() const noexcept { return steps_; }
  const AdamConfig& config() const noexcept { return config_; }

 private:
  AdamConfig config_;
  std::size_t steps_ = 0;
  std::vector<std::vector<T>> first_, second_;
};

template <class T>
void zero_grads(const std::vector<Parameter<T>*>& params) {
  for (auto* p : params) p->zero_grad();
}

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace vdcnet
