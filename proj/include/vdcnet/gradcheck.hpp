#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vdcnet/autograd.hpp"

namespace vdcnet {

struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
  double tolerance = 0;
  bool passed = true;

  std::string describe() const;
};

// Builds the op under test from variables bound to the inputs. A non-scalar
// result is projected onto a fixed random direction before differentiation.
using GradCheckOp = std::function<Var(Tape<double>&, std::span<const Var>)>;

// Compares autograd gradients against central differences
// (f(x + eps) - f(x - eps)) / 2eps for every coordinate of every input.
// Relative error is |a - n| / max(|a|, |n|, 1e-6).
GradCheckReport finite_diff_check(const GradCheckOp& op, const std::vector<Tensor<double>>& inputs, double eps,
                                  double tol, std::uint64_t projection_seed = 7);

}  // namespace vdcnet
