#include "vdcnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace vdcnet {

std::string GradCheckReport::describe() const {
  std::ostringstream os;
  os << (passed ? "ok" : "FAILED") << ": max relative error " << max_rel_error << " (tol " << tolerance
     << ") at input " << worst_input << " index " << worst_index << ", analytic " << analytic << " vs numeric "
     << numeric;
  return os.str();
}

namespace {

Tensor<double> projection(const Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  std::bernoulli_distribution sign(0.5);
  Tensor<double> w(shape);
  for (auto& v : w.values()) v = sign(rng) ? u(rng) : -u(rng);
  return w;
}

double evaluate(const GradCheckOp& op, const std::vector<Tensor<double>>& inputs, const Tensor<double>* proj) {
  Tape<double> tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& in : inputs) vars.push_back(tape.constant(in));
  const Var out = op(tape, vars);
  const Tensor<double>& y = tape.value(out);
  if (!proj) return y[0];
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * (*proj)[i];
  return s;
}

}  // namespace

GradCheckReport finite_diff_check(const GradCheckOp& op, const std::vector<Tensor<double>>& inputs, double eps,
                                  double tol, std::uint64_t projection_seed) {
  // Analytic pass.
  Tape<double> tape;
  std::vector<Var> vars;
  for (const auto& in : inputs) vars.push_back(tape.variable(in));
  const Var out = op(tape, vars);
  const Shape out_shape = tape.value(out).shape();
  const bool scalar = shape_size(out_shape) == 1;
  Tensor<double> proj;
  Var loss = out;
  if (!scalar) {
    proj = projection(out_shape, projection_seed);
    loss = ops::weighted_sum(tape, out, proj);
  }
  tape.backward(loss);

  GradCheckReport report;
  report.tolerance = tol;
  std::vector<Tensor<double>> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor<double> analytic = tape.grad(vars[i]);
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      const double orig = probe[i][k];
      probe[i][k] = orig + eps;
      const double plus = evaluate(op, probe, scalar ? nullptr : &proj);
      probe[i][k] = orig - eps;
      const double minus = evaluate(op, probe, scalar ? nullptr : &proj);
      probe[i][k] = orig;
      const double numeric = (plus - minus) / (2 * eps);
      const double a = analytic[k];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      if (rel > report.max_rel_error || (i == 0 && k == 0)) {
        report.max_rel_error = rel;
        report.worst_input = i;
        report.worst_index = k;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace vdcnet
