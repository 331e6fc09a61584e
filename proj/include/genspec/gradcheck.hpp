#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "genspec/tensor.hpp"

namespace genspec {

/// Central-difference gradient of a scalar function; evaluated without graph recording.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

/// max_i |a_i - b_i| / max(1, |a_i|, |b_i|)
double max_relative_error(std::span<const double> a, std::span<const double> b);


struct OpGradCase {
  OpKind kind;
  std::vector<Tensor> inputs;
  OpAttrs attrs;
};

struct OpGradReport {
  OpKind kind;
  double max_rel_error = 0.0;
};

/// One representative case per OpKind with inputs drawn in [-1, 1]
/// (log uses [0.5, 1.5]).
std::vector<OpGradCase> standard_op_cases(std::uint64_t seed);

/// Compares backward() of sum(op(inputs) * W), W random, against central
/// differences at step h for every input. stop_gradient and
/// straight_through are compared against their defined gradients (zero and
/// identity respectively) since those are not derivatives of the value.
OpGradReport check_op_gradient(const OpGradCase& c, std::uint64_t seed, double h = 1e-5);

}  // namespace genspec
