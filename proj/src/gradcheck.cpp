#include "genspec/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "genspec/error.hpp"
#include "genspec/rng.hpp"

namespace genspec {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw UsageError("finite difference step must be positive");
  NoGradGuard guard;
  Tensor probe = x.detach();
  Tensor g(x.shape(), 0.0);
  auto values = probe.data_mut();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double orig = values[i];
    values[i] = orig + h;
    const double up = f(probe);
    values[i] = orig - h;
    const double down = f(probe);
    values[i] = orig;
    g.data_mut()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

double max_relative_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("max_relative_error: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}


namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

std::vector<OpGradCase> standard_op_cases(std::uint64_t seed) {
  Rng rng(seed);
  auto r = [&](Shape s) { return random_tensor(std::move(s), rng); };
  std::vector<OpGradCase> cases;
  cases.push_back({OpKind::Add, {r({2, 3}), r({3})}, {}});
  cases.push_back({OpKind::Sub, {r({2, 1, 3}), r({4, 3})}, {}});
  cases.push_back({OpKind::Mul, {r({2, 3}), r({2, 3})}, {}});
  cases.push_back({OpKind::Matmul, {r({2, 3, 4}), r({4, 5})}, {}});
  cases.push_back({OpKind::Matmul, {r({2, 3, 4}), r({2, 4, 2})}, {}});
  {
    OpAttrs a;
    a.stride = 2;
    a.pad = 1;
    cases.push_back({OpKind::Conv2d, {r({2, 2, 5, 5}), r({3, 2, 3, 3}), r({3})}, a});
  }
  {
    OpAttrs a;
    a.axes = {0, 2, 1, 3};
    cases.push_back({OpKind::Transpose, {r({2, 3, 2, 4})}, a});
  }
  cases.push_back({OpKind::Transpose, {r({3, 4})}, {}});
  {
    OpAttrs a;
    a.shape = {4, 3};
    cases.push_back({OpKind::Reshape, {r({2, 6})}, a});
  }
  cases.push_back({OpKind::Relu, {r({3, 4})}, {}});
  cases.push_back({OpKind::Gelu, {r({3, 4})}, {}});
  cases.push_back({OpKind::Sigmoid, {r({3, 4})}, {}});
  cases.push_back({OpKind::Tanh, {r({3, 4})}, {}});
  cases.push_back({OpKind::Exp, {r({3, 4})}, {}});
  cases.push_back({OpKind::Log, {random_tensor({3, 4}, rng, 0.5, 1.5)}, {}});
  {
    OpAttrs a;
    a.axis = 1;
    cases.push_back({OpKind::Softmax, {r({2, 4, 3})}, a});
    cases.push_back({OpKind::LogSoftmax, {r({2, 4, 3})}, a});
  }
  cases.push_back({OpKind::LayerNorm, {r({3, 5}), r({5}), r({5})}, {}});
  cases.push_back({OpKind::Sum, {r({3, 4})}, {}});
  cases.push_back({OpKind::Mean, {r({3, 4})}, {}});
  {
    OpAttrs a;
    a.axis = 0;
    cases.push_back({OpKind::SumAxis, {r({3, 4})}, a});
    a.axis = 1;
    cases.push_back({OpKind::MeanAxis, {r({2, 3, 4})}, a});
  }
  {
    OpAttrs a;
    a.indices = {2, 0, 3};
    cases.push_back({OpKind::Gather, {r({3, 4})}, a});
  }
  {
    OpAttrs a;
    a.indices = {1, 4, 1, 0};
    a.shape = {2, 2};
    cases.push_back({OpKind::Embed, {r({5, 3})}, a});
  }
  {
    OpAttrs a;
    a.axis = 1;
    cases.push_back({OpKind::Concat, {r({2, 3}), r({2, 2})}, a});
    a.start = 1;
    a.end = 3;
    cases.push_back({OpKind::Slice, {r({2, 4})}, a});
  }
  cases.push_back({OpKind::Upsample2x, {r({1, 2, 2, 3})}, {}});
  cases.push_back({OpKind::StopGradient, {r({2, 3})}, {}});
  cases.push_back({OpKind::StraightThrough, {r({2, 3}), r({2, 3})}, {}});
  return cases;
}

OpGradReport check_op_gradient(const OpGradCase& c, std::uint64_t seed, double h) {
  Rng rng(seed);
  std::vector<Tensor> leaves;
  for (const Tensor& t : c.inputs) leaves.push_back(t.detach().set_requires_grad(true));

  Tensor probe_out;
  {
    NoGradGuard g;
    probe_out = apply(c.kind, leaves, c.attrs);
  }
  const Tensor weights = random_tensor(probe_out.shape(), rng);

  Tensor loss = sum(mul(apply(c.kind, leaves, c.attrs), weights));
  backward(loss);

  OpGradReport report{c.kind, 0.0};
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    std::vector<double> analytic(leaves[i].numel(), 0.0);
    if (leaves[i].has_grad()) analytic.assign(leaves[i].grad().begin(), leaves[i].grad().end());

    std::vector<double> expected;
    if (c.kind == OpKind::StopGradient || (c.kind == OpKind::StraightThrough && i == 1)) {
      expected.assign(leaves[i].numel(), 0.0);
    } else if (c.kind == OpKind::StraightThrough) {
      expected.assign(weights.data().begin(), weights.data().end());
    } else {
      auto f = [&](const Tensor& xi) {
        std::vector<Tensor> args = leaves;
        args[i] = xi;
        return sum(mul(apply(c.kind, args, c.attrs), weights)).item();
      };
      const Tensor fd = finite_diff_grad(f, leaves[i], h);
      expected.assign(fd.data().begin(), fd.data().end());
    }
    report.max_rel_error = std::max(report.max_rel_error, max_relative_error(analytic, expected));
  }
  return report;
}

}  // namespace genspec
