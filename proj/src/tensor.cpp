#include "genspec/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "genspec/error.hpp"
#include "kernels.hpp"
#include "tensor_node.hpp"

namespace genspec {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

thread_local bool g_grad_enabled = true;

std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

void check_extents(const Shape& shape) {
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
}

NodePtr new_node(Shape shape, std::vector<double> value, const char* op) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  return n;
}

bool tracks(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

// Wraps a forward value; when any input is tracked, links the inputs and
// installs the backward closure. The closure reads self.grad and accumulates
// into self.inputs[i]->grad for tracked inputs.
Tensor make_result(Shape shape, std::vector<double> value, const char* op,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> backward_fn) {
  auto n = new_node(std::move(shape), std::move(value), op);
  if (tracks(inputs)) {
    n->requires_grad = true;
    for (const Tensor* t : inputs) n->inputs.push_back(t->defined() ? t->node_ptr() : nullptr);
    n->backward = std::move(backward_fn);
  }
  return Tensor(std::move(n));
}

bool wants_grad(const NodePtr& n) { return n && n->requires_grad; }

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

// ---- broadcasting ----

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> s(out.size(), 0);
  const auto own = strides_of(in);
  const std::size_t off = out.size() - in.size();
  for (std::size_t i = 0; i < in.size(); ++i) {
    s[off + i] = in[i] == 1 ? 0 : own[i];
  }
  return s;
}

template <class F>
void broadcast_loop(const Shape& out, const std::vector<std::size_t>& sa,
                    const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t r = out.size();
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  const std::size_t n = shape_numel(out);
  const std::size_t inner = out[r - 1];
  const std::size_t ja = sa[r - 1];
  const std::size_t jb = sb[r - 1];
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < n; o += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(o + j, ia + j * ja, ib + j * jb);
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

enum class Binary { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, Binary kind) {
  static constexpr const char* names[] = {"add", "sub", "mul"};
  const char* name = names[static_cast<int>(kind)];
  const auto& av = a.data();
  const auto& bv = b.data();
  auto apply_one = [kind](double x, double y) {
    switch (kind) {
      case Binary::Add: return x + y;
      case Binary::Sub: return x - y;
      case Binary::Mul: return x * y;
    }
    return 0.0;
  };

  if (a.shape() == b.shape()) {
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply_one(av[i], bv[i]);
    return make_result(a.shape(), std::move(out), name, {&a, &b}, [kind](Node& self) {
      const auto& ga = self.inputs[0];
      const auto& gb = self.inputs[1];
      const std::size_t n = self.grad.size();
      if (wants_grad(ga)) {
        double* d = ga->grad_buffer();
        if (kind == Binary::Mul) {
          for (std::size_t i = 0; i < n; ++i) d[i] += self.grad[i] * gb->value[i];
        } else {
          for (std::size_t i = 0; i < n; ++i) d[i] += self.grad[i];
        }
      }
      if (wants_grad(gb)) {
        double* d = gb->grad_buffer();
        if (kind == Binary::Mul) {
          for (std::size_t i = 0; i < n; ++i) d[i] += self.grad[i] * ga->value[i];
        } else if (kind == Binary::Sub) {
          for (std::size_t i = 0; i < n; ++i) d[i] -= self.grad[i];
        } else {
          for (std::size_t i = 0; i < n; ++i) d[i] += self.grad[i];
        }
      }
    });
  }

  Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  auto sa = broadcast_strides(a.shape(), out_shape);
  auto sb = broadcast_strides(b.shape(), out_shape);
  std::vector<double> out(shape_numel(out_shape));
  broadcast_loop(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
    out[o] = apply_one(av[i], bv[j]);
  });
  return make_result(out_shape, std::move(out), name, {&a, &b},
                     [kind, sa = std::move(sa), sb = std::move(sb)](Node& self) {
                       const auto& na = self.inputs[0];
                       const auto& nb = self.inputs[1];
                       double* da = wants_grad(na) ? na->grad_buffer() : nullptr;
                       double* db = wants_grad(nb) ? nb->grad_buffer() : nullptr;
                       broadcast_loop(self.shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
                         const double g = self.grad[o];
                         if (da) da[i] += kind == Binary::Mul ? g * nb->value[j] : g;
                         if (db) {
                           if (kind == Binary::Mul) db[j] += g * na->value[i];
                           else if (kind == Binary::Sub) db[j] -= g;
                           else db[j] += g;
                         }
                       });
                     });
}

// Elementwise map with derivative expressed in terms of input and output.
template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return make_result(x.shape(), std::move(out), name, {&x}, [deriv](Node& self) {
    const auto& in = self.inputs[0];
    double* d = in->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      d[i] += self.grad[i] * deriv(in->value[i], self.value[i]);
    }
  });
}

struct AxisSplit {
  std::size_t outer, extent, inner;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) {
  check_extents(shape);
  const std::size_t n = shape_numel(shape);
  node_ = new_node(std::move(shape), std::vector<double>(n, fill), "leaf");
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  check_extents(shape);
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                     " values, got " + std::to_string(values.size()));
  }
  node_ = new_node(std::move(shape), std::move(values), "leaf");
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::size(int axis) const { return shape()[normalize_axis(axis, rank())]; }

std::size_t Tensor::numel() const { return node_->value.size(); }

std::span<const double> Tensor::data() const { return node_->value; }

std::span<double> Tensor::data_mut() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }

std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::grad_mut() { return {node_->grad_buffer(), node_->value.size()}; }

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor(shape(), node_->value); }

const char* Tensor::op_name() const { return node_->op; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::Mul); }

Tensor scale(const Tensor& x, double factor) {
  return unary(x, "scale", [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(x, "add_scalar", [value](double v) { return v + value; },
               [](double, double) { return 1.0; });
}

Tensor square(const Tensor& x) {
  return unary(x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor relu(const Tensor& x) {
  return unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  return unary(
      x, "gelu",
      [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + k * v * v * v))); },
      [](double v, double) {
        const double t = std::tanh(c * (v + k * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * k * v * v);
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(x, "tanh", [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  const auto xv = x.data();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (!std::isfinite(xv[i]) || xv[i] <= 0.0) {
      throw NumericError("log of non-positive or non-finite value " + std::to_string(xv[i]) +
                         " at flat index " + std::to_string(i));
    }
  }
  return unary(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() == 3 && bs.size() == 3) {
    const std::size_t B = as[0], M = as[1], K = as[2], N = bs[2];
    if (bs[0] != B || bs[1] != K) {
      throw ShapeError("matmul: batched shapes " + shape_str(as) + " and " + shape_str(bs) + " mismatch");
    }
    std::vector<double> out(B * M * N);
    for (std::size_t i = 0; i < B; ++i) {
      kernels::gemm(a.data().data() + i * M * K, b.data().data() + i * K * N, out.data() + i * M * N, M, K,
                    N, false);
    }
    return make_result({B, M, N}, std::move(out), "matmul", {&a, &b}, [B, M, K, N](Node& self) {
      const auto& na = self.inputs[0];
      const auto& nb = self.inputs[1];
      std::vector<double> tmp;
      for (std::size_t i = 0; i < B; ++i) {
        const double* g = self.grad.data() + i * M * N;
        if (wants_grad(na)) {
          tmp.resize(N * K);
          kernels::transpose(nb->value.data() + i * K * N, K, N, tmp.data());
          kernels::gemm(g, tmp.data(), na->grad_buffer() + i * M * K, M, N, K, true);
        }
        if (wants_grad(nb)) {
          tmp.resize(K * M);
          kernels::transpose(na->value.data() + i * M * K, M, K, tmp.data());
          kernels::gemm(tmp.data(), g, nb->grad_buffer() + i * K * N, K, M, N, true);
        }
      }
    });
  }
  if (bs.size() != 2 || as.empty() || as.back() != bs[0]) {
    throw ShapeError("matmul: shapes " + shape_str(as) + " and " + shape_str(bs) + " are incompatible");
  }
  const std::size_t K = bs[0], N = bs[1];
  const std::size_t M = a.numel() / K;
  Shape out_shape(as.begin(), as.end() - 1);
  out_shape.push_back(N);
  std::vector<double> out(M * N);
  kernels::gemm(a.data().data(), b.data().data(), out.data(), M, K, N, false);
  return make_result(std::move(out_shape), std::move(out), "matmul", {&a, &b}, [M, K, N](Node& self) {
    const auto& na = self.inputs[0];
    const auto& nb = self.inputs[1];
    std::vector<double> tmp;
    if (wants_grad(na)) {
      tmp.resize(N * K);
      kernels::transpose(nb->value.data(), K, N, tmp.data());
      kernels::gemm(self.grad.data(), tmp.data(), na->grad_buffer(), M, N, K, true);
    }
    if (wants_grad(nb)) {
      tmp.resize(K * M);
      kernels::transpose(na->value.data(), M, K, tmp.data());
      kernels::gemm(tmp.data(), self.grad.data(), nb->grad_buffer(), K, M, N, true);
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[1] != xs[1]) {
    throw ShapeError("conv2d: input " + shape_str(xs) + " incompatible with weight " + shape_str(ws));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const std::size_t O = ws[0], kh = ws[2], kw = ws[3];
  if (H + 2 * pad < kh || W + 2 * pad < kw) {
    throw ShapeError("conv2d: kernel " + shape_str(ws) + " larger than padded input " + shape_str(xs));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.size(0) != O)) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(O) +
                     " output channels");
  }
  const kernels::ConvGeom geom{C, H, W, kh, kw, stride, pad};
  const std::size_t Ho = geom.out_h(), Wo = geom.out_w(), P = Ho * Wo, CKK = C * kh * kw;

  std::vector<double> out(N * O * P);
  std::vector<double> cols(CKK * P);
  for (std::size_t n = 0; n < N; ++n) {
    kernels::im2col(x.data().data() + n * C * H * W, geom, cols.data());
    double* o = out.data() + n * O * P;
    kernels::gemm(weight.data().data(), cols.data(), o, O, CKK, P, false);
    if (bias.defined()) {
      for (std::size_t c = 0; c < O; ++c) {
        const double bv = bias.data()[c];
        for (std::size_t p = 0; p < P; ++p) o[c * P + p] += bv;
      }
    }
  }
  return make_result({N, O, Ho, Wo}, std::move(out), "conv2d", {&x, &weight, &bias},
                     [geom, N, O, P, CKK](Node& self) {
                       const auto& nx = self.inputs[0];
                       const auto& nw = self.inputs[1];
                       const auto& nb = self.inputs[2];
                       const std::size_t in_size = geom.channels * geom.height * geom.width;
                       std::vector<double> cols(CKK * P), colsT, wT, dcols;
                       if (wants_grad(nx)) {
                         wT.resize(CKK * O);
                         kernels::transpose(nw->value.data(), O, CKK, wT.data());
                         dcols.resize(CKK * P);
                       }
                       for (std::size_t n = 0; n < N; ++n) {
                         const double* g = self.grad.data() + n * O * P;
                         if (wants_grad(nw)) {
                           kernels::im2col(nx->value.data() + n * in_size, geom, cols.data());
                           colsT.resize(P * CKK);
                           kernels::transpose(cols.data(), CKK, P, colsT.data());
                           kernels::gemm(g, colsT.data(), nw->grad_buffer(), O, P, CKK, true);
                         }
                         if (wants_grad(nx)) {
                           kernels::gemm(wT.data(), g, dcols.data(), CKK, O, P, false);
                           kernels::col2im(dcols.data(), geom, nx->grad_buffer() + n * in_size);
                         }
                         if (wants_grad(nb)) {
                           double* db = nb->grad_buffer();
                           for (std::size_t c = 0; c < O; ++c) {
                             double s = 0.0;
                             for (std::size_t p = 0; p < P; ++p) s += g[c * P + p];
                             db[c] += s;
                           }
                         }
                       }
                     });
}

Tensor upsample2x(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("upsample2x expects (N,C,H,W), got " + shape_str(x.shape()));
  const std::size_t NC = x.size(0) * x.size(1), H = x.size(2), W = x.size(3);
  std::vector<double> out(NC * 4 * H * W);
  const auto xv = x.data();
  for (std::size_t p = 0; p < NC; ++p) {
    for (std::size_t i = 0; i < 2 * H; ++i) {
      for (std::size_t j = 0; j < 2 * W; ++j) {
        out[(p * 2 * H + i) * 2 * W + j] = xv[(p * H + i / 2) * W + j / 2];
      }
    }
  }
  return make_result({x.size(0), x.size(1), 2 * H, 2 * W}, std::move(out), "upsample2x", {&x},
                     [NC, H, W](Node& self) {
                       double* d = self.inputs[0]->grad_buffer();
                       for (std::size_t p = 0; p < NC; ++p) {
                         for (std::size_t i = 0; i < 2 * H; ++i) {
                           for (std::size_t j = 0; j < 2 * W; ++j) {
                             d[(p * H + i / 2) * W + j / 2] += self.grad[(p * 2 * H + i) * 2 * W + j];
                           }
                         }
                       }
                     });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const Shape& in = x.shape();
  const std::size_t r = in.size();
  if (axes.size() != r) throw ShapeError("permute: " + std::to_string(axes.size()) + " axes for rank " + std::to_string(r));
  std::vector<bool> seen(r, false);
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (axes[i] >= r || seen[axes[i]]) throw ShapeError("permute: invalid axis list");
    seen[axes[i]] = true;
    out_shape[i] = in[axes[i]];
  }
  const auto in_strides = strides_of(in);
  std::vector<std::size_t> gather_strides(r);
  for (std::size_t i = 0; i < r; ++i) gather_strides[i] = in_strides[axes[i]];
  const std::vector<std::size_t> zero(r, 0);

  std::vector<double> out(x.numel());
  const auto xv = x.data();
  broadcast_loop(out_shape, gather_strides, zero, [&](std::size_t o, std::size_t i, std::size_t) { out[o] = xv[i]; });
  return make_result(out_shape, std::move(out), "permute", {&x},
                     [gather_strides, zero](Node& self) {
                       double* d = self.inputs[0]->grad_buffer();
                       broadcast_loop(self.shape, gather_strides, zero,
                                      [&](std::size_t o, std::size_t i, std::size_t) { d[i] += self.grad[o]; });
                     });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose needs rank >= 2, got " + shape_str(x.shape()));
  std::vector<std::size_t> axes(x.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(x, axes);
}

Tensor reshape(const Tensor& x, Shape shape) {
  check_extents(shape);
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), "reshape", {&x}, [](Node& self) {
    double* d = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const std::size_t ax = normalize_axis(axis, parts[0].rank());
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != out_shape.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < p.rank(); ++i) {
      if (i != ax && p.shape()[i] != parts[0].shape()[i]) {
        throw ShapeError("concat: " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
      }
    }
    out_shape[ax] += p.shape()[ax];
  }
  const AxisSplit s = split_at(out_shape, ax);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(off);
    const std::size_t chunk = p.shape()[ax] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(p.data().data() + o * chunk, chunk, out.data() + o * s.extent * s.inner + off * s.inner);
    }
    off += p.shape()[ax];
  }

  auto n = new_node(out_shape, std::move(out), "concat");
  bool any = false;
  if (g_grad_enabled) {
    for (const Tensor& p : parts) any = any || p.requires_grad();
  }
  if (any) {
    n->requires_grad = true;
    for (const Tensor& p : parts) n->inputs.push_back(p.node_ptr());
    n->backward = [s, offsets](Node& self) {
      for (std::size_t k = 0; k < self.inputs.size(); ++k) {
        const auto& in = self.inputs[k];
        if (!wants_grad(in)) continue;
        const std::size_t chunk = in->value.size() / s.outer;
        double* d = in->grad_buffer();
        for (std::size_t o = 0; o < s.outer; ++o) {
          const double* g = self.grad.data() + o * s.extent * s.inner + offsets[k] * s.inner;
          for (std::size_t i = 0; i < chunk; ++i) d[o * chunk + i] += g[i];
        }
      }
    };
  }
  return Tensor(std::move(n));
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t end) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  if (start >= end || end > x.shape()[ax]) {
    throw ShapeError("slice [" + std::to_string(start) + "," + std::to_string(end) + ") out of range for " +
                     shape_str(x.shape()) + " axis " + std::to_string(ax));
  }
  const AxisSplit s = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape[ax] = end - start;
  const std::size_t chunk = (end - start) * s.inner;
  std::vector<double> out(s.outer * chunk);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(x.data().data() + o * s.extent * s.inner + start * s.inner, chunk, out.data() + o * chunk);
  }
  return make_result(std::move(out_shape), std::move(out), "slice", {&x}, [s, start, chunk](Node& self) {
    double* d = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      double* dst = d + o * s.extent * s.inner + start * s.inner;
      for (std::size_t i = 0; i < chunk; ++i) dst[i] += self.grad[o * chunk + i];
    }
  });
}

// ---- reductions ----

Tensor sum(const Tensor& x) {
  const auto xv = x.data();
  const double s = kernels::pairwise_sum(xv.data(), xv.size());
  return make_result({}, {s}, "sum", {&x}, [](Node& self) {
    double* d = self.inputs[0]->grad_buffer();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) d[i] += g;
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum(const Tensor& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t k = 0; k < s.extent; ++k) {
      const double* row = xv.data() + (o * s.extent + k) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += row[i];
    }
  }
  return make_result(std::move(out_shape), std::move(out), "sum_axis", {&x}, [s](Node& self) {
    double* d = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t k = 0; k < s.extent; ++k) {
        double* dst = d + (o * s.extent + k) * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += self.grad[o * s.inner + i];
      }
    }
  });
}

Tensor mean(const Tensor& x, int axis) {
  const std::size_t n = x.size(axis);
  return scale(sum(x, axis), 1.0 / static_cast<double>(n));
}

Tensor softmax(const Tensor& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.extent; ++k) mx = std::max(mx, xv[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) {
        const double e = std::exp(xv[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] /= z;
    }
  }
  return make_result(x.shape(), std::move(out), "softmax", {&x}, [s](Node& self) {
    double* d = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < s.extent; ++k) dot += self.grad[base + k * s.inner] * self.value[base + k * s.inner];
        for (std::size_t k = 0; k < s.extent; ++k) {
          const std::size_t j = base + k * s.inner;
          d[j] += self.value[j] * (self.grad[j] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), ax);
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.extent; ++k) mx = std::max(mx, xv[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) z += std::exp(xv[base + k * s.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t k = 0; k < s.extent; ++k) out[base + k * s.inner] = xv[base + k * s.inner] - lse;
    }
  }
  return make_result(x.shape(), std::move(out), "log_softmax", {&x}, [s](Node& self) {
    double* d = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        double gsum = 0.0;
        for (std::size_t k = 0; k < s.extent; ++k) gsum += self.grad[base + k * s.inner];
        for (std::size_t k = 0; k < s.extent; ++k) {
          const std::size_t j = base + k * s.inner;
          d[j] += self.grad[j] - std::exp(self.value[j]) * gsum;
        }
      }
    }
  });
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t D = x.size(-1);
  if (gamma.defined() && (gamma.rank() != 1 || gamma.size(0) != D)) {
    throw ShapeError("layernorm: gamma " + shape_str(gamma.shape()) + " vs feature dim " + std::to_string(D));
  }
  if (beta.defined() && (beta.rank() != 1 || beta.size(0) != D)) {
    throw ShapeError("layernorm: beta " + shape_str(beta.shape()) + " vs feature dim " + std::to_string(D));
  }
  const std::size_t rows = x.numel() / D;
  std::vector<double> xhat(x.numel()), inv(rows), out(x.numel());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * D;
    double mu = 0.0;
    for (std::size_t k = 0; k < D; ++k) mu += row[k];
    mu /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t k = 0; k < D; ++k) var += (row[k] - mu) * (row[k] - mu);
    var /= static_cast<double>(D);
    inv[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t k = 0; k < D; ++k) {
      const double h = (row[k] - mu) * inv[r];
      xhat[r * D + k] = h;
      out[r * D + k] = h * (gamma.defined() ? gamma.data()[k] : 1.0) + (beta.defined() ? beta.data()[k] : 0.0);
    }
  }
  return make_result(x.shape(), std::move(out), "layernorm", {&x, &gamma, &beta},
                     [D, rows, xhat = std::move(xhat), inv = std::move(inv)](Node& self) {
                       const auto& nx = self.inputs[0];
                       const auto& ng = self.inputs[1];
                       const auto& nb = self.inputs[2];
                       double* dg = wants_grad(ng) ? ng->grad_buffer() : nullptr;
                       double* dbt = wants_grad(nb) ? nb->grad_buffer() : nullptr;
                       double* dx = wants_grad(nx) ? nx->grad_buffer() : nullptr;
                       std::vector<double> dh(D);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* g = self.grad.data() + r * D;
                         const double* h = xhat.data() + r * D;
                         double m1 = 0.0, m2 = 0.0;
                         for (std::size_t k = 0; k < D; ++k) {
                           if (dg) dg[k] += g[k] * h[k];
                           if (dbt) dbt[k] += g[k];
                           dh[k] = g[k] * (ng ? ng->value[k] : 1.0);
                           m1 += dh[k];
                           m2 += dh[k] * h[k];
                         }
                         if (!dx) continue;
                         m1 /= static_cast<double>(D);
                         m2 /= static_cast<double>(D);
                         for (std::size_t k = 0; k < D; ++k) dx[r * D + k] += inv[r] * (dh[k] - m1 - h[k] * m2);
                       }
                     });
}

// ---- indexing ----

Tensor gather(const Tensor& x, const std::vector<std::size_t>& indices) {
  const std::size_t V = x.size(-1);
  const std::size_t rows = x.numel() / V;
  if (indices.size() != rows) {
    throw ShapeError("gather: " + std::to_string(indices.size()) + " indices for " + std::to_string(rows) +
                     " rows of " + shape_str(x.shape()));
  }
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (indices[r] >= V) throw ShapeError("gather: index " + std::to_string(indices[r]) + " >= " + std::to_string(V));
    out[r] = x.data()[r * V + indices[r]];
  }
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  return make_result(std::move(out_shape), std::move(out), "gather", {&x}, [V, indices](Node& self) {
    double* d = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < indices.size(); ++r) d[r * V + indices[r]] += self.grad[r];
  });
}

Tensor embed(const Tensor& table, const std::vector<std::size_t>& indices, Shape prefix) {
  if (table.rank() != 2) throw ShapeError("embed: table must be (V,D), got " + shape_str(table.shape()));
  if (shape_numel(prefix) != indices.size()) {
    throw ShapeError("embed: prefix " + shape_str(prefix) + " does not hold " + std::to_string(indices.size()) + " indices");
  }
  const std::size_t V = table.size(0), D = table.size(1);
  std::vector<double> out(indices.size() * D);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= V) throw ShapeError("embed: index " + std::to_string(indices[r]) + " >= vocabulary " + std::to_string(V));
    std::copy_n(table.data().data() + indices[r] * D, D, out.data() + r * D);
  }
  prefix.push_back(D);
  return make_result(std::move(prefix), std::move(out), "embed", {&table}, [D, indices](Node& self) {
    double* d = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < indices.size(); ++r) {
      for (std::size_t k = 0; k < D; ++k) d[indices[r] * D + k] += self.grad[r * D + k];
    }
  });
}

Tensor stop_gradient(const Tensor& x) {
  Tensor out = x.detach();
  out.node()->op = "stop_gradient";
  return out;
}

Tensor straight_through(const Tensor& continuous, const Tensor& quantized) {
  if (continuous.shape() != quantized.shape()) {
    throw ShapeError("straight_through: " + shape_str(continuous.shape()) + " vs " + shape_str(quantized.shape()));
  }
  std::vector<double> out(quantized.data().begin(), quantized.data().end());
  return make_result(continuous.shape(), std::move(out), "straight_through", {&continuous}, [](Node& self) {
    double* d = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
  });
}

// ---- backward ----

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward needs a single-element loss, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  Node* root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
  }
  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf()) n->backward(*n);
  }
}

// ---- dispatch ----

const char* op_kind_name(OpKind kind) {
  switch (kind) {
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Matmul: return "matmul";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Transpose: return "transpose";
    case OpKind::Reshape: return "reshape";
    case OpKind::Relu: return "relu";
    case OpKind::Gelu: return "gelu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Tanh: return "tanh";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Softmax: return "softmax";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::LayerNorm: return "layernorm";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::SumAxis: return "sum_axis";
    case OpKind::MeanAxis: return "mean_axis";
    case OpKind::Gather: return "gather";
    case OpKind::Embed: return "embed";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Upsample2x: return "upsample2x";
    case OpKind::StopGradient: return "stop_gradient";
    case OpKind::StraightThrough: return "straight_through";
  }
  return "?";
}

Tensor apply(OpKind kind, const std::vector<Tensor>& in, const OpAttrs& at) {
  auto need = [&](std::size_t lo, std::size_t hi) {
    if (in.size() < lo || in.size() > hi) {
      throw ShapeError(std::string(op_kind_name(kind)) + ": expected " + std::to_string(lo) + ".." +
                       std::to_string(hi) + " inputs, got " + std::to_string(in.size()));
    }
  };
  auto opt = [&](std::size_t i) { return i < in.size() ? in[i] : Tensor(); };
  switch (kind) {
    case OpKind::Add: need(2, 2); return add(in[0], in[1]);
    case OpKind::Sub: need(2, 2); return sub(in[0], in[1]);
    case OpKind::Mul: need(2, 2); return mul(in[0], in[1]);
    case OpKind::Matmul: need(2, 2); return matmul(in[0], in[1]);
    case OpKind::Conv2d: need(2, 3); return conv2d(in[0], in[1], opt(2), at.stride, at.pad);
    case OpKind::Transpose: need(1, 1); return at.axes.empty() ? transpose(in[0]) : permute(in[0], at.axes);
    case OpKind::Reshape: need(1, 1); return reshape(in[0], at.shape);
    case OpKind::Relu: need(1, 1); return relu(in[0]);
    case OpKind::Gelu: need(1, 1); return gelu(in[0]);
    case OpKind::Sigmoid: need(1, 1); return sigmoid(in[0]);
    case OpKind::Tanh: need(1, 1); return tanh(in[0]);
    case OpKind::Exp: need(1, 1); return exp(in[0]);
    case OpKind::Log: need(1, 1); return log(in[0]);
    case OpKind::Softmax: need(1, 1); return softmax(in[0], at.axis);
    case OpKind::LogSoftmax: need(1, 1); return log_softmax(in[0], at.axis);
    case OpKind::LayerNorm: need(1, 3); return layernorm(in[0], opt(1), opt(2));
    case OpKind::Sum: need(1, 1); return sum(in[0]);
    case OpKind::Mean: need(1, 1); return mean(in[0]);
    case OpKind::SumAxis: need(1, 1); return sum(in[0], at.axis);
    case OpKind::MeanAxis: need(1, 1); return mean(in[0], at.axis);
    case OpKind::Gather: need(1, 1); return gather(in[0], at.indices);
    case OpKind::Embed: need(1, 1); return embed(in[0], at.indices, at.shape);
    case OpKind::Concat: need(1, in.size()); return concat(in, at.axis);
    case OpKind::Slice: need(1, 1); return slice(in[0], at.axis, at.start, at.end);
    case OpKind::Upsample2x: need(1, 1); return upsample2x(in[0]);
    case OpKind::StopGradient: need(1, 1); return stop_gradient(in[0]);
    case OpKind::StraightThrough: need(2, 2); return straight_through(in[0], in[1]);
  }
  throw ShapeError("unknown op kind");
}

}  // namespace genspec
