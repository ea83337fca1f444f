#include "aerialvg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "aerialvg/kernels.hpp"

namespace aerialvg {

namespace {

thread_local Tape* g_current_tape = nullptr;

// Grad buffer of an input if it participates in differentiation, else null.
double* grad_of(const Tensor& t) {
  return t.requires_grad() ? t.node()->grad_buffer().data() : nullptr;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

std::size_t last_dim(const Tensor& x) { return x.shape().back(); }

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto d : shape) require(d > 0, "tensor dimensions must be positive, got " + shape_str(shape));
  require(!shape.empty(), "tensor must have at least one dimension");
  require(shape_numel(shape) == values.size(),
          "shape " + shape_str(shape) + " does not match " + std::to_string(values.size()) + " values");
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->data = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

Tensor Tensor::randn(Shape shape, RngState& rng, double stddev, bool requires_grad) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = stddev * rng.normal();
  return from(std::move(shape), std::move(v), requires_grad);
}

std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
  require(numel() == 1, "item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

void Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
}

Tensor Tensor::detach() const { return from(shape(), node_->data, false); }

// ---------------------------------------------------------------------------
// Tape

Tape::Tape() : previous_(g_current_tape) { g_current_tape = this; }

Tape::~Tape() { g_current_tape = previous_; }

Tape* Tape::current() { return g_current_tape; }

void Tape::backward(const Tensor& root) {
  require(root.numel() == 1, "backward() needs a scalar root, got " + shape_str(root.shape()));
  if (!root.requires_grad()) return;
  for (auto& n : nodes_) n->grad.clear();
  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::Node& n = **it;
    if (!n.grad.empty() && n.backward) n.backward(n);
  }
}

Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   std::function<void(detail::Node&)> backward) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->data = std::move(values);
  Tape* tape = Tape::current();
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (tape != nullptr && any) {
    n->requires_grad = true;
    n->is_leaf = false;
    n->backward = std::move(backward);
    tape->record(n);
  }
  return Tensor(std::move(n));
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor elementwise(const Tensor& a, const Tensor& b, Elementwise kind) {
  const bool bscalar = b.numel() == 1 && a.numel() != 1;
  if (!bscalar && a.shape() != b.shape()) {
    throw ShapeError("elementwise shape mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t n = a.numel();
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double x = ad[k], y = bd[bscalar ? 0 : k];
    switch (kind) {
      case Elementwise::add: out[k] = x + y; break;
      case Elementwise::sub: out[k] = x - y; break;
      case Elementwise::mul: out[k] = x * y; break;
      case Elementwise::div: out[k] = x / y; break;
      case Elementwise::min: out[k] = std::min(x, y); break;
      case Elementwise::max: out[k] = std::max(x, y); break;
    }
  }
  return make_result(a.shape(), std::move(out), {a, b}, [a, b, kind, bscalar](detail::Node& self) {
    double* ga = grad_of(a);
    double* gb = grad_of(b);
    const auto ad = a.data();
    const auto bd = b.data();
    for (std::size_t k = 0; k < self.grad.size(); ++k) {
      const double g = self.grad[k];
      const double x = ad[k], y = bd[bscalar ? 0 : k];
      double da = 0.0, db = 0.0;
      switch (kind) {
        case Elementwise::add: da = g; db = g; break;
        case Elementwise::sub: da = g; db = -g; break;
        case Elementwise::mul: da = g * y; db = g * x; break;
        case Elementwise::div: da = g / y; db = -g * x / (y * y); break;
        case Elementwise::min: (x <= y ? da : db) = g; break;
        case Elementwise::max: (x >= y ? da : db) = g; break;
      }
      if (ga) ga[k] += da;
      if (gb) gb[bscalar ? 0 : k] += db;
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, Elementwise::add); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, Elementwise::sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, Elementwise::mul); }
Tensor div(const Tensor& a, const Tensor& b) { return elementwise(a, b, Elementwise::div); }
Tensor minimum(const Tensor& a, const Tensor& b) { return elementwise(a, b, Elementwise::min); }
Tensor maximum(const Tensor& a, const Tensor& b) { return elementwise(a, b, Elementwise::max); }

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return make_result(a.shape(), std::move(out), {a}, [a, factor](detail::Node& self) {
    double* ga = grad_of(a);
    for (std::size_t k = 0; k < self.grad.size(); ++k) ga[k] += factor * self.grad[k];
  });
}

Tensor add_scalar(const Tensor& a, double value) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += value;
  return make_result(a.shape(), std::move(out), {a}, [a](detail::Node& self) {
    double* ga = grad_of(a);
    for (std::size_t k = 0; k < self.grad.size(); ++k) ga[k] += self.grad[k];
  });
}

// ---------------------------------------------------------------------------
// Unary

namespace {

// f gives the value; df gives the derivative from (input, output).
template <typename F, typename DF>
Tensor unary(const Tensor& x, F f, DF df) {
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = f(xd[k]);
  return make_result(x.shape(), std::move(out), {x}, [x, df](detail::Node& self) {
    double* gx = grad_of(x);
    const auto xd = x.data();
    for (std::size_t k = 0; k < self.grad.size(); ++k) gx[k] += self.grad[k] * df(xd[k], self.data[k]);
  });
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0 ? v : 0.0; },
               [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor abs(const Tensor& x) {
  return unary(x, [](double v) { return std::abs(v); },
               [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0)) throw NumericError("log of non-positive value " + std::to_string(v));
  }
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& x, Shape shape) {
  require(shape_numel(shape) == x.numel(),
          "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, [x](detail::Node& self) {
    double* gx = grad_of(x);
    for (std::size_t k = 0; k < self.grad.size(); ++k) gx[k] += self.grad[k];
  });
}

Tensor transpose(const Tensor& x) {
  require(x.ndim() == 2 || x.ndim() == 3, "transpose needs a 2-D or 3-D tensor, got " + shape_str(x.shape()));
  const std::size_t batch = x.ndim() == 3 ? x.dim(0) : 1;
  const std::size_t rows = x.shape()[x.ndim() - 2], cols = x.shape().back();
  Shape out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 2], out_shape.back());
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t off = b * rows * cols;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[off + c * rows + r] = xd[off + r * cols + c];
  }
  return make_result(std::move(out_shape), std::move(out), {x}, [x, batch, rows, cols](detail::Node& self) {
    double* gx = grad_of(x);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = b * rows * cols;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gx[off + r * cols + c] += self.grad[off + c * rows + r];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  require(!parts.empty(), "concat of zero tensors");
  const Shape& first = parts.front().shape();
  require(axis < first.size(), "concat axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    require(p.ndim() == first.size(), "concat rank mismatch");
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis && p.dim(d) != first[d]) {
        throw ShapeError("concat shape mismatch: " + shape_str(first) + " vs " + shape_str(p.shape()));
      }
    }
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t out_row = out_shape[axis] * inner;
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t block = p.dim(axis) * inner;
    const auto pd = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pd.begin() + o * block, block, out.begin() + o * out_row + offset);
    offset += block;
  }
  return make_result(std::move(out_shape), std::move(out), parts,
                     [parts, outer, inner, out_row, axis](detail::Node& self) {
                       std::size_t offset = 0;
                       for (const auto& p : parts) {
                         const std::size_t block = p.dim(axis) * inner;
                         if (double* gp = grad_of(p)) {
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t k = 0; k < block; ++k)
                               gp[o * block + k] += self.grad[o * out_row + offset + k];
                         }
                         offset += block;
                       }
                     });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  require(axis < x.ndim(), "slice axis out of range");
  require(length > 0 && start + length <= x.dim(axis),
          "slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") out of range for " +
              shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= x.dim(d);
  for (std::size_t d = axis + 1; d < x.ndim(); ++d) inner *= x.dim(d);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const std::size_t in_row = x.dim(axis) * inner, block = length * inner, off = start * inner;
  std::vector<double> out(outer * block);
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(xd.begin() + o * in_row + off, block, out.begin() + o * block);
  return make_result(std::move(out_shape), std::move(out), {x}, [x, outer, in_row, block, off](detail::Node& self) {
    double* gx = grad_of(x);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < block; ++k) gx[o * in_row + off + k] += self.grad[o * block + k];
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require(x.ndim() == 2, "gather_rows needs a 2-D tensor, got " + shape_str(x.shape()));
  require(!rows.empty(), "gather_rows with no indices");
  const std::size_t width = x.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * width);
  const auto xd = x.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    require(idx[r] < x.dim(0), "gather_rows index " + std::to_string(idx[r]) + " out of range");
    std::copy_n(xd.begin() + idx[r] * width, width, out.begin() + r * width);
  }
  return make_result({idx.size(), width}, std::move(out), {x}, [x, idx, width](detail::Node& self) {
    double* gx = grad_of(x);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < width; ++c) gx[idx[r] * width + c] += self.grad[r * width + c];
  });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result({1}, {s}, {x}, [x](detail::Node& self) {
    double* gx = grad_of(x);
    for (std::size_t k = 0; k < x.numel(); ++k) gx[k] += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean_rows(const Tensor& x) {
  require(x.ndim() == 2, "mean_rows needs a 2-D tensor, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> out(d, 0.0);
  const auto xd = x.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) out[c] += xd[r * d + c];
  for (auto& v : out) v /= static_cast<double>(n);
  return make_result({1, d}, std::move(out), {x}, [x, n, d](detail::Node& self) {
    double* gx = grad_of(x);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) gx[r * d + c] += self.grad[c] / static_cast<double>(n);
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  const bool batched = a.ndim() == 3;
  require((a.ndim() == 2 && b.ndim() == 2) || (a.ndim() == 3 && b.ndim() == 3),
          "matmul needs two 2-D or two 3-D tensors, got " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t batch = batched ? a.dim(0) : 1;
  if (batched && b.dim(0) != batch) {
    throw ShapeError("matmul batch mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[a.ndim() - 2], k = a.shape().back();
  const std::size_t kb = b.shape()[b.ndim() - 2], p = b.shape().back();
  if (k != kb) {
    throw ShapeError("matmul inner dimension mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Shape out_shape = batched ? Shape{batch, m, p} : Shape{m, p};
  std::vector<double> out(batch * m * p);
  for (std::size_t bi = 0; bi < batch; ++bi) {
    kernels::gemm({m, p, k}, a.data().data() + bi * m * k, b.data().data() + bi * k * p,
                  out.data() + bi * m * p, false);
  }
  return make_result(std::move(out_shape), std::move(out), {a, b}, [a, b, batch, m, k, p](detail::Node& self) {
    double* ga = grad_of(a);
    double* gb = grad_of(b);
    for (std::size_t bi = 0; bi < batch; ++bi) {
      const double* dc = self.grad.data() + bi * m * p;
      if (ga) kernels::gemm({m, k, p, false, true}, dc, b.data().data() + bi * k * p, ga + bi * m * k, true);
      if (gb) kernels::gemm({k, p, m, true, false}, a.data().data() + bi * m * k, dc, gb + bi * k * p, true);
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require(x.ndim() == 2 && w.ndim() == 2 && x.dim(1) == w.dim(0),
          "linear shape mismatch: " + shape_str(x.shape()) + " x " + shape_str(w.shape()));
  require(bias.numel() == w.dim(1), "linear bias " + shape_str(bias.shape()) + " for weight " + shape_str(w.shape()));
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
  std::vector<double> out(n * out_dim);
  kernels::gemm({n, out_dim, in}, x.data().data(), w.data().data(), out.data(), false);
  const auto bd = bias.data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < out_dim; ++c) out[r * out_dim + c] += bd[c];
  return make_result({n, out_dim}, std::move(out), {x, w, bias}, [x, w, bias, n, in, out_dim](detail::Node& self) {
    const double* dy = self.grad.data();
    if (double* gx = grad_of(x)) kernels::gemm({n, in, out_dim, false, true}, dy, w.data().data(), gx, true);
    if (double* gw = grad_of(w)) kernels::gemm({in, out_dim, n, true, false}, x.data().data(), dy, gw, true);
    if (double* gb = grad_of(bias)) {
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < out_dim; ++c) gb[c] += dy[r * out_dim + c];
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization

namespace {

void check_finite(const Tensor& x, const char* op) {
  for (double v : x.data()) {
    if (std::isnan(v)) throw NumericError(std::string(op) + ": NaN input");
  }
}

}  // namespace

Tensor softmax(const Tensor& x) {
  check_finite(x, "softmax");
  const std::size_t cols = last_dim(x), rows = x.numel() / cols;
  std::vector<double> out(x.numel());
  kernels::softmax_rows(rows, cols, x.data().data(), out.data());
  return make_result(x.shape(), std::move(out), {x}, [x, rows, cols](detail::Node& self) {
    kernels::softmax_rows_backward(rows, cols, self.data.data(), self.grad.data(), grad_of(x));
  });
}

Tensor log_softmax(const Tensor& x) {
  check_finite(x, "log_softmax");
  const std::size_t cols = last_dim(x), rows = x.numel() / cols;
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = xd[r * cols];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, xd[r * cols + c]);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(xd[r * cols + c] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xd[r * cols + c] - lse;
  }
  return make_result(x.shape(), std::move(out), {x}, [x, rows, cols](detail::Node& self) {
    double* gx = grad_of(x);
    for (std::size_t r = 0; r < rows; ++r) {
      double gsum = 0.0;
      for (std::size_t c = 0; c < cols; ++c) gsum += self.grad[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t k = r * cols + c;
        gx[k] += self.grad[k] - std::exp(self.data[k]) * gsum;
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const std::size_t cols = last_dim(x), rows = x.numel() / cols;
  require(gain.numel() == cols && bias.numel() == cols,
          "layer_norm affine size mismatch for input " + shape_str(x.shape()));
  std::vector<double> out(x.numel());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  kernels::layer_norm_rows(rows, cols, x.data().data(), gain.data().data(), bias.data().data(), kLayerNormEps,
                           out.data(), xhat->data(), inv_std->data());
  return make_result(x.shape(), std::move(out), {x, gain, bias},
                     [x, gain, bias, rows, cols, xhat, inv_std](detail::Node& self) {
                       kernels::layer_norm_rows_backward(rows, cols, xhat->data(), inv_std->data(),
                                                         gain.data().data(), self.grad.data(), grad_of(x),
                                                         grad_of(gain), grad_of(bias));
                     });
}

// ---------------------------------------------------------------------------
// Spatial

Tensor conv2d_down(const Tensor& x, const Tensor& kernel, std::size_t stride) {
  require(x.ndim() == 3, "conv2d_down needs [C,H,W], got " + shape_str(x.shape()));
  require(stride > 0, "conv2d_down stride must be positive");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % stride != 0 || w % stride != 0) {
    throw ShapeError("conv2d_down: " + shape_str(x.shape()) + " not divisible by stride " + std::to_string(stride));
  }
  require(kernel.ndim() == 3 && kernel.dim(1) == stride && kernel.dim(2) == stride &&
              (kernel.dim(0) == c || kernel.dim(0) == 1),
          "conv2d_down kernel " + shape_str(kernel.shape()) + " does not fit input " + shape_str(x.shape()) +
              " with stride " + std::to_string(stride));
  const kernels::ConvShape cs{c, h, w, stride, kernel.dim(0) == 1 && c != 1};
  std::vector<double> out(c * (h / stride) * (w / stride));
  kernels::conv2d_down(cs, x.data().data(), kernel.data().data(), out.data());
  return make_result({c, h / stride, w / stride}, std::move(out), {x, kernel}, [x, kernel, cs](detail::Node& self) {
    kernels::conv2d_down_backward(cs, x.data().data(), kernel.data().data(), self.grad.data(), grad_of(x),
                                  grad_of(kernel));
  });
}

Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require(x.ndim() == 3, "bilinear_resize needs [C,H,W], got " + shape_str(x.shape()));
  require(out_h > 0 && out_w > 0, "bilinear_resize to zero-size output");
  require(out_h >= x.dim(1) && out_w >= x.dim(2),
          "bilinear_resize only upsamples: " + shape_str(x.shape()) + " -> " + std::to_string(out_h) + "x" +
              std::to_string(out_w));
  const kernels::ResizeShape rs{x.dim(0), x.dim(1), x.dim(2), out_h, out_w};
  std::vector<double> out(rs.channels * out_h * out_w);
  kernels::bilinear_resize(rs, x.data().data(), out.data());
  return make_result({rs.channels, out_h, out_w}, std::move(out), {x}, [x, rs](detail::Node& self) {
    kernels::bilinear_resize_backward(rs, self.grad.data(), grad_of(x));
  });
}

Tensor patchify(const Tensor& x, std::size_t k) {
  require(x.ndim() == 3, "patchify needs [C,H,W], got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (k == 0 || h % k != 0 || w % k != 0) {
    throw ShapeError("patchify: " + shape_str(x.shape()) + " not divisible by patch " + std::to_string(k));
  }
  const std::size_t ph = h / k, pw = w / k, width = c * k * k;
  // src[i] is the input offset feeding output element i.
  auto src = std::make_shared<std::vector<std::size_t>>(ph * pw * width);
  for (std::size_t py = 0; py < ph; ++py)
    for (std::size_t px = 0; px < pw; ++px)
      for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx)
            (*src)[(py * pw + px) * width + ci * k * k + ky * k + kx] =
                ci * h * w + (py * k + ky) * w + px * k + kx;
  std::vector<double> out(src->size());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[(*src)[i]];
  return make_result({ph * pw, width}, std::move(out), {x}, [x, src](detail::Node& self) {
    double* gx = grad_of(x);
    for (std::size_t i = 0; i < src->size(); ++i) gx[(*src)[i]] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Losses

Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets) {
  require(targets.size() == logits.numel(), "bce_with_logits: target count mismatch");
  const auto xd = logits.data();
  const double n = static_cast<double>(targets.size());
  double total = 0.0;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const double x = xd[k];
    total += std::max(x, 0.0) - x * targets[k] + std::log1p(std::exp(-std::abs(x)));
  }
  std::vector<double> y(targets.begin(), targets.end());
  return make_result({1}, {total / n}, {logits}, [logits, y = std::move(y), n](detail::Node& self) {
    double* gx = grad_of(logits);
    const auto xd = logits.data();
    for (std::size_t k = 0; k < y.size(); ++k) {
      const double s = stable_sigmoid(xd[k]);
      gx[k] += self.grad[0] * (s - y[k]) / n;
    }
  });
}

Tensor cross_entropy_at(const Tensor& logits, std::size_t index) {
  require(index < logits.numel(), "cross_entropy_at index out of range");
  const auto xd = logits.data();
  for (double v : xd) {
    if (!std::isfinite(v)) throw NumericError("cross_entropy_at: non-finite logit");
  }
  const double mx = *std::max_element(xd.begin(), xd.end());
  double total = 0.0;
  for (double v : xd) total += std::exp(v - mx);
  const double lse = mx + std::log(total);
  return make_result({1}, {lse - xd[index]}, {logits}, [logits, index, lse](detail::Node& self) {
    double* gx = grad_of(logits);
    const auto xd = logits.data();
    for (std::size_t k = 0; k < xd.size(); ++k) {
      gx[k] += self.grad[0] * (std::exp(xd[k] - lse) - (k == index ? 1.0 : 0.0));
    }
  });
}

}  // namespace aerialvg
