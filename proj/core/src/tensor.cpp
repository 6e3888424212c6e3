#include "sgdet/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "sgdet/errors.hpp"

namespace sgdet {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

thread_local bool g_grad_mode = true;
thread_local double* g_relu_margin = nullptr;

detail::Node& node_of(const Tensor& t) {
  if (!t.defined()) throw ContractError("operation on an undefined tensor");
  return *t.node();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_string(t.shape()));
  }
}

bool wants_grad(const std::shared_ptr<detail::Node>& n) { return n->requires_grad; }

// Strides for splitting a shape around one axis: [outer, axis, inner].
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---- Tensor ------------------------------------------------------------------

Tensor::Tensor() = default;

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  auto n = std::make_shared<detail::Node>();
  n->data.assign(shape_numel(shape), value);
  n->shape = std::move(shape);
  return Tensor(std::move(n));
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("from_vector: shape " + shape_string(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->data = std::move(values);
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value) { return from_vector({1}, {value}); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("matrix: ragged rows");
    values.insert(values.end(), row.begin(), row.end());
  }
  return from_vector({r, c}, std::move(values));
}

const Shape& Tensor::shape() const { return node_of(*this).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("dim: axis " + std::to_string(axis) + " out of range for " +
                         shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return node_of(*this).data.size(); }

std::span<const double> Tensor::data() const { return node_of(*this).data; }

std::span<double> Tensor::mutable_data() { return node_of(*this).data; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
  return data()[0];
}

double Tensor::at(std::size_t i) const { return data()[i]; }

double Tensor::at(std::size_t row, std::size_t col) const {
  require_rank(*this, 2, "at");
  return data()[row * shape()[1] + col];
}

bool Tensor::requires_grad() const { return node_of(*this).requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  node_of(*this).requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return !node_of(*this).grad.empty(); }

std::span<const double> Tensor::grad() const { return node_of(*this).grad; }

void Tensor::zero_grad() {
  auto& g = node_of(*this).grad;
  std::fill(g.begin(), g.end(), 0.0);
}

Tensor Tensor::detach() const { return from_vector(shape(), node_of(*this).data); }

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.set_requires_grad(requires_grad());
  return t;
}

bool Tensor::is_leaf() const { return !node_of(*this).backward; }

// ---- recording ---------------------------------------------------------------

bool grad_mode_enabled() { return g_grad_mode; }

ReluMarginProbe::ReluMarginProbe()
    : margin_(std::numeric_limits<double>::infinity()), previous_(g_relu_margin) {
  g_relu_margin = &margin_;
}

ReluMarginProbe::~ReluMarginProbe() { g_relu_margin = previous_; }

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

Tensor make_op_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                      std::function<void(detail::Node&)> backward) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->data = std::move(values);
  if (g_grad_mode) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      n->requires_grad = true;
      n->inputs.reserve(inputs.size());
      for (auto& t : inputs) n->inputs.push_back(t.node());
      n->backward = std::move(backward);
    }
  }
  return Tensor(std::move(n));
}

// ---- linear algebra ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " * " +
                         shape_string(b.shape()));
  }
  std::vector<double> out(m * n);
  MutMap c(out.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  c.noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  return make_op_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    ConstMap dc(self.grad.data(), m, n);
    if (wants_grad(self.inputs[0])) {
      MutMap(na.ensure_grad().data(), m, k).noalias() +=
          dc * ConstMap(nb.data.data(), k, n).transpose();
    }
    if (wants_grad(self.inputs[1])) {
      MutMap(nb.ensure_grad().data(), k, n).noalias() +=
          ConstMap(na.data.data(), m, k).transpose() * dc;
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r * c);
  MutMap(out.data(), c, r) = ConstMap(x.data().data(), r, c).transpose();
  return make_op_result({c, r}, std::move(out), {x}, [r, c](detail::Node& self) {
    MutMap(self.inputs[0]->ensure_grad().data(), r, c) +=
        ConstMap(self.grad.data(), c, r).transpose();
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " +
                         shape_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_op_result(std::move(shape), std::move(out), {x}, [](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// ---- elementwise ---------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (auto& in : self.inputs) {
      if (!wants_grad(in)) continue;
      auto& g = in->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] - db[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    if (wants_grad(self.inputs[0])) {
      auto& g = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants_grad(self.inputs[1])) {
      auto& g = self.inputs[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto da = a.data(), db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  return make_op_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& na = *self.inputs[0];
    auto& nb = *self.inputs[1];
    if (na.requires_grad) {
      auto& g = na.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.data[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.data[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return make_op_result(x.shape(), std::move(out), {x}, [factor](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor scale(const Tensor& x, const Tensor& factor) {
  if (factor.numel() != 1) {
    throw DimensionError("scale: factor must hold one element, got " +
                         shape_string(factor.shape()));
  }
  const double f = factor.item();
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= f;
  return make_op_result(x.shape(), std::move(out), {x, factor}, [f](detail::Node& self) {
    auto& nx = *self.inputs[0];
    auto& nf = *self.inputs[1];
    if (nx.requires_grad) {
      auto& g = nx.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += f * self.grad[i];
    }
    if (nf.requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * nx.data[i];
      nf.ensure_grad()[0] += acc;
    }
  });
}

Tensor add_scalar(const Tensor& x, double value) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v += value;
  return make_op_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  if (g_relu_margin) {
    for (double v : out) *g_relu_margin = std::min(*g_relu_margin, std::abs(v));
  }
  for (auto& v : out) v = v < 0.0 ? 0.0 : v;  // NaN passes through
  return make_op_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto& in = *self.inputs[0];
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (in.data[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  auto dx = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = dx[i];
    // Split by sign so exp never overflows.
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  return make_op_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.data[i];
      g[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor square(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= v;
  return make_op_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto& in = *self.inputs[0];
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * in.data[i] * self.grad[i];
  });
}

// ---- reductions and structure ----------------------------------------------

Tensor sum(const Tensor& x) {
  const auto d = x.data();
  const double total = std::accumulate(d.begin(), d.end(), 0.0);
  return make_op_result({1}, {total}, {x}, [](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    const double s = self.grad[0];
    for (auto& v : g) v += s;
  });
}

Tensor mean(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("mean: axis " + std::to_string(axis) + " invalid for " +
                         shape_string(x.shape()));
  }
  const AxisSplit s = split_axis(x.shape(), axis);
  if (s.extent == 0) throw DimensionError("mean: empty axis");
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto d = x.data();
  const double inv = 1.0 / static_cast<double>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t a = 0; a < s.extent; ++a)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += d[(o * s.extent + a) * s.inner + i] * inv;
  return make_op_result(std::move(out_shape), std::move(out), {x}, [s, inv](detail::Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t a = 0; a < s.extent; ++a)
        for (std::size_t i = 0; i < s.inner; ++i)
          g[(o * s.extent + a) * s.inner + i] += self.grad[o * s.inner + i] * inv;
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no operands");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " invalid for " +
                         shape_string(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: incompatible shapes " + shape_string(first) + " and " +
                           shape_string(s));
    }
    out_shape[axis] += s[axis];
    extents.push_back(s[axis]);
  }
  const AxisSplit total = split_axis(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto d = parts[p].data();
    const std::size_t run = extents[p] * total.inner;
    for (std::size_t o = 0; o < total.outer; ++o) {
      std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(o * run), run,
                  out.begin() + static_cast<std::ptrdiff_t>(o * total.extent * total.inner +
                                                            offset * total.inner));
    }
    offset += extents[p];
  }
  return make_op_result(std::move(out_shape), std::move(out), parts,
                        [extents, total](detail::Node& self) {
                          std::size_t off = 0;
                          for (std::size_t p = 0; p < self.inputs.size(); ++p) {
                            const std::size_t run = extents[p] * total.inner;
                            if (self.inputs[p]->requires_grad) {
                              auto& g = self.inputs[p]->ensure_grad();
                              for (std::size_t o = 0; o < total.outer; ++o) {
                                const double* src = self.grad.data() +
                                                    o * total.extent * total.inner +
                                                    off * total.inner;
                                double* dst = g.data() + o * run;
                                for (std::size_t i = 0; i < run; ++i) dst[i] += src[i];
                              }
                            }
                            off += extents[p];
                          }
                        });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank()) {
    throw DimensionError("slice: axis " + std::to_string(axis) + " invalid for " +
                         shape_string(x.shape()));
  }
  if (begin > end || end > x.dim(axis)) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") outside " + shape_string(x.shape()));
  }
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t run = (end - begin) * s.inner;
  std::vector<double> out(s.outer * run);
  const auto d = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(d.begin() + static_cast<std::ptrdiff_t>((o * s.extent + begin) * s.inner), run,
                out.begin() + static_cast<std::ptrdiff_t>(o * run));
  }
  return make_op_result(std::move(out_shape), std::move(out), {x},
                        [s, begin, run](detail::Node& self) {
                          auto& g = self.inputs[0]->ensure_grad();
                          for (std::size_t o = 0; o < s.outer; ++o) {
                            double* dst = g.data() + (o * s.extent + begin) * s.inner;
                            const double* src = self.grad.data() + o * run;
                            for (std::size_t i = 0; i < run; ++i) dst[i] += src[i];
                          }
                        });
}

namespace {

void check_bias(const Tensor& x, const Tensor& bias, std::size_t axis, const char* op) {
  require_rank(x, 2, op);
  if (axis > 1) throw DimensionError(std::string(op) + ": axis must be 0 or 1");
  const std::size_t expected = axis == 0 ? x.dim(0) : x.dim(1);
  if (bias.numel() != expected) {
    throw DimensionError(std::string(op) + ": bias " + shape_string(bias.shape()) +
                         " does not match axis " + std::to_string(axis) + " of " +
                         shape_string(x.shape()));
  }
}

// out[r, c] = f(x[r, c] + b[axis == 0 ? r : c])
template <typename F>
std::vector<double> biased(const Tensor& x, const Tensor& bias, std::size_t axis, F f) {
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  const auto in = x.data();
  const auto b = bias.data();
  std::vector<double> out(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = in.data() + r * cols;
    double* dst = out.data() + r * cols;
    if (axis == 0) {
      for (std::size_t c = 0; c < cols; ++c) dst[c] = f(src[c] + b[r]);
    } else {
      for (std::size_t c = 0; c < cols; ++c) dst[c] = f(src[c] + b[c]);
    }
  }
  return out;
}

// Accumulates an incoming [rows x cols] gradient into x and the bias.
void bias_backward(detail::Node& x, detail::Node& bias, const double* grad, std::size_t rows,
                   std::size_t cols, std::size_t axis) {
  if (x.requires_grad) {
    auto& g = x.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += grad[i];
  }
  if (bias.requires_grad) {
    auto& g = bias.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* src = grad + r * cols;
      if (axis == 0) {
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) s += src[c];
        g[r] += s;
      } else {
        for (std::size_t c = 0; c < cols; ++c) g[c] += src[c];
      }
    }
  }
}

}  // namespace

Tensor add_bias(const Tensor& x, const Tensor& bias, std::size_t axis) {
  check_bias(x, bias, axis, "add_bias");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  return make_op_result(x.shape(), biased(x, bias, axis, [](double v) { return v; }), {x, bias},
                        [rows, cols, axis](detail::Node& self) {
                          bias_backward(*self.inputs[0], *self.inputs[1], self.grad.data(), rows,
                                        cols, axis);
                        });
}

Tensor add_bias_relu(const Tensor& x, const Tensor& bias, std::size_t axis) {
  check_bias(x, bias, axis, "add_bias_relu");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  return make_op_result(
      x.shape(), biased(x, bias, axis,
                        [m = g_relu_margin](double v) {
                          if (m) *m = std::min(*m, std::abs(v));
                          return v < 0.0 ? 0.0 : v;
                        }), {x, bias},
      [rows, cols, axis](detail::Node& self) {
        // The node's own gradient is scratch after this call, so mask it in place.
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          if (!(self.data[i] > 0.0)) self.grad[i] = 0.0;
        }
        bias_backward(*self.inputs[0], *self.inputs[1], self.grad.data(), rows, cols, axis);
      });
}

// ---- convolution and graph aggregation -------------------------------------

Tensor grouped_conv1d(const Tensor& x, const Tensor& weight, std::size_t groups,
                      std::size_t padding) {
  require_rank(x, 2, "grouped_conv1d");
  require_rank(weight, 3, "grouped_conv1d");
  const std::size_t c_in = x.dim(0), length = x.dim(1);
  const std::size_t kernel = weight.dim(0), c_out = weight.dim(2);
  if (groups == 0 || c_in % groups != 0) {
    throw ConfigError("grouped_conv1d: " + std::to_string(c_in) +
                      " input channels not divisible into " + std::to_string(groups) + " groups");
  }
  if (c_out % groups != 0) {
    throw ConfigError("grouped_conv1d: " + std::to_string(c_out) +
                      " output channels not divisible into " + std::to_string(groups) +
                      " groups");
  }
  const std::size_t in_per_group = c_in / groups, out_per_group = c_out / groups;
  if (weight.dim(1) != in_per_group) {
    throw DimensionError("grouped_conv1d: weight " + shape_string(weight.shape()) +
                         " expects " + std::to_string(weight.dim(1)) +
                         " input channels per group, have " + std::to_string(in_per_group));
  }
  if (length + 2 * padding < kernel) {
    throw DimensionError("grouped_conv1d: kernel longer than padded input");
  }
  const std::size_t out_len = length + 2 * padding - kernel + 1;

  const auto xd = x.data();
  const auto wd = weight.data();
  std::vector<double> out(c_out * out_len, 0.0);
  // in position of output t through tap j: t + j - padding
  for (std::size_t o = 0; o < c_out; ++o) {
    const std::size_t group = o / out_per_group;
    double* dst = out.data() + o * out_len;
    for (std::size_t j = 0; j < kernel; ++j) {
      for (std::size_t c = 0; c < in_per_group; ++c) {
        const double w = wd[(j * in_per_group + c) * c_out + o];
        if (w == 0.0) continue;
        const double* src = xd.data() + (group * in_per_group + c) * length;
        for (std::size_t t = 0; t < out_len; ++t) {
          const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t + j) -
                                     static_cast<std::ptrdiff_t>(padding);
          if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(length)) dst[t] += w * src[pos];
        }
      }
    }
  }

  return make_op_result(
      {c_out, out_len}, std::move(out), {x, weight},
      [=](detail::Node& self) {
        auto& nx = *self.inputs[0];
        auto& nw = *self.inputs[1];
        double* gx = nx.requires_grad ? nx.ensure_grad().data() : nullptr;
        double* gw = nw.requires_grad ? nw.ensure_grad().data() : nullptr;
        for (std::size_t o = 0; o < c_out; ++o) {
          const std::size_t group = o / out_per_group;
          const double* dy = self.grad.data() + o * out_len;
          for (std::size_t j = 0; j < kernel; ++j) {
            for (std::size_t c = 0; c < in_per_group; ++c) {
              const std::size_t widx = (j * in_per_group + c) * c_out + o;
              const std::size_t row = (group * in_per_group + c) * length;
              const double w = nw.data[widx];
              double acc = 0.0;
              for (std::size_t t = 0; t < out_len; ++t) {
                const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t + j) -
                                           static_cast<std::ptrdiff_t>(padding);
                if (pos < 0 || pos >= static_cast<std::ptrdiff_t>(length)) continue;
                acc += dy[t] * nx.data[row + static_cast<std::size_t>(pos)];
                if (gx) gx[row + static_cast<std::size_t>(pos)] += w * dy[t];
              }
              if (gw) gw[widx] += acc;
            }
          }
        }
      });
}

namespace {

Tensor gather_impl(const Tensor& x, const std::vector<std::vector<std::size_t>>& neighbors,
                   bool average, const char* op) {
  require_rank(x, 2, op);
  const std::size_t channels = x.dim(0), length = x.dim(1);
  if (neighbors.size() != length) {
    throw DimensionError(std::string(op) + ": neighbour table has " +
                         std::to_string(neighbors.size()) + " rows for " +
                         std::to_string(length) + " nodes");
  }
  std::vector<double> weights(length, 1.0);
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t n : neighbors[i]) {
      if (n >= length) {
        throw DimensionError(std::string(op) + ": neighbour index " + std::to_string(n) +
                             " out of range");
      }
    }
    if (average) {
      if (neighbors[i].empty()) {
        throw ContractError(std::string(op) + ": node " + std::to_string(i) +
                            " has no neighbours");
      }
      weights[i] = 1.0 / static_cast<double>(neighbors[i].size());
    }
  }
  const auto xd = x.data();
  std::vector<double> out(channels * length, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* src = xd.data() + c * length;
    double* dst = out.data() + c * length;
    for (std::size_t i = 0; i < length; ++i) {
      double acc = 0.0;
      for (std::size_t n : neighbors[i]) acc += src[n];
      dst[i] = acc * weights[i];
    }
  }
  return make_op_result(x.shape(), std::move(out), {x},
                        [neighbors, weights, channels, length](detail::Node& self) {
                          auto& g = self.inputs[0]->ensure_grad();
                          for (std::size_t c = 0; c < channels; ++c) {
                            const double* dy = self.grad.data() + c * length;
                            double* dx = g.data() + c * length;
                            for (std::size_t i = 0; i < length; ++i) {
                              const double v = dy[i] * weights[i];
                              for (std::size_t n : neighbors[i]) dx[n] += v;
                            }
                          }
                        });
}

}  // namespace

Tensor gather_sum(const Tensor& x, const std::vector<std::vector<std::size_t>>& neighbors) {
  return gather_impl(x, neighbors, false, "gather_sum");
}

Tensor gather_mean(const Tensor& x, const std::vector<std::vector<std::size_t>>& neighbors) {
  return gather_impl(x, neighbors, true, "gather_mean");
}

// ---- differentiation -------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar tensor, got " +
                        (loss.defined() ? shape_string(loss.shape()) : std::string("undefined")));
  }
  auto root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  // Interior gradients are scratch space; only leaves keep theirs.
  for (detail::Node* n : order) {
    if (n->backward) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

double grad_check(const std::function<Tensor()>& f, Tensor& theta, double step) {
  if (!theta.requires_grad()) theta.set_requires_grad(true);
  theta.zero_grad();
  backward(f());
  std::vector<double> analytic(theta.numel(), 0.0);
  if (theta.has_grad()) std::copy(theta.grad().begin(), theta.grad().end(), analytic.begin());
  theta.zero_grad();

  NoGradGuard guard;
  auto values = theta.mutable_data();
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double original = values[i];
    values[i] = original + step;
    const double plus = f().item();
    values[i] = original - step;
    const double minus = f().item();
    values[i] = original;
    const double numeric = (plus - minus) / (2.0 * step);
    const double err = std::abs(analytic[i] - numeric) /
                       std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace sgdet
