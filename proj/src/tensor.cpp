#include "kinadapt/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace kinadapt {

namespace {

thread_local bool g_grad_enabled = true;

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  shape_fail(op, "incompatible shapes " + to_string(a) + " and " + to_string(b));
}

// Splits a shape around `axis` into (outer, length, inner) strides.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t length = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

std::vector<double>& ensure_grad(Node& node) {
  if (node.grad.size() != node.value.size()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

Var make_result(Op op, NdArray value, std::vector<Var> inputs,
                std::function<void(Node&)> backprop) {
  auto node = std::make_shared<Node>();
  node->op = op;
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  node->requires_grad = needs;
  if (needs) {
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backprop = std::move(backprop);
  }
  return Var(std::move(node));
}

template <class F>
Var unary(Op op, const Var& a, F&& fn, std::function<void(Node&)> backprop) {
  const auto& in = a.value();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(in[i]);
  return make_result(op, NdArray(in.shape(), std::move(out)), {a}, std::move(backprop));
}

void require_same(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) shape_fail(op, a.shape(), b.shape());
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// NdArray

NdArray::NdArray() : shape_{0}, data_(std::make_shared<const std::vector<double>>()) {}

NdArray::NdArray(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  if (element_count(shape_) != values.size()) {
    throw ShapeError("NdArray: shape " + to_string(shape_) + " needs " +
                     std::to_string(element_count(shape_)) + " values, got " +
                     std::to_string(values.size()));
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(values));
}

NdArray NdArray::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

NdArray NdArray::filled(Shape shape, double value) {
  const auto n = element_count(shape);
  return NdArray(std::move(shape), std::vector<double>(n, value));
}

NdArray NdArray::scalar(double value) { return NdArray(Shape{}, {value}); }

NdArray NdArray::vector(std::vector<double> values) {
  const auto n = values.size();
  return NdArray(Shape{n}, std::move(values));
}

NdArray NdArray::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return NdArray(Shape{rows, cols}, std::move(values));
}

NdArray NdArray::checked(Shape shape, std::vector<double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw DataError("NdArray: non-finite value at flat index " + std::to_string(i));
    }
  }
  return NdArray(std::move(shape), std::move(values));
}

std::size_t NdArray::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("NdArray::dim: axis " + std::to_string(axis) + " out of range for " +
                     to_string(shape_));
  }
  return shape_[axis];
}

double NdArray::at(std::size_t row, std::size_t col) const {
  return (*data_)[row * shape_[1] + col];
}

double NdArray::item() const {
  if (size() != 1) throw ShapeError("NdArray::item: array has " + std::to_string(size()) + " elements");
  return (*data_)[0];
}

bool NdArray::all_finite() const {
  return std::all_of(data_->begin(), data_->end(), [](double v) { return std::isfinite(v); });
}

bool operator==(const NdArray& a, const NdArray& b) {
  if (a.shape_ != b.shape_) return false;
  return a.size() == 0 ||
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// ---------------------------------------------------------------------------
// Graph plumbing

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::add: return "add";
    case Op::subtract: return "subtract";
    case Op::multiply: return "multiply";
    case Op::scale: return "scale";
    case Op::matmul: return "matmul";
    case Op::relu: return "relu";
    case Op::sigmoid: return "sigmoid";
    case Op::tanh: return "tanh";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::concat: return "concat";
    case Op::mean: return "mean";
    case Op::sum: return "sum";
    case Op::slice: return "slice";
    case Op::transpose: return "transpose";
    case Op::broadcast_add: return "broadcast_add";
    case Op::reshape: return "reshape";
    case Op::unfold1d: return "unfold1d";
    case Op::softmax: return "softmax";
    case Op::softmax_cross_entropy: return "softmax_cross_entropy";
  }
  return "unknown";
}

namespace {
std::atomic<std::uint64_t> next_pass{1};
thread_local std::uint64_t last_pass = 0;
}  // namespace

NdArray Var::grad() const {
  if (node_->grad_pass != last_pass || node_->grad.size() != node_->value.size()) {
    return NdArray::zeros(node_->value.shape());
  }
  return NdArray(node_->value.shape(), node_->grad);
}

Var constant(NdArray value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var parameter(NdArray value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

void assign(Var& leaf, NdArray value) {
  if (leaf.op() != Op::leaf) throw ShapeError("assign: target is not a leaf");
  if (value.shape() != leaf.shape()) shape_fail("assign", leaf.shape(), value.shape());
  leaf.node()->value = std::move(value);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// Primitives

Var add(const Var& a, const Var& b) {
  require_same("add", a, b);
  const auto& x = a.value();
  const auto& y = b.value();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result(Op::add, NdArray(x.shape(), std::move(out)), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = ensure_grad(*p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var subtract(const Var& a, const Var& b) {
  require_same("subtract", a, b);
  const auto& x = a.value();
  const auto& y = b.value();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result(Op::subtract, NdArray(x.shape(), std::move(out)), {a, b}, [](Node& self) {
    const double sign[2] = {1.0, -1.0};
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      auto& g = ensure_grad(*p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
    }
  });
}

Var multiply(const Var& a, const Var& b) {
  require_same("multiply", a, b);
  const auto& x = a.value();
  const auto& y = b.value();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result(Op::multiply, NdArray(x.shape(), std::move(out)), {a, b}, [](Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    const auto& xa = pa->value;
    const auto& xb = pb->value;
    if (pa->requires_grad) {
      auto& g = ensure_grad(*pa);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * xb[i];
    }
    if (pb->requires_grad) {
      auto& g = ensure_grad(*pb);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * xa[i];
    }
  });
}

Var scale(const Var& a, double factor) {
  return unary(Op::scale, a, [factor](double v) { return v * factor; }, [factor](Node& self) {
    auto& p = self.parents[0];
    auto& g = ensure_grad(*p);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Var matmul(const Var& a, const Var& b) {
  const auto& x = a.value();
  const auto& y = b.value();
  if (x.rank() != 2 || (y.rank() != 1 && y.rank() != 2) || x.dim(1) != y.dim(0)) {
    shape_fail("matmul", x.shape(), y.shape());
  }
  const std::size_t m = x.dim(0);
  const std::size_t n = x.dim(1);
  const std::size_t p = y.rank() == 2 ? y.dim(1) : 1;
  std::vector<double> out(m * p, 0.0);
  const double* xd = x.data();
  const double* yd = y.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * p;
    for (std::size_t k = 0; k < n; ++k) {
      const double xik = xd[i * n + k];
      if (xik == 0.0) continue;
      const double* yrow = yd + k * p;
      for (std::size_t j = 0; j < p; ++j) row[j] += xik * yrow[j];
    }
  }
  Shape out_shape = y.rank() == 2 ? Shape{m, p} : Shape{m};
  return make_result(Op::matmul, NdArray(std::move(out_shape), std::move(out)), {a, b},
                     [m, n, p](Node& self) {
                       auto& pa = self.parents[0];
                       auto& pb = self.parents[1];
                       const double* g = self.grad.data();
                       if (pa->requires_grad) {
                         // dA = G * B^T
                         auto& ga = ensure_grad(*pa);
                         const double* bd = pb->value.data();
                         for (std::size_t i = 0; i < m; ++i) {
                           for (std::size_t k = 0; k < n; ++k) {
                             double acc = 0.0;
                             const double* brow = bd + k * p;
                             const double* grow = g + i * p;
                             for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
                             ga[i * n + k] += acc;
                           }
                         }
                       }
                       if (pb->requires_grad) {
                         // dB = A^T * G
                         auto& gb = ensure_grad(*pb);
                         const double* ad = pa->value.data();
                         for (std::size_t i = 0; i < m; ++i) {
                           const double* grow = g + i * p;
                           for (std::size_t k = 0; k < n; ++k) {
                             const double aik = ad[i * n + k];
                             if (aik == 0.0) continue;
                             double* brow = gb.data() + k * p;
                             for (std::size_t j = 0; j < p; ++j) brow[j] += aik * grow[j];
                           }
                         }
                       }
                     });
}

Var relu(const Var& a) {
  return unary(Op::relu, a, [](double v) { return v > 0.0 ? v : 0.0; }, [](Node& self) {
    auto& p = self.parents[0];
    auto& g = ensure_grad(*p);
    const auto& x = p->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Var sigmoid(const Var& a) {
  return unary(Op::sigmoid, a, stable_sigmoid, [](Node& self) {
    auto& p = self.parents[0];
    auto& g = ensure_grad(*p);
    const auto& y = self.value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i] * (1.0 - y[i]);
  });
}

Var tanh(const Var& a) {
  return unary(Op::tanh, a, [](double v) { return std::tanh(v); }, [](Node& self) {
    auto& p = self.parents[0];
    auto& g = ensure_grad(*p);
    const auto& y = self.value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (1.0 - y[i] * y[i]);
  });
}

Var exp(const Var& a) {
  return unary(Op::exp, a, [](double v) { return std::exp(v); }, [](Node& self) {
    auto& p = self.parents[0];
    auto& g = ensure_grad(*p);
    const auto& y = self.value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i];
  });
}

Var log(const Var& a) {
  for (double v : a.value().values()) {
    if (!(v > 0.0)) throw NumericError("log: non-positive input " + std::to_string(v));
  }
  return unary(Op::log, a, [](double v) { return std::log(v); }, [](Node& self) {
    auto& p = self.parents[0];
    auto& g = ensure_grad(*p);
    const auto& x = p->value;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / x[i];
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) shape_fail("concat", "no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) shape_fail("concat", "axis out of range for " + to_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& part : parts) {
    const Shape& s = part.shape();
    if (s.size() != first.size()) shape_fail("concat", first, s);
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) shape_fail("concat", first, s);
    }
    out_shape[axis] += s[axis];
  }
  const AxisSplit outer = split_at(out_shape, axis);
  std::vector<double> out(element_count(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& part : parts) {
    offsets.push_back(offset);
    const std::size_t len = part.shape()[axis];
    const double* src = part.value().data();
    for (std::size_t o = 0; o < outer.outer; ++o) {
      std::copy_n(src + o * len * outer.inner, len * outer.inner,
                  out.data() + (o * outer.length + offset) * outer.inner);
    }
    offset += len;
  }
  return make_result(Op::concat, NdArray(out_shape, std::move(out)), parts,
                     [axis, outer, offsets](Node& self) {
                       for (std::size_t k = 0; k < self.parents.size(); ++k) {
                         auto& p = self.parents[k];
                         if (!p->requires_grad) continue;
                         auto& g = ensure_grad(*p);
                         const std::size_t len = p->value.shape()[axis];
                         for (std::size_t o = 0; o < outer.outer; ++o) {
                           const double* src =
                               self.grad.data() + (o * outer.length + offsets[k]) * outer.inner;
                           double* dst = g.data() + o * len * outer.inner;
                           for (std::size_t i = 0; i < len * outer.inner; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Var mean(const Var& a, std::size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size()) shape_fail("mean", "axis out of range for " + to_string(s));
  if (s[axis] == 0) shape_fail("mean", "empty axis in " + to_string(s));
  const AxisSplit sp = split_at(s, axis);
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  const double* x = a.value().data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t l = 0; l < sp.length; ++l) {
      const double* row = x + (o * sp.length + l) * sp.inner;
      double* dst = out.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += row[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(sp.length);
  for (auto& v : out) v *= inv;
  return make_result(Op::mean, NdArray(std::move(out_shape), std::move(out)), {a},
                     [sp, inv](Node& self) {
                       auto& p = self.parents[0];
                       auto& g = ensure_grad(*p);
                       for (std::size_t o = 0; o < sp.outer; ++o) {
                         for (std::size_t l = 0; l < sp.length; ++l) {
                           double* dst = g.data() + (o * sp.length + l) * sp.inner;
                           const double* src = self.grad.data() + o * sp.inner;
                           for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i] * inv;
                         }
                       }
                     });
}

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  return make_result(Op::sum, NdArray::scalar(total), {a}, [](Node& self) {
    auto& p = self.parents[0];
    auto& g = ensure_grad(*p);
    for (auto& v : g) v += self.grad[0];
  });
}

Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    shape_fail("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) +
                            ") on axis " + std::to_string(axis) + " of " + to_string(s));
  }
  const AxisSplit sp = split_at(s, axis);
  const std::size_t len = end - begin;
  Shape out_shape = s;
  out_shape[axis] = len;
  std::vector<double> out(sp.outer * len * sp.inner);
  const double* x = a.value().data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(x + (o * sp.length + begin) * sp.inner, len * sp.inner,
                out.data() + o * len * sp.inner);
  }
  return make_result(Op::slice, NdArray(std::move(out_shape), std::move(out)), {a},
                     [sp, begin, len](Node& self) {
                       auto& p = self.parents[0];
                       auto& g = ensure_grad(*p);
                       for (std::size_t o = 0; o < sp.outer; ++o) {
                         const double* src = self.grad.data() + o * len * sp.inner;
                         double* dst = g.data() + (o * sp.length + begin) * sp.inner;
                         for (std::size_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
                       }
                     });
}

Var transpose(const Var& a) {
  const Shape& s = a.shape();
  if (s.size() != 2) shape_fail("transpose", "expected rank 2, got " + to_string(s));
  const std::size_t r = s[0];
  const std::size_t c = s[1];
  std::vector<double> out(r * c);
  const double* x = a.value().data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return make_result(Op::transpose, NdArray(Shape{c, r}, std::move(out)), {a},
                     [r, c](Node& self) {
                       auto& p = self.parents[0];
                       auto& g = ensure_grad(*p);
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
                     });
}

Var broadcast_add(const Var& a, const Var& v, std::size_t axis) {
  const Shape& s = a.shape();
  if (axis >= s.size() || v.shape().size() != 1 || v.shape()[0] != s[axis]) {
    shape_fail("broadcast_add", s, v.shape());
  }
  const AxisSplit sp = split_at(s, axis);
  std::vector<double> out = a.value().to_vector();
  const double* b = v.value().data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.length; ++l) {
      double* row = out.data() + (o * sp.length + l) * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) row[i] += b[l];
    }
  return make_result(Op::broadcast_add, NdArray(s, std::move(out)), {a, v}, [sp](Node& self) {
    auto& pa = self.parents[0];
    auto& pv = self.parents[1];
    if (pa->requires_grad) {
      auto& g = ensure_grad(*pa);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pv->requires_grad) {
      auto& g = ensure_grad(*pv);
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t l = 0; l < sp.length; ++l) {
          const double* row = self.grad.data() + (o * sp.length + l) * sp.inner;
          double acc = 0.0;
          for (std::size_t i = 0; i < sp.inner; ++i) acc += row[i];
          g[l] += acc;
        }
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  if (element_count(shape) != a.value().size()) shape_fail("reshape", a.shape(), shape);
  return make_result(Op::reshape, NdArray(std::move(shape), a.value().to_vector()), {a},
                     [](Node& self) {
                       auto& p = self.parents[0];
                       auto& g = ensure_grad(*p);
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                     });
}

Var unfold1d(const Var& a, std::size_t width, std::size_t pad_left, std::size_t pad_right) {
  const Shape& s = a.shape();
  if (s.size() != 2) shape_fail("unfold1d", "expected rank 2, got " + to_string(s));
  if (width == 0) shape_fail("unfold1d", "width must be >= 1");
  const std::size_t channels = s[0];
  const std::size_t time = s[1];
  const std::size_t padded = time + pad_left + pad_right;
  if (time == 0 || padded < width) {
    shape_fail("unfold1d", "sequence of length " + std::to_string(time) +
                               " too short for width " + std::to_string(width));
  }
  const std::size_t out_time = padded - width + 1;
  std::vector<double> out(channels * width * out_time, 0.0);
  const double* x = a.value().data();
  // out[(c*width + w), t] = x[c, t + w - pad_left]
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t w = 0; w < width; ++w) {
      double* row = out.data() + (c * width + w) * out_time;
      for (std::size_t t = 0; t < out_time; ++t) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + w) -
                                   static_cast<std::ptrdiff_t>(pad_left);
        if (src >= 0 && src < static_cast<std::ptrdiff_t>(time)) row[t] = x[c * time + src];
      }
    }
  return make_result(
      Op::unfold1d, NdArray(Shape{channels * width, out_time}, std::move(out)), {a},
      [channels, width, time, out_time, pad_left](Node& self) {
        auto& p = self.parents[0];
        auto& g = ensure_grad(*p);
        for (std::size_t c = 0; c < channels; ++c)
          for (std::size_t w = 0; w < width; ++w) {
            const double* row = self.grad.data() + (c * width + w) * out_time;
            for (std::size_t t = 0; t < out_time; ++t) {
              const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + w) -
                                         static_cast<std::ptrdiff_t>(pad_left);
              if (src >= 0 && src < static_cast<std::ptrdiff_t>(time)) g[c * time + src] += row[t];
            }
          }
      });
}

namespace {

std::vector<double> softmax_values(std::span<const double> logits) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    total += out[i];
  }
  for (auto& v : out) v /= total;
  return out;
}

}  // namespace

Var softmax(const Var& logits) {
  const Shape& s = logits.shape();
  if (s.size() != 1 || s[0] == 0) shape_fail("softmax", "expected non-empty rank-1, got " + to_string(s));
  auto probs = softmax_values(logits.value().values());
  return make_result(Op::softmax, NdArray(s, std::move(probs)), {logits}, [](Node& self) {
    auto& p = self.parents[0];
    auto& g = ensure_grad(*p);
    const auto& y = self.value;
    double dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += self.grad[i] * y[i];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += y[i] * (self.grad[i] - dot);
  });
}

Var softmax_cross_entropy(const Var& logits, std::size_t label) {
  const Shape& s = logits.shape();
  if (s.size() != 1 || s[0] == 0) {
    shape_fail("softmax_cross_entropy", "expected non-empty rank-1 logits, got " + to_string(s));
  }
  if (label >= s[0]) {
    throw ConfigError("softmax_cross_entropy: label " + std::to_string(label) +
                      " out of range for " + std::to_string(s[0]) + " classes");
  }
  const auto x = logits.value().values();
  const double peak = *std::max_element(x.begin(), x.end());
  double total = 0.0;
  for (double v : x) total += std::exp(v - peak);
  const double log_norm = peak + std::log(total);
  const double loss = log_norm - x[label];
  return make_result(Op::softmax_cross_entropy, NdArray::scalar(loss), {logits},
                     [label](Node& self) {
                       auto& p = self.parents[0];
                       auto& g = ensure_grad(*p);
                       const auto probs = softmax_values(p->value.values());
                       const double up = self.grad[0];
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         g[i] += up * (probs[i] - (i == label ? 1.0 : 0.0));
                       }
                     });
}

// ---------------------------------------------------------------------------
// Backward

void backward(const Var& loss) {
  if (!loss) throw ShapeError("backward: empty graph");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  last_pass = next_pass.fetch_add(1);
  for (Node* n : order) {
    n->grad.assign(n->value.size(), 0.0);
    n->grad_pass = last_pass;
  }
  loss.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

double finite_difference_check(const std::function<Var()>& loss_fn, std::span<Var> params,
                               double epsilon) {
  if (!(epsilon > 0.0)) throw ConfigError("finite_difference_check: epsilon must be > 0");
  const Var loss = loss_fn();
  if (!std::isfinite(loss.value().item())) {
    throw NumericError("finite_difference_check: non-finite loss at base point");
  }
  backward(loss);
  std::vector<NdArray> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad());

  auto evaluate = [&]() {
    NoGradGuard guard;
    const double v = loss_fn().value().item();
    if (!std::isfinite(v)) throw NumericError("finite_difference_check: non-finite evaluation");
    return v;
  };

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Var& p = params[k];
    const NdArray base = p.value();
    std::vector<double> probe = base.to_vector();
    for (std::size_t i = 0; i < probe.size(); ++i) {
      const double x0 = probe[i];
      probe[i] = x0 + epsilon;
      assign(p, NdArray(base.shape(), probe));
      const double up = evaluate();
      probe[i] = x0 - epsilon;
      assign(p, NdArray(base.shape(), probe));
      const double down = evaluate();
      probe[i] = x0;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    assign(p, base);
  }
  return worst;
}

double finite_difference_check(const std::function<Var(const Var&)>& f, const NdArray& point,
                               double epsilon) {
  Var leaf = parameter(point);
  std::vector<Var> params{leaf};
  return finite_difference_check([&]() { return f(params[0]); }, params, epsilon);
}

}  // namespace kinadapt
