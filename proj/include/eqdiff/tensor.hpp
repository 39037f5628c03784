#pragma once

// Dense row-major double tensors with tape-based reverse-mode autodiff.
// Define-by-run: every differentiable op appends one backward closure to
// the Tape; replaying the closures in reverse order is a valid reverse
// topological traversal because ops are recorded in execution order.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace eqdiff {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

class Tape;

class Tensor {
 public:
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  Tape* tape = nullptr;
  int node = -1;

  Tensor() = default;
  explicit Tensor(Shape s)
      : shape(std::move(s)),
        data(std::make_shared<std::vector<double>>(numel(shape), 0.0)) {}

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data->begin(), t.data->end(), v);
    return t;
  }
  static Tensor ones(Shape s) { return full(std::move(s), 1.0); }
  static Tensor scalar(double v) { return full({1}, v); }
  static Tensor from_data(Shape s, std::vector<double> vals) {
    if (numel(s) != static_cast<std::int64_t>(vals.size()))
      throw ShapeError("from_data: shape " + shape_str(s) + " does not match " +
                       std::to_string(vals.size()) + " values");
    Tensor t;
    t.shape = std::move(s);
    t.data = std::make_shared<std::vector<double>>(std::move(vals));
    return t;
  }

  std::int64_t size() const { return data ? static_cast<std::int64_t>(data->size()) : 0; }
  std::int64_t dim(int i) const { return shape.at(i); }
  int ndim() const { return static_cast<int>(shape.size()); }
  double& operator[](std::int64_t i) { return (*data)[i]; }
  double operator[](std::int64_t i) const { return (*data)[i]; }
  bool tracked() const { return node >= 0; }

  std::vector<double> grad() const;  // defined after Tape
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  int alloc(std::int64_t n) {
    grads_.emplace_back(n, 0.0);
    return static_cast<int>(grads_.size()) - 1;
  }
  std::vector<double>& grad(int node) { return grads_.at(node); }
  void record(std::function<void()> back) { ops_.push_back(std::move(back)); }

  // Creates a tracked copy of a value; gradients accumulate on its node.
  Tensor leaf(const Tensor& value) {
    Tensor t = value;
    t.tape = this;
    t.node = alloc(value.size());
    return t;
  }

  void backward(const Tensor& loss) {
    if (loss.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape));
    if (loss.tape != this || !loss.tracked())
      throw Error("backward: loss is not recorded on this tape");
    grads_.at(loss.node)[0] = 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  void clear_grads() {
    for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0);
  }

 private:
  std::vector<std::vector<double>> grads_;
  std::vector<std::function<void()>> ops_;
};

inline std::vector<double> Tensor::grad() const {
  if (!tracked()) return std::vector<double>(size(), 0.0);
  return tape->grad(node);
}

namespace detail {

inline Tape* tape_of(std::initializer_list<const Tensor*> ins) {
  Tape* tp = nullptr;
  for (const Tensor* t : ins) {
    if (!t->tracked()) continue;
    if (tp && tp != t->tape) throw Error("operands recorded on different tapes");
    tp = t->tape;
  }
  return tp;
}

inline void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v)
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value produced by ") + op);
}

// Finalizes an op result: finiteness gate, then tape registration when any
// input is tracked. `back` receives the output gradient vector.
inline Tensor make_result(Shape shape, std::vector<double> vals, const char* op,
                          std::initializer_list<const Tensor*> ins,
                          std::function<void(Tape&, const std::vector<double>&)> back) {
  check_finite(vals, op);
  Tensor out;
  out.shape = std::move(shape);
  out.data = std::make_shared<std::vector<double>>(std::move(vals));
  Tape* tp = tape_of(ins);
  if (tp && back) {
    out.tape = tp;
    out.node = tp->alloc(out.size());
    int onode = out.node;
    tp->record([tp, onode, back]() { back(*tp, tp->grad(onode)); });
  }
  return out;
}

using MatC = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using Mat = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape)
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i) v[i] = (*a.data)[i] + (*b.data)[i];
  int an = a.node, bn = b.node;
  return detail::make_result(a.shape, std::move(v), "add", {&a, &b},
                             [an, bn](Tape& tp, const std::vector<double>& g) {
                               if (an >= 0) {
                                 auto& ga = tp.grad(an);
                                 for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                               }
                               if (bn >= 0) {
                                 auto& gb = tp.grad(bn);
                                 for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                               }
                             });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i) v[i] = (*a.data)[i] - (*b.data)[i];
  int an = a.node, bn = b.node;
  return detail::make_result(a.shape, std::move(v), "sub", {&a, &b},
                             [an, bn](Tape& tp, const std::vector<double>& g) {
                               if (an >= 0) {
                                 auto& ga = tp.grad(an);
                                 for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                               }
                               if (bn >= 0) {
                                 auto& gb = tp.grad(bn);
                                 for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                               }
                             });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i) v[i] = (*a.data)[i] * (*b.data)[i];
  int an = a.node, bn = b.node;
  auto ad = a.data, bd = b.data;
  return detail::make_result(a.shape, std::move(v), "mul", {&a, &b},
                             [an, bn, ad, bd](Tape& tp, const std::vector<double>& g) {
                               if (an >= 0) {
                                 auto& ga = tp.grad(an);
                                 for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*bd)[i];
                               }
                               if (bn >= 0) {
                                 auto& gb = tp.grad(bn);
                                 for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * (*ad)[i];
                               }
                             });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i) v[i] = (*a.data)[i] * c;
  int an = a.node;
  return detail::make_result(a.shape, std::move(v), "scale", {&a},
                             [an, c](Tape& tp, const std::vector<double>& g) {
                               if (an < 0) return;
                               auto& ga = tp.grad(an);
                               for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
                             });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> v(a.size());
  for (std::int64_t i = 0; i < a.size(); ++i) v[i] = (*a.data)[i] + c;
  int an = a.node;
  return detail::make_result(a.shape, std::move(v), "add_scalar", {&a},
                             [an](Tape& tp, const std::vector<double>& g) {
                               if (an < 0) return;
                               auto& ga = tp.grad(an);
                               for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                             });
}

// x: [..., C], bias: [C], broadcast over leading dims.
inline Tensor add_bias(const Tensor& x, const Tensor& b) {
  if (x.ndim() < 1 || b.ndim() != 1 || x.shape.back() != b.shape[0])
    throw ShapeError("add_bias: " + shape_str(x.shape) + " vs " + shape_str(b.shape));
  std::int64_t c = b.shape[0], rows = x.size() / c;
  std::vector<double> v(x.size());
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < c; ++j) v[r * c + j] = (*x.data)[r * c + j] + (*b.data)[j];
  int xn = x.node, bn = b.node;
  return detail::make_result(x.shape, std::move(v), "add_bias", {&x, &b},
                             [xn, bn, rows, c](Tape& tp, const std::vector<double>& g) {
                               if (xn >= 0) {
                                 auto& gx = tp.grad(xn);
                                 for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                               }
                               if (bn >= 0) {
                                 auto& gb = tp.grad(bn);
                                 for (std::int64_t r = 0; r < rows; ++r)
                                   for (std::int64_t j = 0; j < c; ++j) gb[j] += g[r * c + j];
                               }
                             });
}

// x: [..., C] times scale vector [C], broadcast over leading dims.
inline Tensor mul_bias(const Tensor& x, const Tensor& s) {
  if (x.ndim() < 1 || s.ndim() != 1 || x.shape.back() != s.shape[0])
    throw ShapeError("mul_bias: " + shape_str(x.shape) + " vs " + shape_str(s.shape));
  std::int64_t c = s.shape[0], rows = x.size() / c;
  std::vector<double> v(x.size());
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < c; ++j) v[r * c + j] = (*x.data)[r * c + j] * (*s.data)[j];
  int xn = x.node, sn = s.node;
  auto xd = x.data, sd = s.data;
  return detail::make_result(x.shape, std::move(v), "mul_bias", {&x, &s},
                             [xn, sn, xd, sd, rows, c](Tape& tp, const std::vector<double>& g) {
                               if (xn >= 0) {
                                 auto& gx = tp.grad(xn);
                                 for (std::int64_t r = 0; r < rows; ++r)
                                   for (std::int64_t j = 0; j < c; ++j)
                                     gx[r * c + j] += g[r * c + j] * (*sd)[j];
                               }
                               if (sn >= 0) {
                                 auto& gs = tp.grad(sn);
                                 for (std::int64_t r = 0; r < rows; ++r)
                                   for (std::int64_t j = 0; j < c; ++j)
                                     gs[j] += g[r * c + j] * (*xd)[r * c + j];
                               }
                             });
}

inline Tensor gelu(const Tensor& x) {
  std::vector<double> v(x.size());
  for (std::int64_t i = 0; i < x.size(); ++i) {
    double t = (*x.data)[i];
    v[i] = 0.5 * t * (1.0 + std::erf(t * M_SQRT1_2));
  }
  int xn = x.node;
  auto xd = x.data;
  return detail::make_result(x.shape, std::move(v), "gelu", {&x},
                             [xn, xd](Tape& tp, const std::vector<double>& g) {
                               if (xn < 0) return;
                               auto& gx = tp.grad(xn);
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 double t = (*xd)[i];
                                 double cdf = 0.5 * (1.0 + std::erf(t * M_SQRT1_2));
                                 double pdf = std::exp(-0.5 * t * t) / std::sqrt(2.0 * M_PI);
                                 gx[i] += g[i] * (cdf + t * pdf);
                               }
                             });
}

inline Tensor sigmoid(const Tensor& x) {
  std::vector<double> v(x.size());
  for (std::int64_t i = 0; i < x.size(); ++i) v[i] = 1.0 / (1.0 + std::exp(-(*x.data)[i]));
  int xn = x.node;
  auto out = std::make_shared<std::vector<double>>(v);
  return detail::make_result(x.shape, std::move(v), "sigmoid", {&x},
                             [xn, out](Tape& tp, const std::vector<double>& g) {
                               if (xn < 0) return;
                               auto& gx = tp.grad(xn);
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                 double s = (*out)[i];
                                 gx[i] += g[i] * s * (1.0 - s);
                               }
                             });
}

// ---------------------------------------------------------------------------
// shape manipulation

inline Tensor reshape(const Tensor& x, Shape s) {
  if (numel(s) != x.size())
    throw ShapeError("reshape: " + shape_str(x.shape) + " -> " + shape_str(s) + " changes element count");
  std::vector<double> v(*x.data);
  int xn = x.node;
  return detail::make_result(std::move(s), std::move(v), "reshape", {&x},
                             [xn](Tape& tp, const std::vector<double>& g) {
                               if (xn < 0) return;
                               auto& gx = tp.grad(xn);
                               for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                             });
}

namespace detail {
inline std::vector<std::int64_t> strides_of(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}
}  // namespace detail

inline Tensor permute(const Tensor& x, const std::vector<int>& axes) {
  if (static_cast<int>(axes.size()) != x.ndim()) throw ShapeError("permute: axes rank mismatch");
  Shape os(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) os[i] = x.shape.at(axes[i]);
  auto ist = detail::strides_of(x.shape);
  auto ost = detail::strides_of(os);
  std::int64_t n = x.size();
  auto idx_map = std::make_shared<std::vector<std::int64_t>>(n);  // out index -> in index
  std::vector<std::int64_t> coord(axes.size(), 0);
  for (std::int64_t o = 0; o < n; ++o) {
    std::int64_t rem = o, in = 0;
    for (std::size_t d = 0; d < axes.size(); ++d) {
      std::int64_t c = rem / ost[d];
      rem %= ost[d];
      in += c * ist[axes[d]];
    }
    (*idx_map)[o] = in;
  }
  std::vector<double> v(n);
  for (std::int64_t o = 0; o < n; ++o) v[o] = (*x.data)[(*idx_map)[o]];
  int xn = x.node;
  return detail::make_result(std::move(os), std::move(v), "permute", {&x},
                             [xn, idx_map](Tape& tp, const std::vector<double>& g) {
                               if (xn < 0) return;
                               auto& gx = tp.grad(xn);
                               for (std::size_t o = 0; o < g.size(); ++o) gx[(*idx_map)[o]] += g[o];
                             });
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  int nd = parts[0].ndim();
  if (axis < 0) axis += nd;
  Shape os = parts[0].shape;
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.ndim() != nd) throw ShapeError("concat: rank mismatch");
    for (int d = 0; d < nd; ++d)
      if (d != axis && p.shape[d] != os[d]) throw ShapeError("concat: incompatible shapes");
    total += p.shape[axis];
  }
  os[axis] = total;
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= os[d];
  for (int d = axis + 1; d < nd; ++d) inner *= os[d];
  std::vector<double> v(numel(os));
  std::vector<int> nodes;
  std::vector<std::int64_t> widths;
  std::int64_t off = 0;
  for (const auto& p : parts) {
    std::int64_t w = p.shape[axis] * inner;
    for (std::int64_t r = 0; r < outer; ++r)
      std::copy_n(p.data->begin() + r * w, w, v.begin() + r * total * inner + off);
    nodes.push_back(p.node);
    widths.push_back(w);
    off += w;
  }
  Tape* tp = nullptr;
  for (const auto& p : parts)
    if (p.tracked()) tp = p.tape;
  detail::check_finite(v, "concat");
  Tensor out;
  out.shape = std::move(os);
  out.data = std::make_shared<std::vector<double>>(std::move(v));
  if (tp) {
    out.tape = tp;
    out.node = tp->alloc(out.size());
    int onode = out.node;
    std::int64_t row = total * inner;
    tp->record([tp, onode, nodes, widths, outer, row]() {
      const auto& g = tp->grad(onode);
      std::int64_t off = 0;
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        if (nodes[k] >= 0) {
          auto& gp = tp->grad(nodes[k]);
          for (std::int64_t r = 0; r < outer; ++r)
            for (std::int64_t i = 0; i < widths[k]; ++i) gp[r * widths[k] + i] += g[r * row + off + i];
        }
        off += widths[k];
      }
    });
  }
  return out;
}

inline Tensor slice(const Tensor& x, int axis, std::int64_t start, std::int64_t len) {
  int nd = x.ndim();
  if (axis < 0) axis += nd;
  if (start < 0 || start + len > x.shape[axis]) throw ShapeError("slice: out of bounds");
  Shape os = x.shape;
  os[axis] = len;
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.shape[d];
  for (int d = axis + 1; d < nd; ++d) inner *= x.shape[d];
  std::int64_t irow = x.shape[axis] * inner, orow = len * inner, off = start * inner;
  std::vector<double> v(numel(os));
  for (std::int64_t r = 0; r < outer; ++r)
    std::copy_n(x.data->begin() + r * irow + off, orow, v.begin() + r * orow);
  int xn = x.node;
  return detail::make_result(std::move(os), std::move(v), "slice", {&x},
                             [xn, outer, irow, orow, off](Tape& tp, const std::vector<double>& g) {
                               if (xn < 0) return;
                               auto& gx = tp.grad(xn);
                               for (std::int64_t r = 0; r < outer; ++r)
                                 for (std::int64_t i = 0; i < orow; ++i) gx[r * irow + off + i] += g[r * orow + i];
                             });
}

// ---------------------------------------------------------------------------
// linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0])
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape) + " x " + shape_str(b.shape));
  std::int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  std::vector<double> v(m * n);
  {
    detail::MatC A(a.data->data(), m, k), B(b.data->data(), k, n);
    detail::Mat C(v.data(), m, n);
    C.noalias() = A * B;
  }
  int an = a.node, bn = b.node;
  auto ad = a.data, bd = b.data;
  return detail::make_result({m, n}, std::move(v), "matmul", {&a, &b},
                             [an, bn, ad, bd, m, k, n](Tape& tp, const std::vector<double>& g) {
                               detail::MatC G(g.data(), m, n);
                               if (an >= 0) {
                                 detail::Mat GA(tp.grad(an).data(), m, k);
                                 detail::MatC B(bd->data(), k, n);
                                 GA.noalias() += G * B.transpose();
                               }
                               if (bn >= 0) {
                                 detail::Mat GB(tp.grad(bn).data(), k, n);
                                 detail::MatC A(ad->data(), m, k);
                                 GB.noalias() += A.transpose() * G;
                               }
                             });
}

// Batched matmul over matching leading dims: [..., m, k] x [..., k, n].
// trans_b multiplies by the transpose of b's trailing matrix ([..., n, k]).
inline Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b = false) {
  if (a.ndim() < 2 || b.ndim() != a.ndim()) throw ShapeError("bmm: rank mismatch");
  int nd = a.ndim();
  std::int64_t batch = 1;
  for (int d = 0; d < nd - 2; ++d) {
    if (a.shape[d] != b.shape[d]) throw ShapeError("bmm: batch dims differ");
    batch *= a.shape[d];
  }
  std::int64_t m = a.shape[nd - 2], k = a.shape[nd - 1];
  std::int64_t bk = trans_b ? b.shape[nd - 1] : b.shape[nd - 2];
  std::int64_t n = trans_b ? b.shape[nd - 2] : b.shape[nd - 1];
  if (bk != k)
    throw ShapeError("bmm: inner extents differ " + shape_str(a.shape) + " x " + shape_str(b.shape));
  Shape os(a.shape.begin(), a.shape.end() - 2);
  os.push_back(m);
  os.push_back(n);
  std::vector<double> v(batch * m * n);
  for (std::int64_t p = 0; p < batch; ++p) {
    detail::MatC A(a.data->data() + p * m * k, m, k);
    detail::Mat C(v.data() + p * m * n, m, n);
    if (trans_b) {
      detail::MatC B(b.data->data() + p * n * k, n, k);
      C.noalias() = A * B.transpose();
    } else {
      detail::MatC B(b.data->data() + p * k * n, k, n);
      C.noalias() = A * B;
    }
  }
  int an = a.node, bn = b.node;
  auto ad = a.data, bd = b.data;
  return detail::make_result(std::move(os), std::move(v), "bmm", {&a, &b},
                             [an, bn, ad, bd, batch, m, k, n, trans_b](Tape& tp, const std::vector<double>& g) {
                               for (std::int64_t p = 0; p < batch; ++p) {
                                 detail::MatC G(g.data() + p * m * n, m, n);
                                 if (an >= 0) {
                                   detail::Mat GA(tp.grad(an).data() + p * m * k, m, k);
                                   if (trans_b) {
                                     detail::MatC B(bd->data() + p * n * k, n, k);
                                     GA.noalias() += G * B;
                                   } else {
                                     detail::MatC B(bd->data() + p * k * n, k, n);
                                     GA.noalias() += G * B.transpose();
                                   }
                                 }
                                 if (bn >= 0) {
                                   detail::MatC A(ad->data() + p * m * k, m, k);
                                   if (trans_b) {
                                     detail::Mat GB(tp.grad(bn).data() + p * n * k, n, k);
                                     GB.noalias() += G.transpose() * A;
                                   } else {
                                     detail::Mat GB(tp.grad(bn).data() + p * k * n, k, n);
                                     GB.noalias() += A.transpose() * G;
                                   }
                                 }
                               }
                             });
}

// x: [..., C] times weight [C, D] plus optional bias [D].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr) {
  if (x.shape.back() != w.shape.at(0))
    throw ShapeError("linear: " + shape_str(x.shape) + " x " + shape_str(w.shape));
  Shape flat{x.size() / x.shape.back(), x.shape.back()};
  Tensor y = matmul(reshape(x, flat), w);
  Shape os = x.shape;
  os.back() = w.shape[1];
  y = reshape(y, os);
  if (bias) y = add_bias(y, *bias);
  return y;
}

// ---------------------------------------------------------------------------
// reductions and normalizations

inline Tensor sum_all(const Tensor& x) {
  double s = 0;
  for (std::int64_t i = 0; i < x.size(); ++i) s += (*x.data)[i];
  int xn = x.node;
  std::int64_t n = x.size();
  return detail::make_result({1}, {s}, "sum", {&x},
                             [xn, n](Tape& tp, const std::vector<double>& g) {
                               if (xn < 0) return;
                               auto& gx = tp.grad(xn);
                               for (std::int64_t i = 0; i < n; ++i) gx[i] += g[0];
                             });
}

inline Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.size())); }

inline Tensor mse_loss(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse_loss");
  Tensor d = sub(a, b);
  return mean_all(mul(d, d));
}

inline Tensor softmax_lastdim(const Tensor& x) {
  if (x.ndim() < 1 || x.shape.back() < 1) throw ShapeError("softmax_lastdim: empty last extent");
  std::int64_t c = x.shape.back(), rows = x.size() / c;
  std::vector<double> v(x.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* in = x.data->data() + r * c;
    double* out = v.data() + r * c;
    double mx = in[0];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, in[j]);
    double s = 0;
    for (std::int64_t j = 0; j < c; ++j) s += (out[j] = std::exp(in[j] - mx));
    for (std::int64_t j = 0; j < c; ++j) out[j] /= s;
  }
  int xn = x.node;
  auto out = std::make_shared<std::vector<double>>(v);
  return detail::make_result(x.shape, std::move(v), "softmax_lastdim", {&x},
                             [xn, out, rows, c](Tape& tp, const std::vector<double>& g) {
                               if (xn < 0) return;
                               auto& gx = tp.grad(xn);
                               for (std::int64_t r = 0; r < rows; ++r) {
                                 const double* y = out->data() + r * c;
                                 const double* go = g.data() + r * c;
                                 double dot = 0;
                                 for (std::int64_t j = 0; j < c; ++j) dot += y[j] * go[j];
                                 for (std::int64_t j = 0; j < c; ++j) gx[r * c + j] += y[j] * (go[j] - dot);
                               }
                             });
}

// Pre-norm over the last dim with learned gain/bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  std::int64_t c = x.shape.back(), rows = x.size() / c;
  if (gain.size() != c || bias.size() != c) throw ShapeError("layer_norm: gain/bias width mismatch");
  std::vector<double> v(x.size());
  auto mu = std::make_shared<std::vector<double>>(rows);
  auto rstd = std::make_shared<std::vector<double>>(rows);
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* in = x.data->data() + r * c;
    double m = 0;
    for (std::int64_t j = 0; j < c; ++j) m += in[j];
    m /= c;
    double var = 0;
    for (std::int64_t j = 0; j < c; ++j) var += (in[j] - m) * (in[j] - m);
    var /= c;
    double rs = 1.0 / std::sqrt(var + eps);
    (*mu)[r] = m;
    (*rstd)[r] = rs;
    for (std::int64_t j = 0; j < c; ++j)
      v[r * c + j] = (in[j] - m) * rs * (*gain.data)[j] + (*bias.data)[j];
  }
  int xn = x.node, gn = gain.node, bn = bias.node;
  auto xd = x.data, gd = gain.data;
  return detail::make_result(
      x.shape, std::move(v), "layer_norm", {&x, &gain, &bias},
      [xn, gn, bn, xd, gd, mu, rstd, rows, c](Tape& tp, const std::vector<double>& g) {
        for (std::int64_t r = 0; r < rows; ++r) {
          const double* in = xd->data() + r * c;
          const double* go = g.data() + r * c;
          double m = (*mu)[r], rs = (*rstd)[r];
          if (gn >= 0 || bn >= 0) {
            for (std::int64_t j = 0; j < c; ++j) {
              double xh = (in[j] - m) * rs;
              if (gn >= 0) tp.grad(gn)[j] += go[j] * xh;
              if (bn >= 0) tp.grad(bn)[j] += go[j];
            }
          }
          if (xn >= 0) {
            auto& gx = tp.grad(xn);
            double sum_gy = 0, sum_gyxh = 0;
            for (std::int64_t j = 0; j < c; ++j) {
              double gy = go[j] * (*gd)[j];
              double xh = (in[j] - m) * rs;
              sum_gy += gy;
              sum_gyxh += gy * xh;
            }
            for (std::int64_t j = 0; j < c; ++j) {
              double gy = go[j] * (*gd)[j];
              double xh = (in[j] - m) * rs;
              gx[r * c + j] += rs * (gy - sum_gy / c - xh * sum_gyxh / c);
            }
          }
        }
      });
}

// Non-differentiable clamp; used only on sampler-side values.
inline Tensor clamp_value(const Tensor& x, double lo, double hi) {
  Tensor out = x;
  out.tape = nullptr;
  out.node = -1;
  out.data = std::make_shared<std::vector<double>>(*x.data);
  for (auto& v : *out.data) v = std::min(hi, std::max(lo, v));
  return out;
}

}  // namespace eqdiff
