#pragma once

// Reverse-mode automatic differentiation over dense 64-bit tensors.
//
// A Tape owns every node created during one forward computation. Tensor is a
// cheap handle (tape pointer + node id). Leaf nodes bind to persistent
// Parameter storage; Tape::backward() accumulates gradients back into the
// bound parameters. One tape is single-owner: record and differentiate from
// one thread only. Distinct tapes share nothing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "maskcap/errors.hpp"

namespace maskcap {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

inline int shape_rows(const Shape& s) { return s.empty() ? 1 : s[0]; }
inline int shape_cols(const Shape& s) { return s.size() < 2 ? 1 : s[1]; }

// Persistent trainable storage. Lives outside any tape; a leaf node copies the
// value in at record time and backward() adds into `grad`.
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;

  std::int64_t numel() const { return shape_numel(shape); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

enum class OpKind { add, sub, mul, div, exp, log, sigmoid, tanh, relu, clamp };

class Tape;

class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

  const Shape& shape() const;
  const std::vector<double>& values() const;
  std::int64_t numel() const { return shape_numel(shape()); }
  // Value of a one-element tensor.
  double item() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // ---- inputs -------------------------------------------------------------

  Tensor constant(Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
      throw ShapeError("constant: shape " + shape_str(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    return make_node(std::move(shape), std::move(values), false);
  }

  Tensor scalar(double v) { return constant({1}, {v}); }

  // Leaf bound to a parameter. Repeated calls with the same parameter return
  // the same node so gradients are not double-counted.
  Tensor leaf(Parameter& p) {
    auto it = leaf_index_.find(&p);
    if (it != leaf_index_.end()) return Tensor(this, it->second);
    if (p.grad.size() != p.value.size()) p.grad.assign(p.value.size(), 0.0);
    Tensor t = make_node(p.shape, p.value, true);
    leaf_index_.emplace(&p, t.id());
    leaves_.push_back({t.id(), &p});
    return t;
  }

  // ---- elementwise --------------------------------------------------------

  Tensor add(Tensor a, Tensor b) {
    return binary(
        a, b, [](double x, double y) { return x + y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; },
        "add");
  }

  Tensor sub(Tensor a, Tensor b) {
    return binary(
        a, b, [](double x, double y) { return x - y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; },
        "sub");
  }

  Tensor mul(Tensor a, Tensor b) {
    return binary(
        a, b, [](double x, double y) { return x * y; },
        [](double, double y, double) { return y; }, [](double x, double, double) { return x; },
        "mul");
  }

  Tensor div(Tensor a, Tensor b) {
    for (double v : node(b.id()).val)
      if (v == 0.0) throw DomainError("div: zero divisor");
    return binary(
        a, b, [](double x, double y) { return x / y; },
        [](double, double y, double) { return 1.0 / y; },
        [](double x, double y, double) { return -x / (y * y); }, "div");
  }

  Tensor add_scalar(Tensor a, double s) {
    return unary(
        a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
  }

  Tensor mul_scalar(Tensor a, double s) {
    return unary(
        a, [s](double x) { return x * s; }, [s](double, double) { return s; });
  }

  Tensor neg(Tensor a) { return mul_scalar(a, -1.0); }

  // exp with input saturation at 709 so finite inputs cannot overflow to inf.
  Tensor exp(Tensor a) {
    return unary(
        a, [](double x) { return std::exp(std::min(x, 709.0)); },
        [](double x, double y) { return x > 709.0 ? 0.0 : y; });
  }

  Tensor log(Tensor a) {
    for (double v : node(a.id()).val)
      if (v <= 0.0) throw DomainError("log: non-positive operand " + std::to_string(v));
    return unary(
        a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
  }

  Tensor sigmoid(Tensor a) {
    return unary(
        a,
        [](double x) {
          if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
          const double e = std::exp(x);
          return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
  }

  Tensor tanh(Tensor a) {
    return unary(
        a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
  }

  Tensor relu(Tensor a) {
    return unary(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
  }

  Tensor clamp(Tensor a, double lo, double hi) {
    if (lo > hi) throw DomainError("clamp: lo > hi");
    return unary(
        a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
        [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
  }

  // tanh-approximation GELU; smooth, so finite-difference checks stay clean.
  Tensor gelu(Tensor a) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    return unary(
        a,
        [](double x) {
          const double t = std::tanh(c * (x + 0.044715 * x * x * x));
          return 0.5 * x * (1.0 + t);
        },
        [](double x, double) {
          const double inner = c * (x + 0.044715 * x * x * x);
          const double t = std::tanh(inner);
          const double dinner = c * (1.0 + 3.0 * 0.044715 * x * x);
          return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
        });
  }

  Tensor sqrt(Tensor a) {
    for (double v : node(a.id()).val)
      if (v < 0.0) throw DomainError("sqrt: negative operand");
    return unary(
        a, [](double x) { return std::sqrt(x); },
        [](double, double y) { return y == 0.0 ? 0.0 : 0.5 / y; });
  }

  // Uniform dispatch used by contract tests; named members above are the
  // everyday surface.
  Tensor elementwise(OpKind k, Tensor a, Tensor b) {
    switch (k) {
      case OpKind::add: return add(a, b);
      case OpKind::sub: return sub(a, b);
      case OpKind::mul: return mul(a, b);
      case OpKind::div: return div(a, b);
      default: throw ContractViolation("elementwise: op kind is not binary");
    }
  }

  Tensor elementwise(OpKind k, Tensor a) {
    switch (k) {
      case OpKind::exp: return exp(a);
      case OpKind::log: return log(a);
      case OpKind::sigmoid: return sigmoid(a);
      case OpKind::tanh: return tanh(a);
      case OpKind::relu: return relu(a);
      default: throw ContractViolation("elementwise: op kind is not unary");
    }
  }

  // ---- linear algebra and shape ops ---------------------------------------

  Tensor matmul(Tensor a, Tensor b) {
    const Node& na = node(a.id());
    const Node& nb = node(b.id());
    if (na.shape.size() != 2 || nb.shape.size() != 2)
      throw ShapeError("matmul: operands must be 2-D, got " + shape_str(na.shape) + " and " +
                       shape_str(nb.shape));
    const int m = na.shape[0], k = na.shape[1], k2 = nb.shape[0], n = nb.shape[1];
    if (k != k2)
      throw ShapeError("matmul: inner dimensions disagree: " + shape_str(na.shape) + " x " +
                       shape_str(nb.shape));
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    matmul_accum(na.val.data(), nb.val.data(), out.data(), m, k, n);
    Tensor t = make_node({m, n}, std::move(out), na.requires_grad || nb.requires_grad);
    if (!node(t.id()).requires_grad) return t;
    const int aid = a.id(), bid = b.id(), oid = t.id();
    node(oid).backward = [this, aid, bid, oid, m, k, n]() {
      const std::vector<double>& g = node(oid).grad;
      Node& A = node(aid);
      Node& B = node(bid);
      if (A.requires_grad) {
        ensure_grad(aid);
        // dA += g . B^T  : (m x n)(n? ) -- g is m x n, B is k x n.
        double* dst = A.grad.data();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            const double gij = g[static_cast<std::size_t>(i) * n + j];
            if (gij == 0.0) continue;
            const double* brow = B.val.data() + 0;
            for (int kk = 0; kk < k; ++kk)
              dst[static_cast<std::size_t>(i) * k + kk] +=
                  gij * brow[static_cast<std::size_t>(kk) * n + j];
          }
      }
      if (B.requires_grad) {
        ensure_grad(bid);
        // dB += A^T . g
        double* dst = B.grad.data();
        for (int i = 0; i < m; ++i) {
          const double* arow = A.val.data() + static_cast<std::size_t>(i) * k;
          const double* grow = g.data() + static_cast<std::size_t>(i) * n;
          for (int kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            if (aik == 0.0) continue;
            double* drow = dst + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) drow[j] += aik * grow[j];
          }
        }
      }
    };
    node(oid).inputs = {aid, bid};
    return t;
  }

  Tensor transpose(Tensor a) {
    const Node& na = node(a.id());
    if (na.shape.size() != 2) throw ShapeError("transpose: operand must be 2-D");
    const int m = na.shape[0], n = na.shape[1];
    std::vector<double> out(na.val.size());
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        out[static_cast<std::size_t>(j) * m + i] = na.val[static_cast<std::size_t>(i) * n + j];
    Tensor t = make_node({n, m}, std::move(out), na.requires_grad);
    if (!node(t.id()).requires_grad) return t;
    const int aid = a.id(), oid = t.id();
    node(oid).backward = [this, aid, oid, m, n]() {
      ensure_grad(aid);
      const std::vector<double>& g = node(oid).grad;
      std::vector<double>& dst = node(aid).grad;
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < m; ++i)
          dst[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(j) * m + i];
    };
    node(oid).inputs = {aid};
    return t;
  }

  Tensor slice_rows(Tensor a, int r0, int r1) {
    const Node& na = node(a.id());
    const int m = shape_rows(na.shape), n = shape_cols(na.shape);
    if (r0 < 0 || r1 > m || r0 >= r1) throw ShapeError("slice_rows: bad range");
    std::vector<double> out(na.val.begin() + static_cast<std::size_t>(r0) * n,
                            na.val.begin() + static_cast<std::size_t>(r1) * n);
    Shape s = na.shape.size() == 2 ? Shape{r1 - r0, n} : Shape{r1 - r0};
    Tensor t = make_node(std::move(s), std::move(out), na.requires_grad);
    if (!node(t.id()).requires_grad) return t;
    const int aid = a.id(), oid = t.id();
    node(oid).backward = [this, aid, oid, r0, n]() {
      ensure_grad(aid);
      const std::vector<double>& g = node(oid).grad;
      double* dst = node(aid).grad.data() + static_cast<std::size_t>(r0) * n;
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    };
    node(oid).inputs = {aid};
    return t;
  }

  Tensor slice_cols(Tensor a, int c0, int c1) {
    const Node& na = node(a.id());
    if (na.shape.size() != 2) throw ShapeError("slice_cols: operand must be 2-D");
    const int m = na.shape[0], n = na.shape[1];
    if (c0 < 0 || c1 > n || c0 >= c1) throw ShapeError("slice_cols: bad range");
    const int w = c1 - c0;
    std::vector<double> out(static_cast<std::size_t>(m) * w);
    for (int i = 0; i < m; ++i)
      std::copy_n(na.val.data() + static_cast<std::size_t>(i) * n + c0, w,
                  out.data() + static_cast<std::size_t>(i) * w);
    Tensor t = make_node({m, w}, std::move(out), na.requires_grad);
    if (!node(t.id()).requires_grad) return t;
    const int aid = a.id(), oid = t.id();
    node(oid).backward = [this, aid, oid, m, n, c0, w]() {
      ensure_grad(aid);
      const std::vector<double>& g = node(oid).grad;
      double* dst = node(aid).grad.data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j)
          dst[static_cast<std::size_t>(i) * n + c0 + j] += g[static_cast<std::size_t>(i) * w + j];
    };
    node(oid).inputs = {aid};
    return t;
  }

  Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: empty list");
    const int n = shape_cols(node(parts[0].id()).shape);
    int m = 0;
    bool rg = false;
    for (const Tensor& p : parts) {
      const Node& np = node(p.id());
      if (shape_cols(np.shape) != n) throw ShapeError("concat_rows: column mismatch");
      m += shape_rows(np.shape);
      rg = rg || np.requires_grad;
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(m) * n);
    for (const Tensor& p : parts) {
      const Node& np = node(p.id());
      out.insert(out.end(), np.val.begin(), np.val.end());
    }
    Tensor t = make_node({m, n}, std::move(out), rg);
    if (!rg) return t;
    std::vector<int> ids;
    ids.reserve(parts.size());
    for (const Tensor& p : parts) ids.push_back(p.id());
    const int oid = t.id();
    node(oid).backward = [this, ids, oid]() {
      const std::vector<double>& g = node(oid).grad;
      std::size_t off = 0;
      for (int id : ids) {
        Node& np = node(id);
        const std::size_t len = np.val.size();
        if (np.requires_grad) {
          ensure_grad(id);
          for (std::size_t i = 0; i < len; ++i) np.grad[i] += g[off + i];
        }
        off += len;
      }
    };
    node(oid).inputs = ids;
    return t;
  }

  Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty list");
    const int m = shape_rows(node(parts[0].id()).shape);
    int n = 0;
    bool rg = false;
    for (const Tensor& p : parts) {
      const Node& np = node(p.id());
      if (shape_rows(np.shape) != m) throw ShapeError("concat_cols: row mismatch");
      n += shape_cols(np.shape);
      rg = rg || np.requires_grad;
    }
    std::vector<double> out(static_cast<std::size_t>(m) * n);
    int coff = 0;
    for (const Tensor& p : parts) {
      const Node& np = node(p.id());
      const int w = shape_cols(np.shape);
      for (int i = 0; i < m; ++i)
        std::copy_n(np.val.data() + static_cast<std::size_t>(i) * w, w,
                    out.data() + static_cast<std::size_t>(i) * n + coff);
      coff += w;
    }
    Tensor t = make_node({m, n}, std::move(out), rg);
    if (!rg) return t;
    std::vector<int> ids;
    for (const Tensor& p : parts) ids.push_back(p.id());
    const int oid = t.id();
    node(oid).backward = [this, ids, oid, m, n]() {
      const std::vector<double>& g = node(oid).grad;
      int coff2 = 0;
      for (int id : ids) {
        Node& np = node(id);
        const int w = shape_cols(np.shape);
        if (np.requires_grad) {
          ensure_grad(id);
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
              np.grad[static_cast<std::size_t>(i) * w + j] +=
                  g[static_cast<std::size_t>(i) * n + coff2 + j];
        }
        coff2 += w;
      }
    };
    node(oid).inputs = ids;
    return t;
  }

  // Embedding lookup: rows of `table` selected by index list.
  Tensor gather_rows(Tensor table, std::vector<int> ids) {
    const Node& nt = node(table.id());
    if (nt.shape.size() != 2) throw ShapeError("gather_rows: table must be 2-D");
    const int v = nt.shape[0], d = nt.shape[1];
    for (int id : ids)
      if (id < 0 || id >= v)
        throw IndexError("gather_rows: index " + std::to_string(id) + " out of [0," +
                         std::to_string(v) + ")");
    const int m = static_cast<int>(ids.size());
    std::vector<double> out(static_cast<std::size_t>(m) * d);
    for (int i = 0; i < m; ++i)
      std::copy_n(nt.val.data() + static_cast<std::size_t>(ids[i]) * d, d,
                  out.data() + static_cast<std::size_t>(i) * d);
    Tensor t = make_node({m, d}, std::move(out), nt.requires_grad);
    if (!node(t.id()).requires_grad) return t;
    const int tid = table.id(), oid = t.id();
    node(oid).backward = [this, tid, oid, ids, d]() {
      ensure_grad(tid);
      const std::vector<double>& g = node(oid).grad;
      double* dst = node(tid).grad.data();
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < d; ++j)
          dst[static_cast<std::size_t>(ids[i]) * d + j] += g[i * d + j];
    };
    node(oid).inputs = {tid};
    return t;
  }

  // x[m x n] + row[n] broadcast over rows (bias add).
  Tensor add_row_broadcast(Tensor x, Tensor row) {
    const Node& nx = node(x.id());
    const Node& nr = node(row.id());
    const int m = shape_rows(nx.shape), n = shape_cols(nx.shape);
    if (shape_numel(nr.shape) != n) throw ShapeError("add_row_broadcast: row length mismatch");
    std::vector<double> out(nx.val.size());
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        out[static_cast<std::size_t>(i) * n + j] =
            nx.val[static_cast<std::size_t>(i) * n + j] + nr.val[j];
    Tensor t = make_node(nx.shape, std::move(out), nx.requires_grad || nr.requires_grad);
    if (!node(t.id()).requires_grad) return t;
    const int xid = x.id(), rid = row.id(), oid = t.id();
    node(oid).backward = [this, xid, rid, oid, m, n]() {
      const std::vector<double>& g = node(oid).grad;
      if (node(xid).requires_grad) {
        ensure_grad(xid);
        std::vector<double>& dx = node(xid).grad;
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
      }
      if (node(rid).requires_grad) {
        ensure_grad(rid);
        std::vector<double>& dr = node(rid).grad;
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) dr[j] += g[static_cast<std::size_t>(i) * n + j];
      }
    };
    node(oid).inputs = {xid, rid};
    return t;
  }

  // Row i of x scaled by s[i]; how a temporal mask weights frame rows.
  Tensor scale_rows(Tensor x, Tensor s) {
    const Node& nx = node(x.id());
    const Node& ns = node(s.id());
    const int m = shape_rows(nx.shape), n = shape_cols(nx.shape);
    if (shape_numel(ns.shape) != m) throw ShapeError("scale_rows: scale length mismatch");
    std::vector<double> out(nx.val.size());
    for (int i = 0; i < m; ++i) {
      const double si = ns.val[i];
      for (int j = 0; j < n; ++j)
        out[static_cast<std::size_t>(i) * n + j] = nx.val[static_cast<std::size_t>(i) * n + j] * si;
    }
    Tensor t = make_node(nx.shape, std::move(out), nx.requires_grad || ns.requires_grad);
    if (!node(t.id()).requires_grad) return t;
    const int xid = x.id(), sid = s.id(), oid = t.id();
    node(oid).backward = [this, xid, sid, oid, m, n]() {
      const std::vector<double>& g = node(oid).grad;
      if (node(xid).requires_grad) {
        ensure_grad(xid);
        std::vector<double>& dx = node(xid).grad;
        const std::vector<double>& sv = node(sid).val;
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            dx[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(i) * n + j] * sv[i];
      }
      if (node(sid).requires_grad) {
        ensure_grad(sid);
        std::vector<double>& ds = node(sid).grad;
        const std::vector<double>& xv = node(xid).val;
        for (int i = 0; i < m; ++i) {
          double acc = 0.0;
          for (int j = 0; j < n; ++j)
            acc += g[static_cast<std::size_t>(i) * n + j] * xv[static_cast<std::size_t>(i) * n + j];
          ds[i] += acc;
        }
      }
    };
    node(oid).inputs = {xid, sid};
    return t;
  }

  Tensor sum(Tensor a) {
    const Node& na = node(a.id());
    const double s = std::accumulate(na.val.begin(), na.val.end(), 0.0);
    Tensor t = make_node({1}, {s}, na.requires_grad);
    if (!node(t.id()).requires_grad) return t;
    const int aid = a.id(), oid = t.id();
    node(oid).backward = [this, aid, oid]() {
      ensure_grad(aid);
      const double g = node(oid).grad[0];
      for (double& d : node(aid).grad) d += g;
    };
    node(oid).inputs = {aid};
    return t;
  }

  Tensor mean(Tensor a) { return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel())); }

  // Scalar maximum; gradient flows to the first maximal element.
  Tensor reduce_max(Tensor a) {
    const Node& na = node(a.id());
    const auto it = std::max_element(na.val.begin(), na.val.end());
    const int arg = static_cast<int>(it - na.val.begin());
    Tensor t = make_node({1}, {*it}, na.requires_grad);
    if (!node(t.id()).requires_grad) return t;
    const int aid = a.id(), oid = t.id();
    node(oid).backward = [this, aid, oid, arg]() {
      ensure_grad(aid);
      node(aid).grad[arg] += node(oid).grad[0];
    };
    node(oid).inputs = {aid};
    return t;
  }

  Tensor softmax_rows(Tensor a) {
    const Node& na = node(a.id());
    const int m = shape_rows(na.shape), n = shape_cols(na.shape);
    std::vector<double> out(na.val.size());
    for (int i = 0; i < m; ++i) {
      const double* row = na.val.data() + static_cast<std::size_t>(i) * n;
      double* orow = out.data() + static_cast<std::size_t>(i) * n;
      const double mx = *std::max_element(row, row + n);
      double z = 0.0;
      for (int j = 0; j < n; ++j) {
        orow[j] = std::exp(row[j] - mx);
        z += orow[j];
      }
      for (int j = 0; j < n; ++j) orow[j] /= z;
    }
    Tensor t = make_node(na.shape, std::move(out), na.requires_grad);
    if (!node(t.id()).requires_grad) return t;
    const int aid = a.id(), oid = t.id();
    node(oid).backward = [this, aid, oid, m, n]() {
      ensure_grad(aid);
      const std::vector<double>& g = node(oid).grad;
      const std::vector<double>& y = node(oid).val;
      std::vector<double>& dx = node(aid).grad;
      for (int i = 0; i < m; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += g[off + j] * y[off + j];
        for (int j = 0; j < n; ++j) dx[off + j] += y[off + j] * (g[off + j] - dot);
      }
    };
    node(oid).inputs = {aid};
    return t;
  }

  // Per-row normalization with epsilon 1e-5, then affine gain/bias.
  Tensor layer_norm(Tensor x, Tensor gain, Tensor bias) {
    constexpr double eps = 1e-5;
    const Node& nx = node(x.id());
    const Node& ng = node(gain.id());
    const Node& nb = node(bias.id());
    const int m = shape_rows(nx.shape), n = shape_cols(nx.shape);
    if (shape_numel(ng.shape) != n || shape_numel(nb.shape) != n)
      throw ShapeError("layer_norm: gain/bias must match last dimension " + std::to_string(n));
    std::vector<double> out(nx.val.size());
    std::vector<double> mu(m), rstd(m);
    for (int i = 0; i < m; ++i) {
      const double* row = nx.val.data() + static_cast<std::size_t>(i) * n;
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += row[j];
      const double mean_i = s / n;
      double v = 0.0;
      for (int j = 0; j < n; ++j) {
        const double d = row[j] - mean_i;
        v += d * d;
      }
      const double r = 1.0 / std::sqrt(v / n + eps);
      mu[i] = mean_i;
      rstd[i] = r;
      double* orow = out.data() + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] = (row[j] - mean_i) * r * ng.val[j] + nb.val[j];
    }
    const bool rg = nx.requires_grad || ng.requires_grad || nb.requires_grad;
    Tensor t = make_node(nx.shape, std::move(out), rg);
    if (!rg) return t;
    const int xid = x.id(), gid = gain.id(), bid = bias.id(), oid = t.id();
    node(oid).backward = [this, xid, gid, bid, oid, m, n, mu, rstd]() {
      const std::vector<double>& g = node(oid).grad;
      const std::vector<double>& xv = node(xid).val;
      const std::vector<double>& gv = node(gid).val;
      const bool wx = node(xid).requires_grad;
      const bool wg = node(gid).requires_grad;
      const bool wb = node(bid).requires_grad;
      if (wx) ensure_grad(xid);
      if (wg) ensure_grad(gid);
      if (wb) ensure_grad(bid);
      for (int i = 0; i < m; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * n;
        const double r = rstd[i];
        // xhat_j = (x_j - mu) * r
        double sum_dy_xhat = 0.0, sum_dy = 0.0;
        for (int j = 0; j < n; ++j) {
          const double xhat = (xv[off + j] - mu[i]) * r;
          const double dy = g[off + j] * gv[j];
          sum_dy_xhat += dy * xhat;
          sum_dy += dy;
          if (wg) node(gid).grad[j] += g[off + j] * xhat;
          if (wb) node(bid).grad[j] += g[off + j];
        }
        if (wx) {
          std::vector<double>& dx = node(xid).grad;
          for (int j = 0; j < n; ++j) {
            const double xhat = (xv[off + j] - mu[i]) * r;
            const double dy = g[off + j] * gv[j];
            dx[off + j] += r * (dy - sum_dy / n - xhat * sum_dy_xhat / n);
          }
        }
      }
    };
    node(oid).inputs = {xid, gid, bid};
    return t;
  }

  // Mean negative log-likelihood over positions, stabilized by max
  // subtraction. Fused backward: (softmax - onehot) / n.
  Tensor softmax_cross_entropy(Tensor logits, const std::vector<int>& targets) {
    const Node& nl = node(logits.id());
    if (nl.shape.size() != 2) throw ShapeError("softmax_cross_entropy: logits must be 2-D");
    const int m = nl.shape[0], v = nl.shape[1];
    if (static_cast<int>(targets.size()) != m)
      throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                       " targets for " + std::to_string(m) + " rows");
    for (int tgt : targets)
      if (tgt < 0 || tgt >= v)
        throw IndexError("softmax_cross_entropy: target " + std::to_string(tgt) + " out of [0," +
                         std::to_string(v) + ")");
    std::vector<double> probs(nl.val.size());
    double loss = 0.0;
    for (int i = 0; i < m; ++i) {
      const double* row = nl.val.data() + static_cast<std::size_t>(i) * v;
      double* prow = probs.data() + static_cast<std::size_t>(i) * v;
      const double mx = *std::max_element(row, row + v);
      double z = 0.0;
      for (int j = 0; j < v; ++j) {
        prow[j] = std::exp(row[j] - mx);
        z += prow[j];
      }
      for (int j = 0; j < v; ++j) prow[j] /= z;
      loss -= std::log(std::max(prow[targets[i]], 1e-300));
    }
    loss /= m;
    Tensor t = make_node({1}, {loss}, nl.requires_grad);
    if (!node(t.id()).requires_grad) return t;
    const int lid = logits.id(), oid = t.id();
    auto probs_shared = std::make_shared<std::vector<double>>(std::move(probs));
    node(oid).backward = [this, lid, oid, m, v, targets, probs_shared]() {
      ensure_grad(lid);
      const double g = node(oid).grad[0] / m;
      std::vector<double>& dl = node(lid).grad;
      const std::vector<double>& p = *probs_shared;
      for (int i = 0; i < m; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * v;
        for (int j = 0; j < v; ++j) dl[off + j] += g * p[off + j];
        dl[off + targets[i]] -= g;
      }
    };
    node(oid).inputs = {lid};
    return t;
  }

  // ---- backward -----------------------------------------------------------

  // Gradients of `loss` w.r.t. every reachable leaf parameter, accumulated
  // into Parameter::grad. Visits each node exactly once, in reverse order.
  void backward(Tensor loss) {
    if (loss.tape() != this) throw ContractViolation("backward: loss from another tape");
    Node& ln = node(loss.id());
    if (shape_numel(ln.shape) != 1)
      throw ContractViolation("backward: loss must be scalar, got " + shape_str(ln.shape));
    ensure_grad(loss.id());
    ln.grad[0] += 1.0;
    for (int i = loss.id(); i >= 0; --i) {
      Node& nd = nodes_[static_cast<std::size_t>(i)];
      if (!nd.requires_grad || nd.grad.empty() || !nd.backward) continue;
      nd.backward();
    }
    for (const auto& [id, param] : leaves_) {
      const Node& nd = node(id);
      if (nd.grad.empty()) continue;
      for (std::size_t i = 0; i < nd.grad.size(); ++i) param->grad[i] += nd.grad[i];
    }
  }

  // Clears node-level gradients (parameters untouched); lets a second
  // backward pass over the same tape be compared against the first.
  void clear_node_grads() {
    for (Node& nd : nodes_) nd.grad.clear();
  }

  const std::vector<double>& grad(int id) const {
    static const std::vector<double> empty;
    const Node& nd = node(id);
    return nd.grad.empty() ? empty : nd.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  const Shape& shape(int id) const { return node(id).shape; }
  const std::vector<double>& values(int id) const { return node(id).val; }

 private:
  struct Node {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;  // lazily allocated during backward
    std::vector<int> inputs;
    std::function<void()> backward;
    bool requires_grad = false;
  };

  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  Tensor make_node(Shape shape, std::vector<double> val, bool requires_grad) {
    Node nd;
    nd.shape = std::move(shape);
    nd.val = std::move(val);
    nd.requires_grad = requires_grad;
    nodes_.push_back(std::move(nd));
    return Tensor(this, static_cast<int>(nodes_.size()) - 1);
  }

  void ensure_grad(int id) {
    Node& nd = node(id);
    if (nd.grad.empty()) nd.grad.assign(nd.val.size(), 0.0);
  }

  static void matmul_accum(const double* a, const double* b, double* out, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
      const double* arow = a + static_cast<std::size_t>(i) * k;
      double* orow = out + static_cast<std::size_t>(i) * n;
      for (int kk = 0; kk < k; ++kk) {
        const double aik = arow[kk];
        if (aik == 0.0) continue;
        const double* brow = b + static_cast<std::size_t>(kk) * n;
        for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
      }
    }
  }

  template <typename F, typename DA, typename DB>
  Tensor binary(Tensor a, Tensor b, F f, DA da, DB db, const char* name) {
    const Node& na = node(a.id());
    const Node& nb = node(b.id());
    const bool a_scalar = shape_numel(na.shape) == 1;
    const bool b_scalar = shape_numel(nb.shape) == 1;
    const bool same = na.shape == nb.shape;
    if (!same && !a_scalar && !b_scalar)
      throw ShapeError(std::string(name) + ": shapes " + shape_str(na.shape) + " and " +
                       shape_str(nb.shape) + " are not broadcast-compatible");
    const Node& big = (same || b_scalar) ? na : nb;
    std::vector<double> out(big.val.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double x = na.val[same ? i : (a_scalar ? 0 : i)];
      const double y = nb.val[same ? i : (b_scalar ? 0 : i)];
      out[i] = f(x, y);
    }
    const bool rg = na.requires_grad || nb.requires_grad;
    Tensor t = make_node(big.shape, std::move(out), rg);
    if (!rg) return t;
    const int aid = a.id(), bid = b.id(), oid = t.id();
    node(oid).backward = [this, aid, bid, oid, da, db, a_scalar, b_scalar, same]() {
      const Node& out_nd = node(oid);
      const std::vector<double>& g = out_nd.grad;
      const std::vector<double>& av = node(aid).val;
      const std::vector<double>& bv = node(bid).val;
      if (node(aid).requires_grad) {
        ensure_grad(aid);
        std::vector<double>& dst = node(aid).grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double x = av[same ? i : (a_scalar ? 0 : i)];
          const double y = bv[same ? i : (b_scalar ? 0 : i)];
          dst[same || !a_scalar ? i : 0] += g[i] * da(x, y, out_nd.val[i]);
        }
      }
      if (node(bid).requires_grad) {
        ensure_grad(bid);
        std::vector<double>& dst = node(bid).grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double x = av[same ? i : (a_scalar ? 0 : i)];
          const double y = bv[same ? i : (b_scalar ? 0 : i)];
          dst[same || !b_scalar ? i : 0] += g[i] * db(x, y, out_nd.val[i]);
        }
      }
    };
    node(oid).inputs = {aid, bid};
    return t;
  }

  template <typename F, typename D>
  Tensor unary(Tensor a, F f, D d) {
    const Node& na = node(a.id());
    const bool rg = na.requires_grad;
    std::vector<double> out(na.val.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(na.val[i]);
    Tensor t = make_node(na.shape, std::move(out), rg);
    if (!rg) return t;
    const int aid = a.id(), oid = t.id();
    node(oid).backward = [this, aid, oid, d]() {
      ensure_grad(aid);
      const Node& out_nd = node(oid);
      const std::vector<double>& g = out_nd.grad;
      const std::vector<double>& av = node(aid).val;
      std::vector<double>& dst = node(aid).grad;
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * d(av[i], out_nd.val[i]);
    };
    node(oid).inputs = {aid};
    return t;
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<int, Parameter*>> leaves_;
  std::unordered_map<const Parameter*, int> leaf_index_;
};

inline const Shape& Tensor::shape() const { return tape_->shape(id_); }
inline const std::vector<double>& Tensor::values() const { return tape_->values(id_); }
inline double Tensor::item() const {
  const auto& v = values();
  if (v.size() != 1) throw ContractViolation("item: tensor is not scalar");
  return v[0];
}

inline void backward(Tensor loss) { loss.tape()->backward(loss); }

}  // namespace maskcap
