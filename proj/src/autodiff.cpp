#include "tjstg/autodiff.h"

#include <algorithm>
#include <cmath>
#include <utility>

namespace tjstg::ad {

namespace {

void require_matrix(const Tensor& t, const char* who) {
  if (t.rank() != 2)
    throw ShapeError(std::string(who) + ": expected a matrix, got " + t.shape_str());
}

void require_simplex(const Tensor& t, const char* who) {
  double sum = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] < -1e-9)
      throw ContractError(std::string(who) + ": negative entry, input not on the simplex");
    sum += t[i];
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ContractError(std::string(who) + ": entries sum to " + std::to_string(sum) +
                        ", input not on the simplex");
}

// c += a.b, all shapes validated by the caller.
void matmul_nn_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      const double av = pa[i * k + l];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) pc[i * n + j] += av * pb[l * n + j];
    }
}

// c += a.b^T, a: m x k, b: n x k.
void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t l = 0; l < k; ++l) s += a.at(i, l) * b.at(j, l);
      c.at(i, j) += s;
    }
}

// c += a^T.b, a: k x m, b: k x n.
void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  for (std::size_t l = 0; l < k; ++l)
    for (std::size_t i = 0; i < m; ++i) {
      const double av = a.at(l, i);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) c.at(i, j) += av * b.at(l, j);
    }
}

Graph* same_graph(std::initializer_list<Var> vs, const char* who) {
  Graph* g = nullptr;
  for (const Var& v : vs) {
    if (!v.valid()) throw ContractError(std::string(who) + ": invalid operand handle");
    if (g == nullptr) g = v.graph;
    if (v.graph != g)
      throw ContractError(std::string(who) + ": operands live on different tapes");
  }
  return g;
}

// Elementwise unary op with derivative expressed from input x and output y.
template <typename Fwd, typename Bwd>
Var unary_elementwise(Var x, const char* who, Fwd fwd, Bwd dydx) {
  Graph* g = same_graph({x}, who);
  const Tensor& t = g->value(x);
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = fwd(t[i]);
  Var parents[] = {x};
  Var v = g->emplace(std::move(out), parents);
  g->set_backprop(v, [g, x, v, dydx]() {
    const Tensor& G = g->grad_ref(v.id);
    const Tensor& in = g->value(x);
    const Tensor& outv = g->value(v);
    Tensor dx(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) dx[i] = G[i] * dydx(in[i], outv[i]);
    g->accumulate(x.id, dx);
  });
  return v;
}

}  // namespace

// --- Graph ------------------------------------------------------------------

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Graph::check_owned(Var v) const {
  if (v.graph != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
    throw ContractError("variable does not belong to this tape");
}

const Tensor& Graph::value(Var v) const {
  check_owned(v);
  return nodes_[v.id].value;
}

Tensor Graph::grad(Var v) const {
  check_owned(v);
  const Node& n = nodes_[v.id];
  if (n.grad.empty()) return Tensor::zeros(n.value.shape());
  return n.grad;
}

Var Graph::emplace(Tensor value, std::span<const Var> parents) {
  bool needs = false;
  for (const Var& p : parents) {
    check_owned(p);
    needs = needs || nodes_[p.id].requires_grad;
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = needs;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Graph::set_backprop(Var v, std::function<void()> fn) {
  check_owned(v);
  if (nodes_[v.id].requires_grad) nodes_[v.id].backprop = std::move(fn);
}

void Graph::accumulate(int id, const Tensor& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (!n.value.same_shape(g))
    throw ShapeError("gradient shape " + g.shape_str() + " does not match value " +
                     n.value.shape_str());
  if (n.grad.empty()) {
    n.grad = g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

void Graph::backward(Var loss) {
  check_owned(loss);
  Node& target = nodes_[loss.id];
  if (target.value.size() != 1)
    throw ContractError("backward: loss must be scalar, got " + target.value.shape_str());
  for (Node& n : nodes_) n.grad = Tensor();
  target.grad = Tensor::full(target.value.shape(), 1.0);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.requires_grad && n.backprop && !n.grad.empty()) n.backprop();
  }
}

// --- ops ----------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Graph* g = same_graph({a, b}, "matmul");
  const Tensor& ta = g->value(a);
  const Tensor& tb = g->value(b);
  require_matrix(ta, "matmul");
  require_matrix(tb, "matmul");
  if (ta.cols() != tb.rows())
    throw ShapeError("matmul: inner extents differ, " + ta.shape_str() + " x " +
                     tb.shape_str());
  Tensor out({ta.rows(), tb.cols()});
  matmul_nn_acc(ta, tb, out);
  Var parents[] = {a, b};
  Var v = g->emplace(std::move(out), parents);
  g->set_backprop(v, [g, a, b, v]() {
    const Tensor& G = g->grad_ref(v.id);
    const Tensor& ta = g->value(a);
    const Tensor& tb = g->value(b);
    Tensor da(ta.shape());
    matmul_nt_acc(G, tb, da);  // dA = G.B^T
    g->accumulate(a.id, da);
    Tensor db(tb.shape());
    matmul_tn_acc(ta, G, db);  // dB = A^T.G
    g->accumulate(b.id, db);
  });
  return v;
}

Var transpose(Var x) {
  Graph* g = same_graph({x}, "transpose");
  const Tensor& t = g->value(x);
  require_matrix(t, "transpose");
  Tensor out({t.cols(), t.rows()});
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) out.at(j, i) = t.at(i, j);
  Var parents[] = {x};
  Var v = g->emplace(std::move(out), parents);
  g->set_backprop(v, [g, x, v]() {
    const Tensor& G = g->grad_ref(v.id);
    const Tensor& t = g->value(x);
    Tensor dx(t.shape());
    for (std::size_t i = 0; i < G.rows(); ++i)
      for (std::size_t j = 0; j < G.cols(); ++j) dx.at(j, i) = G.at(i, j);
    g->accumulate(x.id, dx);
  });
  return v;
}

Var add(Var a, Var b) {
  Graph* g = same_graph({a, b}, "add");
  const Tensor& ta = g->value(a);
  const Tensor& tb = g->value(b);
  if (!ta.same_shape(tb))
    throw ShapeError("add: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta[i] + tb[i];
  Var parents[] = {a, b};
  Var v = g->emplace(std::move(out), parents);
  g->set_backprop(v, [g, a, b, v]() {
    const Tensor& G = g->grad_ref(v.id);
    g->accumulate(a.id, G);
    g->accumulate(b.id, G);
  });
  return v;
}

Var sub(Var a, Var b) {
  Graph* g = same_graph({a, b}, "sub");
  const Tensor& ta = g->value(a);
  const Tensor& tb = g->value(b);
  if (!ta.same_shape(tb))
    throw ShapeError("sub: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta[i] - tb[i];
  Var parents[] = {a, b};
  Var v = g->emplace(std::move(out), parents);
  g->set_backprop(v, [g, a, b, v]() {
    const Tensor& G = g->grad_ref(v.id);
    g->accumulate(a.id, G);
    Tensor db(G.shape());
    for (std::size_t i = 0; i < G.size(); ++i) db[i] = -G[i];
    g->accumulate(b.id, db);
  });
  return v;
}

Var mul(Var a, Var b) {
  Graph* g = same_graph({a, b}, "mul");
  const Tensor& ta = g->value(a);
  const Tensor& tb = g->value(b);
  if (!ta.same_shape(tb))
    throw ShapeError("mul: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta[i] * tb[i];
  Var parents[] = {a, b};
  Var v = g->emplace(std::move(out), parents);
  g->set_backprop(v, [g, a, b, v]() {
    const Tensor& G = g->grad_ref(v.id);
    const Tensor& ta = g->value(a);
    const Tensor& tb = g->value(b);
    Tensor da(ta.shape());
    Tensor db(tb.shape());
    for (std::size_t i = 0; i < G.size(); ++i) {
      da[i] = G[i] * tb[i];
      db[i] = G[i] * ta[i];
    }
    g->accumulate(a.id, da);
    g->accumulate(b.id, db);
  });
  return v;
}

Var affine_scalar(Var x, double alpha, double beta) {
  return unary_elementwise(
      x, "affine_scalar", [alpha, beta](double v) { return alpha * v + beta; },
      [alpha](double, double) { return alpha; });
}

Var tanh(Var x) {
  return unary_elementwise(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var x) {
  return unary_elementwise(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var x) {
  return unary_elementwise(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var log_clamped(Var x) {
  return unary_elementwise(
      x, "log_clamped",
      [](double v) { return std::log(std::max(v, kProbEps)); },
      [](double v, double) { return v > kProbEps ? 1.0 / v : 0.0; });
}

Var threshold_keep(Var x, double tau) {
  if (tau < 0.0) throw ContractError("threshold_keep: tau must be >= 0");
  return unary_elementwise(
      x, "threshold_keep", [tau](double v) { return v >= tau ? v : 0.0; },
      [tau](double v, double) { return v >= tau ? 1.0 : 0.0; });
}

namespace {

// Shared forward/backward for the (optionally masked) last-axis softmax.
Var softmax_impl(Var x, Tensor mask, const char* who) {
  Graph* g = same_graph({x}, who);
  const Tensor& t = g->value(x);
  if (t.rank() == 0) throw ShapeError(std::string(who) + ": empty tensor");
  const bool masked = !mask.empty();
  if (masked && !mask.same_shape(t))
    throw ShapeError(std::string(who) + ": mask shape " + mask.shape_str() +
                     " does not match input " + t.shape_str());
  const std::size_t n = t.shape().back();
  const std::size_t slices = t.size() / n;
  Tensor out(t.shape());
  for (std::size_t s = 0; s < slices; ++s) {
    const std::size_t base = s * n;
    double mx = 0.0;
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (masked && mask[base + i] == 0.0) continue;
      mx = any ? std::max(mx, t[base + i]) : t[base + i];
      any = true;
    }
    if (!any)
      throw ContractError(std::string(who) + ": a slice has no unmasked entries");
    double denom = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (masked && mask[base + i] == 0.0) {
        out[base + i] = 0.0;
        continue;
      }
      out[base + i] = std::exp(t[base + i] - mx);
      denom += out[base + i];
    }
    for (std::size_t i = 0; i < n; ++i) out[base + i] /= denom;
  }
  Var parents[] = {x};
  Var v = g->emplace(std::move(out), parents);
  g->set_backprop(v, [g, x, v, n, slices]() {
    const Tensor& G = g->grad_ref(v.id);
    const Tensor& y = g->value(v);
    Tensor dx(y.shape());
    for (std::size_t s = 0; s < slices; ++s) {
      const std::size_t base = s * n;
      double gy = 0.0;
      for (std::size_t i = 0; i < n; ++i) gy += G[base + i] * y[base + i];
      for (std::size_t i = 0; i < n; ++i)
        dx[base + i] = y[base + i] * (G[base + i] - gy);
    }
    g->accumulate(x.id, dx);
  });
  return v;
}

}  // namespace

Var softmax(Var x) { return softmax_impl(x, Tensor(), "softmax"); }

Var masked_softmax(Var x, Tensor mask) {
  return softmax_impl(x, std::move(mask), "masked_softmax");
}

Var sum_all(Var x) {
  Graph* g = same_graph({x}, "sum_all");
  const Tensor& t = g->value(x);
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t[i];
  Var parents[] = {x};
  Var v = g->emplace(Tensor::scalar(s), parents);
  g->set_backprop(v, [g, x, v]() {
    const double gv = g->grad_ref(v.id)[0];
    g->accumulate(x.id, Tensor::full(g->value(x).shape(), gv));
  });
  return v;
}

Var mean_rows(Var x) {
  Graph* g = same_graph({x}, "mean_rows");
  const Tensor& t = g->value(x);
  require_matrix(t, "mean_rows");
  const std::size_t r = t.rows(), c = t.cols();
  Tensor out({1, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += t.at(i, j);
  for (std::size_t j = 0; j < c; ++j) out[j] /= static_cast<double>(r);
  Var parents[] = {x};
  Var v = g->emplace(std::move(out), parents);
  g->set_backprop(v, [g, x, v, r, c]() {
    const Tensor& G = g->grad_ref(v.id);
    Tensor dx({r, c});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dx.at(i, j) = G[j] / static_cast<double>(r);
    g->accumulate(x.id, dx);
  });
  return v;
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no parts");
  Graph* g = parts[0].graph;
  std::size_t rows = 0;
  const std::size_t cols = g->value(parts[0]).cols();
  for (const Var& p : parts) {
    if (p.graph != g) throw ContractError("concat_rows: operands on different tapes");
    const Tensor& t = g->value(p);
    require_matrix(t, "concat_rows");
    if (t.cols() != cols)
      throw ShapeError("concat_rows: column mismatch " + t.shape_str());
    rows += t.rows();
  }
  Tensor out({rows, cols});
  std::size_t r0 = 0;
  for (const Var& p : parts) {
    const Tensor& t = g->value(p);
    std::copy(t.data(), t.data() + t.size(), out.data() + r0 * cols);
    r0 += t.rows();
  }
  std::vector<Var> owned(parts.begin(), parts.end());
  Var v = g->emplace(std::move(out), parts);
  g->set_backprop(v, [g, owned, v, cols]() {
    const Tensor& G = g->grad_ref(v.id);
    std::size_t r0 = 0;
    for (const Var& p : owned) {
      const Tensor& t = g->value(p);
      Tensor dp(t.shape());
      std::copy(G.data() + r0 * cols, G.data() + (r0 + t.rows()) * cols, dp.data());
      g->accumulate(p.id, dp);
      r0 += t.rows();
    }
  });
  return v;
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no parts");
  Graph* g = parts[0].graph;
  std::size_t cols = 0;
  const std::size_t rows = g->value(parts[0]).rows();
  for (const Var& p : parts) {
    if (p.graph != g) throw ContractError("concat_cols: operands on different tapes");
    const Tensor& t = g->value(p);
    require_matrix(t, "concat_cols");
    if (t.rows() != rows)
      throw ShapeError("concat_cols: row mismatch " + t.shape_str());
    cols += t.cols();
  }
  Tensor out({rows, cols});
  std::size_t c0 = 0;
  for (const Var& p : parts) {
    const Tensor& t = g->value(p);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < t.cols(); ++j) out.at(i, c0 + j) = t.at(i, j);
    c0 += t.cols();
  }
  std::vector<Var> owned(parts.begin(), parts.end());
  Var v = g->emplace(std::move(out), parts);
  g->set_backprop(v, [g, owned, v, rows]() {
    const Tensor& G = g->grad_ref(v.id);
    std::size_t c0 = 0;
    for (const Var& p : owned) {
      const Tensor& t = g->value(p);
      Tensor dp(t.shape());
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < t.cols(); ++j) dp.at(i, j) = G.at(i, c0 + j);
      g->accumulate(p.id, dp);
      c0 += t.cols();
    }
  });
  return v;
}

Var slice_cols(Var x, std::size_t start, std::size_t len) {
  Graph* g = same_graph({x}, "slice_cols");
  const Tensor& t = g->value(x);
  require_matrix(t, "slice_cols");
  if (len == 0 || start + len > t.cols())
    throw ShapeError("slice_cols: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of " + t.shape_str());
  Tensor out({t.rows(), len});
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < len; ++j) out.at(i, j) = t.at(i, start + j);
  Var parents[] = {x};
  Var v = g->emplace(std::move(out), parents);
  g->set_backprop(v, [g, x, v, start, len]() {
    const Tensor& G = g->grad_ref(v.id);
    const Tensor& t = g->value(x);
    Tensor dx(t.shape());
    for (std::size_t i = 0; i < t.rows(); ++i)
      for (std::size_t j = 0; j < len; ++j) dx.at(i, start + j) = G.at(i, j);
    g->accumulate(x.id, dx);
  });
  return v;
}

Var gather_rows(Var x, std::vector<std::size_t> idx) {
  Graph* g = same_graph({x}, "gather_rows");
  const Tensor& t = g->value(x);
  require_matrix(t, "gather_rows");
  if (idx.empty()) throw ShapeError("gather_rows: empty index list");
  for (std::size_t r : idx)
    if (r >= t.rows())
      throw ShapeError("gather_rows: index " + std::to_string(r) + " out of " +
                       t.shape_str());
  const std::size_t c = t.cols();
  Tensor out({idx.size(), c});
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy(t.data() + idx[k] * c, t.data() + (idx[k] + 1) * c, out.data() + k * c);
  Var parents[] = {x};
  Var v = g->emplace(std::move(out), parents);
  g->set_backprop(v, [g, x, v, idx, c]() {
    const Tensor& G = g->grad_ref(v.id);
    Tensor dx(g->value(x).shape());
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (std::size_t j = 0; j < c; ++j) dx.at(idx[k], j) += G.at(k, j);
    g->accumulate(x.id, dx);
  });
  return v;
}

Var gather_cols(Var x, std::vector<std::size_t> idx) {
  Graph* g = same_graph({x}, "gather_cols");
  const Tensor& t = g->value(x);
  require_matrix(t, "gather_cols");
  if (idx.empty()) throw ShapeError("gather_cols: empty index list");
  for (std::size_t c : idx)
    if (c >= t.cols())
      throw ShapeError("gather_cols: index " + std::to_string(c) + " out of " +
                       t.shape_str());
  Tensor out({t.rows(), idx.size()});
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t k = 0; k < idx.size(); ++k) out.at(i, k) = t.at(i, idx[k]);
  Var parents[] = {x};
  Var v = g->emplace(std::move(out), parents);
  g->set_backprop(v, [g, x, v, idx]() {
    const Tensor& G = g->grad_ref(v.id);
    Tensor dx(g->value(x).shape());
    for (std::size_t i = 0; i < G.rows(); ++i)
      for (std::size_t k = 0; k < idx.size(); ++k) dx.at(i, idx[k]) += G.at(i, k);
    g->accumulate(x.id, dx);
  });
  return v;
}

Var reshape(Var x, std::vector<std::size_t> shape) {
  Graph* g = same_graph({x}, "reshape");
  Tensor out = g->value(x).reshaped(shape);
  Var parents[] = {x};
  Var v = g->emplace(std::move(out), parents);
  g->set_backprop(v, [g, x, v]() {
    g->accumulate(x.id, g->grad_ref(v.id).reshaped(g->value(x).shape()));
  });
  return v;
}

Var normalize_sum(Var x) {
  Graph* g = same_graph({x}, "normalize_sum");
  const Tensor& t = g->value(x);
  double s = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t[i];
  if (!(s > 0.0))
    throw ContractError("normalize_sum: entries sum to " + std::to_string(s) +
                        ", expected a positive total");
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i] / s;
  Var parents[] = {x};
  Var v = g->emplace(std::move(out), parents);
  g->set_backprop(v, [g, x, v, s]() {
    const Tensor& G = g->grad_ref(v.id);
    const Tensor& y = g->value(v);
    double gy = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) gy += G[i] * y[i];
    Tensor dx(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) dx[i] = (G[i] - gy) / s;
    g->accumulate(x.id, dx);
  });
  return v;
}

Var kl_divergence(Var p, Var q) {
  Graph* g = same_graph({p, q}, "kl_divergence");
  const Tensor& tp = g->value(p);
  const Tensor& tq = g->value(q);
  if (!tp.same_shape(tq))
    throw ShapeError("kl_divergence: shape mismatch " + tp.shape_str() + " vs " +
                     tq.shape_str());
  require_simplex(tp, "kl_divergence");
  require_simplex(tq, "kl_divergence");
  double sum = 0.0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    const double cp = std::max(tp[i], kProbEps);
    const double cq = std::max(tq[i], kProbEps);
    sum += cp * std::log(cp / cq);
  }
  Var parents[] = {p, q};
  Var v = g->emplace(Tensor::scalar(sum), parents);
  g->set_backprop(v, [g, p, q, v]() {
    const double gv = g->grad_ref(v.id)[0];
    const Tensor& tp = g->value(p);
    const Tensor& tq = g->value(q);
    Tensor dp(tp.shape());
    Tensor dq(tq.shape());
    for (std::size_t i = 0; i < tp.size(); ++i) {
      const double cp = std::max(tp[i], kProbEps);
      const double cq = std::max(tq[i], kProbEps);
      dp[i] = tp[i] > kProbEps ? gv * (std::log(cp / cq) + 1.0) : 0.0;
      dq[i] = tq[i] > kProbEps ? gv * (-cp / cq) : 0.0;
    }
    g->accumulate(p.id, dp);
    g->accumulate(q.id, dq);
  });
  return v;
}

Var js_divergence(Var p, Var q) {
  Var m = scale(add(p, q), 0.5);
  return scale(add(kl_divergence(p, m), kl_divergence(q, m)), 0.5);
}

Var cross_entropy(Var p, std::size_t label) {
  Graph* g = same_graph({p}, "cross_entropy");
  const Tensor& tp = g->value(p);
  if (label >= tp.size())
    throw ContractError("cross_entropy: label " + std::to_string(label) +
                        " out of range for " + tp.shape_str());
  const double cp = std::max(tp[label], kProbEps);
  Var parents[] = {p};
  Var v = g->emplace(Tensor::scalar(-std::log(cp)), parents);
  g->set_backprop(v, [g, p, v, label]() {
    const double gv = g->grad_ref(v.id)[0];
    const Tensor& tp = g->value(p);
    Tensor dp(tp.shape());
    if (tp[label] > kProbEps) dp[label] = -gv / tp[label];
    g->accumulate(p.id, dp);
  });
  return v;
}

Var add_rowvec(Var x, Var b) {
  Graph* g = same_graph({x, b}, "add_rowvec");
  const Tensor& tx = g->value(x);
  const Tensor& tb = g->value(b);
  require_matrix(tx, "add_rowvec");
  require_matrix(tb, "add_rowvec");
  if (tb.rows() != 1 || tb.cols() != tx.cols())
    throw ShapeError("add_rowvec: bias " + tb.shape_str() + " does not broadcast over " +
                     tx.shape_str());
  Tensor out(tx.shape());
  for (std::size_t i = 0; i < tx.rows(); ++i)
    for (std::size_t j = 0; j < tx.cols(); ++j) out.at(i, j) = tx.at(i, j) + tb[j];
  Var parents[] = {x, b};
  Var v = g->emplace(std::move(out), parents);
  g->set_backprop(v, [g, x, b, v]() {
    const Tensor& G = g->grad_ref(v.id);
    g->accumulate(x.id, G);
    Tensor db({1, G.cols()});
    for (std::size_t i = 0; i < G.rows(); ++i)
      for (std::size_t j = 0; j < G.cols(); ++j) db[j] += G.at(i, j);
    g->accumulate(b.id, db);
  });
  return v;
}

// --- gradient checking ---------------------------------------------------------

GradCheckReport grad_check(const LossFn& f,
                           const std::map<std::string, Tensor>& params, double eps) {
  if (!(eps > 0.0)) throw ContractError("grad_check: eps must be positive");

  auto eval = [&f](const std::map<std::string, Tensor>& p,
                   std::map<std::string, Tensor>* grads) {
    Graph g;
    std::map<std::string, Var> bound;
    for (const auto& [name, t] : p) bound.emplace(name, g.param(t));
    Var loss = f(g, bound);
    if (!loss.valid() || loss.graph != &g)
      throw ContractError("grad_check: loss was not recorded on the given tape");
    const double lv = g.value(loss).item();
    if (grads) {
      g.backward(loss);
      for (const auto& [name, var] : bound) (*grads)[name] = g.grad(var);
    }
    return lv;
  };

  std::map<std::string, Tensor> analytic;
  const double l0 = eval(params, &analytic);
  const double l1 = eval(params, nullptr);
  if (l0 != l1)
    throw ContractError("grad_check: loss function is not deterministic, unusable");

  GradCheckReport report;
  std::map<std::string, Tensor> work = params;
  for (const auto& [name, base] : params) {
    GradCheckReport::Entry entry{name, 0.0, base.size()};
    Tensor& slot = work.at(name);
    const Tensor& a = analytic.at(name);
    for (std::size_t i = 0; i < base.size(); ++i) {
      const double saved = slot[i];
      slot[i] = saved + eps;
      const double fp = eval(work, nullptr);
      slot[i] = saved - eps;
      const double fm = eval(work, nullptr);
      slot[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double rel =
          std::abs(a[i] - numeric) /
          std::max({1.0, std::abs(a[i]), std::abs(numeric)});
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace tjstg::ad
