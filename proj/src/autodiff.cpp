#include "create/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "create/errors.hpp"

namespace create {

namespace detail {

bool g_tanh_backward_fault = false;

struct Node {
  Tensor value;
  Tensor grad;  // empty until first accumulation
  bool requires_grad = false;
  bool is_leaf = false;
  std::string op;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.data.empty() && value.numel() > 0) grad = Tensor::zeros(value.shape);
  }
  void accumulate(std::size_t i, double g) {
    ensure_grad();
    grad.data[i] += g;
  }
};

}  // namespace detail

using detail::Node;

namespace {

thread_local bool t_grad_enabled = true;

std::shared_ptr<Node> make_leaf(Tensor value, bool requires_grad, const char* op) {
  check_tensor(value, op);
  if (!value.all_finite()) throw NonFiniteError(op);
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->is_leaf = true;
  n->op = op;
  return n;
}

Var make_op(const char* op, Tensor value, std::vector<Var> parents,
            std::function<void(Node&)> backward_fn) {
  if (!value.all_finite()) throw NonFiniteError(op);
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  bool record = t_grad_enabled;
  bool any_grad = false;
  for (const Var& p : parents) any_grad = any_grad || p.requires_grad();
  if (record && any_grad) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (const Var& p : parents) n->parents.push_back(p.node_ptr());
    n->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(n));
}

void require_matrix(const Var& v, const char* op) {
  if (v.value().rank() != 2) throw Error(std::string(op) + ": expected a matrix, got shape " + shape_str(v.shape()));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value())) throw ShapeError(op, a.shape(), b.shape());
}

}  // namespace

// ---- Var --------------------------------------------------------------------

const Tensor& Var::value() const {
  if (!node_) throw Error("Var: undefined");
  return node_->value;
}

Tensor& Var::value_mut() {
  if (!node_) throw Error("Var: undefined");
  if (!node_->is_leaf) throw Error("Var: only leaf values may be mutated");
  return node_->value;
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

void Var::set_requires_grad(bool on) {
  if (!node_) throw Error("Var: undefined");
  if (!node_->is_leaf) throw Error("Var: requires_grad is settable on leaves only");
  node_->requires_grad = on;
}

Tensor Var::grad() const {
  if (!node_) throw Error("Var: undefined");
  if (node_->grad.data.empty()) return Tensor::zeros(node_->value.shape);
  return node_->grad;
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

Var parameter(Tensor value) { return Var(make_leaf(std::move(value), true, "parameter")); }
Var constant(Tensor value) { return Var(make_leaf(std::move(value), false, "constant")); }
Var scalar_const(double v) { return constant(Tensor::scalar(v)); }

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }
bool grad_enabled() { return t_grad_enabled; }

// ---- elementwise ------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += b.value().data[i];
  return make_op("add", std::move(out), {a, b}, [](Node& n) {
    for (auto& p : n.parents)
      if (p->requires_grad)
        for (std::size_t i = 0; i < n.grad.numel(); ++i) p->accumulate(i, n.grad.data[i]);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= b.value().data[i];
  return make_op("sub", std::move(out), {a, b}, [](Node& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    for (std::size_t i = 0; i < n.grad.numel(); ++i) {
      if (pa->requires_grad) pa->accumulate(i, n.grad.data[i]);
      if (pb->requires_grad) pb->accumulate(i, -n.grad.data[i]);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= b.value().data[i];
  return make_op("mul", std::move(out), {a, b}, [](Node& n) {
    auto& pa = n.parents[0];
    auto& pb = n.parents[1];
    for (std::size_t i = 0; i < n.grad.numel(); ++i) {
      if (pa->requires_grad) pa->accumulate(i, n.grad.data[i] * pb->value.data[i]);
      if (pb->requires_grad) pb->accumulate(i, n.grad.data[i] * pa->value.data[i]);
    }
  });
}

Var scale(const Var& a, double c) {
  Tensor out = a.value();
  for (double& v : out.data) v *= c;
  return make_op("scale", std::move(out), {a}, [c](Node& n) {
    for (std::size_t i = 0; i < n.grad.numel(); ++i) n.parents[0]->accumulate(i, c * n.grad.data[i]);
  });
}

Var add_scalar(const Var& a, double c) {
  Tensor out = a.value();
  for (double& v : out.data) v += c;
  return make_op("add_scalar", std::move(out), {a}, [](Node& n) {
    for (std::size_t i = 0; i < n.grad.numel(); ++i) n.parents[0]->accumulate(i, n.grad.data[i]);
  });
}

Var negate(const Var& a) { return scale(a, -1.0); }

// ---- linear algebra ----------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.rows()) throw ShapeError("matmul", A.shape, B.shape);
  std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  Tensor out = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      double av = A.at(i, p);
      if (av == 0.0) continue;
      const double* brow = &B.data[p * m];
      double* orow = &out.data[i * m];
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  return make_op("matmul", std::move(out), {a, b}, [n, k, m](Node& nd) {
    auto& pa = nd.parents[0];
    auto& pb = nd.parents[1];
    const Tensor& G = nd.grad;
    if (pa->requires_grad) {
      pa->ensure_grad();
      const Tensor& B2 = pb->value;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          double g = G.at(i, j);
          if (g == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) pa->grad.at(i, p) += g * B2.at(p, j);
        }
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      const Tensor& A2 = pa->value;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double av = A2.at(i, p);
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) pb->grad.at(p, j) += av * G.at(i, j);
        }
    }
  });
}

Var transpose(const Var& a) {
  require_matrix(a, "transpose");
  const Tensor& A = a.value();
  std::size_t n = A.rows(), m = A.cols();
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(j, i) = A.at(i, j);
  return make_op("transpose", std::move(out), {a}, [n, m](Node& nd) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) nd.parents[0]->accumulate(i * m + j, nd.grad.at(j, i));
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  require_matrix(x, "linear");
  require_matrix(w, "linear");
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  const Tensor& B = b.value();
  if (X.cols() != W.cols()) throw ShapeError("linear", X.shape, W.shape);
  if (B.rank() != 1 || B.numel() != W.rows()) throw ShapeError("linear", W.shape, B.shape);
  std::size_t n = X.rows(), in = X.cols(), out_dim = W.rows();
  Tensor out = Tensor::zeros({n, out_dim});
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = &out.data[i * out_dim];
    for (std::size_t o = 0; o < out_dim; ++o) orow[o] = B.data[o];
    const double* xrow = &X.data[i * in];
    for (std::size_t p = 0; p < in; ++p) {
      double xv = xrow[p];
      if (xv == 0.0) continue;
      for (std::size_t o = 0; o < out_dim; ++o) orow[o] += xv * W.at(o, p);
    }
  }
  return make_op("linear", std::move(out), {x, w, b}, [n, in, out_dim](Node& nd) {
    auto& px = nd.parents[0];
    auto& pw = nd.parents[1];
    auto& pb = nd.parents[2];
    const Tensor& G = nd.grad;
    const Tensor& X2 = px->value;
    const Tensor& W2 = pw->value;
    if (px->requires_grad) {
      px->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out_dim; ++o) {
          double g = G.at(i, o);
          if (g == 0.0) continue;
          for (std::size_t p = 0; p < in; ++p) px->grad.at(i, p) += g * W2.at(o, p);
        }
    }
    if (pw->requires_grad) {
      pw->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out_dim; ++o) {
          double g = G.at(i, o);
          if (g == 0.0) continue;
          for (std::size_t p = 0; p < in; ++p) pw->grad.at(o, p) += g * X2.at(i, p);
        }
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out_dim; ++o) pb->grad.data[o] += G.at(i, o);
    }
  });
}

// ---- pointwise nonlinearities -------------------------------------------------

Var tanh(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data) v = std::tanh(v);
  Tensor y = out;
  return make_op("tanh", std::move(out), {a}, [y = std::move(y)](Node& n) {
    for (std::size_t i = 0; i < n.grad.numel(); ++i) {
      double t = y.data[i];
      double d = detail::g_tanh_backward_fault ? (1.0 - t) : (1.0 - t * t);
      n.parents[0]->accumulate(i, n.grad.data[i] * d);
    }
  });
}

Var exp(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data) v = std::exp(v);
  Tensor y = out;
  return make_op("exp", std::move(out), {a}, [y = std::move(y)](Node& n) {
    for (std::size_t i = 0; i < n.grad.numel(); ++i)
      n.parents[0]->accumulate(i, n.grad.data[i] * y.data[i]);
  });
}

Var log(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data) v = std::log(v);
  return make_op("log", std::move(out), {a}, [](Node& n) {
    for (std::size_t i = 0; i < n.grad.numel(); ++i)
      n.parents[0]->accumulate(i, n.grad.data[i] / n.parents[0]->value.data[i]);
  });
}

Var sqrt(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data) v = std::sqrt(v);
  Tensor y = out;
  return make_op("sqrt", std::move(out), {a}, [y = std::move(y)](Node& n) {
    for (std::size_t i = 0; i < n.grad.numel(); ++i)
      n.parents[0]->accumulate(i, n.grad.data[i] * 0.5 / y.data[i]);
  });
}

Var reciprocal(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.data) v = 1.0 / v;
  Tensor y = out;
  return make_op("reciprocal", std::move(out), {a}, [y = std::move(y)](Node& n) {
    for (std::size_t i = 0; i < n.grad.numel(); ++i)
      n.parents[0]->accumulate(i, -n.grad.data[i] * y.data[i] * y.data[i]);
  });
}

// ---- reductions ----------------------------------------------------------------

Var sum(const Var& a) {
  double acc = 0.0;  // fixed left-to-right order
  for (double v : a.value().data) acc += v;
  return make_op("sum", Tensor::scalar(acc), {a}, [](Node& n) {
    double g = n.grad.data[0];
    for (std::size_t i = 0; i < n.parents[0]->value.numel(); ++i) n.parents[0]->accumulate(i, g);
  });
}

Var mean(const Var& a) {
  std::size_t n = a.numel();
  if (n == 0) throw Error("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var row_sum(const Var& a) {
  require_matrix(a, "row_sum");
  std::size_t n = a.value().rows(), m = a.value().cols();
  Tensor out = Tensor::zeros({n});
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) acc += a.value().at(i, j);
    out.data[i] = acc;
  }
  return make_op("row_sum", std::move(out), {a}, [n, m](Node& nd) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) nd.parents[0]->accumulate(i * m + j, nd.grad.data[i]);
  });
}

Var row_squared_norm(const Var& a) {
  require_matrix(a, "row_squared_norm");
  std::size_t n = a.value().rows(), m = a.value().cols();
  Tensor out = Tensor::zeros({n});
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      double v = a.value().at(i, j);
      acc += v * v;
    }
    out.data[i] = acc;
  }
  return make_op("row_squared_norm", std::move(out), {a}, [n, m](Node& nd) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j)
        nd.parents[0]->accumulate(i * m + j, 2.0 * nd.parents[0]->value.at(i, j) * nd.grad.data[i]);
  });
}

// ---- softmax family -------------------------------------------------------------

Var softmax_rows(const Var& a) {
  require_matrix(a, "softmax_rows");
  std::size_t n = a.value().rows(), m = a.value().cols();
  Tensor out = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, a.value().at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      double e = std::exp(a.value().at(i, j) - mx);
      out.at(i, j) = e;
      z += e;
    }
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) /= z;
  }
  Tensor y = out;
  return make_op("softmax_rows", std::move(out), {a}, [n, m, y = std::move(y)](Node& nd) {
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += nd.grad.at(i, j) * y.at(i, j);
      for (std::size_t j = 0; j < m; ++j)
        nd.parents[0]->accumulate(i * m + j, y.at(i, j) * (nd.grad.at(i, j) - dot));
    }
  });
}

Var log_softmax_rows(const Var& a) {
  require_matrix(a, "log_softmax_rows");
  std::size_t n = a.value().rows(), m = a.value().cols();
  Tensor out = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, a.value().at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += std::exp(a.value().at(i, j) - mx);
    double lz = mx + std::log(z);
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) = a.value().at(i, j) - lz;
  }
  Tensor y = out;
  return make_op("log_softmax_rows", std::move(out), {a}, [n, m, y = std::move(y)](Node& nd) {
    for (std::size_t i = 0; i < n; ++i) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < m; ++j) gsum += nd.grad.at(i, j);
      for (std::size_t j = 0; j < m; ++j)
        nd.parents[0]->accumulate(i * m + j, nd.grad.at(i, j) - std::exp(y.at(i, j)) * gsum);
    }
  });
}

// ---- indexing -----------------------------------------------------------------

Var pick_per_row(const Var& a, const std::vector<std::size_t>& idx) {
  require_matrix(a, "pick_per_row");
  std::size_t n = a.value().rows(), m = a.value().cols();
  if (idx.size() != n) throw ShapeError("pick_per_row", a.shape(), {idx.size()});
  Tensor out = Tensor::zeros({n});
  for (std::size_t i = 0; i < n; ++i) {
    if (idx[i] >= m) throw Error("pick_per_row: index " + std::to_string(idx[i]) + " out of range for " + std::to_string(m) + " columns");
    out.data[i] = a.value().at(i, idx[i]);
  }
  return make_op("pick_per_row", std::move(out), {a}, [idx, m](Node& nd) {
    for (std::size_t i = 0; i < idx.size(); ++i) nd.parents[0]->accumulate(i * m + idx[i], nd.grad.data[i]);
  });
}

Var select_cols(const Var& a, const std::vector<std::size_t>& cols) {
  require_matrix(a, "select_cols");
  std::size_t n = a.value().rows(), m = a.value().cols(), k = cols.size();
  for (std::size_t c : cols)
    if (c >= m) throw Error("select_cols: column " + std::to_string(c) + " out of range for " + std::to_string(m) + " columns");
  Tensor out = Tensor::zeros({n, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < k; ++t) out.at(i, t) = a.value().at(i, cols[t]);
  return make_op("select_cols", std::move(out), {a}, [cols, n, m, k](Node& nd) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < k; ++t) nd.parents[0]->accumulate(i * m + cols[t], nd.grad.at(i, t));
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_cols: no operands");
  std::size_t n = parts[0].value().rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    const Tensor& t = p.value();
    if (t.rank() > 2) throw Error("concat_cols: rank > 2");
    if (t.rows() != n) throw ShapeError("concat_cols", parts[0].shape(), t.shape);
    widths.push_back(t.cols());
    total += t.cols();
  }
  Tensor out = Tensor::zeros({n, total});
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& t = parts[p].value();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < widths[p]; ++j) out.at(i, off + j) = t.data[i * widths[p] + j];
    off += widths[p];
  }
  std::vector<Var> parents(parts.begin(), parts.end());
  return make_op("concat_cols", std::move(out), std::move(parents), [widths, n, total](Node& nd) {
    std::size_t off2 = 0;
    for (std::size_t p = 0; p < nd.parents.size(); ++p) {
      auto& par = nd.parents[p];
      if (par->requires_grad)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < widths[p]; ++j)
            par->accumulate(i * widths[p] + j, nd.grad.at(i, off2 + j));
      off2 += widths[p];
    }
  });
}

Var scale_rows(const Var& a, const Var& s) {
  require_matrix(a, "scale_rows");
  std::size_t n = a.value().rows(), m = a.value().cols();
  if (s.value().rank() != 1 || s.numel() != n) throw ShapeError("scale_rows", a.shape(), s.shape());
  Tensor out = a.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.at(i, j) *= s.value().data[i];
  return make_op("scale_rows", std::move(out), {a, s}, [n, m](Node& nd) {
    auto& pa = nd.parents[0];
    auto& ps = nd.parents[1];
    for (std::size_t i = 0; i < n; ++i) {
      double srow = ps->value.data[i];
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        if (pa->requires_grad) pa->accumulate(i * m + j, nd.grad.at(i, j) * srow);
        dot += nd.grad.at(i, j) * pa->value.at(i, j);
      }
      if (ps->requires_grad) ps->accumulate(i, dot);
    }
  });
}

Var masked_row_lse(const Var& a, const Tensor& mask) {
  require_matrix(a, "masked_row_lse");
  if (!a.value().same_shape(mask)) throw ShapeError("masked_row_lse", a.shape(), mask.shape);
  std::size_t n = a.value().rows(), m = a.value().cols();
  Tensor out = Tensor::zeros({n});
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j)
      if (mask.at(i, j) != 0.0) mx = std::max(mx, a.value().at(i, j));
    if (!std::isfinite(mx)) {  // empty row mask
      out.data[i] = 0.0;
      continue;
    }
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j)
      if (mask.at(i, j) != 0.0) z += std::exp(a.value().at(i, j) - mx);
    out.data[i] = mx + std::log(z);
  }
  Tensor y = out;
  return make_op("masked_row_lse", std::move(out), {a}, [mask, n, m, y = std::move(y)](Node& nd) {
    for (std::size_t i = 0; i < n; ++i) {
      bool any = false;
      for (std::size_t j = 0; j < m; ++j) any = any || mask.at(i, j) != 0.0;
      if (!any) continue;
      for (std::size_t j = 0; j < m; ++j)
        if (mask.at(i, j) != 0.0)
          nd.parents[0]->accumulate(i * m + j,
                                    nd.grad.data[i] * std::exp(nd.parents[0]->value.at(i, j) - y.data[i]));
    }
  });
}

Var confusion_scores(const Var& errors) {
  require_matrix(errors, "confusion_scores");
  std::size_t n = errors.value().rows(), m = errors.value().cols();
  if (m < 2) throw Error("confusion_scores: needs at least 2 columns, got " + std::to_string(m));
  Tensor out = Tensor::zeros({n});
  // Per row: j1 = smallest, j2 = second smallest, jm = largest (ties to the
  // lowest column). Degenerate all-equal rows score 0 and get no gradient.
  std::vector<std::array<std::size_t, 3>> picks(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &errors.value().data[i * m];
    std::size_t j1 = 0;
    for (std::size_t j = 1; j < m; ++j)
      if (row[j] < row[j1]) j1 = j;
    std::size_t j2 = (j1 == 0) ? 1 : 0;
    for (std::size_t j = 0; j < m; ++j)
      if (j != j1 && row[j] < row[j2]) j2 = j;
    std::size_t jm = 0;
    for (std::size_t j = 1; j < m; ++j)
      if (row[j] > row[jm]) jm = j;
    picks[i] = {j1, j2, jm};
    double den = row[jm] - row[j1];
    out.data[i] = den > 0.0 ? (row[j2] - row[j1]) / den : 0.0;
  }
  return make_op("confusion_scores", std::move(out), {errors},
                 [picks, m](Node& nd) {
                   for (std::size_t i = 0; i < picks.size(); ++i) {
                     auto [j1, j2, jm] = picks[i];
                     const double* row = &nd.parents[0]->value.data[i * m];
                     double den = row[jm] - row[j1];
                     if (den <= 0.0) continue;
                     // Second-smallest == largest (e.g. two columns): the
                     // score is locally the constant 1; contributions would
                     // only cancel up to rounding, so skip them outright.
                     if (j2 == jm) continue;
                     double num = row[j2] - row[j1];
                     double g = nd.grad.data[i];
                     nd.parents[0]->accumulate(i * m + j2, g / den);
                     nd.parents[0]->accumulate(i * m + jm, -g * num / (den * den));
                     nd.parents[0]->accumulate(i * m + j1, g * (num - den) / (den * den));
                   }
                 });
}

// ---- backward -------------------------------------------------------------------

void backward(const Var& output) {
  if (!output.defined()) throw Error("backward: undefined output");
  if (output.numel() != 1) throw Error("backward: output must be a scalar, got shape " + shape_str(output.shape()));
  if (!output.requires_grad()) throw Error("backward: output is detached from the graph");

  // Iterative postorder over nodes that require gradients.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(output.node(), 0);
  visited.insert(output.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  output.node()->ensure_grad();
  output.node()->grad.data[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
}

void zero_grads(std::span<Var> params) {
  for (Var& p : params) p.zero_grad();
}

}  // namespace create
