#include "sapl/autograd.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace sapl::ag {

const Matrix Tape::kEmpty;

Parameter::Parameter(std::string n, Matrix v, bool t) : name(std::move(n)), value(std::move(v)), trainable(t) {
  grad = Matrix::Zero(value.rows(), value.cols());
}

void Parameter::zero_grad() {
  if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
    grad = Matrix::Zero(value.rows(), value.cols());
  } else {
    grad.setZero();
  }
}

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

const Matrix& Tape::value(int id) const {
  const Node& n = nodes_[id];
  return n.ext ? *n.ext : n.own;
}

const Matrix& Tape::grad(int id) const { return nodes_[id].grad.size() ? nodes_[id].grad : kEmpty; }

Var Tape::constant(Matrix v) {
  Node n;
  n.own = std::move(v);
  nodes_.push_back(std::move(n));
  return Var(this, int(nodes_.size()) - 1);
}

Var Tape::constant_ref(const Matrix& v) {
  Node n;
  n.ext = &v;
  nodes_.push_back(std::move(n));
  return Var(this, int(nodes_.size()) - 1);
}

Var Tape::param(Parameter& p) {
  Node n;
  n.ext = &p.value;
  if (p.trainable) {
    n.requires_grad = true;
    n.param = &p;
  }
  nodes_.push_back(std::move(n));
  return Var(this, int(nodes_.size()) - 1);
}

Var Tape::push(Matrix v, std::initializer_list<Var> parents, Backward fn) {
  return push(std::move(v), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
}

Var Tape::push(Matrix v, std::span<const Var> parents, Backward fn) {
  Node n;
  n.own = std::move(v);
  for (const Var& p : parents) {
    if (p.tape_ != this) throw std::logic_error("autograd: mixing tapes");
    n.requires_grad = n.requires_grad || nodes_[p.id_].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, int(nodes_.size()) - 1);
}

void Tape::accumulate(const Var& v, const Matrix& g) {
  if (!v.requires_grad()) return;
  Node& n = nodes_[v.id_];
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(const Var& root, double seed) {
  if (root.tape_ != this) throw std::logic_error("autograd: root from another tape");
  if (root.rows() != 1 || root.cols() != 1) throw std::logic_error("autograd: backward needs a scalar root");
  if (!root.requires_grad()) return;
  nodes_[root.id_].grad = Matrix::Constant(1, 1, seed);
  for (int i = root.id_; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.backward) n.backward(n.grad);
    if (n.param) n.param->grad += n.grad;
  }
}

namespace {

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw std::logic_error("autograd: invalid Var");
  return *a.tape();
}

void check(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("autograd shape mismatch: ") + what);
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  check(a.cols() == b.rows(), "matmul");
  Tape& t = tape_of(a);
  return t.push(a.value() * b.value(), {a, b}, [&t, a, b](const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  check(a.cols() == b.cols(), "matmul_nt");
  Tape& t = tape_of(a);
  return t.push(a.value() * b.value().transpose(), {a, b}, [&t, a, b](const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, g * b.value());
    if (b.requires_grad()) t.accumulate(b, g.transpose() * a.value());
  });
}

Var add(const Var& a, const Var& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  Tape& t = tape_of(a);
  return t.push(a.value() + b.value(), {a, b}, [&t, a, b](const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
  Tape& t = tape_of(a);
  return t.push(a.value() - b.value(), {a, b}, [&t, a, b](const Matrix& g) {
    t.accumulate(a, g);
    if (b.requires_grad()) t.accumulate(b, (-g).eval());
  });
}

Var hadamard(const Var& a, const Var& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard");
  Tape& t = tape_of(a);
  return t.push(a.value().cwiseProduct(b.value()), {a, b}, [&t, a, b](const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, g.cwiseProduct(b.value()));
    if (b.requires_grad()) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var scale(const Var& a, double s) {
  Tape& t = tape_of(a);
  return t.push(a.value() * s, {a}, [&t, a, s](const Matrix& g) { t.accumulate(a, g * s); });
}

Var add_row(const Var& a, const Var& row) {
  check(row.rows() == 1 && row.cols() == a.cols(), "add_row");
  Tape& t = tape_of(a);
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return t.push(std::move(out), {a, row}, [&t, a, row](const Matrix& g) {
    t.accumulate(a, g);
    if (row.requires_grad()) t.accumulate(row, g.colwise().sum());
  });
}

Var scale_rows(const Var& a, const Var& w) {
  check(w.rows() == a.rows() && w.cols() == 1, "scale_rows");
  Tape& t = tape_of(a);
  Matrix out = w.value().col(0).asDiagonal() * a.value();
  return t.push(std::move(out), {a, w}, [&t, a, w](const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, (w.value().col(0).asDiagonal() * g).eval());
    if (w.requires_grad()) t.accumulate(w, g.cwiseProduct(a.value()).rowwise().sum());
  });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  Var y = matmul(x, w);
  return b.valid() ? add_row(y, b) : y;
}

Var sum_all(const Var& a) {
  Tape& t = tape_of(a);
  return t.push(Matrix::Constant(1, 1, a.value().sum()), {a}, [&t, a](const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var mean_all(const Var& a) { return scale(sum_all(a), 1.0 / double(a.value().size())); }

Var add_n(std::span<const Var> xs) {
  check(!xs.empty(), "add_n of nothing");
  Tape& t = tape_of(xs[0]);
  Matrix out = xs[0].value();
  for (size_t i = 1; i < xs.size(); ++i) {
    check(xs[i].rows() == out.rows() && xs[i].cols() == out.cols(), "add_n");
    out += xs[i].value();
  }
  std::vector<Var> keep(xs.begin(), xs.end());
  return t.push(std::move(out), xs, [&t, keep](const Matrix& g) {
    for (const Var& x : keep) t.accumulate(x, g);
  });
}

Var concat_rows(std::span<const Var> xs) {
  check(!xs.empty(), "concat_rows of nothing");
  Tape& t = tape_of(xs[0]);
  Index rows = 0;
  const Index cols = xs[0].cols();
  for (const Var& x : xs) {
    check(x.cols() == cols, "concat_rows");
    rows += x.rows();
  }
  Matrix out(rows, cols);
  Index r = 0;
  for (const Var& x : xs) {
    out.middleRows(r, x.rows()) = x.value();
    r += x.rows();
  }
  std::vector<Var> keep(xs.begin(), xs.end());
  return t.push(std::move(out), xs, [&t, keep](const Matrix& g) {
    Index r0 = 0;
    for (const Var& x : keep) {
      if (x.requires_grad()) t.accumulate(x, g.middleRows(r0, x.rows()));
      r0 += x.rows();
    }
  });
}

Var concat_cols(std::span<const Var> xs) {
  check(!xs.empty(), "concat_cols of nothing");
  Tape& t = tape_of(xs[0]);
  Index cols = 0;
  const Index rows = xs[0].rows();
  for (const Var& x : xs) {
    check(x.rows() == rows, "concat_cols");
    cols += x.cols();
  }
  Matrix out(rows, cols);
  Index c = 0;
  for (const Var& x : xs) {
    out.middleCols(c, x.cols()) = x.value();
    c += x.cols();
  }
  std::vector<Var> keep(xs.begin(), xs.end());
  return t.push(std::move(out), xs, [&t, keep](const Matrix& g) {
    Index c0 = 0;
    for (const Var& x : keep) {
      if (x.requires_grad()) t.accumulate(x, g.middleCols(c0, x.cols()));
      c0 += x.cols();
    }
  });
}

Var slice_rows(const Var& a, Index start, Index count) {
  check(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows");
  Tape& t = tape_of(a);
  return t.push(a.value().middleRows(start, count), {a}, [&t, a, start, count](const Matrix& g) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    full.middleRows(start, count) = g;
    t.accumulate(a, full);
  });
}

Var slice_cols(const Var& a, Index start, Index count) {
  check(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols");
  Tape& t = tape_of(a);
  return t.push(a.value().middleCols(start, count), {a}, [&t, a, start, count](const Matrix& g) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    full.middleCols(start, count) = g;
    t.accumulate(a, full);
  });
}

Var gather_rows(const Var& a, std::span<const Index> rows) {
  Tape& t = tape_of(a);
  Matrix out(Index(rows.size()), a.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    check(rows[i] >= 0 && rows[i] < a.rows(), "gather_rows index");
    out.row(Index(i)) = a.value().row(rows[i]);
  }
  std::vector<Index> idx(rows.begin(), rows.end());
  return t.push(std::move(out), {a}, [&t, a, idx](const Matrix& g) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    for (size_t i = 0; i < idx.size(); ++i) full.row(idx[i]) += g.row(Index(i));
    t.accumulate(a, full);
  });
}

Var element(const Var& a, Index r, Index c) {
  check(r >= 0 && r < a.rows() && c >= 0 && c < a.cols(), "element");
  Tape& t = tape_of(a);
  return t.push(Matrix::Constant(1, 1, a.value()(r, c)), {a}, [&t, a, r, c](const Matrix& g) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    full(r, c) = g(0, 0);
    t.accumulate(a, full);
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Index n = x.rows(), d = x.cols();
  check(gamma.rows() == 1 && gamma.cols() == d && beta.rows() == 1 && beta.cols() == d, "layer_norm");
  Tape& t = tape_of(x);
  Matrix xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Index i = 0; i < n; ++i) {
    const double mu = x.value().row(i).mean();
    const double var = (x.value().row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.value().row(i).array() - mu) * inv_std(i);
  }
  Matrix out = xhat.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return t.push(std::move(out), {x, gamma, beta}, [&t, x, gamma, beta, xhat, inv_std](const Matrix& g) {
    if (gamma.requires_grad()) t.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
    if (beta.requires_grad()) t.accumulate(beta, g.colwise().sum());
    if (x.requires_grad()) {
      const Index rows = xhat.rows();
      Matrix dxhat = g.array().rowwise() * gamma.value().row(0).array();
      Matrix dx(rows, xhat.cols());
      for (Index i = 0; i < rows; ++i) {
        const double m1 = dxhat.row(i).mean();
        const double m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).mean();
        dx.row(i) = inv_std(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
      }
      t.accumulate(x, dx);
    }
  });
}

Var quick_gelu(const Var& x) {
  Tape& t = tape_of(x);
  Matrix sig = (1.0 / (1.0 + (-1.702 * x.value().array()).exp())).matrix();
  Matrix out = x.value().cwiseProduct(sig);
  return t.push(std::move(out), {x}, [&t, x, sig](const Matrix& g) {
    Matrix d = sig.array() + 1.702 * x.value().array() * sig.array() * (1.0 - sig.array());
    t.accumulate(x, g.cwiseProduct(d));
  });
}

Var softmax_rows(const Var& x, bool causal) {
  Tape& t = tape_of(x);
  const Index n = x.rows(), m = x.cols();
  Matrix y = Matrix::Zero(n, m);
  for (Index i = 0; i < n; ++i) {
    const Index valid = causal ? std::min<Index>(i + 1, m) : m;
    const double mx = x.value().row(i).head(valid).maxCoeff();
    double s = 0;
    for (Index j = 0; j < valid; ++j) {
      y(i, j) = std::exp(x.value()(i, j) - mx);
      s += y(i, j);
    }
    y.row(i).head(valid) /= s;
  }
  return t.push(y, {x}, [&t, x, y](const Matrix& g) {
    Matrix dx = y.cwiseProduct(g);
    const Eigen::VectorXd dots = dx.rowwise().sum();
    dx -= y.cwiseProduct((dots * Eigen::RowVectorXd::Ones(y.cols())));
    t.accumulate(x, dx);
  });
}

Var softmax_rows_masked(const Var& x, const Matrix& allowed) {
  Tape& t = tape_of(x);
  const Index n = x.rows(), m = x.cols();
  if (allowed.rows() != n || allowed.cols() != m) throw std::invalid_argument("softmax mask shape mismatch");
  Matrix y = Matrix::Zero(n, m);
  for (Index i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < m; ++j)
      if (allowed(i, j) != 0) mx = std::max(mx, x.value()(i, j));
    if (!std::isfinite(mx)) throw std::invalid_argument("softmax row with no allowed entries");
    double s = 0;
    for (Index j = 0; j < m; ++j) {
      if (allowed(i, j) == 0) continue;
      y(i, j) = std::exp(x.value()(i, j) - mx);
      s += y(i, j);
    }
    y.row(i) /= s;
  }
  return t.push(y, {x}, [&t, x, y](const Matrix& g) {
    Matrix dx = y.cwiseProduct(g);
    const Eigen::VectorXd dots = dx.rowwise().sum();
    dx -= y.cwiseProduct((dots * Eigen::RowVectorXd::Ones(y.cols())));
    t.accumulate(x, dx);
  });
}

Var logsumexp_rows(const Var& x) {
  Tape& t = tape_of(x);
  const Index n = x.rows();
  Matrix out(n, 1);
  Matrix soft(n, x.cols());
  for (Index i = 0; i < n; ++i) {
    const double mx = x.value().row(i).maxCoeff();
    const Eigen::RowVectorXd e = (x.value().row(i).array() - mx).exp();
    const double s = e.sum();
    out(i, 0) = mx + std::log(s);
    soft.row(i) = e / s;
  }
  return t.push(std::move(out), {x}, [&t, x, soft](const Matrix& g) {
    t.accumulate(x, (g.col(0).asDiagonal() * soft).eval());
  });
}

Var l2_normalize_rows(const Var& x, double eps) {
  Tape& t = tape_of(x);
  const Index n = x.rows();
  Eigen::VectorXd norms(n);
  Matrix y(n, x.cols());
  for (Index i = 0; i < n; ++i) {
    norms(i) = std::max(x.value().row(i).norm(), eps);
    y.row(i) = x.value().row(i) / norms(i);
  }
  return t.push(y, {x}, [&t, x, y, norms](const Matrix& g) {
    Matrix dx(y.rows(), y.cols());
    for (Index i = 0; i < y.rows(); ++i) {
      const double dot = y.row(i).dot(g.row(i));
      dx.row(i) = (g.row(i) - dot * y.row(i)) / norms(i);
    }
    t.accumulate(x, dx);
  });
}

}  // namespace sapl::ag
