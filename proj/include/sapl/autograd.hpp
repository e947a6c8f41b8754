#pragma once

// Minimal tape-based reverse-mode differentiation over dense row-major
// double matrices. One Tape per forward pass; Parameters outlive tapes and
// receive accumulated gradients on Tape::backward.

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace sapl::ag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Matrix v, bool t = true);
  void zero_grad();
};

class Tape;

class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  const Matrix& grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, int id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix v);
  // The referenced matrix must outlive the tape.
  Var constant_ref(const Matrix& v);
  // Trainable parameters become gradient leaves; frozen ones are constants.
  Var param(Parameter& p);

  Var push(Matrix v, std::initializer_list<Var> parents, Backward fn);
  Var push(Matrix v, std::span<const Var> parents, Backward fn);

  void accumulate(const Var& v, const Matrix& g);
  template <typename Expr>
  void accumulate(const Var& v, const Eigen::MatrixBase<Expr>& g) {
    if (!v.requires_grad()) return;
    Node& n = nodes_[v.id_];
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  // Reverse sweep from a 1x1 root. Parameter leaves add into Parameter::grad.
  void backward(const Var& root, double seed = 1.0);

  const Matrix& value(int id) const;
  const Matrix& grad(int id) const;
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix own;
    const Matrix* ext = nullptr;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };
  std::vector<Node> nodes_;
  static const Matrix kEmpty;
};

// Linear algebra
Var matmul(const Var& a, const Var& b);     // a b
Var matmul_nt(const Var& a, const Var& b);  // a b^T
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_row(const Var& a, const Var& row);     // broadcast 1xC over rows
Var scale_rows(const Var& a, const Var& w);    // row r scaled by w(r,0)
Var linear(const Var& x, const Var& w, const Var& b);  // x w + b (b may be invalid)
Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var add_n(std::span<const Var> xs);

// Shape
Var concat_rows(std::span<const Var> xs);
Var concat_cols(std::span<const Var> xs);
Var slice_rows(const Var& a, Index start, Index count);
Var slice_cols(const Var& a, Index start, Index count);
Var gather_rows(const Var& a, std::span<const Index> rows);
Var element(const Var& a, Index r, Index c);

// Nonlinearities and normalizers
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var quick_gelu(const Var& x);
Var softmax_rows(const Var& x, bool causal = false);
// Entries where `allowed` is 0 get probability 0.
Var softmax_rows_masked(const Var& x, const Matrix& allowed);
Var logsumexp_rows(const Var& x);
Var l2_normalize_rows(const Var& x, double eps = 1e-12);

}  // namespace sapl::ag
