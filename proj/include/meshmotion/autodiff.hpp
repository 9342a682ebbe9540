// Reverse-mode automatic differentiation over Eigen matrices.
//
// A Tape owns nodes in creation order (a topological order by construction);
// Var is a cheap handle. Model forwards are written once as templates over
// the matrix type: ad::Var runs on a tape, plain Matrix overloads of the same
// ops give an allocation-light inference path with identical arithmetic.
//
// Lifetime: ops that capture external data (sparse operators, target clouds)
// hold raw pointers; callers keep those alive until backward() has run.
#pragma once

#include "meshmotion/common.hpp"
#include "meshmotion/spectral.hpp"

#include <functional>
#include <vector>

namespace meshmotion::nn {
struct Tensor;
}

namespace meshmotion::ad {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  const Matrix& value() const;
  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& grad)>;

  Var constant(Matrix value);          // no gradient tracking
  Var leaf(Matrix value);              // differentiable input
  Var param(nn::Tensor& tensor);       // leaf; backward() adds into tensor.grad
  Var make(Matrix value, const std::vector<Var>& parents, BackwardFn fn);

  void backward(Var root);             // root must be 1 x 1
  const Matrix& value(int id) const { return nodes_[id].value; }
  const Matrix& grad(Var v) const;     // valid after backward()
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  void accumulate(Var v, const Matrix& g);
  void accumulate_block(Var v, Eigen::Index r0, Eigen::Index c0, const Matrix& g);

  std::size_t size() const { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool has_grad = false;
    bool requires_grad = false;
    nn::Tensor* bound = nullptr;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// ---- core ops (Var) -------------------------------------------------------
Var matmul(Var a, Var b);
Var affine(Var x, Var w, Var b);             // x * w + row-broadcast b (1 x C)
// Row-stable variant: the result of row i is bit-identical wherever that row
// sits in x. Used where the contract is exact permutation equivariance
// (shared per-vertex / per-point perceptrons). Slower than affine().
Var affine_stable(Var x, Var w, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var cmul(Var a, Var b);
Var scale(Var a, double s);
Var add_const(Var a, const Matrix& c);
Var mul_const(Var a, const Matrix& c);       // elementwise
Var leaky_relu(Var a, double slope);
Var tanh_op(Var a);
Var sigmoid_op(Var a);
Var softplus(Var a);
Var square(Var a);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(Var a, Eigen::Index c0, Eigen::Index n);
Var slice_rows(Var a, Eigen::Index r0, Eigen::Index n);
Var broadcast_row(Var row, Eigen::Index n);  // 1 x C -> n x C
Var rowwise_max(Var a);                      // n x C -> 1 x C (argmax backward)
Var sum_all(Var a);                          // -> 1 x 1
Var mean_all(Var a);
Var row_norms(Var a);                        // n x C -> n x 1
Var rows_dot(Var a, Var b);                  // n x C pairwise -> n x 1
Var gather_rows(Var a, const std::vector<int>& idx);
Var reverse_rows(Var a);
Var sparse_mul(const SparseMatrix* s, Var a);
Var diffuse_op(const SpectralOps* ops, Var field, Var times);  // times 1 x C, >= 0

// ---- identical ops on plain matrices (inference path) ---------------------
inline Matrix matmul(const Matrix& a, const Matrix& b) { return a * b; }
inline Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
  return (x * w).rowwise() + b.row(0);
}
inline Matrix affine_stable(const Matrix& x, const Matrix& w, const Matrix& b) {
  return x.lazyProduct(w).rowwise() + b.row(0);
}
inline Matrix add(const Matrix& a, const Matrix& b) { return a + b; }
inline Matrix sub(const Matrix& a, const Matrix& b) { return a - b; }
inline Matrix cmul(const Matrix& a, const Matrix& b) { return a.cwiseProduct(b); }
inline Matrix scale(const Matrix& a, double s) { return a * s; }
inline Matrix add_const(const Matrix& a, const Matrix& c) { return a + c; }
inline Matrix mul_const(const Matrix& a, const Matrix& c) { return a.cwiseProduct(c); }
inline Matrix leaky_relu(const Matrix& a, double slope) {
  return a.cwiseMax(0.0) + slope * a.cwiseMin(0.0);
}
inline Matrix tanh_op(const Matrix& a) { return a.array().tanh().matrix(); }
inline Matrix sigmoid_op(const Matrix& a) {
  return (1.0 / (1.0 + (-a.array()).exp())).matrix();
}
inline Matrix softplus(const Matrix& a) {
  return (a.array() > 30.0)
      .select(a.array(), (1.0 + a.array().exp()).log())
      .matrix();
}
inline Matrix square(const Matrix& a) { return a.cwiseProduct(a); }
Matrix concat_cols(const std::vector<Matrix>& parts);
Matrix concat_rows(const std::vector<Matrix>& parts);
inline Matrix slice_cols(const Matrix& a, Eigen::Index c0, Eigen::Index n) {
  return a.middleCols(c0, n);
}
inline Matrix slice_rows(const Matrix& a, Eigen::Index r0, Eigen::Index n) {
  return a.middleRows(r0, n);
}
inline Matrix broadcast_row(const Matrix& row, Eigen::Index n) {
  return row.row(0).replicate(n, 1);
}
inline Matrix rowwise_max(const Matrix& a) { return a.colwise().maxCoeff(); }
inline Matrix sum_all(const Matrix& a) {
  return Matrix::Constant(1, 1, a.sum());
}
inline Matrix mean_all(const Matrix& a) {
  return Matrix::Constant(1, 1, a.mean());
}
inline Matrix row_norms(const Matrix& a) { return a.rowwise().norm(); }
inline Matrix rows_dot(const Matrix& a, const Matrix& b) {
  return a.cwiseProduct(b).rowwise().sum();
}
Matrix gather_rows(const Matrix& a, const std::vector<int>& idx);
inline Matrix reverse_rows(const Matrix& a) { return a.colwise().reverse(); }
inline Matrix sparse_mul(const SparseMatrix* s, const Matrix& a) { return *s * a; }
inline Matrix diffuse_op(const SpectralOps* ops, const Matrix& field,
                         const Matrix& times) {
  return diffuse(*ops, field, times.row(0).transpose());
}

// Central finite-difference check helper for tests: perturbs `value` of a
// leaf entry and re-runs `forward`.
double finite_difference(const std::function<double(const Matrix&)>& forward,
                         const Matrix& at, Eigen::Index i, Eigen::Index j,
                         double step);

}  // namespace meshmotion::ad
