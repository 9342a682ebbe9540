#include "meshmotion/autodiff.hpp"

#include "meshmotion/nn.hpp"

#include <cmath>

namespace meshmotion::ad {

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Matrix value) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = false;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::leaf(Matrix value) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(nn::Tensor& tensor) {
  Node node;
  node.value = tensor.value;
  node.requires_grad = true;
  node.bound = &tensor;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::make(Matrix value, const std::vector<Var>& parents, BackwardFn fn) {
  Node node;
  node.value = std::move(value);
  for (const Var& p : parents)
    if (p.tape() && nodes_[p.id()].requires_grad) node.requires_grad = true;
  if (node.requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& node = nodes_[v.id()];
  if (!node.requires_grad) return;
  if (!node.has_grad) {
    node.grad = g;
    node.has_grad = true;
  } else {
    node.grad += g;
  }
}

void Tape::accumulate_block(Var v, Eigen::Index r0, Eigen::Index c0,
                            const Matrix& g) {
  Node& node = nodes_[v.id()];
  if (!node.requires_grad) return;
  if (!node.has_grad) {
    node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
    node.has_grad = true;
  }
  node.grad.block(r0, c0, g.rows(), g.cols()) += g;
}

void Tape::backward(Var root) {
  if (root.value().size() != 1)
    throw ValidationError("backward() expects a scalar (1x1) root");
  accumulate(root, Matrix::Constant(1, 1, 1.0));
  for (int id = root.id(); id >= 0; --id) {
    Node& node = nodes_[id];
    if (!node.has_grad || !node.requires_grad) continue;
    if (node.backward) node.backward(*this, node.grad);
  }
  for (auto& node : nodes_)
    if (node.bound && node.has_grad) node.bound->grad += node.grad;
}

const Matrix& Tape::grad(Var v) const {
  const Node& node = nodes_[v.id()];
  if (!node.has_grad)
    throw ValidationError("gradient not populated; call backward() first");
  return node.grad;
}

void Tape::clear() { nodes_.clear(); }

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = *a.tape();
  return t.make(a.value() * b.value(), {a, b},
                [a, b](Tape& t, const Matrix& g) {
                  t.accumulate(a, g * b.value().transpose());
                  t.accumulate(b, a.value().transpose() * g);
                });
}

Var affine(Var x, Var w, Var b) {
  Tape& t = *x.tape();
  Matrix v = x.value() * w.value();
  v.rowwise() += b.value().row(0);
  return t.make(std::move(v), {x, w, b}, [x, w, b](Tape& t, const Matrix& g) {
    t.accumulate(x, g * w.value().transpose());
    t.accumulate(w, x.value().transpose() * g);
    t.accumulate(b, g.colwise().sum());
  });
}

Var affine_stable(Var x, Var w, Var b) {
  Tape& t = *x.tape();
  Matrix v = x.value().lazyProduct(w.value());
  v.rowwise() += b.value().row(0);
  return t.make(std::move(v), {x, w, b}, [x, w, b](Tape& t, const Matrix& g) {
    // Gradients do not need row stability; use the fast products.
    t.accumulate(x, g * w.value().transpose());
    t.accumulate(w, x.value().transpose() * g);
    t.accumulate(b, g.colwise().sum());
  });
}

Var add(Var a, Var b) {
  Tape& t = *a.tape();
  return t.make(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = *a.tape();
  return t.make(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var cmul(Var a, Var b) {
  Tape& t = *a.tape();
  return t.make(a.value().cwiseProduct(b.value()), {a, b},
                [a, b](Tape& t, const Matrix& g) {
                  t.accumulate(a, g.cwiseProduct(b.value()));
                  t.accumulate(b, g.cwiseProduct(a.value()));
                });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape();
  return t.make(a.value() * s, {a},
                [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

Var add_const(Var a, const Matrix& c) {
  Tape& t = *a.tape();
  return t.make(a.value() + c, {a},
                [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

Var mul_const(Var a, const Matrix& c) {
  Tape& t = *a.tape();
  Matrix cc = c;
  return t.make(a.value().cwiseProduct(cc), {a},
                [a, cc](Tape& t, const Matrix& g) {
                  t.accumulate(a, g.cwiseProduct(cc));
                });
}

Var leaky_relu(Var a, double slope) {
  Tape& t = *a.tape();
  Matrix v = a.value().cwiseMax(0.0) + slope * a.value().cwiseMin(0.0);
  return t.make(std::move(v), {a}, [a, slope](Tape& t, const Matrix& g) {
    const Matrix dx = a.value().unaryExpr(
        [slope](double x) { return x > 0.0 ? 1.0 : slope; });
    t.accumulate(a, g.cwiseProduct(dx));
  });
}

Var tanh_op(Var a) {
  Tape& t = *a.tape();
  Matrix v = a.value().array().tanh().matrix();
  const Matrix y = v;
  return t.make(std::move(v), {a}, [a, y](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var sigmoid_op(Var a) {
  Tape& t = *a.tape();
  Matrix v = sigmoid_op(a.value());
  const Matrix y = v;
  return t.make(std::move(v), {a}, [a, y](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
  });
}

Var softplus(Var a) {
  Tape& t = *a.tape();
  return t.make(softplus(a.value()), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(sigmoid_op(a.value())));
  });
}

Var square(Var a) {
  Tape& t = *a.tape();
  return t.make(a.value().cwiseProduct(a.value()), {a},
                [a](Tape& t, const Matrix& g) {
                  t.accumulate(a, 2.0 * g.cwiseProduct(a.value()));
                });
}

Var concat_cols(const std::vector<Var>& parts) {
  Tape& t = *parts.front().tape();
  Eigen::Index cols = 0;
  for (const Var& p : parts) cols += p.cols();
  Matrix v(parts.front().rows(), cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    v.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Var> ps = parts;
  return t.make(std::move(v), ps, [ps](Tape& t, const Matrix& g) {
    Eigen::Index c = 0;
    for (const Var& p : ps) {
      t.accumulate(p, g.middleCols(c, p.cols()));
      c += p.cols();
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  Tape& t = *parts.front().tape();
  Eigen::Index rows = 0;
  for (const Var& p : parts) rows += p.rows();
  Matrix v(rows, parts.front().cols());
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    v.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Var> ps = parts;
  return t.make(std::move(v), ps, [ps](Tape& t, const Matrix& g) {
    Eigen::Index r = 0;
    for (const Var& p : ps) {
      t.accumulate(p, g.middleRows(r, p.rows()));
      r += p.rows();
    }
  });
}

Var slice_cols(Var a, Eigen::Index c0, Eigen::Index n) {
  Tape& t = *a.tape();
  return t.make(a.value().middleCols(c0, n), {a},
                [a, c0](Tape& t, const Matrix& g) {
                  t.accumulate_block(a, 0, c0, g);
                });
}

Var slice_rows(Var a, Eigen::Index r0, Eigen::Index n) {
  Tape& t = *a.tape();
  return t.make(a.value().middleRows(r0, n), {a},
                [a, r0](Tape& t, const Matrix& g) {
                  t.accumulate_block(a, r0, 0, g);
                });
}

Var broadcast_row(Var row, Eigen::Index n) {
  Tape& t = *row.tape();
  return t.make(row.value().row(0).replicate(n, 1), {row},
                [row](Tape& t, const Matrix& g) {
                  t.accumulate(row, g.colwise().sum());
                });
}

Var rowwise_max(Var a) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  Matrix v(1, x.cols());
  std::vector<int> arg(x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    Eigen::Index idx = 0;
    v(0, c) = x.col(c).maxCoeff(&idx);
    arg[c] = static_cast<int>(idx);
  }
  return t.make(std::move(v), {a}, [a, arg](Tape& t, const Matrix& g) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    for (Eigen::Index c = 0; c < ga.cols(); ++c) ga(arg[c], c) = g(0, c);
    t.accumulate(a, ga);
  });
}

Var sum_all(Var a) {
  Tape& t = *a.tape();
  return t.make(Matrix::Constant(1, 1, a.value().sum()), {a},
                [a](Tape& t, const Matrix& g) {
                  t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
                });
}

Var mean_all(Var a) { return scale(sum_all(a), 1.0 / a.value().size()); }

Var row_norms(Var a) {
  Tape& t = *a.tape();
  Matrix v = a.value().rowwise().norm();
  const Matrix y = v;
  return t.make(std::move(v), {a}, [a, y](Tape& t, const Matrix& g) {
    Matrix ga(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < ga.rows(); ++i) {
      const double n = y(i, 0);
      if (n < 1e-300)
        ga.row(i).setZero();
      else
        ga.row(i) = (g(i, 0) / n) * a.value().row(i);
    }
    t.accumulate(a, ga);
  });
}

Var rows_dot(Var a, Var b) {
  Tape& t = *a.tape();
  Matrix v = a.value().cwiseProduct(b.value()).rowwise().sum();
  return t.make(std::move(v), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, (b.value().array().colwise() * g.col(0).array()).matrix());
    t.accumulate(b, (a.value().array().colwise() * g.col(0).array()).matrix());
  });
}

Var gather_rows(Var a, const std::vector<int>& idx) {
  Tape& t = *a.tape();
  Matrix v(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (size_t i = 0; i < idx.size(); ++i) v.row(i) = a.value().row(idx[i]);
  return t.make(std::move(v), {a}, [a, idx](Tape& t, const Matrix& g) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    for (size_t i = 0; i < idx.size(); ++i) ga.row(idx[i]) += g.row(i);
    t.accumulate(a, ga);
  });
}

Var reverse_rows(Var a) {
  Tape& t = *a.tape();
  return t.make(a.value().colwise().reverse(), {a},
                [a](Tape& t, const Matrix& g) {
                  t.accumulate(a, g.colwise().reverse());
                });
}

Var sparse_mul(const SparseMatrix* s, Var a) {
  Tape& t = *a.tape();
  return t.make(*s * a.value(), {a}, [s, a](Tape& t, const Matrix& g) {
    t.accumulate(a, s->transpose() * g);
  });
}

Var diffuse_op(const SpectralOps* ops, Var field, Var times) {
  Tape& t = *field.tape();
  const Matrix& x = field.value();
  const Vector tv = times.value().row(0).transpose();
  if ((tv.array() < 0.0).any())
    throw ValidationError("diffuse: negative diffusion time");
  const Matrix coeff = ops->eigenvectors.transpose() * ops->mass.asDiagonal() * x;
  Matrix damp(ops->k, x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c)
    damp.col(c) = (-ops->eigenvalues.array() * tv[c]).exp();
  Matrix v = ops->eigenvectors * damp.cwiseProduct(coeff);
  return t.make(std::move(v), {field, times},
                [ops, field, times, coeff, damp](Tape& t, const Matrix& g) {
                  const Matrix p = ops->eigenvectors.transpose() * g;  // k x C
                  // d/dfield: M Phi (E . (Phi^T g))
                  t.accumulate(field, ops->mass.asDiagonal() *
                                          (ops->eigenvectors * damp.cwiseProduct(p)));
                  // d/dt_c = sum_j p_jc * (-lambda_j) * E_jc * coeff_jc
                  Matrix gt(1, g.cols());
                  for (Eigen::Index c = 0; c < g.cols(); ++c)
                    gt(0, c) = (p.col(c).array() * (-ops->eigenvalues.array()) *
                                damp.col(c).array() * coeff.col(c).array())
                                   .sum();
                  t.accumulate(times, gt);
                });
}

Matrix concat_cols(const std::vector<Matrix>& parts) {
  Eigen::Index cols = 0;
  for (const auto& p : parts) cols += p.cols();
  Matrix v(parts.front().rows(), cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    v.middleCols(c, p.cols()) = p;
    c += p.cols();
  }
  return v;
}

Matrix concat_rows(const std::vector<Matrix>& parts) {
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  Matrix v(rows, parts.front().cols());
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    v.middleRows(r, p.rows()) = p;
    r += p.rows();
  }
  return v;
}

Matrix gather_rows(const Matrix& a, const std::vector<int>& idx) {
  Matrix v(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (size_t i = 0; i < idx.size(); ++i) v.row(i) = a.row(idx[i]);
  return v;
}

double finite_difference(const std::function<double(const Matrix&)>& forward,
                         const Matrix& at, Eigen::Index i, Eigen::Index j,
                         double step) {
  Matrix lo = at, hi = at;
  lo(i, j) -= step;
  hi(i, j) += step;
  return (forward(hi) - forward(lo)) / (2.0 * step);
}

}  // namespace meshmotion::ad
