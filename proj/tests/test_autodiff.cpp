#include "meshmotion/autodiff.hpp"

#include "meshmotion/mesh.hpp"
#include "meshmotion/spectral.hpp"

#include <doctest.h>

#include <functional>

using namespace meshmotion;
using ad::Tape;
using ad::Var;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = g(rng);
  return m;
}

// Checks d(sum of weighted output)/d(input) against central differences for
// every entry of the input.
void check_gradient(const std::function<Var(Tape&, Var)>& build, const Matrix& at,
                    double tol = 1e-7, double step = 1e-5) {
  Matrix weights;
  auto scalar = [&](Tape& tape, Var x) {
    Var y = build(tape, x);
    if (weights.size() == 0) weights = random_matrix(y.rows(), y.cols(), 7777);
    return ad::sum_all(ad::mul_const(y, weights));
  };
  Tape tape;
  Var x = tape.leaf(at);
  Var loss = scalar(tape, x);
  tape.backward(loss);
  const Matrix analytic = tape.grad(x);
  for (Eigen::Index i = 0; i < at.rows(); ++i)
    for (Eigen::Index j = 0; j < at.cols(); ++j) {
      const double fd = ad::finite_difference(
          [&](const Matrix& m) {
            Tape t2;
            return scalar(t2, t2.leaf(m)).value()(0, 0);
          },
          at, i, j, step);
      CHECK(analytic(i, j) == doctest::Approx(fd).epsilon(tol).scale(1.0));
    }
}

}  // namespace

TEST_CASE("matmul gradients") {
  const Matrix b = random_matrix(4, 5, 2);
  check_gradient(
      [&](Tape& t, Var x) { return ad::matmul(x, t.constant(b)); },
      random_matrix(3, 4, 1));
  const Matrix a = random_matrix(3, 4, 3);
  check_gradient(
      [&](Tape& t, Var x) { return ad::matmul(t.constant(a), x); },
      random_matrix(4, 5, 4));
}

TEST_CASE("affine gradients (input, weight, bias)") {
  const Matrix x0 = random_matrix(5, 3, 10);
  const Matrix w0 = random_matrix(3, 4, 11);
  const Matrix b0 = random_matrix(1, 4, 12);
  check_gradient(
      [&](Tape& t, Var x) { return ad::affine(x, t.constant(w0), t.constant(b0)); },
      x0);
  check_gradient(
      [&](Tape& t, Var w) { return ad::affine(t.constant(x0), w, t.constant(b0)); },
      w0);
  check_gradient(
      [&](Tape& t, Var b) { return ad::affine(t.constant(x0), t.constant(w0), b); },
      b0);
}

TEST_CASE("elementwise op gradients") {
  const Matrix x0 = random_matrix(4, 3, 20);
  check_gradient([](Tape&, Var x) { return ad::tanh_op(x); }, x0);
  check_gradient([](Tape&, Var x) { return ad::sigmoid_op(x); }, x0);
  check_gradient([](Tape&, Var x) { return ad::softplus(x); }, x0);
  check_gradient([](Tape&, Var x) { return ad::square(x); }, x0);
  check_gradient([](Tape&, Var x) { return ad::leaky_relu(x, 0.01); }, x0);
  const Matrix y0 = random_matrix(4, 3, 21);
  check_gradient([&](Tape& t, Var x) { return ad::cmul(x, t.constant(y0)); }, x0);
  check_gradient([](Tape&, Var x) { return ad::scale(x, -2.5); }, x0);
}

TEST_CASE("shape op gradients") {
  const Matrix x0 = random_matrix(5, 4, 30);
  check_gradient([](Tape&, Var x) { return ad::slice_cols(x, 1, 2); }, x0);
  check_gradient([](Tape&, Var x) { return ad::slice_rows(x, 2, 3); }, x0);
  check_gradient([](Tape&, Var x) { return ad::reverse_rows(x); }, x0);
  check_gradient(
      [&](Tape& t, Var x) {
        return ad::concat_cols({x, t.constant(random_matrix(5, 2, 31))});
      },
      x0);
  check_gradient(
      [&](Tape& t, Var x) {
        return ad::concat_rows({t.constant(random_matrix(2, 4, 32)), x});
      },
      x0);
  check_gradient([](Tape&, Var x) { return ad::broadcast_row(x, 6); },
                 random_matrix(1, 4, 33));
  check_gradient(
      [](Tape&, Var x) { return ad::gather_rows(x, {3, 0, 0, 2, 4}); }, x0);
}

TEST_CASE("reduction op gradients") {
  const Matrix x0 = random_matrix(6, 3, 40);
  check_gradient([](Tape&, Var x) { return ad::sum_all(x); }, x0);
  check_gradient([](Tape&, Var x) { return ad::mean_all(x); }, x0);
  check_gradient([](Tape&, Var x) { return ad::row_norms(x); }, x0);
  check_gradient([](Tape&, Var x) { return ad::rowwise_max(x); }, x0);
  const Matrix y0 = random_matrix(6, 3, 41);
  check_gradient([&](Tape& t, Var x) { return ad::rows_dot(x, t.constant(y0)); },
                 x0);
}

TEST_CASE("sparse_mul and diffuse gradients") {
  const TriMesh mesh = make_icosphere(1);
  const SpectralOps ops = build_operators(mesh, 12);
  const Matrix f0 = random_matrix(mesh.vertex_count(), 3, 50);
  check_gradient([&](Tape&, Var x) { return ad::sparse_mul(&ops.grad_x, x); }, f0);
  const Matrix times0 = random_matrix(1, 3, 51).cwiseAbs() * 0.05;
  check_gradient(
      [&](Tape& t, Var x) { return ad::diffuse_op(&ops, x, t.constant(times0)); },
      f0);
  check_gradient(
      [&](Tape& t, Var times) {
        return ad::diffuse_op(&ops, t.constant(f0), times);
      },
      times0, 1e-6);
}

TEST_CASE("gradients accumulate over reused nodes") {
  const Matrix x0 = random_matrix(3, 3, 60);
  check_gradient([](Tape&, Var x) { return ad::add(ad::square(x), x); }, x0);
  check_gradient([](Tape&, Var x) { return ad::cmul(x, x); }, x0);
}

TEST_CASE("eval overloads match tape values") {
  const Matrix x = random_matrix(4, 4, 70);
  Tape tape;
  Var vx = tape.leaf(x);
  CHECK(ad::tanh_op(x) == ad::tanh_op(vx).value());
  CHECK(ad::softplus(x) == ad::softplus(vx).value());
  CHECK(ad::rowwise_max(x) == ad::rowwise_max(vx).value());
  CHECK(ad::leaky_relu(x, 0.01) == ad::leaky_relu(vx, 0.01).value());
}

TEST_CASE("backward requires a scalar root") {
  Tape tape;
  Var x = tape.leaf(random_matrix(2, 2, 80));
  CHECK_THROWS_AS(tape.backward(x), ValidationError);
}

TEST_CASE("affine_stable is bit-stable under row permutation") {
  for (auto [n, k, c] : {std::array<int, 3>{30, 15, 8},
                         {642, 67, 64},
                         {1001, 131, 17}}) {
    const Matrix x = random_matrix(n, k, 90 + n);
    const Matrix w = random_matrix(k, c, 91 + n);
    const Matrix b = random_matrix(1, c, 92 + n);
    const Matrix out = ad::affine_stable(x, w, b);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(93);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix xp(n, k);
    for (int i = 0; i < n; ++i) xp.row(i) = x.row(perm[i]);
    const Matrix outp = ad::affine_stable(xp, w, b);
    int mismatched = 0;
    for (int i = 0; i < n; ++i)
      if (outp.row(i) != out.row(perm[i])) ++mismatched;
    CHECK(mismatched == 0);

    // gradient check of the stable variant
    check_gradient(
        [&](Tape& t, Var v) {
          return ad::affine_stable(v, t.constant(w), t.constant(b));
        },
        random_matrix(7, k, 94 + n));
  }
}
