#include "meshmotion/spectral.hpp"

#include <doctest.h>

#include <Eigen/Geometry>

#include <cstdlib>
#include <filesystem>

using namespace meshmotion;

namespace {

TriMesh equilateral_triangle() {
  TriMesh m;
  m.vertices.resize(3, 3);
  m.vertices << 0, 0, 0, 1, 0, 0, 0.5, std::sqrt(3.0) / 2.0, 0;
  m.faces.resize(1, 3);
  m.faces << 0, 1, 2;
  return m;
}

Matrix random_field(int n, int c, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix f(n, c);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) f(i, j) = g(rng);
  return f;
}

}  // namespace

TEST_CASE("equilateral triangle cotangent weights") {
  const SpectralOps ops = build_operators(equilateral_triangle(), 2);
  // Boundary edge of a single face: w = cot(60 deg) / 2.
  const double expected = 1.0 / (2.0 * std::sqrt(3.0));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      if (i == j) continue;
      CHECK(ops.laplacian.coeff(i, j) == doctest::Approx(-expected).epsilon(1e-6));
    }
  CHECK(expected == doctest::Approx(0.288675).epsilon(1e-5));
}

TEST_CASE("lambda_0 is zero with a constant eigenvector") {
  for (const TriMesh& mesh : {make_grid(7, 7, 0.15), make_icosphere(2)}) {
    const SpectralOps ops = build_operators(mesh, 8);
    CHECK(ops.eigenvalues[0] < 1e-6);
    const Vector phi0 = ops.eigenvectors.col(0);
    const double mean = phi0.mean();
    CHECK((phi0.array() - mean).abs().maxCoeff() < 1e-6 * std::abs(mean));
  }
}

TEST_CASE("icosphere spectrum has the 3-fold multiplicity of l=1") {
  const SpectralOps ops = build_operators(make_icosphere(3), 10);
  const double l1 = ops.eigenvalues[1], l3 = ops.eigenvalues[3];
  CHECK(l3 / l1 - 1.0 < 0.05);  // lambda_1..lambda_3 mutually within 5%
  // Analytic sphere value l(l+1) = 2 for the unit sphere, within a few %.
  CHECK(ops.eigenvalues[1] == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("mass-orthonormal eigenvectors") {
  const SpectralOps ops = build_operators(make_icosphere(2), 16);
  const Matrix gram =
      ops.eigenvectors.transpose() * ops.mass.asDiagonal() * ops.eigenvectors;
  CHECK((gram - Matrix::Identity(16, 16)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("laplacian is symmetric with zero row sums") {
  const SpectralOps ops = build_operators(make_icosphere(2), 4);
  const Matrix dense = Matrix(ops.laplacian);
  CHECK((dense - dense.transpose()).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(dense.rowwise().sum().cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("disconnected mesh is rejected with a component count") {
  TriMesh two;
  two.vertices.resize(6, 3);
  two.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0, 5, 5, 5, 6, 5, 5, 5, 6, 5;
  two.faces.resize(2, 3);
  two.faces << 0, 1, 2, 3, 4, 5;
  try {
    build_operators(two, 2);
    FAIL("expected error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
}

TEST_CASE("k too large is rejected") {
  CHECK_THROWS_AS(build_operators(equilateral_triangle(), 3), ValidationError);
}

TEST_CASE("diffuse with t=0 equals the eigenbasis projection") {
  const TriMesh mesh = make_grid(6, 6, 0.2);
  const SpectralOps ops = build_operators(mesh, 12);
  const Matrix f = random_field(mesh.vertex_count(), 2, 5);
  const Matrix projected = ops.eigenvectors * (ops.eigenvectors.transpose() *
                                               (ops.mass.asDiagonal() * f));
  const Matrix out = diffuse(ops, f, Vector::Zero(2));
  CHECK((out - projected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("diffuse at large time approaches the mass-weighted mean") {
  const TriMesh mesh = make_icosphere(2);
  const SpectralOps ops = build_operators(mesh, 12);
  const Matrix f = random_field(mesh.vertex_count(), 1, 6);
  const Matrix out = diffuse(ops, f, Vector::Constant(1, 1e6));
  const double mean = ops.mass.dot(f.col(0)) / ops.mass.sum();
  CHECK((out.array() - mean).abs().maxCoeff() < 1e-6);
}

TEST_CASE("eigenfunction decays by exp(-lambda t)") {
  const TriMesh mesh = make_icosphere(2);
  const SpectralOps ops = build_operators(mesh, 8);
  const double t = 0.37;
  const Matrix out = diffuse(ops, ops.eigenvectors.col(1), Vector::Constant(1, t));
  const Matrix expected = std::exp(-ops.eigenvalues[1] * t) * ops.eigenvectors.col(1);
  CHECK((out - expected).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("diffuse rejects negative times") {
  const SpectralOps ops = build_operators(make_grid(4, 4, 0.2), 4);
  CHECK_THROWS_AS(diffuse(ops, Matrix::Ones(16, 1), Vector::Constant(1, -0.1)),
                  ValidationError);
}

TEST_CASE("diffusion is a contraction in the mass norm") {
  const TriMesh mesh = make_icosphere(2);
  const SpectralOps ops = build_operators(mesh, 24);
  const Matrix f = random_field(mesh.vertex_count(), 1, 8);
  const double before = std::sqrt(f.col(0).dot(ops.mass.cwiseProduct(f.col(0))));
  for (double t : {0.01, 0.1, 1.0}) {
    const Matrix out = diffuse(ops, f, Vector::Constant(1, t));
    const double after =
        std::sqrt(out.col(0).dot(ops.mass.cwiseProduct(out.col(0))));
    CHECK(after <= before + 1e-8);
  }
}

TEST_CASE("diffusion commutes with rigid motion") {
  const TriMesh mesh = make_grid(7, 5, 0.2);
  const SpectralOps ops = build_operators(mesh, 16);
  TriMesh moved = mesh;
  const Eigen::Matrix3d rot =
      Eigen::AngleAxisd(1.1, Vec3(0.3, -0.5, 0.8).normalized()).toRotationMatrix();
  moved.vertices = (mesh.vertices * rot.transpose()).rowwise() +
                   RowVector::Constant(3, 0.4);
  const SpectralOps ops2 = build_operators(moved, 16);
  const Matrix f = random_field(mesh.vertex_count(), 3, 9);
  const Vector times = Vector::Constant(3, 0.05);
  CHECK((diffuse(ops, f, times) - diffuse(ops2, f, times)).cwiseAbs().maxCoeff() <
        1e-6);
}

TEST_CASE("tangent gradient of a linear field on a flat grid") {
  const TriMesh g = make_grid(8, 8, 0.2);
  const SpectralOps ops = build_operators(g, 8);
  const Matrix grad = tangent_gradient(ops, g.vertices.col(0));
  // Interior vertices: magnitude 1, direction = global x in the tangent frame.
  int checked = 0;
  for (int i = 0; i < g.vertex_count(); ++i) {
    const int x = i % 8, y = i / 8;
    if (x == 0 || x == 7 || y == 0 || y == 7) continue;
    const double mag = grad.row(i).norm();
    CHECK(mag == doctest::Approx(1.0).epsilon(0.05));
    const Vec3 dir = grad(i, 0) * Vec3(ops.frame_u.row(i)) +
                     grad(i, 1) * Vec3(ops.frame_v.row(i));
    CHECK(dir.dot(Vec3(1, 0, 0)) > 0.99);
    ++checked;
  }
  CHECK(checked == 36);

  SUBCASE("constant fields have zero gradient") {
    const Matrix zero = tangent_gradient(ops, Vector::Ones(g.vertex_count()));
    CHECK(zero.cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("gradient is linear in the field") {
    const Matrix doubled = tangent_gradient(ops, 2.0 * g.vertices.col(0));
    CHECK((doubled - 2.0 * grad).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("dense and Lanczos eigensolvers agree") {
  const TriMesh mesh = make_uv_sphere(900);  // above the dense threshold
  REQUIRE(mesh.vertex_count() > 700);
  const SpectralOps lanczos = build_operators(mesh, 12);
  // Rebuild via the dense path on the same operators.
  TriMesh small = mesh;
  const SpectralOps dense = [&] {
    // Dense reference: solve the full problem with Eigen directly.
    SpectralOps ops = lanczos;
    const Vector inv_sqrt_m = ops.mass.cwiseSqrt().cwiseInverse();
    Matrix b = inv_sqrt_m.asDiagonal() * Matrix(ops.laplacian) *
               inv_sqrt_m.asDiagonal();
    b = 0.5 * (b + b.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> solver(b);
    ops.eigenvalues = solver.eigenvalues().head(12).cwiseMax(0.0);
    return ops;
  }();
  for (int i = 0; i < 12; ++i)
    CHECK(lanczos.eigenvalues[i] ==
          doctest::Approx(dense.eigenvalues[i]).epsilon(1e-6).scale(1.0));
}

TEST_CASE("operator container round trip is bit exact") {
  const TriMesh mesh = make_icosphere(2);
  const SpectralOps ops = build_operators(mesh, 10);
  const auto path =
      (std::filesystem::temp_directory_path() / "ops_roundtrip.bin").string();
  save_operators(ops, path);
  const SpectralOps loaded = load_operators(path);
  CHECK(loaded.eigenvalues == ops.eigenvalues);
  CHECK(loaded.eigenvectors == ops.eigenvectors);
  CHECK(loaded.mass == ops.mass);
  CHECK(Matrix(loaded.laplacian) == Matrix(ops.laplacian));
  CHECK(Matrix(loaded.grad_x) == Matrix(ops.grad_x));
}

TEST_CASE("spectral cache returns identical operators and uses the disk") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "meshmotion_cache_test";
  fs::remove_all(dir);
  setenv("MESHMOTION_CACHE_DIR", dir.c_str(), 1);
  const TriMesh mesh = make_icosphere(1);
  {
    SpectralCache cache(4);
    auto a = cache.get_or_build(mesh, 6);
    auto b = cache.get_or_build(mesh, 6);
    CHECK(a.get() == b.get());  // memory hit
  }
  CHECK(fs::exists(dir));
  {
    SpectralCache cache(4);  // fresh cache: must hit the disk layer
    auto c = cache.get_or_build(mesh, 6);
    const SpectralOps direct = build_operators(mesh, 6);
    CHECK(c->eigenvalues == direct.eigenvalues);
    CHECK(c->eigenvectors == direct.eigenvectors);
  }
  unsetenv("MESHMOTION_CACHE_DIR");
  fs::remove_all(dir);
}
