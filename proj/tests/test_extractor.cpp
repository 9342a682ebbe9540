#include "meshmotion/extractor.hpp"

#include "meshmotion/remesh.hpp"

#include <doctest.h>

#include <Eigen/Geometry>

#include <cstdio>

using namespace meshmotion;

namespace {

ExtractorConfig micro_config() {
  ExtractorConfig cfg;
  cfg.widths = {6, 8, 8};
  cfg.hidden = 10;
  cfg.time_init = 0.05;
  return cfg;
}

SpectralOps permuted(const SpectralOps& ops, const std::vector<int>& perm) {
  // perm[new] = old
  SpectralOps out = ops;
  for (size_t i = 0; i < perm.size(); ++i) {
    out.eigenvectors.row(i) = ops.eigenvectors.row(perm[i]);
    out.mass[i] = ops.mass[perm[i]];
    out.normals.row(i) = ops.normals.row(perm[i]);
    out.frame_u.row(i) = ops.frame_u.row(perm[i]);
    out.frame_v.row(i) = ops.frame_v.row(perm[i]);
  }
  std::vector<int> inv(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = static_cast<int>(i);
  auto permute_sparse = [&](const SparseMatrix& s) {
    std::vector<Eigen::Triplet<double>> trips;
    for (int k = 0; k < s.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(s, k); it; ++it)
        trips.emplace_back(inv[it.row()], inv[it.col()], it.value());
    SparseMatrix p(s.rows(), s.cols());
    p.setFromTriplets(trips.begin(), trips.end());
    return p;
  };
  out.laplacian = permute_sparse(ops.laplacian);
  out.grad_x = permute_sparse(ops.grad_x);
  out.grad_y = permute_sparse(ops.grad_y);
  return out;
}

}  // namespace

TEST_CASE("features have the configured shape and are finite") {
  const TriMesh mesh = make_icosphere(2);
  const SpectralOps ops = build_operators(mesh, 24);
  ExtractorParams params;
  params.cfg = ExtractorConfig{};
  params.init(1);
  const FeatureField field = extract_features(mesh, ops, params);
  CHECK(field.values.rows() == mesh.vertex_count());
  CHECK(field.values.cols() == 64);
  CHECK(field.values.allFinite());
  CHECK(field.source_hash == ops.mesh_hash);

  SUBCASE("deterministic: identical inputs give bit-identical fields") {
    const FeatureField again = extract_features(mesh, ops, params);
    CHECK(again.values == field.values);
  }

  SUBCASE("tape and eval paths agree") {
    ad::Tape tape;
    const ad::Var v = extract_features_ad(tape, mesh, ops, params);
    CHECK((v.value() - field.values).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("feature field depends on connectivity only through the operators") {
  const TriMesh mesh = make_icosphere(2);
  const SpectralOps ops = build_operators(mesh, 16);
  ExtractorParams params;
  params.cfg = micro_config();
  params.init(3);
  TriMesh scrambled = mesh;
  scrambled.faces.row(0).swap(scrambled.faces.row(5));
  const FeatureField a = extract_features(mesh, ops, params);
  const FeatureField b = extract_features(scrambled, ops, params);
  CHECK(a.values == b.values);
}

TEST_CASE("vertex permutation permutes features") {
  const TriMesh mesh = make_icosphere(1);
  const int n = mesh.vertex_count();
  const SpectralOps ops = build_operators(mesh, 12);
  ExtractorParams params;
  params.cfg = micro_config();
  params.init(4);

  std::vector<int> perm(n);  // perm[new] = old
  Rng rng(5);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);

  TriMesh permuted_mesh = mesh;
  std::vector<int> inv(n);
  for (int i = 0; i < n; ++i) inv[perm[i]] = i;
  for (int i = 0; i < n; ++i)
    permuted_mesh.vertices.row(i) = mesh.vertices.row(perm[i]);
  for (int f = 0; f < mesh.face_count(); ++f)
    for (int j = 0; j < 3; ++j)
      permuted_mesh.faces(f, j) = inv[mesh.faces(f, j)];

  const SpectralOps pops = permuted(ops, perm);
  const FeatureField base = extract_features(mesh, ops, params);
  const FeatureField shuffled = extract_features(permuted_mesh, pops, params);
  double max_diff = 0.0;
  for (int i = 0; i < n; ++i)
    max_diff = std::max(
        max_diff,
        (shuffled.values.row(i) - base.values.row(perm[i])).cwiseAbs().maxCoeff());
  CHECK(max_diff < 1e-9);  // exact up to float reduction order
}

TEST_CASE("zero input with zero perceptron biases maps to zero") {
  const TriMesh mesh = make_grid(5, 5, 0.2);
  const SpectralOps ops = build_operators(mesh, 8);
  ExtractorParams params;
  params.cfg = micro_config();
  params.init(6);
  for (auto& b : params.blocks) {
    b.b1.value.setZero();
    b.b2.value.setZero();
  }
  const Matrix zero = Matrix::Zero(mesh.vertex_count(), 6);
  const Matrix out = diffusion_block(zero, ops, params.blocks[0], params.cfg);
  CHECK(out.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("constant field: block reduces to the pointwise perceptron") {
  const TriMesh mesh = make_icosphere(2);
  const SpectralOps ops = build_operators(mesh, 24);
  ExtractorParams params;
  ExtractorConfig cfg = micro_config();
  cfg.widths = {8, 8};  // square block: residual active
  params.cfg = cfg;
  params.init(7);
  Matrix field(mesh.vertex_count(), 8);
  RowVector c(8);
  c << 0.3, -1.2, 0.5, 2.0, -0.7, 0.1, 0.9, -0.4;
  field = c.replicate(mesh.vertex_count(), 1);

  const Matrix out = diffusion_block(field, ops, params.blocks[0], params.cfg);

  // Direct pointwise application: diffusion preserves constants, the gradient
  // term vanishes, so the block is MLP([c, 0]) + c per row.
  const auto& b = params.blocks[0];
  RowVector z(16);
  z << c, RowVector::Zero(8);
  RowVector h1 = z * b.w1.value + b.b1.value;
  h1 = h1.cwiseMax(0.0) + params.cfg.leaky_slope * h1.cwiseMin(0.0);
  const RowVector expect = h1 * b.w2.value + b.b2.value + c;
  for (int i = 0; i < mesh.vertex_count(); ++i)
    CHECK((out.row(i) - expect).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("block output is invariant to rigid motion of the mesh") {
  const TriMesh mesh = make_uv_sphere(220);
  const SpectralOps ops = build_operators(mesh, 16);
  TriMesh moved = mesh;
  const Eigen::Matrix3d rot =
      Eigen::AngleAxisd(0.7, Vec3(1, 1, 0.3).normalized()).toRotationMatrix();
  moved.vertices = (mesh.vertices * rot.transpose()).rowwise() +
                   RowVector::Constant(3, 1.3);
  const SpectralOps mops = build_operators(moved, 16);

  ExtractorParams params;
  ExtractorConfig cfg = micro_config();
  cfg.widths = {5, 7};
  params.cfg = cfg;
  params.init(8);
  Rng rng(9);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix field(mesh.vertex_count(), 5);
  for (Eigen::Index i = 0; i < field.size(); ++i) *(field.data() + i) = g(rng);

  const Matrix a = diffusion_block(field, ops, params.blocks[0], params.cfg);
  const Matrix b = diffusion_block(field, mops, params.blocks[0], params.cfg);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("extractor parameter gradients match finite differences") {
  const TriMesh mesh = make_grid(5, 4, 0.25);  // 20 vertices
  const SpectralOps ops = build_operators(mesh, 10);
  ExtractorParams params;
  params.cfg = micro_config();
  params.init(10);

  const Matrix weights = [&] {
    Rng rng(11);
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix w(mesh.vertex_count(), params.cfg.feature_dim());
    for (Eigen::Index i = 0; i < w.size(); ++i) *(w.data() + i) = g(rng);
    return w;
  }();
  auto readout = [&]() {
    ad::Tape tape;
    const ad::Var f = extract_features_ad(tape, mesh, ops, params);
    const ad::Var loss = ad::sum_all(ad::mul_const(f, weights));
    return std::pair<ad::Tape, ad::Var>(std::move(tape), loss);
  };

  for (nn::Tensor* t : params.tensors()) t->zero_grad();
  {
    ad::Tape tape;
    const ad::Var f = extract_features_ad(tape, mesh, ops, params);
    tape.backward(ad::sum_all(ad::mul_const(f, weights)));
  }
  const double step = 1e-4;
  int checked = 0;
  for (nn::Tensor* t : params.tensors()) {
    for (Eigen::Index i = 0; i < t->value.rows(); ++i)
      for (Eigen::Index j = 0; j < t->value.cols(); ++j) {
        const double keep = t->value(i, j);
        auto eval = [&](double v) {
          t->value(i, j) = v;
          ad::Tape tape;
          const ad::Var f = extract_features_ad(tape, mesh, ops, params);
          const double out = ad::sum_all(ad::mul_const(f, weights)).value()(0, 0);
          t->value(i, j) = keep;
          return out;
        };
        const double fd = (eval(keep + step) - eval(keep - step)) / (2 * step);
        const double analytic = t->grad(i, j);
        const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-6});
        CHECK(std::abs(analytic - fd) / denom < 1e-4);
        ++checked;
      }
  }
  CHECK(checked > 400);  // every parameter entry was exercised
  (void)readout;
}

TEST_CASE("remeshed feature similarity is reported (untrained)") {
  const TriMesh mesh = make_icosphere(3);
  const TriMesh ds = remesh(mesh, RemeshVariant::kDownsample2, 1);
  ExtractorParams params;
  params.cfg = ExtractorConfig{};
  params.init(12);
  const FeatureField fa =
      extract_features(mesh, build_operators(mesh, 32), params);
  const FeatureField fb = extract_features(ds, build_operators(ds, 32), params);
  const auto corr = nearest_correspondence(ds, mesh);
  std::vector<double> cos;
  for (int i = 0; i < ds.vertex_count(); ++i) {
    const double denom = fa.values.row(corr[i]).norm() * fb.values.row(i).norm();
    cos.push_back(fb.values.row(i).dot(fa.values.row(corr[i])) / denom);
  }
  std::nth_element(cos.begin(), cos.begin() + cos.size() / 2, cos.end());
  const double median = cos[cos.size() / 2];
  // No threshold before training; the trained bound lives in the acceptance
  // suite. Keep the measurement visible.
  std::printf("[extractor] untrained DS2 median feature cosine: %.3f\n", median);
  CHECK(std::isfinite(median));
}

TEST_CASE("width mismatches are rejected") {
  const TriMesh mesh = make_grid(4, 4, 0.3);
  const SpectralOps ops = build_operators(mesh, 6);
  ExtractorParams params;
  params.cfg = micro_config();
  params.cfg.widths = {5, 8};  // input must be 6
  params.init(13);
  CHECK_THROWS_AS(extract_features(mesh, ops, params), ValidationError);
}
