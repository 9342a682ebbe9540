#include "meshmotion/generator.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>

using namespace meshmotion;

namespace {

GeneratorConfig micro_config() {
  GeneratorConfig cfg;
  cfg.feature_dim = 4;
  cfg.code_dim = 3;
  cfg.hidden = 8;
  cfg.hidden_layers = 2;
  return cfg;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) *(m.data() + i) = g(rng);
  return m;
}

void randomize_output_head(GeneratorParams& params, std::uint64_t seed) {
  Rng rng(seed);
  nn::init_linear(params.w.back(), params.b.back(), rng);
}

}  // namespace

TEST_CASE("augment is pure concatenation") {
  Matrix features(1, 2);
  features << 1, 2;
  RowVector code(2);
  code << 3, 4;
  Matrix prev(1, 3);
  prev << 5, 6, 7;
  const Matrix row = augment(features, code, prev);
  Matrix expect(1, 7);
  expect << 1, 2, 3, 4, 5, 6, 7;
  CHECK(row == expect);

  SUBCASE("zero code zeroes only the middle block") {
    const Matrix z = augment(features, RowVector::Zero(2), prev);
    CHECK(z.leftCols(2) == features);
    CHECK(z.middleCols(2, 2).cwiseAbs().maxCoeff() == 0.0);
    CHECK(z.rightCols(3) == prev);
  }
  SUBCASE("shape contract at N=1000") {
    const Matrix big =
        augment(random_matrix(1000, 64, 1), RowVector::Zero(64),
                random_matrix(1000, 3, 2));
    CHECK(big.rows() == 1000);
    CHECK(big.cols() == 64 + 64 + 3);
  }
}

TEST_CASE("zero-initialized head predicts zero displacement") {
  GeneratorParams params;
  params.cfg = micro_config();
  params.init(3);
  const Matrix aug = random_matrix(20, params.cfg.input_dim(), 4);
  CHECK(step(aug, params).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("step is permutation-equivariant (bit exact)") {
  GeneratorParams params;
  params.cfg = micro_config();
  params.init(5);
  randomize_output_head(params, 6);
  const Matrix aug = random_matrix(30, params.cfg.input_dim(), 7);
  const Matrix out = step(aug, params);
  std::vector<int> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(8);
  std::shuffle(perm.begin(), perm.end(), rng);
  Matrix shuffled(30, aug.cols());
  for (int i = 0; i < 30; ++i) shuffled.row(i) = aug.row(perm[i]);
  const Matrix out_shuffled = step(shuffled, params);
  for (int i = 0; i < 30; ++i) {
    CHECK(out_shuffled.row(i) == out.row(perm[i]));
  }
}

TEST_CASE("step parameter gradients match finite differences") {
  GeneratorParams params;
  params.cfg = micro_config();
  params.init(9);
  randomize_output_head(params, 10);
  const Matrix aug = random_matrix(12, params.cfg.input_dim(), 11);

  // Scalar readout: squared norm of the displacement field.
  for (nn::Tensor* t : params.tensors()) t->zero_grad();
  {
    ad::Tape tape;
    ad::Var x = tape.constant(aug);
    const int last = static_cast<int>(params.w.size()) - 1;
    for (int i = 0; i < last; ++i)
      x = ad::leaky_relu(ad::affine_stable(x, tape.param(params.w[i]),
                                           tape.param(params.b[i])),
                         params.cfg.leaky_slope);
    x = ad::affine_stable(x, tape.param(params.w[last]),
                          tape.param(params.b[last]));
    tape.backward(ad::sum_all(ad::square(x)));
  }
  const double h = 1e-4;
  for (nn::Tensor* t : params.tensors())
    for (Eigen::Index i = 0; i < t->value.rows(); ++i)
      for (Eigen::Index j = 0; j < t->value.cols(); ++j) {
        const double keep = t->value(i, j);
        auto eval = [&](double v) {
          t->value(i, j) = v;
          const double out = step(aug, params).squaredNorm();
          t->value(i, j) = keep;
          return out;
        };
        const double fd = (eval(keep + h) - eval(keep - h)) / (2 * h);
        const double denom = std::max({std::abs(fd), std::abs(t->grad(i, j)), 1e-6});
        CHECK(std::abs(t->grad(i, j) - fd) / denom < 1e-4);
      }
}

TEST_CASE("rollout with zero parameters is static") {
  GeneratorParams params;
  params.cfg = micro_config();
  params.init(12);
  const TriMesh source = make_icosphere(1);
  FeatureField features;
  features.values = random_matrix(source.vertex_count(), params.cfg.feature_dim, 13);
  MotionCode code;
  code.values = random_matrix(6, params.cfg.code_dim, 14);
  const DeformationRollout roll = rollout(source, features, code, params);
  CHECK(roll.steps() == 6);
  for (const Matrix& p : roll.positions) CHECK(p == source.vertices);
  for (const Matrix& d : roll.displacements) CHECK(d.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("rollout with an empty code is just the source frame") {
  GeneratorParams params;
  params.cfg = micro_config();
  params.init(15);
  const TriMesh source = make_icosphere(1);
  FeatureField features;
  features.values = random_matrix(source.vertex_count(), params.cfg.feature_dim, 16);
  MotionCode code;
  code.values = Matrix::Zero(0, params.cfg.code_dim);
  const DeformationRollout roll = rollout(source, features, code, params);
  CHECK(roll.steps() == 0);
  CHECK(roll.positions.size() == 1);
  CHECK(roll.positions[0] == source.vertices);
}

TEST_CASE("rollout telescopes and is deterministic") {
  GeneratorParams params;
  params.cfg = micro_config();
  params.init(17);
  randomize_output_head(params, 18);
  params.w.back().value *= 0.05;  // keep the recursion tame
  const TriMesh source = make_icosphere(1);
  FeatureField features;
  features.values = random_matrix(source.vertex_count(), params.cfg.feature_dim, 19);
  MotionCode code;
  code.values = random_matrix(8, params.cfg.code_dim, 20);
  const DeformationRollout roll = rollout(source, features, code, params);
  Matrix sum = Matrix::Zero(source.vertex_count(), 3);
  for (const Matrix& d : roll.displacements) sum += d;
  CHECK((roll.positions.back() - roll.positions.front() - sum)
            .cwiseAbs()
            .maxCoeff() < 1e-6);
  const DeformationRollout again = rollout(source, features, code, params);
  for (size_t t = 0; t < roll.positions.size(); ++t)
    CHECK(again.positions[t] == roll.positions[t]);
}

TEST_CASE("rollout is vertex-permutation-equivariant (bit exact)") {
  GeneratorParams params;
  params.cfg = micro_config();
  params.init(21);
  randomize_output_head(params, 22);
  params.w.back().value *= 0.05;
  const TriMesh source = make_icosphere(1);
  const int n = source.vertex_count();
  FeatureField features;
  features.values = random_matrix(n, params.cfg.feature_dim, 23);
  MotionCode code;
  code.values = random_matrix(5, params.cfg.code_dim, 24);
  const DeformationRollout base = rollout(source, features, code, params);

  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(25);
  std::shuffle(perm.begin(), perm.end(), rng);
  TriMesh permuted = source;
  FeatureField pf;
  pf.values.resize(n, params.cfg.feature_dim);
  std::vector<int> inv(n);
  for (int i = 0; i < n; ++i) inv[perm[i]] = i;
  for (int i = 0; i < n; ++i) {
    permuted.vertices.row(i) = source.vertices.row(perm[i]);
    pf.values.row(i) = features.values.row(perm[i]);
  }
  for (int f = 0; f < source.face_count(); ++f)
    for (int j = 0; j < 3; ++j) permuted.faces(f, j) = inv[source.faces(f, j)];

  const DeformationRollout shuffled = rollout(permuted, pf, code, params);
  for (size_t t = 0; t < base.positions.size(); ++t)
    for (int i = 0; i < n; ++i) {
      CHECK(shuffled.positions[t].row(i) == base.positions[t].row(perm[i]));
    }
}

TEST_CASE("back-propagation through time matches finite differences") {
  GeneratorParams params;
  params.cfg = micro_config();
  params.init(26);
  randomize_output_head(params, 27);
  params.w.back().value *= 0.1;
  const TriMesh source = make_grid(5, 4, 0.2);  // 20 vertices
  const int n = source.vertex_count();
  const Matrix features = random_matrix(n, params.cfg.feature_dim, 28);
  const Matrix code = random_matrix(5, params.cfg.code_dim, 29);  // T = 5
  const Matrix target = random_matrix(n, 3, 30) * 0.1;

  auto loss_value = [&]() {
    ad::Tape tape;
    auto f = tape.constant(features);
    auto c = tape.constant(code);
    auto positions = rollout_ad(tape, source.vertices, f, c, params);
    auto d = ad::add_const(positions.back(), -(source.vertices + target));
    return ad::sum_all(ad::square(d)).value()(0, 0);
  };
  for (nn::Tensor* t : params.tensors()) t->zero_grad();
  {
    ad::Tape tape;
    auto f = tape.constant(features);
    auto c = tape.constant(code);
    auto positions = rollout_ad(tape, source.vertices, f, c, params);
    auto d = ad::add_const(positions.back(), -(source.vertices + target));
    tape.backward(ad::sum_all(ad::square(d)));
  }
  // 10 random parameter entries through the full recursion.
  Rng rng(31);
  const auto tensors = params.tensors();
  const double h = 1e-5;
  for (int probe = 0; probe < 10; ++probe) {
    nn::Tensor* t = tensors[rng() % tensors.size()];
    const Eigen::Index i = static_cast<Eigen::Index>(rng() % t->value.rows());
    const Eigen::Index j = static_cast<Eigen::Index>(rng() % t->value.cols());
    const double keep = t->value(i, j);
    t->value(i, j) = keep + h;
    const double up = loss_value();
    t->value(i, j) = keep - h;
    const double down = loss_value();
    t->value(i, j) = keep;
    const double fd = (up - down) / (2 * h);
    const double denom = std::max({std::abs(fd), std::abs(t->grad(i, j)), 1e-8});
    CHECK(std::abs(t->grad(i, j) - fd) / denom < 1e-3);
  }
}
