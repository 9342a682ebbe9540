#include "meshmotion/generator.hpp"

#include "meshmotion/backend.hpp"

#include <cmath>

namespace meshmotion {

void GeneratorParams::init(std::uint64_t seed) {
  Rng rng(seed);
  w.clear();
  b.clear();
  int in = cfg.input_dim();
  for (int i = 0; i < cfg.hidden_layers; ++i) {
    const std::string p = "generator.layer" + std::to_string(i) + ".";
    w.emplace_back(p + "w", in, cfg.hidden);
    b.emplace_back(p + "b", 1, cfg.hidden);
    nn::init_linear(w.back(), b.back(), rng);
    in = cfg.hidden;
  }
  // Output head starts at zero: training begins from the identity deformation.
  w.emplace_back("generator.out.w", in, 3);
  b.emplace_back("generator.out.b", 1, 3);
}

std::vector<nn::Tensor*> GeneratorParams::tensors() {
  std::vector<nn::Tensor*> out;
  for (size_t i = 0; i < w.size(); ++i) {
    out.push_back(&w[i]);
    out.push_back(&b[i]);
  }
  return out;
}

std::vector<const nn::Tensor*> GeneratorParams::tensors() const {
  auto self = const_cast<GeneratorParams*>(this);
  std::vector<const nn::Tensor*> out;
  for (nn::Tensor* t : self->tensors()) out.push_back(t);
  return out;
}

Matrix augment(const Matrix& features, const RowVector& code_t,
               const Matrix& prev_positions) {
  if (features.rows() != prev_positions.rows())
    throw ValidationError("augment: row count mismatch");
  if (prev_positions.cols() != 3)
    throw ValidationError("augment: positions must be N x 3");
  Matrix out(features.rows(), features.cols() + code_t.cols() + 3);
  out.leftCols(features.cols()) = features;
  out.middleCols(features.cols(), code_t.cols()) =
      code_t.replicate(features.rows(), 1);
  out.rightCols(3) = prev_positions;
  return out;
}

namespace {

template <class Back, class Params>
auto step_impl(Back& back, typename Back::Mat augmented, Params& params) ->
    typename Back::Mat {
  if (ad::value_of(augmented).cols() != params.cfg.input_dim())
    throw ValidationError("step: augmented width does not match generator input");
  // Row-stable products: a vertex's displacement must not depend on where it
  // sits in the batch (exact permutation equivariance).
  auto x = augmented;
  const int last = static_cast<int>(params.w.size()) - 1;
  for (int i = 0; i < last; ++i)
    x = ad::leaky_relu(
        ad::affine_stable(x, back.param(params.w[i]), back.param(params.b[i])),
        params.cfg.leaky_slope);
  return ad::affine_stable(x, back.param(params.w[last]),
                           back.param(params.b[last]));
}

}  // namespace

Matrix step(const Matrix& augmented, const GeneratorParams& params) {
  ad::EvalBackend back;
  Matrix d = step_impl(back, augmented, params);
  if (!d.allFinite()) throw NumericalError("step produced non-finite displacement");
  return d;
}

DeformationRollout rollout(const TriMesh& source, const FeatureField& features,
                           const MotionCode& code, const GeneratorParams& params) {
  if (features.values.rows() != source.vertex_count())
    throw ValidationError("rollout: features built for a different mesh");
  DeformationRollout out;
  out.positions.push_back(source.vertices);
  ad::EvalBackend back;
  for (int t = 0; t < code.length(); ++t) {
    const Matrix aug = augment(features.values, code.values.row(t),
                               out.positions.back());
    Matrix delta = step_impl(back, aug, params);
    if (!delta.allFinite())
      throw NumericalError("rollout: non-finite displacement at step " +
                           std::to_string(t + 1));
    out.positions.push_back(out.positions.back() + delta);
    out.displacements.push_back(std::move(delta));
  }
  return out;
}

std::vector<ad::Var> rollout_ad(ad::Tape& tape, const Matrix& source_vertices,
                                ad::Var features, ad::Var code,
                                GeneratorParams& params) {
  ad::TapeBackend back{tape};
  const int T = static_cast<int>(code.rows());
  const Eigen::Index n = source_vertices.rows();
  std::vector<ad::Var> positions;
  positions.reserve(T);
  ad::Var prev = tape.constant(source_vertices);
  for (int t = 0; t < T; ++t) {
    auto code_row = ad::broadcast_row(ad::slice_rows(code, t, 1), n);
    auto aug = ad::concat_cols({features, code_row, prev});
    auto delta = step_impl(back, aug, params);
    if (!ad::is_finite(delta))
      throw NumericalError("rollout: non-finite displacement at step " +
                           std::to_string(t + 1));
    prev = ad::add(prev, delta);
    positions.push_back(prev);
  }
  return positions;
}

}  // namespace meshmotion
