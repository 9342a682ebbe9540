#include "meshmotion/extractor.hpp"

#include "meshmotion/backend.hpp"

#include <cmath>

namespace meshmotion {

void ExtractorParams::init(std::uint64_t seed) {
  Rng rng(seed);
  blocks.clear();
  const double t_raw = std::log(std::expm1(cfg.time_init));  // softplus^-1
  for (int i = 0; i < cfg.blocks(); ++i) {
    const int cin = cfg.widths[i], cout = cfg.widths[i + 1];
    Block b;
    const std::string p = "extractor.block" + std::to_string(i) + ".";
    b.times_raw = nn::Tensor(p + "times_raw", 1, cin);
    b.times_raw.value.setConstant(t_raw);
    b.mix_re = nn::Tensor(p + "mix_re", cin, cin);
    b.mix_im = nn::Tensor(p + "mix_im", cin, cin);
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin));
    nn::init_uniform(b.mix_re, bound, rng);
    nn::init_uniform(b.mix_im, bound, rng);
    b.w1 = nn::Tensor(p + "w1", 2 * cin, cfg.hidden);
    b.b1 = nn::Tensor(p + "b1", 1, cfg.hidden);
    b.w2 = nn::Tensor(p + "w2", cfg.hidden, cout);
    b.b2 = nn::Tensor(p + "b2", 1, cout);
    nn::init_linear(b.w1, b.b1, rng);
    nn::init_linear(b.w2, b.b2, rng);
    blocks.push_back(std::move(b));
  }
}

std::vector<nn::Tensor*> ExtractorParams::tensors() {
  std::vector<nn::Tensor*> out;
  for (auto& b : blocks)
    for (nn::Tensor* t : {&b.times_raw, &b.mix_re, &b.mix_im, &b.w1, &b.b1,
                          &b.w2, &b.b2})
      out.push_back(t);
  return out;
}

std::vector<const nn::Tensor*> ExtractorParams::tensors() const {
  std::vector<const nn::Tensor*> out;
  for (const auto& b : blocks)
    for (const nn::Tensor* t : {&b.times_raw, &b.mix_re, &b.mix_im, &b.w1,
                                &b.b1, &b.w2, &b.b2})
      out.push_back(t);
  return out;
}

namespace {

template <class Back, class Params>
auto block_forward(Back& back, typename Back::Mat x, const SpectralOps& ops,
                   Params& block, const ExtractorConfig& cfg, int index) ->
    typename Back::Mat {
  using ad::add;
  using ad::affine;
  using ad::cmul;
  using ad::concat_cols;
  using ad::diffuse_op;
  using ad::leaky_relu;
  using ad::matmul;
  using ad::softplus;
  using ad::sparse_mul;
  using ad::sub;
  using ad::tanh_op;

  const auto times = softplus(back.param(block.times_raw));
  const auto xd = diffuse_op(&ops, x, times);

  // Gradient features: complex channel mixing keeps them invariant to the
  // (arbitrary) per-vertex tangent-frame rotation.
  const auto gx = sparse_mul(&ops.grad_x, xd);
  const auto gy = sparse_mul(&ops.grad_y, xd);
  const auto w_re = back.param(block.mix_re);
  const auto w_im = back.param(block.mix_im);
  const auto h_re = sub(matmul(gx, w_re), matmul(gy, w_im));
  const auto h_im = add(matmul(gx, w_im), matmul(gy, w_re));
  const auto gfeat = tanh_op(add(cmul(gx, h_re), cmul(gy, h_im)));

  auto z = concat_cols({xd, gfeat});
  auto h1 = leaky_relu(affine(z, back.param(block.w1), back.param(block.b1)),
                       cfg.leaky_slope);
  auto y = affine(h1, back.param(block.w2), back.param(block.b2));
  if (ad::value_of(y).cols() == ad::value_of(x).cols()) y = add(y, x);
  if (!ad::is_finite(y))
    throw NumericalError("non-finite output in diffusion block " +
                         std::to_string(index));
  return y;
}

template <class Back, class Params>
auto extract_impl(Back& back, const TriMesh& mesh, const SpectralOps& ops,
                  Params& params) -> typename Back::Mat {
  if (mesh.vertex_count() != ops.n)
    throw ValidationError("extract_features: operators built for a different mesh");
  if (params.cfg.widths.front() != 6)
    throw ValidationError("extract_features: input width must be 6");
  Matrix signal(ops.n, 6);
  signal.leftCols(3) = mesh.vertices;
  signal.rightCols(3) = ops.normals;
  auto x = back.constant(signal);
  for (int i = 0; i < params.cfg.blocks(); ++i) {
    if (ad::value_of(x).cols() != params.cfg.widths[i])
      throw ValidationError("extract_features: channel width mismatch at block " +
                            std::to_string(i));
    x = block_forward(back, x, ops, params.blocks[i], params.cfg, i);
  }
  return x;
}

}  // namespace

FeatureField extract_features(const TriMesh& mesh, const SpectralOps& ops,
                              const ExtractorParams& params) {
  ad::EvalBackend back;
  FeatureField field;
  field.values = extract_impl(back, mesh, ops, params);
  field.source_hash = ops.mesh_hash;
  return field;
}

ad::Var extract_features_ad(ad::Tape& tape, const TriMesh& mesh,
                            const SpectralOps& ops, ExtractorParams& params) {
  ad::TapeBackend back{tape};
  return extract_impl(back, mesh, ops, params);
}

Matrix diffusion_block(const Matrix& field, const SpectralOps& ops,
                       const ExtractorParams::Block& block,
                       const ExtractorConfig& cfg) {
  ad::EvalBackend back;
  return block_forward(back, field, ops, block, cfg, 0);
}

}  // namespace meshmotion
