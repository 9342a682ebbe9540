// Per-vertex feature extraction from stacked heat-diffusion blocks.
//
// Each block: learned per-channel spectral diffusion, tangent-gradient
// features collapsed to rotation-invariant scalars through a learned
// channel-mixing map, a shared two-layer pointwise perceptron over the
// concatenation, and a residual connection when widths match.
//
// The input signal is (position, normal) per vertex; normals are taken from
// the SpectralOps so that the field depends on connectivity only through the
// operators. Features are computed once per source mesh and reused for every
// time step.
#pragma once

#include "meshmotion/autodiff.hpp"
#include "meshmotion/nn.hpp"
#include "meshmotion/spectral.hpp"

#include <deque>

namespace meshmotion {

struct FeatureField {
  Matrix values;  // N_S x F
  std::uint64_t source_hash = 0;
};

struct ExtractorConfig {
  std::vector<int> widths = {6, 64, 64, 64, 64};  // per-block in/out channels
  int hidden = 128;                               // pointwise perceptron width
  double time_init = 1e-2;  // ~mean squared edge length of normalized meshes
  double leaky_slope = 0.01;

  int blocks() const { return static_cast<int>(widths.size()) - 1; }
  int feature_dim() const { return widths.back(); }
};

struct ExtractorParams {
  ExtractorConfig cfg;

  struct Block {
    nn::Tensor times_raw;     // 1 x C_in, mapped through softplus
    nn::Tensor mix_re, mix_im;  // C_in x C_in gradient-feature mixing
    nn::Tensor w1, b1, w2, b2;  // 2*C_in -> hidden -> C_out
  };
  std::deque<Block> blocks;

  void init(std::uint64_t seed);
  std::vector<nn::Tensor*> tensors();
  std::vector<const nn::Tensor*> tensors() const;
};

// Inference path.
FeatureField extract_features(const TriMesh& mesh, const SpectralOps& ops,
                              const ExtractorParams& params);

// Training path; result is N_S x F on the tape.
ad::Var extract_features_ad(ad::Tape& tape, const TriMesh& mesh,
                            const SpectralOps& ops, ExtractorParams& params);

// Single block, exposed for tests. `field` is N_S x C_in.
Matrix diffusion_block(const Matrix& field, const SpectralOps& ops,
                       const ExtractorParams::Block& block,
                       const ExtractorConfig& cfg);

}  // namespace meshmotion
