// Recursive per-vertex displacement decoder and trajectory rollout.
#pragma once

#include "meshmotion/autodiff.hpp"
#include "meshmotion/embedding.hpp"
#include "meshmotion/extractor.hpp"
#include "meshmotion/nn.hpp"

#include <deque>

namespace meshmotion {

struct GeneratorConfig {
  int feature_dim = 64;  // F
  int code_dim = 64;     // d
  int hidden = 128;
  int hidden_layers = 4;
  double leaky_slope = 0.01;

  int input_dim() const { return feature_dim + code_dim + 3; }
};

struct GeneratorParams {
  GeneratorConfig cfg;
  std::deque<nn::Tensor> w, b;  // hidden layers + zero-initialized output head

  void init(std::uint64_t seed);
  std::vector<nn::Tensor*> tensors();
  std::vector<const nn::Tensor*> tensors() const;
};

struct DeformationRollout {
  std::vector<Matrix> positions;      // T+1 entries, [0] = source vertices
  std::vector<Matrix> displacements;  // T entries
  int steps() const { return static_cast<int>(displacements.size()); }
};

// Row i = (f_i, code_t, prev_positions_i); pure concatenation.
Matrix augment(const Matrix& features, const RowVector& code_t,
               const Matrix& prev_positions);

// Shared perceptron applied row-wise; permutation-equivariant.
Matrix step(const Matrix& augmented, const GeneratorParams& params);

// v_0 = source vertices; v_t = v_{t-1} + D(f, code_{t-1}, v_{t-1}).
// Free rollout: no ground-truth injection.
DeformationRollout rollout(const TriMesh& source, const FeatureField& features,
                           const MotionCode& code, const GeneratorParams& params);

// Training path: positions[t] for t = 1..T as tape nodes.
std::vector<ad::Var> rollout_ad(ad::Tape& tape, const Matrix& source_vertices,
                                ad::Var features, ad::Var code,
                                GeneratorParams& params);

}  // namespace meshmotion
