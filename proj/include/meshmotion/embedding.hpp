// Motion embedding: per-frame point-set encoder + bidirectional recurrent
// stack producing a smooth vector time series describing the target motion.
#pragma once

#include "meshmotion/autodiff.hpp"
#include "meshmotion/mesh.hpp"
#include "meshmotion/nn.hpp"

#include <deque>

namespace meshmotion {

struct MotionCode {
  Matrix values;  // T x d
  int length() const { return static_cast<int>(values.rows()); }
  int dim() const { return static_cast<int>(values.cols()); }
};

struct EmbedderConfig {
  int point_hidden = 128;  // shared per-point perceptron width, 4 layers
  int point_layers = 4;
  int code_dim = 64;       // d
  int gru_hidden = 64;     // per direction
  int gru_layers = 3;
  int samples_per_frame = 1024;
  double leaky_slope = 0.01;
};

struct EmbedderParams {
  EmbedderConfig cfg;

  std::deque<nn::Tensor> point_w, point_b;  // per-point MLP
  nn::Tensor head_w, head_b;                // pooled 128 -> d
  struct GruDir {
    nn::Tensor wx;  // I x 3H  (reset | update | candidate)
    nn::Tensor wh;  // H x 3H
    nn::Tensor bx, bh;  // 1 x 3H
  };
  struct GruLayer {
    GruDir fwd, bwd;
  };
  std::deque<GruLayer> gru;
  nn::Tensor proj_w, proj_b;  // 2H -> d

  void init(std::uint64_t seed);
  std::vector<nn::Tensor*> tensors();
  std::vector<const nn::Tensor*> tensors() const;
};

// Area-weighted uniform surface samples; deterministic given the seed.
Matrix sample_points(const TriMesh& mesh, int n, std::uint64_t seed);

// Shared per-point perceptron + coordinatewise max over points -> 1 x d.
Matrix encode_frame(const Matrix& points, const EmbedderParams& params);
ad::Var encode_frame_ad(ad::Tape& tape, const Matrix& points,
                        EmbedderParams& params);

// Full, per-frame sampled sequence -> T x d code.
MotionCode embed_motion(const MotionSequence& sequence,
                        const EmbedderParams& params, int samples_per_frame,
                        std::uint64_t seed);

// Training path over pre-sampled frame clouds.
ad::Var embed_motion_ad(ad::Tape& tape, const std::vector<Matrix>& frame_clouds,
                        EmbedderParams& params);

// Classical multi-dimensional scaling of all frame codes to 2D; returns one
// T_i x 2 polyline per motion. Rank-deficient inputs are zero-padded.
std::vector<Matrix> mds_project(const std::vector<MotionCode>& codes);

}  // namespace meshmotion
