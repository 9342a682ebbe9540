// Training losses, evaluation metrics and the remeshing-deviation statistic.
//
// Plain overloads compute values; Var overloads build differentiable graphs
// for the same formulas (gradient-checked against finite differences).
#pragma once

#include "meshmotion/autodiff.hpp"
#include "meshmotion/mesh.hpp"

#include <optional>
#include <vector>

namespace meshmotion {

struct LossWeights {
  double lambda_normal = 1e-4;
  double lambda_isometry = 1e-5;
  double isometry_start_fraction = 0.8;  // enabled once epoch_fraction >= this
};

struct LossComponents {
  double total = 0.0;
  double mse = 0.0;
  double normal = 0.0;
  double aiap = 0.0;
};

struct SequenceMetrics {
  std::string name;
  double mse = 0.0;
  double cosim = 0.0;
  double chamfer = 0.0;
  double static_baseline_mse = 0.0;
};

struct MetricsReport {
  double mse = 0.0;
  double cosim = 0.0;
  std::optional<double> chamfer;  // unregistered mode
  double static_baseline_mse = 0.0;
  std::vector<SequenceMetrics> per_sequence;
};

// (1 / (T N)) sum_t sum_i |v - vhat|^2 over frames of N x 3 positions.
double mse_loss(const std::vector<Matrix>& pred, const std::vector<Matrix>& truth);
ad::Var mse_loss(const std::vector<ad::Var>& pred,
                 const std::vector<Matrix>& truth);

// (1 / (T N)) sum (1 - n_truth . n_pred); normals recomputed per frame from
// positions with the (shared) source connectivity. Zero normals are excluded;
// their count is added to *excluded when given.
double normal_loss(const std::vector<Matrix>& pred,
                   const std::vector<Matrix>& truth, const FaceMatrix& faces,
                   int* excluded = nullptr);
ad::Var normal_loss(const std::vector<ad::Var>& pred,
                    const std::vector<Matrix>& truth, const FaceMatrix& faces);

// Relative edge-length distortion against the SOURCE frame (Eq. reference
// lengths are |v_i,0 - v_j,0|). Edges shorter than 1e-9 are excluded.
double aiap_loss(const std::vector<Matrix>& pred, const Matrix& source_positions,
                 const EdgeList& edges);
ad::Var aiap_loss(const std::vector<ad::Var>& pred,
                  const Matrix& source_positions, const EdgeList& edges);

// Symmetric sum of the two directed mean squared nearest-neighbor distances.
double chamfer(const Matrix& pred_points, const Matrix& target_points);
double chamfer_bruteforce(const Matrix& a, const Matrix& b);  // test oracle
ad::Var chamfer_op(ad::Var pred_points, const Matrix& target_points);

double chamfer_sequence_loss(const std::vector<Matrix>& pred,
                             const std::vector<Matrix>& target);
ad::Var chamfer_sequence_loss(const std::vector<ad::Var>& pred,
                              const std::vector<Matrix>& target);

// MSE + lambda_N * normal + [epoch_fraction >= start] * lambda_I * AIAP.
LossComponents total_loss(const std::vector<Matrix>& pred,
                          const std::vector<Matrix>& truth,
                          const FaceMatrix& faces, const Matrix& source_positions,
                          const EdgeList& edges, const LossWeights& weights,
                          double epoch_fraction);
ad::Var total_loss_ad(const std::vector<ad::Var>& pred,
                      const std::vector<Matrix>& truth, const FaceMatrix& faces,
                      const Matrix& source_positions, const EdgeList& edges,
                      const LossWeights& weights, double epoch_fraction,
                      LossComponents* components = nullptr);

// |metric_remesh - metric_orig| / metric_orig; metric_orig must be > 0.
double relative_deviation(double metric_orig, double metric_remesh);

// Differentiable area-weighted unit vertex normals (zero rows preserved).
ad::Var vertex_normals_op(ad::Var positions, const FaceMatrix& faces);

}  // namespace meshmotion
