// Discrete differential operators: cotangent Laplacian, lumped mass,
// truncated eigenbasis, spectral heat diffusion and tangent-plane gradients.
#pragma once

#include "meshmotion/mesh.hpp"

#include <Eigen/Sparse>

#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <unordered_map>

namespace meshmotion {

using SparseMatrix = Eigen::SparseMatrix<double>;

struct SpectralOps {
  int n = 0;  // vertices
  int k = 0;  // eigenpairs
  SparseMatrix laplacian;  // n x n, symmetric PSD, row sums 0
  Vector mass;             // n, positive (one-third incident area)
  Vector eigenvalues;      // k, ascending, >= 0
  Matrix eigenvectors;     // n x k, mass-orthonormal
  SparseMatrix grad_x, grad_y;  // n x n: scalar field -> tangent components
  Matrix normals;          // n x 3 (area-weighted; part of the input signal)
  Matrix frame_u, frame_v; // n x 3 tangent frame axes (e2 = n x e1)
  std::vector<int> flagged_vertices;  // valence < 2: zero gradient rows
  std::uint64_t mesh_hash = 0;
};

// Cotangent weights w_ij = (cot a_ij + cot b_ij) / 2, lumped mass, k smallest
// eigenpairs of L phi = lambda M phi. Throws on disconnected meshes (the
// component count is named) and when k > N_S - 1.
SpectralOps build_operators(const TriMesh& mesh, int k);

// Spectral heat flow with one nonnegative time per channel: project onto the
// eigenbasis, damp coefficient j of channel c by exp(-lambda_j * t_c),
// reconstruct. Linear in `field`.
Matrix diffuse(const SpectralOps& ops, const Matrix& field, const Vector& times);

// Per-vertex least-squares one-ring gradient of a scalar field, expressed in
// the fixed tangent frame. Rows for flagged vertices are zero.
Matrix tangent_gradient(const SpectralOps& ops, const Vector& field);

void save_operators(const SpectralOps& ops, const std::string& path);
SpectralOps load_operators(const std::string& path);

// LRU cache keyed by (mesh content, k), with an optional on-disk layer under
// $MESHMOTION_CACHE_DIR. Thread-safe.
class SpectralCache {
 public:
  explicit SpectralCache(std::size_t max_entries = 32);
  std::shared_ptr<const SpectralOps> get_or_build(const TriMesh& mesh, int k);

 private:
  std::size_t max_entries_;
  std::mutex mu_;
  std::unordered_map<std::uint64_t, std::shared_ptr<const SpectralOps>> map_;
  std::list<std::uint64_t> lru_;
};

}  // namespace meshmotion
