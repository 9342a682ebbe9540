// Triangle-mesh data model, OBJ/PLY I/O and derived quantities.
//
// Conventions:
// - Vertices are N x 3 doubles, faces are N_F x 3 0-based indices, CCW.
// - Meshes are immutable after construction; all functions here are pure.
// - OBJ faces are 1-based on disk and converted during I/O.
#pragma once

#include "meshmotion/common.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace meshmotion {

struct TriMesh {
  Matrix vertices;   // N x 3
  FaceMatrix faces;  // N_F x 3
  std::string name;

  int vertex_count() const { return static_cast<int>(vertices.rows()); }
  int face_count() const { return static_cast<int>(faces.rows()); }
};

// Unique undirected edges, each row sorted (i < j), rows in lexicographic order.
struct EdgeList {
  Eigen::MatrixXi edges;  // N_E x 2
  int count() const { return static_cast<int>(edges.rows()); }
};

// normalized = (p - translation) * scale. scale > 0.
struct NormalizeTransform {
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;

  Vec3 apply(const Vec3& p) const { return (p - translation) * scale; }
  Vec3 invert(const Vec3& p) const { return p / scale + translation; }
  Matrix apply(const Matrix& pts) const {
    return (pts.rowwise() - translation.transpose()) * scale;
  }
  Matrix invert(const Matrix& pts) const {
    return (pts / scale).rowwise() + translation.transpose();
  }
};

// Throws ValidationError when a TriMesh invariant is broken.
void validate(const TriMesh& mesh);

TriMesh load_mesh(const std::string& path);
void save_mesh(const TriMesh& mesh, const std::string& path);

// Area-weighted vertex normals, rows unit-norm or exactly zero.
// Vertices whose entire one-ring is degenerate get a zero row; their indices
// are appended to `flagged` when provided.
Matrix vertex_normals(const TriMesh& mesh, std::vector<int>* flagged = nullptr);

EdgeList edge_list(const TriMesh& mesh);

// Center at the vertex centroid and scale the bounding-box diagonal to 1.
std::pair<TriMesh, NormalizeTransform> normalize(const TriMesh& mesh);

int component_count(const TriMesh& mesh);
double mean_edge_length(const TriMesh& mesh);
double total_area(const TriMesh& mesh);
Vector face_areas(const TriMesh& mesh);

// Content hash over vertex/face bytes; mesh identity key for caches.
std::uint64_t content_hash(const TriMesh& mesh);

TriMesh transformed(const TriMesh& mesh, const NormalizeTransform& t);

// Ordered list of frames of one motion. Frames may differ in connectivity
// (unregistered); `registered()` is true when all frames share the faces of
// frame 0.
struct MotionSequence {
  std::vector<TriMesh> frames;
  std::string name;

  int frame_count() const { return static_cast<int>(frames.size()); }
  bool registered() const;
};

// Test/bench geometry.
TriMesh make_triangle();
TriMesh make_unit_square();                       // 2 triangles
TriMesh make_grid(int nx, int ny, double step);   // flat z=0 grid
TriMesh make_cube();
TriMesh make_icosphere(int subdivisions, double radius = 1.0);
TriMesh make_uv_sphere(int target_vertices, double radius = 1.0);

}  // namespace meshmotion
