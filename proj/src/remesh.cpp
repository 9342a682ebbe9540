#include "meshmotion/remesh.hpp"

#include "meshmotion/spatial.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <queue>
#include <set>
#include <unordered_set>

namespace meshmotion {

const char* remesh_variant_name(RemeshVariant v) {
  switch (v) {
    case RemeshVariant::kOriginal: return "original";
    case RemeshVariant::kDownsample2: return "ds2";
    case RemeshVariant::kUpsample2: return "us2";
    case RemeshVariant::kVariableDensity: return "vd";
  }
  return "?";
}

RemeshVariant remesh_variant_from_name(const std::string& name) {
  if (name == "original") return RemeshVariant::kOriginal;
  if (name == "ds2") return RemeshVariant::kDownsample2;
  if (name == "us2") return RemeshVariant::kUpsample2;
  if (name == "vd") return RemeshVariant::kVariableDensity;
  throw ValidationError("unknown remesh variant '" + name + "'");
}

namespace {

// Mutable mesh with vertex->face incidence, supporting edge collapses and
// midpoint splits. Dead vertices/faces are flagged and compacted at the end.
struct EditableMesh {
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> faces;
  std::vector<bool> vert_alive;
  std::vector<bool> face_alive;
  std::vector<std::vector<int>> incident;  // vertex -> face ids
  std::vector<int> stamp;                  // bumped when a vertex changes
  int alive_verts = 0;

  explicit EditableMesh(const TriMesh& m) {
    verts.resize(m.vertex_count());
    for (int i = 0; i < m.vertex_count(); ++i)
      verts[i] = m.vertices.row(i).transpose();
    faces.resize(m.face_count());
    for (int f = 0; f < m.face_count(); ++f)
      faces[f] = {m.faces(f, 0), m.faces(f, 1), m.faces(f, 2)};
    vert_alive.assign(verts.size(), true);
    face_alive.assign(faces.size(), true);
    stamp.assign(verts.size(), 0);
    incident.resize(verts.size());
    for (size_t f = 0; f < faces.size(); ++f)
      for (int j = 0; j < 3; ++j) incident[faces[f][j]].push_back(static_cast<int>(f));
    alive_verts = static_cast<int>(verts.size());
  }

  std::vector<int> faces_of_edge(int a, int b) const {
    std::vector<int> out;
    for (int f : incident[a]) {
      if (!face_alive[f]) continue;
      const auto& t = faces[f];
      if (t[0] == b || t[1] == b || t[2] == b) out.push_back(f);
    }
    return out;
  }

  std::vector<int> neighbors(int v) const {
    std::vector<int> out;
    for (int f : incident[v]) {
      if (!face_alive[f]) continue;
      for (int j = 0; j < 3; ++j)
        if (faces[f][j] != v) out.push_back(faces[f][j]);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  Vec3 face_normal(int f) const {
    const auto& t = faces[f];
    return (verts[t[1]] - verts[t[0]]).cross(verts[t[2]] - verts[t[0]]);
  }

  // Halve edge (a,b) into a at the midpoint. Returns false (and leaves the
  // mesh untouched) when the collapse would break the link condition or flip
  // a surviving face.
  bool collapse(int a, int b) {
    if (!vert_alive[a] || !vert_alive[b]) return false;
    const std::vector<int> dead = faces_of_edge(a, b);
    if (dead.empty()) return false;

    // Link condition: shared neighbors must be exactly the opposite vertices
    // of the faces sharing (a,b).
    std::vector<int> na = neighbors(a), nb = neighbors(b), shared;
    std::set_intersection(na.begin(), na.end(), nb.begin(), nb.end(),
                          std::back_inserter(shared));
    if (shared.size() != dead.size()) return false;

    const Vec3 mid = 0.5 * (verts[a] + verts[b]);

    // Surviving faces touching a or b must keep their orientation.
    std::vector<int> moved;
    for (int v : {a, b})
      for (int f : incident[v]) {
        if (!face_alive[f]) continue;
        if (std::find(dead.begin(), dead.end(), f) != dead.end()) continue;
        moved.push_back(f);
      }
    std::sort(moved.begin(), moved.end());
    moved.erase(std::unique(moved.begin(), moved.end()), moved.end());
    const Vec3 old_a = verts[a];
    for (int f : moved) {
      const Vec3 before = face_normal(f);
      std::array<int, 3> t = faces[f];
      for (int& idx : t)
        if (idx == b) idx = a;
      Vec3 pts[3];
      for (int j = 0; j < 3; ++j) pts[j] = (t[j] == a) ? mid : verts[t[j]];
      const Vec3 after = (pts[1] - pts[0]).cross(pts[2] - pts[0]);
      if (before.dot(after) <= 1e-16 * before.norm() * after.norm()) return false;
      if (after.norm() < 1e-14) return false;
    }
    (void)old_a;

    // Commit.
    for (int f : dead) face_alive[f] = false;
    verts[a] = mid;
    for (int f : moved) {
      bool had_b = false;
      for (int& idx : faces[f])
        if (idx == b) {
          idx = a;
          had_b = true;
        }
      if (had_b) incident[a].push_back(f);
    }
    vert_alive[b] = false;
    incident[b].clear();
    ++stamp[a];
    ++stamp[b];
    --alive_verts;
    return true;
  }

  // Split edge (a,b) at the midpoint; each incident face becomes two.
  // Returns the new vertex index, or -1 when (a,b) is not a live edge.
  int split(int a, int b) {
    if (!vert_alive[a] || !vert_alive[b]) return -1;
    const std::vector<int> shared = faces_of_edge(a, b);
    if (shared.empty()) return -1;
    const int m = static_cast<int>(verts.size());
    verts.push_back(0.5 * (verts[a] + verts[b]));
    vert_alive.push_back(true);
    stamp.push_back(0);
    incident.emplace_back();
    ++alive_verts;
    for (int f : shared) {
      // (x, a, b) cyclic -> (x, a, m) + (x, m, b): orientation preserved.
      std::array<int, 3> t = faces[f];
      int k = 0;
      while (!((t[k % 3] == a && t[(k + 1) % 3] == b) ||
               (t[k % 3] == b && t[(k + 1) % 3] == a)))
        ++k;
      const int u = t[k % 3], v = t[(k + 1) % 3], w = t[(k + 2) % 3];
      face_alive[f] = false;
      faces.push_back({u, m, w});
      face_alive.push_back(true);
      const int f1 = static_cast<int>(faces.size()) - 1;
      faces.push_back({m, v, w});
      face_alive.push_back(true);
      const int f2 = static_cast<int>(faces.size()) - 1;
      for (int idx : {u, w}) incident[idx].push_back(f1);
      for (int idx : {v, w}) incident[idx].push_back(f2);
      incident[m].push_back(f1);
      incident[m].push_back(f2);
    }
    ++stamp[a];
    ++stamp[b];
    return m;
  }

  TriMesh compact() const {
    TriMesh out;
    std::vector<int> remap(verts.size(), -1);
    int n = 0;
    for (size_t i = 0; i < verts.size(); ++i)
      if (vert_alive[i]) remap[i] = n++;
    out.vertices.resize(n, 3);
    for (size_t i = 0; i < verts.size(); ++i)
      if (vert_alive[i]) out.vertices.row(remap[i]) = verts[i].transpose();
    std::vector<std::array<int, 3>> fs;
    for (size_t f = 0; f < faces.size(); ++f) {
      if (!face_alive[f]) continue;
      const auto& t = faces[f];
      if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) continue;
      fs.push_back({remap[t[0]], remap[t[1]], remap[t[2]]});
    }
    out.faces.resize(static_cast<int>(fs.size()), 3);
    for (size_t f = 0; f < fs.size(); ++f)
      for (int j = 0; j < 3; ++j) out.faces(static_cast<int>(f), j) = fs[f][j];
    return out;
  }
};

struct HeapEdge {
  double key;  // length for collapse (min-heap), -length for split
  int a, b;
  int stamp_a, stamp_b;
  bool operator<(const HeapEdge& o) const {
    if (key != o.key) return key > o.key;  // priority_queue: smallest key first
    if (a != o.a) return a > o.a;
    return b > o.b;
  }
};

using EdgeHeap = std::priority_queue<HeapEdge>;

void push_edges_of(EditableMesh& em, int v, EdgeHeap& heap, bool longest,
                   const std::vector<char>* vert_mask) {
  if (!em.vert_alive[v]) return;
  for (int u : em.neighbors(v)) {
    if (vert_mask && (!(*vert_mask)[v] || !(*vert_mask)[u])) continue;
    const double len = (em.verts[v] - em.verts[u]).norm();
    const int a = std::min(u, v), b = std::max(u, v);
    heap.push({longest ? -len : len, a, b, em.stamp[a], em.stamp[b]});
  }
}

void seed_heap(EditableMesh& em, EdgeHeap& heap, bool longest,
               const std::vector<char>* vert_mask) {
  std::set<std::pair<int, int>> seen;
  for (size_t f = 0; f < em.faces.size(); ++f) {
    if (!em.face_alive[f]) continue;
    for (int j = 0; j < 3; ++j) {
      int a = em.faces[f][j], b = em.faces[f][(j + 1) % 3];
      if (a > b) std::swap(a, b);
      if (vert_mask && (!(*vert_mask)[a] || !(*vert_mask)[b])) continue;
      if (!seen.insert({a, b}).second) continue;
      const double len = (em.verts[a] - em.verts[b]).norm();
      heap.push({longest ? -len : len, a, b, em.stamp[a], em.stamp[b]});
    }
  }
}

// Shortest-edge collapses with midpoint placement until `target` vertices
// remain (or no further collapse is legal).
void decimate_to(EditableMesh& em, int target, const std::vector<char>* mask) {
  EdgeHeap heap;
  seed_heap(em, heap, /*longest=*/false, mask);
  int stale_reseeds = 0;
  while (em.alive_verts > target) {
    if (heap.empty()) {
      if (++stale_reseeds > 2) break;
      seed_heap(em, heap, false, mask);
      if (heap.empty()) break;
    }
    const HeapEdge e = heap.top();
    heap.pop();
    if (!em.vert_alive[e.a] || !em.vert_alive[e.b]) continue;
    if (em.stamp[e.a] != e.stamp_a || em.stamp[e.b] != e.stamp_b) continue;
    if (em.collapse(e.a, e.b)) push_edges_of(em, e.a, heap, false, mask);
  }
}

// Longest-edge midpoint splits until `target` vertices exist. `mask` grows:
// new midpoints inherit eligibility from the side test when given.
void refine_to(EditableMesh& em, int target, std::vector<char>* mask) {
  EdgeHeap heap;
  seed_heap(em, heap, /*longest=*/true, mask);
  while (em.alive_verts < target && !heap.empty()) {
    const HeapEdge e = heap.top();
    heap.pop();
    if (!em.vert_alive[e.a] || !em.vert_alive[e.b]) continue;
    if (em.stamp[e.a] != e.stamp_a || em.stamp[e.b] != e.stamp_b) continue;
    const int m = em.split(e.a, e.b);
    if (m < 0) continue;
    if (mask) mask->push_back(1);
    push_edges_of(em, e.a, heap, true, mask);
    push_edges_of(em, e.b, heap, true, mask);
    push_edges_of(em, m, heap, true, mask);
  }
}

}  // namespace

TriMesh remesh(const TriMesh& mesh, RemeshVariant variant, std::uint64_t seed) {
  (void)seed;  // all variants are deterministic functions of the mesh
  validate(mesh);
  if (variant == RemeshVariant::kOriginal) return mesh;

  const int n = mesh.vertex_count();
  EditableMesh em(mesh);

  if (variant == RemeshVariant::kDownsample2) {
    const int target = n / 2;
    if (target < 10)
      throw ValidationError("refusing to decimate below 10 vertices");
    decimate_to(em, target, nullptr);
  } else if (variant == RemeshVariant::kUpsample2) {
    refine_to(em, 2 * n, nullptr);
  } else {  // variable density
    // Plane through the centroid, normal along the longest bbox axis.
    const Vec3 centroid = mesh.vertices.colwise().mean().transpose();
    const Vec3 extent = (mesh.vertices.colwise().maxCoeff() -
                         mesh.vertices.colwise().minCoeff())
                            .transpose();
    int axis = 0;
    extent.maxCoeff(&axis);
    std::vector<char> dense(n), sparse(n);
    int n_dense = 0, n_sparse = 0;
    for (int i = 0; i < n; ++i) {
      const bool positive = mesh.vertices(i, axis) >= centroid[axis];
      dense[i] = positive;
      sparse[i] = !positive;
      (positive ? n_dense : n_sparse)++;
    }
    // Down half to ~0.38x, up half to ~2.2x: edge-length contrast >= 2.
    if (n_sparse > 20) {
      const int keep = std::max(10, static_cast<int>(0.38 * n_sparse));
      decimate_to(em, em.alive_verts - (n_sparse - keep), &sparse);
    }
    dense.resize(em.verts.size(), 0);
    refine_to(em, em.alive_verts + static_cast<int>(1.2 * n_dense), &dense);
  }

  TriMesh out = em.compact();
  out.name = mesh.name;
  validate(out);
  return out;
}

std::vector<int> nearest_correspondence(const TriMesh& source,
                                        const TriMesh& target) {
  return nearest_indices(source.vertices, target.vertices);
}

}  // namespace meshmotion
