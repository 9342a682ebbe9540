#include "meshmotion/mesh.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace meshmotion {

void validate(const TriMesh& mesh) {
  const int n = mesh.vertex_count();
  const int f = mesh.face_count();
  if (mesh.vertices.cols() != 3)
    throw ValidationError("mesh vertices must be N x 3");
  if (n < 3) throw ValidationError("mesh must have at least 3 vertices");
  if (f < 1) throw ValidationError("mesh must have at least 1 face");
  if (!mesh.vertices.allFinite())
    throw ValidationError("mesh has non-finite vertex coordinates");
  for (int i = 0; i < f; ++i) {
    const int a = mesh.faces(i, 0), b = mesh.faces(i, 1), c = mesh.faces(i, 2);
    if (a < 0 || a >= n || b < 0 || b >= n || c < 0 || c >= n)
      throw ValidationError("face " + std::to_string(i) +
                            " references vertex out of range");
    if (a == b || b == c || a == c)
      throw ValidationError("face " + std::to_string(i) +
                            " repeats a vertex index");
  }
}

bool MotionSequence::registered() const {
  if (frames.empty()) return false;
  for (const auto& fr : frames) {
    if (fr.faces.rows() != frames[0].faces.rows()) return false;
    if (fr.faces.rows() > 0 && fr.faces != frames[0].faces) return false;
    if (fr.vertices.rows() != frames[0].vertices.rows()) return false;
  }
  return true;
}

// --------------------------------------------------------------------------
// I/O
// --------------------------------------------------------------------------

namespace {

[[noreturn]] void parse_fail(const std::string& path, int line,
                             const std::string& msg) {
  throw ValidationError(path + ":" + std::to_string(line) + ": " + msg);
}

TriMesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> faces;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      Vec3 v;
      if (!(ss >> v.x() >> v.y() >> v.z()))
        parse_fail(path, lineno, "malformed vertex record");
      verts.push_back(v);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ss >> tok) {
        // "i", "i/t", "i/t/n", "i//n" all start with the vertex index.
        int v = 0;
        try {
          v = std::stoi(tok);
        } catch (const std::exception&) {
          parse_fail(path, lineno, "malformed face index '" + tok + "'");
        }
        if (v <= 0)
          parse_fail(path, lineno,
                     "OBJ face indices are 1-based; got " + std::to_string(v));
        if (v > static_cast<int>(verts.size()))
          parse_fail(path, lineno, "face index " + std::to_string(v) +
                                       " exceeds vertex count");
        idx.push_back(v - 1);
      }
      if (idx.size() != 3)
        parse_fail(path, lineno, "only triangular faces are supported");
      faces.push_back({idx[0], idx[1], idx[2]});
    }
    // vn/vt/usemtl/... ignored; normals are recomputed.
  }
  TriMesh mesh;
  mesh.vertices.resize(static_cast<int>(verts.size()), 3);
  for (size_t i = 0; i < verts.size(); ++i)
    mesh.vertices.row(static_cast<int>(i)) = verts[i].transpose();
  mesh.faces.resize(static_cast<int>(faces.size()), 3);
  for (size_t i = 0; i < faces.size(); ++i)
    for (int j = 0; j < 3; ++j) mesh.faces(static_cast<int>(i), j) = faces[i][j];
  validate(mesh);
  return mesh;
}

struct PlyProperty {
  std::string name;
  std::string type;       // scalar type, or list element type
  std::string count_type; // set for lists
  bool is_list = false;
};

int ply_type_size(const std::string& t, const std::string& path) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" ||
      t == "float32")
    return 4;
  if (t == "double" || t == "float64") return 8;
  throw ValidationError(path + ": unsupported PLY type '" + t + "'");
}

double ply_read_scalar(std::istream& in, const std::string& type, bool binary,
                       const std::string& path) {
  if (!binary) {
    double v;
    if (!(in >> v)) throw ValidationError(path + ": truncated PLY body");
    return v;
  }
  char buf[8];
  const int sz = ply_type_size(type, path);
  if (!in.read(buf, sz)) throw ValidationError(path + ": truncated PLY body");
  if (type == "char" || type == "int8") return *reinterpret_cast<int8_t*>(buf);
  if (type == "uchar" || type == "uint8") return *reinterpret_cast<uint8_t*>(buf);
  if (type == "short" || type == "int16") return *reinterpret_cast<int16_t*>(buf);
  if (type == "ushort" || type == "uint16") return *reinterpret_cast<uint16_t*>(buf);
  if (type == "int" || type == "int32") return *reinterpret_cast<int32_t*>(buf);
  if (type == "uint" || type == "uint32") return *reinterpret_cast<uint32_t*>(buf);
  if (type == "float" || type == "float32") {
    float f;
    std::memcpy(&f, buf, 4);
    return f;
  }
  double d;
  std::memcpy(&d, buf, 8);
  return d;
}

TriMesh load_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.substr(0, 3) != "ply")
    parse_fail(path, 1, "missing 'ply' magic");
  bool binary = false;
  struct Element {
    std::string name;
    long count = 0;
    std::vector<PlyProperty> props;
  };
  std::vector<Element> elements;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "comment" || tag == "obj_info") continue;
    if (tag == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt == "ascii")
        binary = false;
      else if (fmt == "binary_little_endian")
        binary = true;
      else
        parse_fail(path, lineno, "unsupported PLY format '" + fmt + "'");
    } else if (tag == "element") {
      Element e;
      ss >> e.name >> e.count;
      elements.push_back(e);
    } else if (tag == "property") {
      if (elements.empty()) parse_fail(path, lineno, "property before element");
      PlyProperty p;
      std::string t;
      ss >> t;
      if (t == "list") {
        p.is_list = true;
        ss >> p.count_type >> p.type >> p.name;
      } else {
        p.type = t;
        ss >> p.name;
      }
      elements.back().props.push_back(p);
    } else if (tag == "end_header") {
      break;
    } else if (!tag.empty()) {
      parse_fail(path, lineno, "unexpected header line '" + line + "'");
    }
  }

  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> faces;
  for (const auto& e : elements) {
    if (e.name == "vertex") {
      int ix = -1, iy = -1, iz = -1;
      for (size_t i = 0; i < e.props.size(); ++i) {
        if (e.props[i].is_list)
          throw ValidationError(path + ": list property in vertex element");
        if (e.props[i].name == "x") ix = static_cast<int>(i);
        if (e.props[i].name == "y") iy = static_cast<int>(i);
        if (e.props[i].name == "z") iz = static_cast<int>(i);
      }
      if (ix < 0 || iy < 0 || iz < 0)
        throw ValidationError(path + ": vertex element lacks x/y/z");
      verts.resize(e.count);
      for (long r = 0; r < e.count; ++r) {
        std::array<double, 64> vals{};
        for (size_t i = 0; i < e.props.size(); ++i)
          vals[i] = ply_read_scalar(in, e.props[i].type, binary, path);
        verts[r] = Vec3(vals[ix], vals[iy], vals[iz]);
      }
    } else if (e.name == "face") {
      for (long r = 0; r < e.count; ++r) {
        for (const auto& p : e.props) {
          if (p.is_list) {
            const long cnt =
                static_cast<long>(ply_read_scalar(in, p.count_type, binary, path));
            std::vector<long> idx(cnt);
            for (long j = 0; j < cnt; ++j)
              idx[j] = static_cast<long>(ply_read_scalar(in, p.type, binary, path));
            if (p.name == "vertex_indices" || p.name == "vertex_index") {
              if (cnt != 3)
                throw ValidationError(path + ": only triangular faces supported");
              faces.push_back({static_cast<int>(idx[0]), static_cast<int>(idx[1]),
                               static_cast<int>(idx[2])});
            }
          } else {
            ply_read_scalar(in, p.type, binary, path);
          }
        }
      }
    } else {
      // Unknown element: consume its rows.
      for (long r = 0; r < e.count; ++r)
        for (const auto& p : e.props) {
          if (p.is_list) {
            const long cnt =
                static_cast<long>(ply_read_scalar(in, p.count_type, binary, path));
            for (long j = 0; j < cnt; ++j) ply_read_scalar(in, p.type, binary, path);
          } else {
            ply_read_scalar(in, p.type, binary, path);
          }
        }
    }
  }

  TriMesh mesh;
  mesh.vertices.resize(static_cast<int>(verts.size()), 3);
  for (size_t i = 0; i < verts.size(); ++i)
    mesh.vertices.row(static_cast<int>(i)) = verts[i].transpose();
  mesh.faces.resize(static_cast<int>(faces.size()), 3);
  for (size_t i = 0; i < faces.size(); ++i)
    for (int j = 0; j < 3; ++j) mesh.faces(static_cast<int>(i), j) = faces[i][j];
  validate(mesh);
  return mesh;
}

bool has_suffix(const std::string& s, const std::string& suf) {
  if (s.size() < suf.size()) return false;
  std::string tail = s.substr(s.size() - suf.size());
  std::transform(tail.begin(), tail.end(), tail.begin(), ::tolower);
  return tail == suf;
}

void save_obj(const TriMesh& mesh, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot open " + path + " for writing");
  for (int i = 0; i < mesh.vertex_count(); ++i)
    std::fprintf(f, "v %.17g %.17g %.17g\n", mesh.vertices(i, 0),
                 mesh.vertices(i, 1), mesh.vertices(i, 2));
  for (int i = 0; i < mesh.face_count(); ++i)
    std::fprintf(f, "f %d %d %d\n", mesh.faces(i, 0) + 1, mesh.faces(i, 1) + 1,
                 mesh.faces(i, 2) + 1);
  if (std::fclose(f) != 0) throw IoError("write failed for " + path);
}

void save_ply(const TriMesh& mesh, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << "ply\nformat binary_little_endian 1.0\n";
  out << "element vertex " << mesh.vertex_count() << "\n";
  out << "property double x\nproperty double y\nproperty double z\n";
  out << "element face " << mesh.face_count() << "\n";
  out << "property list uchar int vertex_indices\n";
  out << "end_header\n";
  for (int i = 0; i < mesh.vertex_count(); ++i) {
    double xyz[3] = {mesh.vertices(i, 0), mesh.vertices(i, 1), mesh.vertices(i, 2)};
    out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
  }
  for (int i = 0; i < mesh.face_count(); ++i) {
    unsigned char n = 3;
    int32_t idx[3] = {mesh.faces(i, 0), mesh.faces(i, 1), mesh.faces(i, 2)};
    out.write(reinterpret_cast<const char*>(&n), 1);
    out.write(reinterpret_cast<const char*>(idx), sizeof(idx));
  }
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace

TriMesh load_mesh(const std::string& path) {
  TriMesh mesh;
  if (has_suffix(path, ".obj"))
    mesh = load_obj(path);
  else if (has_suffix(path, ".ply"))
    mesh = load_ply(path);
  else
    throw ValidationError("unsupported mesh format: " + path);
  mesh.name = path;
  return mesh;
}

void save_mesh(const TriMesh& mesh, const std::string& path) {
  validate(mesh);
  if (has_suffix(path, ".obj"))
    save_obj(mesh, path);
  else if (has_suffix(path, ".ply"))
    save_ply(mesh, path);
  else
    throw ValidationError("unsupported mesh format: " + path);
}

// --------------------------------------------------------------------------
// Derived quantities
// --------------------------------------------------------------------------

Matrix vertex_normals(const TriMesh& mesh, std::vector<int>* flagged) {
  const int n = mesh.vertex_count();
  Matrix acc = Matrix::Zero(n, 3);
  for (int f = 0; f < mesh.face_count(); ++f) {
    const int a = mesh.faces(f, 0), b = mesh.faces(f, 1), c = mesh.faces(f, 2);
    const Vec3 e1 = mesh.vertices.row(b) - mesh.vertices.row(a);
    const Vec3 e2 = mesh.vertices.row(c) - mesh.vertices.row(a);
    const Vec3 cr = e1.cross(e2);  // |cr| = 2 * area: raw sum is area weighting
    if (0.5 * cr.norm() < 1e-12) continue;
    acc.row(a) += cr.transpose();
    acc.row(b) += cr.transpose();
    acc.row(c) += cr.transpose();
  }
  for (int i = 0; i < n; ++i) {
    const double len = acc.row(i).norm();
    if (len < 1e-20) {
      acc.row(i).setZero();
      if (flagged) flagged->push_back(i);
    } else {
      acc.row(i) /= len;
    }
  }
  return acc;
}

EdgeList edge_list(const TriMesh& mesh) {
  std::vector<std::pair<int, int>> edges;
  edges.reserve(mesh.face_count() * 3);
  for (int f = 0; f < mesh.face_count(); ++f)
    for (int j = 0; j < 3; ++j) {
      int a = mesh.faces(f, j), b = mesh.faces(f, (j + 1) % 3);
      if (a > b) std::swap(a, b);
      edges.emplace_back(a, b);
    }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  EdgeList out;
  out.edges.resize(static_cast<int>(edges.size()), 2);
  for (size_t i = 0; i < edges.size(); ++i) {
    out.edges(static_cast<int>(i), 0) = edges[i].first;
    out.edges(static_cast<int>(i), 1) = edges[i].second;
  }
  return out;
}

std::pair<TriMesh, NormalizeTransform> normalize(const TriMesh& mesh) {
  validate(mesh);
  NormalizeTransform t;
  t.translation = mesh.vertices.colwise().mean().transpose();
  const Vec3 lo = mesh.vertices.colwise().minCoeff().transpose();
  const Vec3 hi = mesh.vertices.colwise().maxCoeff().transpose();
  const double diag = (hi - lo).norm();
  if (diag < 1e-12)
    throw ValidationError("degenerate mesh: bounding-box diagonal is zero");
  t.scale = 1.0 / diag;
  TriMesh out = mesh;
  out.vertices = t.apply(mesh.vertices);
  return {out, t};
}

namespace {
int uf_find(std::vector<int>& p, int x) {
  while (p[x] != x) {
    p[x] = p[p[x]];
    x = p[x];
  }
  return x;
}
}  // namespace

int component_count(const TriMesh& mesh) {
  const int n = mesh.vertex_count();
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  for (int f = 0; f < mesh.face_count(); ++f)
    for (int j = 0; j < 3; ++j) {
      const int a = uf_find(parent, mesh.faces(f, j));
      const int b = uf_find(parent, mesh.faces(f, (j + 1) % 3));
      if (a != b) parent[a] = b;
    }
  int count = 0;
  for (int i = 0; i < n; ++i)
    if (uf_find(parent, i) == i) ++count;
  return count;
}

double mean_edge_length(const TriMesh& mesh) {
  const EdgeList el = edge_list(mesh);
  if (el.count() == 0) return 0.0;
  double sum = 0.0;
  for (int e = 0; e < el.count(); ++e)
    sum += (mesh.vertices.row(el.edges(e, 0)) - mesh.vertices.row(el.edges(e, 1)))
               .norm();
  return sum / el.count();
}

Vector face_areas(const TriMesh& mesh) {
  Vector areas(mesh.face_count());
  for (int f = 0; f < mesh.face_count(); ++f) {
    const Vec3 e1 = mesh.vertices.row(mesh.faces(f, 1)) - mesh.vertices.row(mesh.faces(f, 0));
    const Vec3 e2 = mesh.vertices.row(mesh.faces(f, 2)) - mesh.vertices.row(mesh.faces(f, 0));
    areas[f] = 0.5 * e1.cross(e2).norm();
  }
  return areas;
}

double total_area(const TriMesh& mesh) { return face_areas(mesh).sum(); }

std::uint64_t content_hash(const TriMesh& mesh) {
  std::uint64_t h = fnv1a(mesh.vertices.data(),
                          sizeof(double) * mesh.vertices.size());
  h = fnv1a(mesh.faces.data(), sizeof(int) * mesh.faces.size(), h);
  return h;
}

TriMesh transformed(const TriMesh& mesh, const NormalizeTransform& t) {
  TriMesh out = mesh;
  out.vertices = t.apply(mesh.vertices);
  return out;
}

// --------------------------------------------------------------------------
// Procedural shapes
// --------------------------------------------------------------------------

TriMesh make_triangle() {
  TriMesh m;
  m.vertices.resize(3, 3);
  m.vertices << 0, 0, 0, 1, 0, 0, 0.5, std::sqrt(3.0) / 2.0, 0;
  m.faces.resize(1, 3);
  m.faces << 0, 1, 2;
  return m;
}

TriMesh make_unit_square() {
  TriMesh m;
  m.vertices.resize(4, 3);
  m.vertices << 0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0;
  m.faces.resize(2, 3);
  m.faces << 0, 1, 2, 0, 2, 3;
  return m;
}

TriMesh make_grid(int nx, int ny, double step) {
  TriMesh m;
  m.vertices.resize(nx * ny, 3);
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x)
      m.vertices.row(y * nx + x) << x * step, y * step, 0.0;
  m.faces.resize(2 * (nx - 1) * (ny - 1), 3);
  int f = 0;
  for (int y = 0; y + 1 < ny; ++y)
    for (int x = 0; x + 1 < nx; ++x) {
      const int i = y * nx + x;
      m.faces.row(f++) << i, i + 1, i + nx + 1;
      m.faces.row(f++) << i, i + nx + 1, i + nx;
    }
  return m;
}

TriMesh make_cube() {
  TriMesh m;
  m.vertices.resize(8, 3);
  m.vertices << 0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0, 0, 0, 1, 1, 0, 1, 1, 1, 1, 0, 1, 1;
  m.faces.resize(12, 3);
  m.faces << 0, 2, 1, 0, 3, 2,   // bottom (z=0, outward -z)
      4, 5, 6, 4, 6, 7,          // top
      0, 1, 5, 0, 5, 4,          // front
      1, 2, 6, 1, 6, 5,          // right
      2, 3, 7, 2, 7, 6,          // back
      3, 0, 4, 3, 4, 7;          // left
  return m;
}

TriMesh make_icosphere(int subdivisions, double radius) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> verts = {
      {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
      {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  std::vector<std::array<int, 3>> faces = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
      {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
      {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (auto& v : verts) v.normalize();
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      Vec3 m = (verts[a] + verts[b]).normalized();
      verts.push_back(m);
      const int idx = static_cast<int>(verts.size()) - 1;
      midpoint[key] = idx;
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(faces.size() * 4);
    for (const auto& f : faces) {
      const int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }
  TriMesh m;
  m.vertices.resize(static_cast<int>(verts.size()), 3);
  for (size_t i = 0; i < verts.size(); ++i)
    m.vertices.row(static_cast<int>(i)) = (verts[i] * radius).transpose();
  m.faces.resize(static_cast<int>(faces.size()), 3);
  for (size_t i = 0; i < faces.size(); ++i)
    for (int j = 0; j < 3; ++j) m.faces(static_cast<int>(i), j) = faces[i][j];
  return m;
}

TriMesh make_uv_sphere(int target_vertices, double radius) {
  // verts = n_lat * n_lon + 2 poles; pick n_lat ~ sqrt(target/2).
  const int n_lat = std::max(3, static_cast<int>(std::sqrt(target_vertices / 2.0)));
  const int n_lon = std::max(3, (target_vertices - 2) / n_lat);
  TriMesh m;
  m.vertices.resize(n_lat * n_lon + 2, 3);
  const int south = n_lat * n_lon, north = south + 1;
  for (int i = 0; i < n_lat; ++i) {
    const double phi = M_PI * (i + 1) / (n_lat + 1);
    for (int j = 0; j < n_lon; ++j) {
      const double th = 2.0 * M_PI * j / n_lon;
      m.vertices.row(i * n_lon + j) << radius * std::sin(phi) * std::cos(th),
          radius * std::sin(phi) * std::sin(th), radius * std::cos(phi);
    }
  }
  m.vertices.row(south) << 0, 0, -radius;
  m.vertices.row(north) << 0, 0, radius;
  std::vector<std::array<int, 3>> faces;
  for (int j = 0; j < n_lon; ++j) {
    const int jn = (j + 1) % n_lon;
    faces.push_back({north, j, jn});
    faces.push_back({south, (n_lat - 1) * n_lon + jn, (n_lat - 1) * n_lon + j});
  }
  for (int i = 0; i + 1 < n_lat; ++i)
    for (int j = 0; j < n_lon; ++j) {
      const int jn = (j + 1) % n_lon;
      const int a = i * n_lon + j, b = i * n_lon + jn;
      const int c = (i + 1) * n_lon + j, d = (i + 1) * n_lon + jn;
      faces.push_back({a, d, b});
      faces.push_back({a, c, d});
    }
  m.faces.resize(static_cast<int>(faces.size()), 3);
  for (size_t i = 0; i < faces.size(); ++i)
    for (int j = 0; j < 3; ++j) m.faces(static_cast<int>(i), j) = faces[i][j];
  return m;
}

}  // namespace meshmotion
