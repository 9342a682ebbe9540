#include "meshmotion/mesh.hpp"

#include <doctest.h>

#include <Eigen/Geometry>

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace meshmotion;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / "meshmotion_mesh_tests";
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

TriMesh random_mesh(int nv, std::uint64_t seed) {
  // Deformed grid: valid connectivity with irregular vertex positions.
  int nx = 10, ny = nv / 10;
  TriMesh m = make_grid(nx, ny, 0.1);
  Rng rng(seed);
  std::uniform_real_distribution<double> uni(-0.02, 0.02);
  for (int i = 0; i < m.vertex_count(); ++i)
    for (int j = 0; j < 3; ++j) m.vertices(i, j) += uni(rng);
  return m;
}

}  // namespace

TEST_CASE("load_obj smallest valid mesh") {
  const fs::path p = temp_dir() / "tri.obj";
  std::ofstream(p) << "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n";
  const TriMesh m = load_mesh(p.string());
  CHECK(m.vertex_count() == 3);
  CHECK(m.face_count() == 1);
}

TEST_CASE("load_obj rejects 0-based face indices") {
  const fs::path p = temp_dir() / "bad.obj";
  std::ofstream(p) << "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n";
  CHECK_THROWS_AS(load_mesh(p.string()), ValidationError);
}

TEST_CASE("load_obj reports the failing line") {
  const fs::path p = temp_dir() / "badline.obj";
  std::ofstream(p) << "v 0 0 0\nv 1 0 0\nv nope 1 0\n";
  try {
    load_mesh(p.string());
    FAIL("expected parse error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
  }
}

TEST_CASE("save/load round trip on a random 100-vertex mesh") {
  const TriMesh m = random_mesh(100, 42);
  for (const char* name : {"roundtrip.obj", "roundtrip.ply"}) {
    const fs::path p = temp_dir() / name;
    save_mesh(m, p.string());
    const TriMesh r = load_mesh(p.string());
    REQUIRE(r.vertex_count() == m.vertex_count());
    CHECK((r.vertices - m.vertices).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(r.faces == m.faces);
  }
}

TEST_CASE("ply ascii load") {
  const fs::path p = temp_dir() / "tri_ascii.ply";
  std::ofstream(p) << "ply\nformat ascii 1.0\nelement vertex 3\n"
                      "property float x\nproperty float y\nproperty float z\n"
                      "element face 1\nproperty list uchar int vertex_indices\n"
                      "end_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
  const TriMesh m = load_mesh(p.string());
  CHECK(m.vertex_count() == 3);
  CHECK(m.face_count() == 1);
  CHECK(m.vertices(1, 0) == doctest::Approx(1.0));
}

TEST_CASE("save/load identity on the unit cube") {
  const TriMesh cube = make_cube();
  const fs::path p = temp_dir() / "cube.ply";
  save_mesh(cube, p.string());
  const TriMesh r = load_mesh(p.string());
  CHECK((r.vertices - cube.vertices).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("save to unwritable path raises IoError") {
  const TriMesh m = make_triangle();
  CHECK_THROWS_AS(save_mesh(m, "/proc/readonly/out.obj"), IoError);
}

TEST_CASE("saved OBJ has one v record per vertex (6890-vertex mesh)") {
  const TriMesh m = make_grid(65, 106, 0.01);  // 65 * 106 = 6890
  REQUIRE(m.vertex_count() == 6890);
  const fs::path p = temp_dir() / "big.obj";
  save_mesh(m, p.string());
  std::ifstream in(p);
  std::string line;
  int v_records = 0;
  while (std::getline(in, line))
    if (line.rfind("v ", 0) == 0) ++v_records;
  CHECK(v_records == 6890);
}

TEST_CASE("vertex normals on a flat grid point up") {
  const TriMesh g = make_grid(8, 8, 0.2);
  const Matrix n = vertex_normals(g);
  for (int i = 0; i < g.vertex_count(); ++i) {
    CHECK(n(i, 2) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("icosphere normals are radial") {
  const TriMesh s = make_icosphere(2);
  const Matrix n = vertex_normals(s);
  for (int i = 0; i < s.vertex_count(); ++i) {
    const Vec3 radial = s.vertices.row(i).normalized();
    CHECK(n.row(i).dot(radial.transpose()) > 0.99);
  }
}

TEST_CASE("mirroring the mesh mirrors the normals") {
  const TriMesh m = make_icosphere(1);
  TriMesh mirrored = m;
  mirrored.vertices.col(0) *= -1.0;
  for (int f = 0; f < mirrored.face_count(); ++f)
    std::swap(mirrored.faces(f, 1), mirrored.faces(f, 2));
  const Matrix n = vertex_normals(m);
  Matrix nm = vertex_normals(mirrored);
  nm.col(0) *= -1.0;
  CHECK((n - nm).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("normals rows are unit or zero, and rotate with the mesh") {
  const TriMesh m = random_mesh(100, 3);
  const Matrix n = vertex_normals(m);
  for (int i = 0; i < m.vertex_count(); ++i) {
    const double len = n.row(i).norm();
    CHECK((std::abs(len - 1.0) < 1e-6 || len == 0.0));
  }
  const Eigen::Matrix3d rot =
      Eigen::AngleAxisd(0.83, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  TriMesh rotated = m;
  rotated.vertices = m.vertices * rot.transpose();
  const Matrix nr = vertex_normals(rotated);
  CHECK((nr - n * rot.transpose()).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("edge counts: triangle, shared edge, Euler formula") {
  CHECK(edge_list(make_triangle()).count() == 3);
  CHECK(edge_list(make_unit_square()).count() == 5);
  const TriMesh s = make_icosphere(3);  // closed, genus 0
  CHECK(edge_list(s).count() == s.vertex_count() + s.face_count() - 2);
}

TEST_CASE("edge_list does not depend on face order") {
  TriMesh s = make_icosphere(1);
  TriMesh shuffled = s;
  shuffled.faces.row(0).swap(shuffled.faces.row(7));
  shuffled.faces.row(3).swap(shuffled.faces.row(11));
  CHECK(edge_list(s).edges == edge_list(shuffled).edges);
}

TEST_CASE("normalize centers and scales to unit diagonal") {
  const TriMesh m = random_mesh(100, 9);
  auto [norm, t] = normalize(m);
  const Vec3 lo = norm.vertices.colwise().minCoeff().transpose();
  const Vec3 hi = norm.vertices.colwise().maxCoeff().transpose();
  CHECK((hi - lo).norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(norm.vertices.colwise().mean().norm() < 1e-12);

  SUBCASE("already-normalized mesh gives identity-equivalent transform") {
    auto [norm2, t2] = normalize(norm);
    CHECK(std::abs(t2.scale - 1.0) < 1e-9);
    CHECK(t2.translation.norm() < 1e-9);
  }

  SUBCASE("scaled and shifted input reproduces the same normalized output") {
    TriMesh moved = m;
    moved.vertices = (m.vertices * 5.0).rowwise() + RowVector::Constant(3, 1.7);
    auto [norm3, t3] = normalize(moved);
    CHECK((norm3.vertices - norm.vertices).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("transform round-trips") {
    const Matrix back = t.invert(norm.vertices);
    CHECK((back - m.vertices).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("normalize rejects degenerate meshes") {
  TriMesh m;
  m.vertices = Matrix::Zero(3, 3);  // single repeated point
  m.faces.resize(1, 3);
  m.faces << 0, 1, 2;
  CHECK_THROWS_AS(normalize(m), ValidationError);
}

TEST_CASE("component count") {
  CHECK(component_count(make_icosphere(1)) == 1);
  TriMesh two;
  two.vertices.resize(6, 3);
  two.vertices << 0, 0, 0, 1, 0, 0, 0, 1, 0, 5, 5, 5, 6, 5, 5, 5, 6, 5;
  two.faces.resize(2, 3);
  two.faces << 0, 1, 2, 3, 4, 5;
  CHECK(component_count(two) == 2);
}

TEST_CASE("validate rejects broken meshes") {
  TriMesh m = make_triangle();
  SUBCASE("out of range index") {
    m.faces(0, 2) = 7;
    CHECK_THROWS_AS(validate(m), ValidationError);
  }
  SUBCASE("repeated index") {
    m.faces(0, 1) = m.faces(0, 0);
    CHECK_THROWS_AS(validate(m), ValidationError);
  }
}
