#include "meshmotion/spectral.hpp"

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace meshmotion {

namespace {

constexpr int kDenseThreshold = 700;
constexpr double kDegenerateArea = 1e-12;

void assemble(const TriMesh& mesh, SparseMatrix* laplacian, Vector* mass) {
  const int n = mesh.vertex_count();
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(mesh.face_count() * 12);
  Vector m = Vector::Zero(n);
  for (int f = 0; f < mesh.face_count(); ++f) {
    const int i0 = mesh.faces(f, 0), i1 = mesh.faces(f, 1), i2 = mesh.faces(f, 2);
    const Vec3 p0 = mesh.vertices.row(i0), p1 = mesh.vertices.row(i1),
               p2 = mesh.vertices.row(i2);
    const double area = 0.5 * (p1 - p0).cross(p2 - p0).norm();
    if (area < kDegenerateArea) continue;  // slivers skipped at assembly
    const int idx[3] = {i0, i1, i2};
    const Vec3 pts[3] = {p0, p1, p2};
    for (int c = 0; c < 3; ++c) {
      // Angle at corner c faces edge (c+1, c+2); cot = dot / |cross|.
      const Vec3 u = pts[(c + 1) % 3] - pts[c];
      const Vec3 v = pts[(c + 2) % 3] - pts[c];
      const double cot = u.dot(v) / (2.0 * area);
      const double w = 0.5 * cot;  // half-cotangent; two faces sum per edge
      const int a = idx[(c + 1) % 3], b = idx[(c + 2) % 3];
      trips.emplace_back(a, b, -w);
      trips.emplace_back(b, a, -w);
      trips.emplace_back(a, a, w);
      trips.emplace_back(b, b, w);
      m[idx[c]] += area / 3.0;
    }
  }
  laplacian->resize(n, n);
  laplacian->setFromTriplets(trips.begin(), trips.end());
  *mass = m;
}

// Deterministic sign: largest-magnitude entry of each eigenvector positive.
void fix_signs(Matrix& vecs) {
  for (int c = 0; c < vecs.cols(); ++c) {
    int idx = 0;
    vecs.col(c).cwiseAbs().maxCoeff(&idx);
    if (vecs(idx, c) < 0) vecs.col(c) = -vecs.col(c);
  }
}

void solve_dense(const SparseMatrix& L, const Vector& mass, int k, Vector* evals,
                 Matrix* evecs) {
  const int n = static_cast<int>(mass.size());
  const Vector inv_sqrt_m = mass.cwiseSqrt().cwiseInverse();
  Matrix B = Matrix(L) * inv_sqrt_m.asDiagonal();
  B = inv_sqrt_m.asDiagonal() * B;
  B = 0.5 * (B + B.transpose());  // symmetrize roundoff
  Eigen::SelfAdjointEigenSolver<Matrix> solver(B);
  if (solver.info() != Eigen::Success)
    throw NumericalError("dense eigensolver failed");
  *evals = solver.eigenvalues().head(k);
  *evecs = inv_sqrt_m.asDiagonal() * solver.eigenvectors().leftCols(k);
}

// Shift-invert Lanczos with full reorthogonalization on the operator
// (L + sigma M)^-1 M, self-adjoint in the M inner product. Largest Ritz
// values correspond to the smallest eigenvalues of (L, M).
void solve_lanczos(const SparseMatrix& L, const Vector& mass, int k,
                   Vector* evals, Matrix* evecs) {
  const int n = static_cast<int>(mass.size());
  const double scale = L.coeffs().cwiseAbs().sum() / mass.sum();
  const double sigma = std::max(1e-10, 1e-8 * scale);
  SparseMatrix A = L;
  Vector shifted = sigma * mass;
  for (int i = 0; i < n; ++i) A.coeffRef(i, i) += shifted[i];
  Eigen::SimplicialLDLT<SparseMatrix> chol(A);
  if (chol.info() != Eigen::Success)
    throw NumericalError("sparse factorization failed in eigensolver");

  const int m = std::min(n, std::max(2 * k, k + 40));
  Matrix Q(n, m + 1);
  Vector alpha(m), beta(m + 1);
  Rng rng(0x5eed5eedULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector q(n);
  for (int i = 0; i < n; ++i) q[i] = gauss(rng);
  q /= std::sqrt(q.dot(mass.cwiseProduct(q)));
  Q.col(0) = q;
  beta[0] = 0.0;
  int iters = m;
  for (int j = 0; j < m; ++j) {
    Vector w = chol.solve(mass.cwiseProduct(Q.col(j)));
    alpha[j] = w.dot(mass.cwiseProduct(Q.col(j)));
    w -= alpha[j] * Q.col(j);
    if (j > 0) w -= beta[j] * Q.col(j - 1);
    // Full reorthogonalization (twice) in the M inner product.
    for (int pass = 0; pass < 2; ++pass) {
      Vector proj = Q.leftCols(j + 1).transpose() * mass.cwiseProduct(w);
      w -= Q.leftCols(j + 1) * proj;
    }
    beta[j + 1] = std::sqrt(std::max(0.0, w.dot(mass.cwiseProduct(w))));
    if (beta[j + 1] < 1e-14) {
      iters = j + 1;
      break;
    }
    Q.col(j + 1) = w / beta[j + 1];
  }
  Matrix T = Matrix::Zero(iters, iters);
  for (int j = 0; j < iters; ++j) {
    T(j, j) = alpha[j];
    if (j + 1 < iters) {
      T(j, j + 1) = beta[j + 1];
      T(j + 1, j) = beta[j + 1];
    }
  }
  Eigen::SelfAdjointEigenSolver<Matrix> tsolver(T);
  if (tsolver.info() != Eigen::Success)
    throw NumericalError("tridiagonal eigensolver failed");
  // Ritz values mu (ascending); take the k largest -> smallest lambda.
  if (iters < k) throw NumericalError("Lanczos breakdown before k eigenpairs");
  Vector lam(k);
  Matrix vecs(n, k);
  for (int i = 0; i < k; ++i) {
    const int src = iters - 1 - i;  // largest mu first
    const double mu = tsolver.eigenvalues()[src];
    lam[i] = 1.0 / mu - sigma;
    vecs.col(i) = Q.leftCols(iters) * tsolver.eigenvectors().col(src);
  }
  // Ascending lambda == order produced above reversed pairwise; sort anyway.
  std::vector<int> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return lam[a] < lam[b]; });
  evals->resize(k);
  evecs->resize(n, k);
  for (int i = 0; i < k; ++i) {
    (*evals)[i] = lam[order[i]];
    evecs->col(i) = vecs.col(order[i]);
  }
  // Re-normalize in M (guards against accumulated roundoff).
  for (int i = 0; i < k; ++i) {
    const double nrm = std::sqrt(evecs->col(i).dot(mass.cwiseProduct(evecs->col(i))));
    evecs->col(i) /= nrm;
  }
}

void build_tangent_ops(const TriMesh& mesh, SpectralOps* ops) {
  const int n = mesh.vertex_count();
  ops->normals = vertex_normals(mesh);
  ops->frame_u.resize(n, 3);
  ops->frame_v.resize(n, 3);
  const EdgeList el = edge_list(mesh);
  std::vector<std::vector<int>> ring(n);
  for (int e = 0; e < el.count(); ++e) {
    ring[el.edges(e, 0)].push_back(el.edges(e, 1));
    ring[el.edges(e, 1)].push_back(el.edges(e, 0));
  }
  std::vector<Eigen::Triplet<double>> tx, ty;
  for (int i = 0; i < n; ++i) {
    Vec3 nrm = ops->normals.row(i);
    if (nrm.norm() < 0.5) nrm = Vec3(0, 0, 1);  // flagged vertex; frame arbitrary
    // First axis: global x projected into the tangent plane, else y.
    Vec3 a(1, 0, 0);
    if (std::abs(nrm.dot(a)) > 0.9) a = Vec3(0, 1, 0);
    const Vec3 e1 = (a - nrm.dot(a) * nrm).normalized();
    const Vec3 e2 = nrm.cross(e1);
    ops->frame_u.row(i) = e1.transpose();
    ops->frame_v.row(i) = e2.transpose();

    const auto& nb = ring[i];
    if (nb.size() < 2) {
      ops->flagged_vertices.push_back(i);
      continue;
    }
    const int j = static_cast<int>(nb.size());
    Matrix U(j, 2);
    for (int r = 0; r < j; ++r) {
      const Vec3 d = mesh.vertices.row(nb[r]) - mesh.vertices.row(i);
      U(r, 0) = d.dot(e1);
      U(r, 1) = d.dot(e2);
    }
    Eigen::Matrix2d UtU = U.transpose() * U;
    UtU += 1e-12 * UtU.trace() * Eigen::Matrix2d::Identity();
    const Eigen::Matrix2d inv = UtU.inverse();
    const Matrix P = inv * U.transpose();  // 2 x j
    double sum_x = 0.0, sum_y = 0.0;
    for (int r = 0; r < j; ++r) {
      tx.emplace_back(i, nb[r], P(0, r));
      ty.emplace_back(i, nb[r], P(1, r));
      sum_x += P(0, r);
      sum_y += P(1, r);
    }
    tx.emplace_back(i, i, -sum_x);
    ty.emplace_back(i, i, -sum_y);
  }
  ops->grad_x.resize(n, n);
  ops->grad_y.resize(n, n);
  ops->grad_x.setFromTriplets(tx.begin(), tx.end());
  ops->grad_y.setFromTriplets(ty.begin(), ty.end());
}

}  // namespace

SpectralOps build_operators(const TriMesh& mesh, int k) {
  validate(mesh);
  const int n = mesh.vertex_count();
  if (k < 1) throw ValidationError("eigenpair count must be >= 1");
  if (k > n - 1)
    throw ValidationError("eigenpair count " + std::to_string(k) +
                          " too large for mesh with " + std::to_string(n) +
                          " vertices (need k <= N_S - 1)");
  const int comps = component_count(mesh);
  if (comps != 1)
    throw ValidationError("mesh has " + std::to_string(comps) +
                          " connected components; heat diffusion requires 1");

  SpectralOps ops;
  ops.n = n;
  ops.k = k;
  ops.mesh_hash = content_hash(mesh);
  assemble(mesh, &ops.laplacian, &ops.mass);
  // Vertices whose faces were all skipped as degenerate -> tiny positive mass.
  const double mean_mass = ops.mass.sum() / n;
  for (int i = 0; i < n; ++i)
    if (ops.mass[i] <= 0.0) ops.mass[i] = 1e-10 * mean_mass;

  if (n <= kDenseThreshold)
    solve_dense(ops.laplacian, ops.mass, k, &ops.eigenvalues, &ops.eigenvectors);
  else
    solve_lanczos(ops.laplacian, ops.mass, k, &ops.eigenvalues, &ops.eigenvectors);
  ops.eigenvalues = ops.eigenvalues.cwiseMax(0.0);
  fix_signs(ops.eigenvectors);
  build_tangent_ops(mesh, &ops);
  return ops;
}

Matrix diffuse(const SpectralOps& ops, const Matrix& field, const Vector& times) {
  if (field.rows() != ops.n)
    throw ValidationError("diffuse: field rows do not match operators");
  if (times.size() != field.cols())
    throw ValidationError("diffuse: one time per channel required");
  if ((times.array() < 0.0).any())
    throw ValidationError("diffuse: negative diffusion time");
  const Matrix coeff =
      ops.eigenvectors.transpose() * ops.mass.asDiagonal() * field;  // k x C
  Matrix damped(ops.k, field.cols());
  for (int c = 0; c < field.cols(); ++c)
    damped.col(c) = (-ops.eigenvalues.array() * times[c]).exp() * coeff.col(c).array();
  return ops.eigenvectors * damped;
}

Matrix tangent_gradient(const SpectralOps& ops, const Vector& field) {
  if (field.size() != ops.n)
    throw ValidationError("tangent_gradient: field size mismatch");
  if (!field.allFinite())
    throw ValidationError("tangent_gradient: non-finite field");
  Matrix out(ops.n, 2);
  out.col(0) = ops.grad_x * field;
  out.col(1) = ops.grad_y * field;
  return out;
}

// --------------------------------------------------------------------------
// Serialization: "MMSPEC01" header, little-endian arrays.
// --------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'M', 'S', 'P', 'E', 'C', '0', '1'};

void write_matrix(std::ofstream& out, const Matrix& m) {
  const int64_t r = m.rows(), c = m.cols();
  out.write(reinterpret_cast<const char*>(&r), 8);
  out.write(reinterpret_cast<const char*>(&c), 8);
  out.write(reinterpret_cast<const char*>(m.data()), sizeof(double) * r * c);
}

Matrix read_matrix(std::ifstream& in) {
  int64_t r = 0, c = 0;
  in.read(reinterpret_cast<char*>(&r), 8);
  in.read(reinterpret_cast<char*>(&c), 8);
  Matrix m(r, c);
  in.read(reinterpret_cast<char*>(m.data()), sizeof(double) * r * c);
  return m;
}

void write_sparse(std::ofstream& out, const SparseMatrix& s) {
  std::vector<int64_t> rows, cols;
  std::vector<double> vals;
  for (int k = 0; k < s.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(s, k); it; ++it) {
      rows.push_back(it.row());
      cols.push_back(it.col());
      vals.push_back(it.value());
    }
  const int64_t n = static_cast<int64_t>(vals.size());
  const int64_t r = s.rows(), c = s.cols();
  out.write(reinterpret_cast<const char*>(&r), 8);
  out.write(reinterpret_cast<const char*>(&c), 8);
  out.write(reinterpret_cast<const char*>(&n), 8);
  out.write(reinterpret_cast<const char*>(rows.data()), 8 * n);
  out.write(reinterpret_cast<const char*>(cols.data()), 8 * n);
  out.write(reinterpret_cast<const char*>(vals.data()), 8 * n);
}

SparseMatrix read_sparse(std::ifstream& in) {
  int64_t r = 0, c = 0, n = 0;
  in.read(reinterpret_cast<char*>(&r), 8);
  in.read(reinterpret_cast<char*>(&c), 8);
  in.read(reinterpret_cast<char*>(&n), 8);
  std::vector<int64_t> rows(n), cols(n);
  std::vector<double> vals(n);
  in.read(reinterpret_cast<char*>(rows.data()), 8 * n);
  in.read(reinterpret_cast<char*>(cols.data()), 8 * n);
  in.read(reinterpret_cast<char*>(vals.data()), 8 * n);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(n);
  for (int64_t i = 0; i < n; ++i)
    trips.emplace_back(static_cast<int>(rows[i]), static_cast<int>(cols[i]), vals[i]);
  SparseMatrix s(r, c);
  s.setFromTriplets(trips.begin(), trips.end());
  return s;
}

}  // namespace

void save_operators(const SpectralOps& ops, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(kMagic, 8);
  const int64_t n = ops.n, k = ops.k;
  out.write(reinterpret_cast<const char*>(&n), 8);
  out.write(reinterpret_cast<const char*>(&k), 8);
  out.write(reinterpret_cast<const char*>(&ops.mesh_hash), 8);
  write_matrix(out, ops.mass);
  write_matrix(out, ops.eigenvalues);
  write_matrix(out, ops.eigenvectors);
  write_matrix(out, ops.normals);
  write_matrix(out, ops.frame_u);
  write_matrix(out, ops.frame_v);
  write_sparse(out, ops.laplacian);
  write_sparse(out, ops.grad_x);
  write_sparse(out, ops.grad_y);
  const int64_t fl = static_cast<int64_t>(ops.flagged_vertices.size());
  out.write(reinterpret_cast<const char*>(&fl), 8);
  out.write(reinterpret_cast<const char*>(ops.flagged_vertices.data()),
            sizeof(int) * fl);
  if (!out) throw IoError("write failed for " + path);
}

SpectralOps load_operators(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw ValidationError(path + ": not a spectral-operator container");
  SpectralOps ops;
  int64_t n = 0, k = 0;
  in.read(reinterpret_cast<char*>(&n), 8);
  in.read(reinterpret_cast<char*>(&k), 8);
  in.read(reinterpret_cast<char*>(&ops.mesh_hash), 8);
  ops.n = static_cast<int>(n);
  ops.k = static_cast<int>(k);
  ops.mass = read_matrix(in);
  ops.eigenvalues = read_matrix(in);
  ops.eigenvectors = read_matrix(in);
  ops.normals = read_matrix(in);
  ops.frame_u = read_matrix(in);
  ops.frame_v = read_matrix(in);
  ops.laplacian = read_sparse(in);
  ops.grad_x = read_sparse(in);
  ops.grad_y = read_sparse(in);
  int64_t fl = 0;
  in.read(reinterpret_cast<char*>(&fl), 8);
  ops.flagged_vertices.resize(fl);
  in.read(reinterpret_cast<char*>(ops.flagged_vertices.data()), sizeof(int) * fl);
  if (!in) throw ValidationError(path + ": truncated container");
  return ops;
}

// --------------------------------------------------------------------------
// Cache
// --------------------------------------------------------------------------

SpectralCache::SpectralCache(std::size_t max_entries)
    : max_entries_(max_entries) {}

std::shared_ptr<const SpectralOps> SpectralCache::get_or_build(
    const TriMesh& mesh, int k) {
  const std::uint64_t key =
      hash_mix(content_hash(mesh), static_cast<std::uint64_t>(k));
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = map_.find(key);
    if (it != map_.end()) {
      lru_.remove(key);
      lru_.push_front(key);
      return it->second;
    }
  }
  std::shared_ptr<SpectralOps> ops;
  const char* dir = std::getenv("MESHMOTION_CACHE_DIR");
  std::string file;
  if (dir && *dir) {
    file = std::string(dir) + "/spec_" + hash_hex(key) + ".bin";
    if (std::filesystem::exists(file))
      ops = std::make_shared<SpectralOps>(load_operators(file));
  }
  if (!ops) {
    ops = std::make_shared<SpectralOps>(build_operators(mesh, k));
    if (!file.empty()) {
      std::filesystem::create_directories(dir);
      save_operators(*ops, file);
    }
  }
  std::lock_guard<std::mutex> lock(mu_);
  auto [it, inserted] = map_.emplace(key, ops);
  if (inserted) {
    lru_.push_front(key);
    while (lru_.size() > max_entries_) {
      map_.erase(lru_.back());
      lru_.pop_back();
    }
  }
  return it->second;
}

}  // namespace meshmotion
