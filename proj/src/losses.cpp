#include "meshmotion/losses.hpp"

#include "meshmotion/spatial.hpp"

#include <cmath>

namespace meshmotion {

namespace {
constexpr double kMinEdge = 1e-9;
constexpr double kMinNormal = 1e-20;
}  // namespace

// ---------------------------------------------------------------------------
// MSE
// ---------------------------------------------------------------------------

double mse_loss(const std::vector<Matrix>& pred, const std::vector<Matrix>& truth) {
  if (pred.size() != truth.size())
    throw ValidationError("mse_loss: frame count mismatch");
  if (pred.empty()) throw ValidationError("mse_loss: empty sequence");
  double acc = 0.0;
  for (size_t t = 0; t < pred.size(); ++t) {
    if (pred[t].rows() != truth[t].rows() || pred[t].cols() != truth[t].cols())
      throw ValidationError("mse_loss: shape mismatch at frame " + std::to_string(t));
    acc += (pred[t] - truth[t]).squaredNorm() / pred[t].rows();
  }
  return acc / pred.size();
}

ad::Var mse_loss(const std::vector<ad::Var>& pred,
                 const std::vector<Matrix>& truth) {
  if (pred.size() != truth.size())
    throw ValidationError("mse_loss: frame count mismatch");
  ad::Tape& tape = *pred.front().tape();
  ad::Var acc = tape.constant(Matrix::Zero(1, 1));
  for (size_t t = 0; t < pred.size(); ++t) {
    auto d = ad::add_const(pred[t], -truth[t]);
    acc = ad::add(acc, ad::scale(ad::sum_all(ad::square(d)),
                                 1.0 / pred[t].value().rows()));
  }
  return ad::scale(acc, 1.0 / pred.size());
}

// ---------------------------------------------------------------------------
// Normal cosine loss
// ---------------------------------------------------------------------------

ad::Var vertex_normals_op(ad::Var positions, const FaceMatrix& faces) {
  ad::Tape& tape = *positions.tape();
  const Matrix& v = positions.value();
  const Eigen::Index n = v.rows();
  Matrix raw = Matrix::Zero(n, 3);
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    const int a = faces(f, 0), b = faces(f, 1), c = faces(f, 2);
    const Vec3 e1 = v.row(b) - v.row(a);
    const Vec3 e2 = v.row(c) - v.row(a);
    const Vec3 cr = e1.cross(e2);
    if (0.5 * cr.norm() < 1e-12) continue;
    raw.row(a) += cr.transpose();
    raw.row(b) += cr.transpose();
    raw.row(c) += cr.transpose();
  }
  Matrix unit(n, 3);
  Vector len(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    len[i] = raw.row(i).norm();
    if (len[i] < kMinNormal)
      unit.row(i).setZero();
    else
      unit.row(i) = raw.row(i) / len[i];
  }
  const FaceMatrix fc = faces;
  return tape.make(
      unit, {positions},
      [positions, fc, raw, unit, len](ad::Tape& t, const Matrix& g) {
        const Matrix& v = positions.value();
        const Eigen::Index n = v.rows();
        // d(unit)/d(raw) = (I - u u^T) / |raw|
        Matrix graw(n, 3);
        for (Eigen::Index i = 0; i < n; ++i) {
          if (len[i] < kMinNormal) {
            graw.row(i).setZero();
            continue;
          }
          const Vec3 u = unit.row(i);
          const Vec3 gi = g.row(i);
          graw.row(i) = ((gi - u * u.dot(gi)) / len[i]).transpose();
        }
        Matrix gv = Matrix::Zero(n, 3);
        for (Eigen::Index f = 0; f < fc.rows(); ++f) {
          const int a = fc(f, 0), b = fc(f, 1), c = fc(f, 2);
          const Vec3 e1 = v.row(b) - v.row(a);
          const Vec3 e2 = v.row(c) - v.row(a);
          const Vec3 cr = e1.cross(e2);
          if (0.5 * cr.norm() < 1e-12) continue;
          const Vec3 gf = Vec3(graw.row(a)) + Vec3(graw.row(b)) + Vec3(graw.row(c));
          // y = e1 x e2: grad_e1 = e2 x gf, grad_e2 = gf x e1.
          const Vec3 g1 = e2.cross(gf);
          const Vec3 g2 = gf.cross(e1);
          gv.row(b) += g1.transpose();
          gv.row(c) += g2.transpose();
          gv.row(a) -= (g1 + g2).transpose();
        }
        t.accumulate(positions, gv);
      });
}

namespace {

// Mask rows where either normal is zero; returns weights (1 or 0) and count.
Vector normal_mask(const Matrix& pred_n, const Matrix& truth_n, int* excluded) {
  Vector mask(pred_n.rows());
  for (Eigen::Index i = 0; i < pred_n.rows(); ++i) {
    const bool ok = pred_n.row(i).norm() > 0.5 && truth_n.row(i).norm() > 0.5;
    mask[i] = ok ? 1.0 : 0.0;
    if (!ok && excluded) ++(*excluded);
  }
  return mask;
}

}  // namespace

double normal_loss(const std::vector<Matrix>& pred,
                   const std::vector<Matrix>& truth, const FaceMatrix& faces,
                   int* excluded) {
  if (pred.size() != truth.size())
    throw ValidationError("normal_loss: frame count mismatch");
  if (pred.empty()) throw ValidationError("normal_loss: empty sequence");
  double acc = 0.0;
  for (size_t t = 0; t < pred.size(); ++t) {
    TriMesh mp{pred[t], faces, ""};
    TriMesh mt{truth[t], faces, ""};
    const Matrix np = vertex_normals(mp);
    const Matrix nt = vertex_normals(mt);
    const Vector mask = normal_mask(np, nt, excluded);
    const Vector dots = np.cwiseProduct(nt).rowwise().sum();
    acc += (mask.array() * (1.0 - dots.array())).sum() / np.rows();
  }
  return acc / pred.size();
}

ad::Var normal_loss(const std::vector<ad::Var>& pred,
                    const std::vector<Matrix>& truth, const FaceMatrix& faces) {
  ad::Tape& tape = *pred.front().tape();
  ad::Var acc = tape.constant(Matrix::Zero(1, 1));
  for (size_t t = 0; t < pred.size(); ++t) {
    TriMesh mt{truth[t], faces, ""};
    const Matrix nt = vertex_normals(mt);
    auto np = vertex_normals_op(pred[t], faces);
    const Vector mask = normal_mask(np.value(), nt, nullptr);
    auto dots = ad::rows_dot(np, tape.constant(nt));            // n x 1
    auto ones = tape.constant(Matrix::Ones(dots.rows(), 1));
    auto comp = ad::mul_const(ad::sub(ones, dots), mask);       // masked 1 - dot
    acc = ad::add(acc, ad::scale(ad::sum_all(comp), 1.0 / nt.rows()));
  }
  return ad::scale(acc, 1.0 / pred.size());
}

// ---------------------------------------------------------------------------
// AIAP
// ---------------------------------------------------------------------------

namespace {

struct AiapEdges {
  std::vector<int> from, to;
  Vector rest;  // source lengths, > kMinEdge
};

AiapEdges aiap_edges(const Matrix& source, const EdgeList& edges) {
  AiapEdges out;
  for (int e = 0; e < edges.count(); ++e) {
    const int i = edges.edges(e, 0), j = edges.edges(e, 1);
    const double len = (source.row(i) - source.row(j)).norm();
    if (len < kMinEdge) continue;
    out.from.push_back(i);
    out.to.push_back(j);
  }
  out.rest.resize(static_cast<Eigen::Index>(out.from.size()));
  for (size_t e = 0; e < out.from.size(); ++e)
    out.rest[static_cast<Eigen::Index>(e)] =
        (source.row(out.from[e]) - source.row(out.to[e])).norm();
  if (out.from.empty())
    throw ValidationError("aiap_loss: all edges degenerate in source frame");
  return out;
}

}  // namespace

double aiap_loss(const std::vector<Matrix>& pred, const Matrix& source_positions,
                 const EdgeList& edges) {
  if (pred.empty()) throw ValidationError("aiap_loss: empty sequence");
  const AiapEdges ae = aiap_edges(source_positions, edges);
  double acc = 0.0;
  for (const Matrix& frame : pred) {
    double frame_acc = 0.0;
    for (size_t e = 0; e < ae.from.size(); ++e) {
      const double len = (frame.row(ae.from[e]) - frame.row(ae.to[e])).norm();
      const double rel =
          (len - ae.rest[static_cast<Eigen::Index>(e)]) / ae.rest[static_cast<Eigen::Index>(e)];
      frame_acc += rel * rel;
    }
    acc += frame_acc / static_cast<double>(ae.from.size());
  }
  return acc / pred.size();
}

ad::Var aiap_loss(const std::vector<ad::Var>& pred,
                  const Matrix& source_positions, const EdgeList& edges) {
  ad::Tape& tape = *pred.front().tape();
  const AiapEdges ae = aiap_edges(source_positions, edges);
  const Matrix inv_rest = ae.rest.cwiseInverse();
  ad::Var acc = tape.constant(Matrix::Zero(1, 1));
  for (const ad::Var& frame : pred) {
    auto d = ad::sub(ad::gather_rows(frame, ae.from), ad::gather_rows(frame, ae.to));
    auto len = ad::row_norms(d);
    auto rel = ad::mul_const(ad::add_const(len, -ae.rest), inv_rest);
    acc = ad::add(acc, ad::scale(ad::sum_all(ad::square(rel)),
                                 1.0 / static_cast<double>(ae.from.size())));
  }
  return ad::scale(acc, 1.0 / pred.size());
}

// ---------------------------------------------------------------------------
// Chamfer
// ---------------------------------------------------------------------------

double chamfer_bruteforce(const Matrix& a, const Matrix& b) {
  if (a.rows() == 0 || b.rows() == 0)
    throw ValidationError("chamfer: empty point set");
  double t1 = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      best = std::min(best, (a.row(i) - b.row(j)).squaredNorm());
    t1 += best;
  }
  double t2 = 0.0;
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      best = std::min(best, (b.row(j) - a.row(i)).squaredNorm());
    t2 += best;
  }
  return t1 / a.rows() + t2 / b.rows();
}

namespace {

struct ChamferResult {
  double value = 0.0;
  std::vector<int> nn_pred_to_target;  // per pred row
  std::vector<int> nn_target_to_pred;  // per target row
};

ChamferResult chamfer_detail(const Matrix& pred, const Matrix& target) {
  if (pred.rows() == 0 || target.rows() == 0)
    throw ValidationError("chamfer: empty point set");
  ChamferResult r;
  KdTree target_tree(target);
  KdTree pred_tree(pred);
  double t1 = 0.0, t2 = 0.0;
  r.nn_pred_to_target.resize(pred.rows());
  r.nn_target_to_pred.resize(target.rows());
  for (Eigen::Index i = 0; i < pred.rows(); ++i) {
    double d2;
    r.nn_pred_to_target[i] = target_tree.nearest(pred.row(i).transpose(), &d2);
    t1 += d2;
  }
  for (Eigen::Index j = 0; j < target.rows(); ++j) {
    double d2;
    r.nn_target_to_pred[j] = pred_tree.nearest(target.row(j).transpose(), &d2);
    t2 += d2;
  }
  r.value = t1 / pred.rows() + t2 / target.rows();
  return r;
}

}  // namespace

double chamfer(const Matrix& pred_points, const Matrix& target_points) {
  return chamfer_detail(pred_points, target_points).value;
}

ad::Var chamfer_op(ad::Var pred_points, const Matrix& target_points) {
  ad::Tape& tape = *pred_points.tape();
  ChamferResult r = chamfer_detail(pred_points.value(), target_points);
  const Matrix target = target_points;
  return tape.make(
      Matrix::Constant(1, 1, r.value), {pred_points},
      [pred_points, target, r](ad::Tape& t, const Matrix& g) {
        const Matrix& p = pred_points.value();
        const double np = static_cast<double>(p.rows());
        const double nt = static_cast<double>(target.rows());
        Matrix gp = Matrix::Zero(p.rows(), 3);
        for (Eigen::Index i = 0; i < p.rows(); ++i)
          gp.row(i) += (2.0 / np) * (p.row(i) - target.row(r.nn_pred_to_target[i]));
        for (Eigen::Index j = 0; j < target.rows(); ++j) {
          const int i = r.nn_target_to_pred[j];
          gp.row(i) += (2.0 / nt) * (p.row(i) - target.row(j));
        }
        t.accumulate(pred_points, g(0, 0) * gp);
      });
}

double chamfer_sequence_loss(const std::vector<Matrix>& pred,
                             const std::vector<Matrix>& target) {
  if (pred.size() != target.size())
    throw ValidationError("chamfer_sequence_loss: length mismatch");
  if (pred.empty()) throw ValidationError("chamfer_sequence_loss: empty sequence");
  double acc = 0.0;
  for (size_t t = 0; t < pred.size(); ++t) acc += chamfer(pred[t], target[t]);
  return acc / pred.size();
}

ad::Var chamfer_sequence_loss(const std::vector<ad::Var>& pred,
                              const std::vector<Matrix>& target) {
  if (pred.size() != target.size())
    throw ValidationError("chamfer_sequence_loss: length mismatch");
  ad::Tape& tape = *pred.front().tape();
  ad::Var acc = tape.constant(Matrix::Zero(1, 1));
  for (size_t t = 0; t < pred.size(); ++t)
    acc = ad::add(acc, chamfer_op(pred[t], target[t]));
  return ad::scale(acc, 1.0 / pred.size());
}

// ---------------------------------------------------------------------------
// Total loss and deviations
// ---------------------------------------------------------------------------

LossComponents total_loss(const std::vector<Matrix>& pred,
                          const std::vector<Matrix>& truth,
                          const FaceMatrix& faces, const Matrix& source_positions,
                          const EdgeList& edges, const LossWeights& weights,
                          double epoch_fraction) {
  if (weights.lambda_normal < 0 || weights.lambda_isometry < 0)
    throw ValidationError("loss weights must be nonnegative");
  LossComponents out;
  out.mse = mse_loss(pred, truth);
  out.normal = normal_loss(pred, truth, faces);
  const bool aiap_active = epoch_fraction >= weights.isometry_start_fraction;
  out.aiap = aiap_active ? aiap_loss(pred, source_positions, edges) : 0.0;
  out.total = out.mse + weights.lambda_normal * out.normal +
              (aiap_active ? weights.lambda_isometry * out.aiap : 0.0);
  return out;
}

ad::Var total_loss_ad(const std::vector<ad::Var>& pred,
                      const std::vector<Matrix>& truth, const FaceMatrix& faces,
                      const Matrix& source_positions, const EdgeList& edges,
                      const LossWeights& weights, double epoch_fraction,
                      LossComponents* components) {
  auto mse = mse_loss(pred, truth);
  auto nrm = normal_loss(pred, truth, faces);
  ad::Var loss = ad::add(mse, ad::scale(nrm, weights.lambda_normal));
  double aiap_value = 0.0;
  if (epoch_fraction >= weights.isometry_start_fraction) {
    auto aiap = aiap_loss(pred, source_positions, edges);
    aiap_value = aiap.value()(0, 0);
    loss = ad::add(loss, ad::scale(aiap, weights.lambda_isometry));
  }
  if (components) {
    components->mse = mse.value()(0, 0);
    components->normal = nrm.value()(0, 0);
    components->aiap = aiap_value;
    components->total = loss.value()(0, 0);
  }
  return loss;
}

double relative_deviation(double metric_orig, double metric_remesh) {
  if (metric_orig <= 0.0)
    throw ValidationError("relative_deviation: original metric must be > 0");
  return std::abs(metric_remesh - metric_orig) / metric_orig;
}

}  // namespace meshmotion
