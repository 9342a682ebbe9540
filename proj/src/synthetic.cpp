#include "meshmotion/synthetic.hpp"

#include "meshmotion/remesh.hpp"

#include <json.hpp>

#include <Eigen/Geometry>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <unordered_map>

namespace meshmotion {

using nlohmann::json;

const char* motion_kind_name(MotionKind k) {
  switch (k) {
    case MotionKind::kArmRaise: return "arm_raise";
    case MotionKind::kKneeRaise: return "knee_raise";
    case MotionKind::kWalkCycle: return "walk";
    case MotionKind::kRunCycle: return "run";
  }
  return "?";
}

MotionKind motion_kind_from_name(const std::string& name) {
  if (name == "arm_raise") return MotionKind::kArmRaise;
  if (name == "knee_raise") return MotionKind::kKneeRaise;
  if (name == "walk") return MotionKind::kWalkCycle;
  if (name == "run") return MotionKind::kRunCycle;
  throw ValidationError("unknown motion kind '" + name + "'");
}

// ---------------------------------------------------------------------------
// Skeleton layout
// ---------------------------------------------------------------------------

namespace {

constexpr double kArmSplay = 0.3;  // rest-pose outward arm tilt, radians

Skeleton make_skeleton(const IdentitySpec& s) {
  const double tw = s.torso[0], th = s.torso[2];
  const double ua = s.limb_lengths[0], fa = s.limb_lengths[1];
  const double thigh = s.limb_lengths[2], shin = s.limb_lengths[3];
  const double head_r = 0.32 * tw;

  Skeleton sk;
  auto add = [&](const std::string& name, const Vec3& head, const Vec3& tail,
                 double radius, int parent) {
    sk.bones.push_back({name, head, tail, radius, parent});
    return static_cast<int>(sk.bones.size()) - 1;
  };

  // Pelvis sits at the origin; +z is up, +x is the body's left.
  const int spine = add("spine", {0, 0, 0}, {0, 0, th}, 0.5 * tw, -1);
  add("head", Vec3(0, 0, th + 0.4 * head_r), Vec3(0, 0, th + 1.6 * head_r),
      head_r, spine);
  const double sx = 0.5 * tw + 0.6 * s.limb_radii[0];
  const double sz = 0.94 * th;
  for (int side : {+1, -1}) {
    const std::string tag = side > 0 ? "_l" : "_r";
    const Vec3 shoulder(side * sx, 0, sz);
    const Vec3 elbow = shoulder + Vec3(side * ua * std::sin(kArmSplay), 0,
                                       -ua * std::cos(kArmSplay));
    const Vec3 wrist = elbow + Vec3(side * fa * std::sin(kArmSplay), 0,
                                    -fa * std::cos(kArmSplay));
    const int upper = add("upper_arm" + tag, shoulder, elbow, s.limb_radii[0], spine);
    add("forearm" + tag, elbow, wrist, s.limb_radii[1], upper);

    const Vec3 hip(side * (0.62 * tw * 0.5 + 0.3 * s.limb_radii[2]), 0, 0);
    const Vec3 knee = hip + Vec3(0, 0, -thigh);
    const Vec3 ankle = knee + Vec3(0, 0, -shin);
    const int th_b = add("thigh" + tag, hip, knee, s.limb_radii[2], spine);
    add("shin" + tag, knee, ankle, s.limb_radii[3], th_b);
  }
  return sk;
}

double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 < 1e-18 ? 0.0 : std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

// Smooth union (log-sum-exp) of capsule distances. Negative inside.
struct BodyField {
  const Skeleton& sk;
  const IdentitySpec& spec;
  double blend;

  double operator()(const Vec3& p) const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& b : sk.bones) {
      double d = segment_distance(p, b.head, b.tail) - b.radius;
      if (b.name == "spine") {
        // Elliptical cross-section: slimmer front-to-back.
        Vec3 q = p;
        q.y() *= spec.torso[0] / spec.torso[1];
        d = segment_distance(q, b.head, b.tail) - b.radius;
      }
      m = std::min(m, d);
    }
    // Exponential smoothing near the minimum.
    double acc = 0.0;
    for (const auto& b : sk.bones) {
      double d = segment_distance(p, b.head, b.tail) - b.radius;
      if (b.name == "spine") {
        Vec3 q = p;
        q.y() *= spec.torso[0] / spec.torso[1];
        d = segment_distance(q, b.head, b.tail) - b.radius;
      }
      acc += std::exp(-(d - m) / blend);
    }
    return m - blend * std::log(acc);
  }
};

// ---------------------------------------------------------------------------
// Marching tetrahedra (Freudenthal 6-tet split; consistent across cells).
// ---------------------------------------------------------------------------

struct GridSpec {
  Vec3 origin;
  double cell;
  int nx, ny, nz;  // vertices per axis
};

// Kuhn subdivision: six tetrahedra around the 0-7 diagonal, one per monotone
// corner path. Shared cube faces receive matching diagonals in adjacent
// cells, so the extracted surface is watertight. Cells on the negative-x half
// use the x-mirrored pattern (corner bit 0 flipped): the two patterns agree on
// the x-interface diagonals, and the full tiling becomes mirror-symmetric,
// which keeps symmetric bodies symmetric as vertex sets.
constexpr int kTets[6][4] = {{0, 1, 3, 7}, {0, 1, 5, 7}, {0, 2, 3, 7},
                             {0, 2, 6, 7}, {0, 4, 5, 7}, {0, 4, 6, 7}};
constexpr int kTetsMirrored[6][4] = {{1, 0, 2, 6}, {1, 0, 4, 6}, {1, 3, 2, 6},
                                     {1, 3, 7, 6}, {1, 5, 4, 6}, {1, 5, 7, 6}};

TriMesh march(const BodyField& field, const GridSpec& g) {
  auto corner = [&](int i, int j, int k) -> Vec3 {
    return g.origin + g.cell * Vec3(i, j, k);
  };
  // Sample the field once per grid vertex.
  std::vector<double> values(static_cast<size_t>(g.nx) * g.ny * g.nz);
  auto vid = [&](int i, int j, int k) {
    return (static_cast<size_t>(k) * g.ny + j) * g.nx + i;
  };
  for (int k = 0; k < g.nz; ++k)
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        double v = field(corner(i, j, k));
        if (std::abs(v) < 1e-12) v = -1e-12;  // avoid on-surface grid points
        values[vid(i, j, k)] = v;
      }

  std::unordered_map<std::uint64_t, int> edge_vertex;
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> tris;

  auto intersect = [&](size_t ia, size_t ib, const Vec3& pa, const Vec3& pb) {
    size_t a = ia, b = ib;
    Vec3 qa = pa, qb = pb;
    if (a > b) {
      std::swap(a, b);
      std::swap(qa, qb);
    }
    const std::uint64_t key = (static_cast<std::uint64_t>(a) << 32) |
                              static_cast<std::uint64_t>(b);
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    const double va = values[a], vb = values[b];
    const double t = va / (va - vb);  // opposite signs guaranteed
    verts.push_back(qa + t * (qb - qa));
    const int idx = static_cast<int>(verts.size()) - 1;
    edge_vertex.emplace(key, idx);
    return idx;
  };

  // Orientation: normal must point away from the inside (negative) region.
  auto emit = [&](int v0, int v1, int v2, const Vec3& inside_ref) {
    const Vec3 a = verts[v0], b = verts[v1], c = verts[v2];
    const Vec3 n = (b - a).cross(c - a);
    const Vec3 centroid = (a + b + c) / 3.0;
    if (n.dot(inside_ref - centroid) > 0)
      tris.push_back({v0, v2, v1});
    else
      tris.push_back({v0, v1, v2});
  };

  const int corner_offset[8][3] = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0},
                                   {0, 0, 1}, {1, 0, 1}, {0, 1, 1}, {1, 1, 1}};
  for (int k = 0; k + 1 < g.nz; ++k)
    for (int j = 0; j + 1 < g.ny; ++j)
      for (int i = 0; i + 1 < g.nx; ++i) {
        size_t ids[8];
        Vec3 pts[8];
        double vals[8];
        for (int c = 0; c < 8; ++c) {
          const int ci = i + corner_offset[c][0];
          const int cj = j + corner_offset[c][1];
          const int ck = k + corner_offset[c][2];
          ids[c] = vid(ci, cj, ck);
          pts[c] = corner(ci, cj, ck);
          vals[c] = values[ids[c]];
        }
        const bool negative_half =
            g.origin.x() + g.cell * (i + 0.5) < 0.0;
        const auto& tets = negative_half ? kTetsMirrored : kTets;
        for (const auto& tet : tets) {
          int inside[4], outside[4];
          int ni = 0, no = 0;
          for (int c = 0; c < 4; ++c) {
            if (vals[tet[c]] < 0)
              inside[ni++] = tet[c];
            else
              outside[no++] = tet[c];
          }
          if (ni == 0 || ni == 4) continue;
          if (ni == 1) {
            const int a = inside[0];
            const int e0 = intersect(ids[a], ids[outside[0]], pts[a], pts[outside[0]]);
            const int e1 = intersect(ids[a], ids[outside[1]], pts[a], pts[outside[1]]);
            const int e2 = intersect(ids[a], ids[outside[2]], pts[a], pts[outside[2]]);
            emit(e0, e1, e2, pts[a]);
          } else if (ni == 3) {
            const int a = outside[0];
            const int e0 = intersect(ids[a], ids[inside[0]], pts[a], pts[inside[0]]);
            const int e1 = intersect(ids[a], ids[inside[1]], pts[a], pts[inside[1]]);
            const int e2 = intersect(ids[a], ids[inside[2]], pts[a], pts[inside[2]]);
            const Vec3 in_ref = (pts[inside[0]] + pts[inside[1]] + pts[inside[2]]) / 3.0;
            emit(e0, e1, e2, in_ref);
          } else {  // 2 in, 2 out -> quad
            const int i0 = inside[0], i1 = inside[1];
            const int o0 = outside[0], o1 = outside[1];
            const int e00 = intersect(ids[i0], ids[o0], pts[i0], pts[o0]);
            const int e01 = intersect(ids[i0], ids[o1], pts[i0], pts[o1]);
            const int e10 = intersect(ids[i1], ids[o0], pts[i1], pts[o0]);
            const int e11 = intersect(ids[i1], ids[o1], pts[i1], pts[o1]);
            const Vec3 in_ref = 0.5 * (pts[i0] + pts[i1]);
            emit(e00, e01, e11, in_ref);
            emit(e00, e11, e10, in_ref);
          }
        }
      }

  TriMesh mesh;
  mesh.vertices.resize(static_cast<int>(verts.size()), 3);
  for (size_t i = 0; i < verts.size(); ++i)
    mesh.vertices.row(static_cast<int>(i)) = verts[i].transpose();
  mesh.faces.resize(static_cast<int>(tris.size()), 3);
  for (size_t i = 0; i < tris.size(); ++i)
    for (int j = 0; j < 3; ++j) mesh.faces(static_cast<int>(i), j) = tris[i][j];
  return mesh;
}

Matrix skin_weights(const TriMesh& mesh, const Skeleton& sk) {
  const int n = mesh.vertex_count();
  const int nb = static_cast<int>(sk.bones.size());
  Matrix w(n, nb);
  for (int i = 0; i < n; ++i) {
    const Vec3 p = mesh.vertices.row(i);
    double sum = 0.0;
    for (int b = 0; b < nb; ++b) {
      const auto& bone = sk.bones[b];
      const double d =
          std::max(1e-3, segment_distance(p, bone.head, bone.tail) - bone.radius + 0.02);
      w(i, b) = 1.0 / (d * d * d * d);
      sum += w(i, b);
    }
    w.row(i) /= sum;
  }
  return w;
}

}  // namespace

Body build_body(const IdentitySpec& spec) {
  for (double v : spec.limb_lengths)
    if (v <= 0) throw ValidationError("identity spec: limb length must be > 0");
  for (double v : spec.limb_radii)
    if (v <= 0) throw ValidationError("identity spec: limb radius must be > 0");
  for (double v : spec.torso)
    if (v <= 0) throw ValidationError("identity spec: torso dimension must be > 0");
  if (spec.level < 0 || spec.level > 2)
    throw ValidationError("identity spec: resolution level must be 0, 1 or 2");

  Skeleton sk = make_skeleton(spec);

  // Basic self-intersection check (legs merging at rest).
  double leg_gap = 0.0;
  for (const auto& b : sk.bones)
    if (b.name == "thigh_l") leg_gap = 2.0 * std::abs(b.head.x());
  const double max_leg_r = std::max(spec.limb_radii[2], spec.limb_radii[3]);
  if (leg_gap < 1.9 * max_leg_r)
    throw ValidationError("identity spec is self-intersecting: legs overlap");

  const double blend = 0.015 * (spec.torso[2] + spec.limb_lengths[2] + spec.limb_lengths[3]);
  BodyField field{sk, spec, blend};

  // Bounds with margin.
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const auto& b : sk.bones) {
    for (const Vec3& p : {b.head, b.tail}) {
      lo = lo.cwiseMin(p - Vec3::Constant(b.radius * 2.0));
      hi = hi.cwiseMax(p + Vec3::Constant(b.radius * 2.0));
    }
  }
  // Symmetric x-bounds keep symmetric specs mirror-exact.
  const double xmax = std::max(std::abs(lo.x()), std::abs(hi.x()));
  lo.x() = -xmax;
  hi.x() = xmax;

  // Fixed cell sizes (model units) so limb thickness vs. cell is a stable
  // contract: a tube is never missed by the grid while radius >= cell / sqrt2.
  static constexpr double kCellSize[3] = {0.084, 0.043, 0.0305};
  const double cell = kCellSize[spec.level];
  GridSpec grid;
  grid.origin = lo;
  grid.cell = cell;
  grid.nx = static_cast<int>(std::ceil((hi.x() - lo.x()) / cell)) + 2;
  grid.ny = static_cast<int>(std::ceil((hi.y() - lo.y()) / cell)) + 2;
  grid.nz = static_cast<int>(std::ceil((hi.z() - lo.z()) / cell)) + 2;
  // Center the grid in x with an even cell count: x = 0 is a grid plane and
  // the mirrored tetrahedral pattern pairs up exactly.
  if ((grid.nx - 1) % 2 == 1) ++grid.nx;
  grid.origin.x() = -0.5 * cell * (grid.nx - 1);

  Body body;
  body.mesh = march(field, grid);
  body.mesh.name = "body";
  validate(body.mesh);
  if (component_count(body.mesh) != 1)
    throw NumericalError("generated body is not a single component");
  body.skeleton = std::move(sk);
  body.weights = skin_weights(body.mesh, body.skeleton);
  body.spec = spec;
  return body;
}

// ---------------------------------------------------------------------------
// Animation
// ---------------------------------------------------------------------------

namespace {

struct RigidTransform {
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  Vec3 t = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return r * p + t; }
  RigidTransform then(const RigidTransform& inner) const {
    // this ∘ inner
    return {r * inner.r, r * inner.t + t};
  }
  static RigidTransform rotation_about(const Vec3& pivot, const Vec3& axis,
                                       double angle) {
    RigidTransform out;
    out.r = Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
    out.t = pivot - out.r * pivot;
    return out;
  }
  static RigidTransform translation(const Vec3& d) {
    return {Eigen::Matrix3d::Identity(), d};
  }
};

struct DualQuat {
  Eigen::Quaterniond real{1, 0, 0, 0};
  Eigen::Quaterniond dual{0, 0, 0, 0};

  static DualQuat from_rigid(const RigidTransform& rt) {
    DualQuat dq;
    dq.real = Eigen::Quaterniond(rt.r);
    const Eigen::Quaterniond tq(0, rt.t.x(), rt.t.y(), rt.t.z());
    const Eigen::Quaterniond prod = tq * dq.real;
    dq.dual = Eigen::Quaterniond(0.5 * prod.w(), 0.5 * prod.x(), 0.5 * prod.y(),
                                 0.5 * prod.z());
    return dq;
  }
};

Vec3 dqb_transform(const std::vector<DualQuat>& dqs, const Vector& weights,
                   const Vec3& p) {
  Eigen::Vector4d real = Eigen::Vector4d::Zero();
  Eigen::Vector4d dual = Eigen::Vector4d::Zero();
  const Eigen::Vector4d ref(dqs[0].real.w(), dqs[0].real.x(), dqs[0].real.y(),
                            dqs[0].real.z());
  for (size_t b = 0; b < dqs.size(); ++b) {
    Eigen::Vector4d r(dqs[b].real.w(), dqs[b].real.x(), dqs[b].real.y(),
                      dqs[b].real.z());
    Eigen::Vector4d d(dqs[b].dual.w(), dqs[b].dual.x(), dqs[b].dual.y(),
                      dqs[b].dual.z());
    const double sign = r.dot(ref) < 0 ? -1.0 : 1.0;
    real += sign * weights[static_cast<Eigen::Index>(b)] * r;
    dual += sign * weights[static_cast<Eigen::Index>(b)] * d;
  }
  const double norm = real.norm();
  real /= norm;
  dual /= norm;
  const Eigen::Quaterniond qr(real[0], real[1], real[2], real[3]);
  const Eigen::Quaterniond qd(dual[0], dual[1], dual[2], dual[3]);
  const Vec3 t = 2.0 * (qd * qr.conjugate()).vec();
  return qr * p + t;
}

struct JointAngles {
  double shoulder_x_l = 0, shoulder_x_r = 0;  // swing (about x / side axis)
  double shoulder_y_l = 0, shoulder_y_r = 0;  // lateral raise
  double elbow_l = 0, elbow_r = 0;
  double hip_l = 0, hip_r = 0;
  double knee_l = 0, knee_r = 0;
  Vec3 root_offset = Vec3::Zero();
};

void check_limits(const JointAngles& a) {
  const double limit = 1.45, knee_limit = 2.0;
  for (double v : {a.shoulder_x_l, a.shoulder_x_r, a.shoulder_y_l, a.shoulder_y_r,
                   a.hip_l, a.hip_r})
    if (std::abs(v) > limit)
      throw ValidationError("motion spec exceeds joint limits");
  for (double v : {a.knee_l, a.knee_r, a.elbow_l, a.elbow_r})
    if (std::abs(v) > knee_limit)
      throw ValidationError("motion spec exceeds joint limits");
}

JointAngles gait(const MotionSpec& m, int frame) {
  const double tau = m.frames > 1 ? static_cast<double>(frame) / (m.frames - 1) : 0.0;
  const double ph = 2.0 * M_PI * m.cycles * tau + m.phase;
  const double a = m.amplitude;
  JointAngles out;
  auto raise = [&](double p) { return 0.5 * (1.0 - std::cos(p)); };
  switch (m.kind) {
    case MotionKind::kArmRaise: {
      const double th = 0.62 * a * raise(ph);
      out.shoulder_y_l = th;  // both arms raise laterally
      out.shoulder_y_r = th;
      out.elbow_l = out.elbow_r = 0.18 * a * raise(ph);
      break;
    }
    case MotionKind::kKneeRaise: {
      out.hip_l = -1.0 * a * raise(ph);
      out.knee_l = 1.15 * a * raise(ph + 0.4);
      out.shoulder_x_r = -0.25 * a * raise(ph);
      break;
    }
    case MotionKind::kWalkCycle:
    case MotionKind::kRunCycle: {
      const bool run = m.kind == MotionKind::kRunCycle;
      const double swing = (run ? 0.62 : 0.45) * a;
      const double s = std::sin(ph);
      out.hip_l = swing * s;
      out.hip_r = -swing * s;
      const double bend = (run ? 0.95 : 0.62) * a;
      auto knee = [&](double p) {
        const double x = std::max(0.0, std::sin(p));
        return x * x;
      };
      out.knee_l = bend * knee(ph + M_PI);
      out.knee_r = bend * knee(ph);
      out.shoulder_x_l = -0.55 * swing * s;
      out.shoulder_x_r = 0.55 * swing * s;
      out.elbow_l = out.elbow_r = 0.35 * a;
      const double advance =
          (run ? 1.5 : 1.0) * m.stride * a * m.cycles * tau;
      const double bounce = (run ? 0.022 : 0.009) * a * (1.0 - std::cos(2.0 * ph));
      out.root_offset =
          Vec3(std::cos(m.heading) * advance, std::sin(m.heading) * advance, bounce);
      break;
    }
  }
  check_limits(out);
  return out;
}

}  // namespace

MotionSequence animate(const Body& body, const MotionSpec& spec) {
  if (spec.frames < 10 || spec.frames > 400)
    throw ValidationError("motion spec: frames must be in [10, 400]");
  const Skeleton& sk = body.skeleton;
  auto bone_index = [&](const std::string& name) {
    for (size_t i = 0; i < sk.bones.size(); ++i)
      if (sk.bones[i].name == name) return static_cast<int>(i);
    throw ValidationError("missing bone " + name);
  };
  const int spine = bone_index("spine"), head = bone_index("head");
  const int ua_l = bone_index("upper_arm_l"), ua_r = bone_index("upper_arm_r");
  const int fa_l = bone_index("forearm_l"), fa_r = bone_index("forearm_r");
  const int th_l = bone_index("thigh_l"), th_r = bone_index("thigh_r");
  const int sh_l = bone_index("shin_l"), sh_r = bone_index("shin_r");

  MotionSequence seq;
  seq.name = motion_kind_name(spec.kind);
  const Vec3 side(1, 0, 0), front(0, 1, 0);
  for (int f = 0; f < spec.frames; ++f) {
    const JointAngles a = gait(spec, f);
    std::vector<RigidTransform> world(sk.bones.size());
    const RigidTransform root = RigidTransform::translation(a.root_offset);
    world[spine] = root;
    world[head] = root;
    // Arms: lateral raise about the front axis, swing about the side axis.
    auto arm = [&](int upper, int lower, double swing, double lateral, double elbow) {
      const Vec3 shoulder = sk.bones[upper].head;
      RigidTransform r = RigidTransform::rotation_about(shoulder, front, lateral)
                             .then(RigidTransform::rotation_about(shoulder, side, swing));
      world[upper] = root.then(r);
      const Vec3 elbow_pivot = sk.bones[lower].head;
      world[lower] =
          world[upper].then(RigidTransform::rotation_about(elbow_pivot, side, elbow));
    };
    // Lateral raise: opposite rotation signs about the front axis per side.
    arm(ua_l, fa_l, a.shoulder_x_l, -a.shoulder_y_l, a.elbow_l);
    arm(ua_r, fa_r, a.shoulder_x_r, a.shoulder_y_r, a.elbow_r);
    auto leg = [&](int thigh, int shin, double hip, double knee) {
      const Vec3 hip_pivot = sk.bones[thigh].head;
      world[thigh] = root.then(RigidTransform::rotation_about(hip_pivot, side, hip));
      const Vec3 knee_pivot = sk.bones[shin].head;
      world[shin] =
          world[thigh].then(RigidTransform::rotation_about(knee_pivot, side, knee));
    };
    leg(th_l, sh_l, a.hip_l, a.knee_l);
    leg(th_r, sh_r, a.hip_r, a.knee_r);

    std::vector<DualQuat> dqs(sk.bones.size());
    for (size_t b = 0; b < sk.bones.size(); ++b)
      dqs[b] = DualQuat::from_rigid(world[b]);

    TriMesh frame = body.mesh;
    for (int i = 0; i < frame.vertex_count(); ++i) {
      const Vec3 p = body.mesh.vertices.row(i);
      frame.vertices.row(i) =
          dqb_transform(dqs, body.weights.row(i).transpose(), p).transpose();
    }
    frame.name = seq.name + "_" + std::to_string(f);
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

MotionSequence unregister(const MotionSequence& sequence, std::uint64_t seed) {
  if (sequence.frames.empty()) throw ValidationError("unregister: empty sequence");
  MotionSequence out;
  out.name = sequence.name + "_unregistered";
  Rng rng(seed);
  std::uniform_int_distribution<int> pick(0, 2);
  const RemeshVariant variants[3] = {RemeshVariant::kDownsample2,
                                     RemeshVariant::kUpsample2,
                                     RemeshVariant::kVariableDensity};
  for (size_t f = 0; f < sequence.frames.size(); ++f) {
    const RemeshVariant v = variants[pick(rng)];
    out.frames.push_back(remesh(sequence.frames[f], v, hash_mix(seed, f)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

namespace {

json spec_to_json(const IdentitySpec& s) {
  return json{{"limb_lengths", s.limb_lengths},
              {"limb_radii", s.limb_radii},
              {"torso", s.torso},
              {"level", s.level},
              {"seed", s.seed}};
}

IdentitySpec spec_from_json(const json& j) {
  IdentitySpec s;
  for (int i = 0; i < 4; ++i) {
    s.limb_lengths[i] = j.at("limb_lengths")[i];
    s.limb_radii[i] = j.at("limb_radii")[i];
  }
  for (int i = 0; i < 3; ++i) s.torso[i] = j.at("torso")[i];
  s.level = j.at("level");
  s.seed = j.at("seed");
  return s;
}

IdentitySpec sample_identity(std::uint64_t seed, int level) {
  Rng rng(seed);
  std::uniform_real_distribution<double> jitter(-0.13, 0.13);
  IdentitySpec base;
  IdentitySpec s = base;
  for (int i = 0; i < 4; ++i) {
    s.limb_lengths[i] = base.limb_lengths[i] * (1.0 + jitter(rng));
    // Floor keeps every limb above the level-0 grid aliasing limit.
    s.limb_radii[i] =
        std::max(0.062, base.limb_radii[i] * (1.0 + 0.4 * jitter(rng)));
  }
  for (int i = 0; i < 3; ++i) s.torso[i] = base.torso[i] * (1.0 + 0.5 * jitter(rng));
  s.level = level;
  s.seed = seed;
  return s;
}

MotionSpec sample_motion(MotionKind kind, int frames, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  MotionSpec m;
  m.kind = kind;
  m.frames = frames;
  m.seed = seed;
  m.amplitude = 0.85 + 0.3 * uni(rng);
  m.cycles = 1.25 + 0.5 * uni(rng);
  m.phase = 0.15 * uni(rng);
  if (kind == MotionKind::kWalkCycle || kind == MotionKind::kRunCycle) {
    m.heading = 2.0 * M_PI * uni(rng);
    m.stride = 0.3 + 0.15 * uni(rng);
  }
  return m;
}

}  // namespace

std::vector<const SequenceRecord*> DatasetManifest::split(
    const std::string& name) const {
  std::vector<const SequenceRecord*> out;
  for (const auto& s : sequences)
    if (s.split == name) out.push_back(&s);
  return out;
}

DatasetManifest make_dataset(const DatasetConfig& config) {
  if (config.test_identities < 1)
    throw ValidationError("dataset needs at least one test identity");
  if (config.train_identities < 1)
    throw ValidationError("dataset needs at least one train identity");
  namespace fs = std::filesystem;
  fs::create_directories(config.root);

  DatasetManifest manifest;
  manifest.root = config.root;
  manifest.seed = config.seed;
  manifest.frames_per_sequence = config.frames;
  manifest.level = config.level;
  manifest.unregistered = config.unregistered;

  int id_counter = 0;
  for (const std::string split : {"train", "test"}) {
    const int count =
        split == "train" ? config.train_identities : config.test_identities;
    for (int i = 0; i < count; ++i, ++id_counter) {
      const std::string id_name = split + "_id" + std::to_string(i);
      const std::uint64_t id_seed = hash_mix(config.seed, 1000 + id_counter);
      const IdentitySpec spec = sample_identity(id_seed, config.level);
      manifest.identities[id_name] = spec;
      const Body body = build_body(spec);
      for (size_t mi = 0; mi < config.motions.size(); ++mi) {
        const MotionKind kind = config.motions[mi];
        const std::uint64_t m_seed = hash_mix(id_seed, 77 + mi);
        const MotionSpec mspec = sample_motion(kind, config.frames, m_seed);
        MotionSequence seq = animate(body, mspec);
        if (config.unregistered) {
          MotionSequence un = unregister(seq, hash_mix(m_seed, 5));
          // Keep frame 0 registered: it is the rollout source.
          for (size_t f = 1; f < seq.frames.size(); ++f)
            seq.frames[f] = std::move(un.frames[f]);
        }
        SequenceRecord rec;
        rec.identity = id_name;
        rec.motion = motion_kind_name(kind);
        rec.split = split;
        rec.dir = split + "/" + id_name + "/" + rec.motion;
        rec.frames = config.frames;
        rec.seed = m_seed;
        fs::create_directories(fs::path(config.root) / rec.dir);
        for (int f = 0; f < seq.frame_count(); ++f) {
          char name[32];
          std::snprintf(name, sizeof(name), "frame_%04d.obj", f);
          save_mesh(seq.frames[f],
                    (fs::path(config.root) / rec.dir / name).string());
        }
        manifest.sequences.push_back(std::move(rec));
      }
    }
  }
  validate_manifest(manifest);
  save_manifest(manifest, (fs::path(config.root) / "manifest.json").string());
  return manifest;
}

namespace {

json manifest_to_json(const DatasetManifest& m) {
  json j;
  j["format_version"] = m.format_version;
  j["seed"] = m.seed;
  j["frames_per_sequence"] = m.frames_per_sequence;
  j["level"] = m.level;
  j["unregistered"] = m.unregistered;
  json seqs = json::array();
  for (const auto& s : m.sequences)
    seqs.push_back(json{{"identity", s.identity},
                        {"motion", s.motion},
                        {"split", s.split},
                        {"dir", s.dir},
                        {"frames", s.frames},
                        {"seed", s.seed}});
  j["sequences"] = seqs;
  json ids;
  for (const auto& [name, spec] : m.identities) ids[name] = spec_to_json(spec);
  j["identities"] = ids;
  return j;
}

}  // namespace

void save_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << manifest_to_json(m).dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
  DatasetManifest m;
  m.format_version = j.at("format_version");
  if (m.format_version != 1)
    throw ValidationError("unsupported manifest format_version");
  m.seed = j.at("seed");
  m.frames_per_sequence = j.at("frames_per_sequence");
  m.level = j.at("level");
  m.unregistered = j.value("unregistered", false);
  m.root = std::filesystem::path(path).parent_path().string();
  for (const auto& s : j.at("sequences")) {
    SequenceRecord rec;
    rec.identity = s.at("identity");
    rec.motion = s.at("motion");
    rec.split = s.at("split");
    rec.dir = s.at("dir");
    rec.frames = s.at("frames");
    rec.seed = s.at("seed");
    m.sequences.push_back(std::move(rec));
  }
  for (const auto& [name, spec] : j.at("identities").items())
    m.identities[name] = spec_from_json(spec);
  validate_manifest(m);
  return m;
}

std::uint64_t manifest_hash(const DatasetManifest& m) {
  const std::string data = manifest_to_json(m).dump(2);
  return fnv1a(data.data(), data.size());
}

void validate_manifest(const DatasetManifest& m) {
  std::vector<std::string> train, test;
  for (const auto& s : m.sequences) {
    if (s.split == "train")
      train.push_back(s.identity);
    else if (s.split == "test")
      test.push_back(s.identity);
    else
      throw ValidationError("manifest: unknown split '" + s.split + "'");
    if (m.identities.find(s.identity) == m.identities.end())
      throw ValidationError("manifest: sequence references unknown identity '" +
                            s.identity + "'");
  }
  if (test.empty()) throw ValidationError("manifest: test split is empty");
  if (train.empty()) throw ValidationError("manifest: train split is empty");
  for (const auto& t : train)
    for (const auto& u : test)
      if (t == u)
        throw ValidationError("manifest: identity '" + t +
                              "' appears in both splits");
}

MotionSequence load_sequence(const DatasetManifest& manifest,
                             const SequenceRecord& record) {
  namespace fs = std::filesystem;
  MotionSequence seq;
  seq.name = record.identity + "/" + record.motion;
  for (int f = 0; f < record.frames; ++f) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04d.obj", f);
    const fs::path p = fs::path(manifest.root) / record.dir / name;
    seq.frames.push_back(load_mesh(p.string()));
  }
  return seq;
}

}  // namespace meshmotion
