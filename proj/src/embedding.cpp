#include "meshmotion/embedding.hpp"

#include "meshmotion/backend.hpp"

#include <array>
#include <cmath>

namespace meshmotion {

void EmbedderParams::init(std::uint64_t seed) {
  Rng rng(seed);
  point_w.clear();
  point_b.clear();
  gru.clear();
  int in = 3;
  for (int i = 0; i < cfg.point_layers; ++i) {
    const std::string p = "embedder.point" + std::to_string(i) + ".";
    point_w.emplace_back(p + "w", in, cfg.point_hidden);
    point_b.emplace_back(p + "b", 1, cfg.point_hidden);
    nn::init_linear(point_w.back(), point_b.back(), rng);
    in = cfg.point_hidden;
  }
  head_w = nn::Tensor("embedder.head.w", cfg.point_hidden, cfg.code_dim);
  head_b = nn::Tensor("embedder.head.b", 1, cfg.code_dim);
  nn::init_linear(head_w, head_b, rng);

  const int h = cfg.gru_hidden;
  int gin = cfg.code_dim;
  for (int l = 0; l < cfg.gru_layers; ++l) {
    GruLayer layer;
    const std::array<std::pair<GruDir*, const char*>, 2> dirs = {
        std::pair<GruDir*, const char*>{&layer.fwd, "fwd"},
        std::pair<GruDir*, const char*>{&layer.bwd, "bwd"}};
    for (auto [dir, name] : dirs) {
      const std::string p =
          "embedder.gru" + std::to_string(l) + "." + name + ".";
      dir->wx = nn::Tensor(p + "wx", gin, 3 * h);
      dir->wh = nn::Tensor(p + "wh", h, 3 * h);
      dir->bx = nn::Tensor(p + "bx", 1, 3 * h);
      dir->bh = nn::Tensor(p + "bh", 1, 3 * h);
      const double bound = 1.0 / std::sqrt(static_cast<double>(h));
      nn::init_uniform(dir->wx, bound, rng);
      nn::init_uniform(dir->wh, bound, rng);
      nn::init_uniform(dir->bx, bound, rng);
      nn::init_uniform(dir->bh, bound, rng);
    }
    gru.push_back(std::move(layer));
    gin = 2 * h;
  }
  proj_w = nn::Tensor("embedder.proj.w", 2 * h, cfg.code_dim);
  proj_b = nn::Tensor("embedder.proj.b", 1, cfg.code_dim);
  nn::init_linear(proj_w, proj_b, rng);
}

std::vector<nn::Tensor*> EmbedderParams::tensors() {
  std::vector<nn::Tensor*> out;
  for (size_t i = 0; i < point_w.size(); ++i) {
    out.push_back(&point_w[i]);
    out.push_back(&point_b[i]);
  }
  out.push_back(&head_w);
  out.push_back(&head_b);
  for (auto& layer : gru)
    for (GruDir* d : {&layer.fwd, &layer.bwd})
      for (nn::Tensor* t : {&d->wx, &d->wh, &d->bx, &d->bh}) out.push_back(t);
  out.push_back(&proj_w);
  out.push_back(&proj_b);
  return out;
}

std::vector<const nn::Tensor*> EmbedderParams::tensors() const {
  auto mutable_this = const_cast<EmbedderParams*>(this);
  std::vector<const nn::Tensor*> out;
  for (nn::Tensor* t : mutable_this->tensors()) out.push_back(t);
  return out;
}

Matrix sample_points(const TriMesh& mesh, int n, std::uint64_t seed) {
  validate(mesh);
  if (n < 16) throw ValidationError("sample_points: need n >= 16");
  const Vector areas = face_areas(mesh);
  const double total = areas.sum();
  if (total < 1e-14)
    throw ValidationError("sample_points: degenerate mesh with zero area");
  std::vector<double> cdf(areas.size());
  double acc = 0.0;
  for (Eigen::Index f = 0; f < areas.size(); ++f) {
    acc += areas[f];
    cdf[f] = acc;
  }
  Rng rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Matrix pts(n, 3);
  for (int i = 0; i < n; ++i) {
    const double r = uni(rng) * total;
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), r);
    const int f = static_cast<int>(std::min<std::ptrdiff_t>(
        it - cdf.begin(), static_cast<std::ptrdiff_t>(cdf.size()) - 1));
    double u = uni(rng), v = uni(rng);
    if (u + v > 1.0) {  // fold into the triangle
      u = 1.0 - u;
      v = 1.0 - v;
    }
    pts.row(i) = mesh.vertices.row(mesh.faces(f, 0)) +
                 u * (mesh.vertices.row(mesh.faces(f, 1)) -
                      mesh.vertices.row(mesh.faces(f, 0))) +
                 v * (mesh.vertices.row(mesh.faces(f, 2)) -
                      mesh.vertices.row(mesh.faces(f, 0)));
  }
  return pts;
}

namespace {

template <class Back, class Params>
auto encode_frame_impl(Back& back, const Matrix& points, Params& params) ->
    typename Back::Mat {
  if (!points.allFinite())
    throw ValidationError("encode_frame: non-finite points");
  // Row-stable products keep the encoder exactly permutation-invariant.
  auto x = back.constant(points);
  for (size_t i = 0; i < params.point_w.size(); ++i)
    x = ad::leaky_relu(ad::affine_stable(x, back.param(params.point_w[i]),
                                         back.param(params.point_b[i])),
                       params.cfg.leaky_slope);
  auto pooled = ad::rowwise_max(x);
  auto code =
      ad::affine(pooled, back.param(params.head_w), back.param(params.head_b));
  if (!ad::is_finite(code))
    throw NumericalError("encode_frame produced non-finite code");
  return code;
}

// One GRU direction over the rows of `input` (T x I) -> T x H.
template <class Back, class Dir>
auto gru_direction(Back& back, typename Back::Mat input, Dir& dir, int hidden,
                   bool reverse) -> typename Back::Mat {
  using ad::add;
  using ad::affine;
  using ad::cmul;
  using ad::concat_rows;
  using ad::matmul;
  using ad::sigmoid_op;
  using ad::slice_cols;
  using ad::slice_rows;
  using ad::sub;
  using ad::tanh_op;
  using Mat = typename Back::Mat;

  const int T = static_cast<int>(ad::value_of(input).rows());
  const int h = hidden;
  if (reverse) input = ad::reverse_rows(input);
  // Input-to-hidden contributions for all steps in one product.
  auto xw = affine(input, back.param(dir.wx), back.param(dir.bx));  // T x 3H
  Mat state = back.constant(Matrix::Zero(1, h));
  std::vector<Mat> rows;
  rows.reserve(T);
  for (int t = 0; t < T; ++t) {
    auto xt = slice_rows(xw, t, 1);  // 1 x 3H
    auto hw = affine(state, back.param(dir.wh), back.param(dir.bh));
    auto r = sigmoid_op(add(slice_cols(xt, 0, h), slice_cols(hw, 0, h)));
    auto z = sigmoid_op(add(slice_cols(xt, h, h), slice_cols(hw, h, h)));
    auto n = tanh_op(add(slice_cols(xt, 2 * h, h),
                         cmul(r, slice_cols(hw, 2 * h, h))));
    // h' = (1 - z) . n + z . h
    state = add(sub(n, cmul(z, n)), cmul(z, state));
    rows.push_back(state);
  }
  auto out = concat_rows(rows);
  if (reverse) out = ad::reverse_rows(out);
  return out;
}

template <class Back, class Params>
auto gru_stack(Back& back, typename Back::Mat seq, Params& params) ->
    typename Back::Mat {
  for (auto& layer : params.gru) {
    auto f = gru_direction(back, seq, layer.fwd, params.cfg.gru_hidden, false);
    auto b = gru_direction(back, seq, layer.bwd, params.cfg.gru_hidden, true);
    seq = ad::concat_cols({f, b});
  }
  return ad::affine(seq, back.param(params.proj_w), back.param(params.proj_b));
}

template <class Back, class Params>
auto embed_impl(Back& back, const std::vector<Matrix>& clouds, Params& params) ->
    typename Back::Mat {
  if (clouds.empty()) throw ValidationError("embed_motion: empty sequence");
  std::vector<typename Back::Mat> codes;
  codes.reserve(clouds.size());
  for (const Matrix& c : clouds)
    codes.push_back(encode_frame_impl(back, c, params));
  auto seq = ad::concat_rows(codes);  // T x d
  return gru_stack(back, seq, params);
}

}  // namespace

Matrix encode_frame(const Matrix& points, const EmbedderParams& params) {
  ad::EvalBackend back;
  return encode_frame_impl(back, points, params);
}

ad::Var encode_frame_ad(ad::Tape& tape, const Matrix& points,
                        EmbedderParams& params) {
  ad::TapeBackend back{tape};
  return encode_frame_impl(back, points, params);
}

MotionCode embed_motion(const MotionSequence& sequence,
                        const EmbedderParams& params, int samples_per_frame,
                        std::uint64_t seed) {
  if (sequence.frames.empty())
    throw ValidationError("embed_motion: empty sequence");
  std::vector<Matrix> clouds;
  clouds.reserve(sequence.frames.size());
  for (size_t t = 0; t < sequence.frames.size(); ++t)
    clouds.push_back(sample_points(sequence.frames[t], samples_per_frame,
                                   hash_mix(seed, t)));
  ad::EvalBackend back;
  MotionCode code;
  code.values = embed_impl(back, clouds, params);
  return code;
}

ad::Var embed_motion_ad(ad::Tape& tape, const std::vector<Matrix>& frame_clouds,
                        EmbedderParams& params) {
  ad::TapeBackend back{tape};
  return embed_impl(back, frame_clouds, params);
}

std::vector<Matrix> mds_project(const std::vector<MotionCode>& codes) {
  int total = 0;
  for (const auto& c : codes) total += c.length();
  if (total < 2) throw ValidationError("mds_project: need at least 2 frames");
  int d = 0;
  for (const auto& c : codes) d = std::max(d, c.dim());
  Matrix all(total, d);
  all.setZero();
  int r = 0;
  for (const auto& c : codes) {
    all.block(r, 0, c.length(), c.dim()) = c.values;
    r += c.length();
  }
  // Double-centered squared-distance matrix.
  Matrix d2(total, total);
  for (int i = 0; i < total; ++i)
    for (int j = 0; j < total; ++j)
      d2(i, j) = (all.row(i) - all.row(j)).squaredNorm();
  const Matrix j_center =
      Matrix::Identity(total, total) - Matrix::Constant(total, total, 1.0 / total);
  const Matrix b = -0.5 * j_center * d2 * j_center;
  Eigen::SelfAdjointEigenSolver<Matrix> solver(0.5 * (b + b.transpose()));
  if (solver.info() != Eigen::Success)
    throw NumericalError("MDS eigendecomposition failed");
  Matrix coords = Matrix::Zero(total, 2);
  for (int c = 0; c < 2; ++c) {
    const int src = total - 1 - c;  // largest eigenvalues
    const double lam = solver.eigenvalues()[src];
    if (lam > 1e-12)
      coords.col(c) = solver.eigenvectors().col(src) * std::sqrt(lam);
    // else: rank-deficient, leave the zero padding
  }
  std::vector<Matrix> out;
  r = 0;
  for (const auto& c : codes) {
    out.push_back(coords.middleRows(r, c.length()));
    r += c.length();
  }
  return out;
}

}  // namespace meshmotion
