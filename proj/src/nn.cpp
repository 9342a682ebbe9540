#include "meshmotion/nn.hpp"

#include <cmath>
#include <istream>
#include <ostream>

namespace meshmotion::nn {

void init_uniform(Tensor& t, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < t.value.rows(); ++i)
    for (Eigen::Index j = 0; j < t.value.cols(); ++j) t.value(i, j) = dist(rng);
}

void init_linear(Tensor& w, Tensor& b, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(w.value.rows()));
  init_uniform(w, bound, rng);
  init_uniform(b, bound, rng);
}

double global_grad_norm(const std::vector<Tensor*>& tensors) {
  double sq = 0.0;
  for (const Tensor* t : tensors) sq += t->grad.squaredNorm();
  return std::sqrt(sq);
}

void clip_grad_norm(const std::vector<Tensor*>& tensors, double max_norm) {
  const double norm = global_grad_norm(tensors);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (Tensor* t : tensors) t->grad *= s;
  }
}

void Adam::step(const std::vector<Tensor*>& tensors, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (Tensor* t : tensors) {
    if (t->adam_m.size() == 0) {
      t->adam_m = Matrix::Zero(t->value.rows(), t->value.cols());
      t->adam_v = Matrix::Zero(t->value.rows(), t->value.cols());
    }
    t->adam_m = cfg_.beta1 * t->adam_m + (1.0 - cfg_.beta1) * t->grad;
    t->adam_v = cfg_.beta2 * t->adam_v +
                (1.0 - cfg_.beta2) * t->grad.cwiseProduct(t->grad);
    const Matrix mhat = t->adam_m / bc1;
    const Matrix vhat = t->adam_v / bc2;
    t->value.array() -= lr * mhat.array() / (vhat.array().sqrt() + cfg_.eps);
  }
}

void write_tensors(std::ostream& out, const std::vector<const Tensor*>& tensors) {
  const int64_t count = static_cast<int64_t>(tensors.size());
  out.write(reinterpret_cast<const char*>(&count), 8);
  for (const Tensor* t : tensors) {
    const int64_t len = static_cast<int64_t>(t->name.size());
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(t->name.data(), len);
    const int64_t r = t->value.rows(), c = t->value.cols();
    out.write(reinterpret_cast<const char*>(&r), 8);
    out.write(reinterpret_cast<const char*>(&c), 8);
    out.write(reinterpret_cast<const char*>(t->value.data()),
              sizeof(double) * r * c);
  }
}

void read_tensors(std::istream& in, const std::vector<Tensor*>& tensors) {
  int64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 8);
  if (count != static_cast<int64_t>(tensors.size()))
    throw ValidationError("checkpoint tensor count mismatch: file has " +
                          std::to_string(count) + ", model expects " +
                          std::to_string(tensors.size()));
  for (Tensor* t : tensors) {
    int64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 8);
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (name != t->name)
      throw ValidationError("checkpoint tensor order mismatch: got '" + name +
                            "', expected '" + t->name + "'");
    int64_t r = 0, c = 0;
    in.read(reinterpret_cast<char*>(&r), 8);
    in.read(reinterpret_cast<char*>(&c), 8);
    if (r != t->value.rows() || c != t->value.cols())
      throw ValidationError("checkpoint tensor shape mismatch for '" + name + "'");
    in.read(reinterpret_cast<char*>(t->value.data()), sizeof(double) * r * c);
  }
  if (!in) throw ValidationError("truncated tensor blob");
}

std::uint64_t tensors_hash(const std::vector<const Tensor*>& tensors) {
  std::uint64_t h = 1469598103934665603ull;
  for (const Tensor* t : tensors) {
    h = fnv1a(t->name.data(), t->name.size(), h);
    h = fnv1a(t->value.data(), sizeof(double) * t->value.size(), h);
  }
  return h;
}

}  // namespace meshmotion::nn
