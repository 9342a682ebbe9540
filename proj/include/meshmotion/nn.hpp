// Trainable tensors, initialization and the Adam optimizer.
#pragma once

#include "meshmotion/common.hpp"

#include <deque>
#include <string>
#include <vector>

namespace meshmotion::nn {

struct Tensor {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix adam_m, adam_v;  // lazily sized by the optimizer

  Tensor() = default;
  Tensor(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)),
        value(Matrix::Zero(rows, cols)),
        grad(Matrix::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
};

// PyTorch-style Linear init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
void init_uniform(Tensor& t, double bound, Rng& rng);
void init_linear(Tensor& w, Tensor& b, Rng& rng);

double global_grad_norm(const std::vector<Tensor*>& tensors);
void clip_grad_norm(const std::vector<Tensor*>& tensors, double max_norm);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}
  void step(const std::vector<Tensor*>& tensors, double lr);
  int iterations() const { return t_; }

 private:
  AdamConfig cfg_;
  int t_ = 0;
};

// Deterministic binary blob of named tensors (names + shapes + doubles, LE).
void write_tensors(std::ostream& out, const std::vector<const Tensor*>& tensors);
void read_tensors(std::istream& in, const std::vector<Tensor*>& tensors);
std::uint64_t tensors_hash(const std::vector<const Tensor*>& tensors);

}  // namespace meshmotion::nn
