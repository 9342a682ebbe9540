// Backends for writing a model forward once: TapeBackend tracks gradients,
// EvalBackend runs the identical arithmetic on plain matrices.
#pragma once

#include "meshmotion/autodiff.hpp"
#include "meshmotion/nn.hpp"

namespace meshmotion::ad {

struct TapeBackend {
  Tape& tape;
  using Mat = Var;
  Var param(nn::Tensor& t) { return tape.param(t); }
  Var constant(const Matrix& m) { return tape.constant(m); }
};

struct EvalBackend {
  using Mat = Matrix;
  const Matrix& param(const nn::Tensor& t) { return t.value; }
  const Matrix& constant(const Matrix& m) { return m; }
};

inline bool is_finite(const Var& v) { return v.value().allFinite(); }
inline bool is_finite(const Matrix& m) { return m.allFinite(); }

inline const Matrix& value_of(const Var& v) { return v.value(); }
inline const Matrix& value_of(const Matrix& m) { return m; }

}  // namespace meshmotion::ad
