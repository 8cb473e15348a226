#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "hoflow/core/ops.hpp"
#include "hoflow/core/rng.hpp"
#include "hoflow/core/tensor.hpp"

namespace hoflow::testutil {

inline Tensor random_tensor(Shape shape, Rng& rng, float scale = 1.0f) {
  std::vector<float> v(static_cast<size_t>(numel(shape)));
  for (float& x : v) x = scale * rng.normalf();
  return Tensor(std::move(shape), std::move(v));
}

// Central-difference gradient check. `f` must be a pure forward function of
// the listed inputs (re-evaluated many times). Returns the worst relative
// error over all elements of all inputs.
inline double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                         float eps = 1e-3f) {
  for (auto& t : inputs) t.track();
  {
    GradTape tape;
    Tensor loss = f();
    tape.backward(loss);
  }
  double worst = 0.0;
  for (auto& t : inputs) {
    for (int64_t i = 0; i < t.size(); ++i) {
      const float saved = t.at(i);
      t.at(i) = saved + eps;
      const double fp = f().item();
      t.at(i) = saved - eps;
      const double fm = f().item();
      t.at(i) = saved;
      const double fd = (fp - fm) / (2.0 * eps);
      const double an = t.grad()[i];
      const double err = std::fabs(fd - an) / std::max({1.0, std::fabs(fd), std::fabs(an)});
      worst = std::max(worst, err);
    }
  }
  for (auto& t : inputs) t.zero_grad();
  return worst;
}

}  // namespace hoflow::testutil
