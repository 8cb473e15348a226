#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "hoflow/core/ops.hpp"
#include "hoflow/core/rng.hpp"
#include "hoflow/core/tensor.hpp"

namespace hoflow {

// Named, ordered collection of trainable tensors. Modules register their
// parameters here at construction; the optimizer, EMA and checkpoints all key
// off the names. Order is registration order and is deterministic.
class ParamSet {
 public:
  Tensor add(const std::string& name, Shape shape, std::vector<float> values) {
    Tensor t(std::move(shape), std::move(values));
    t.track();
    items_.emplace_back(name, t);
    return t;
  }

  Tensor add_zeros(const std::string& name, Shape shape) {
    Tensor t(std::move(shape), 0.0f);
    t.track();
    items_.emplace_back(name, t);
    return t;
  }

  Tensor add_full(const std::string& name, Shape shape, float fill) {
    Tensor t(std::move(shape), fill);
    t.track();
    items_.emplace_back(name, t);
    return t;
  }

  // Kaiming-style fan-in init
  Tensor add_normal(const std::string& name, Shape shape, int fan_in, Rng& rng,
                    float gain = 1.0f) {
    std::vector<float> v(static_cast<size_t>(numel(shape)));
    const float std = gain / std::sqrt(static_cast<float>(std::max(1, fan_in)));
    for (float& x : v) x = std * rng.normalf();
    return add(name, std::move(shape), std::move(v));
  }

  Tensor* find(const std::string& name) {
    for (auto& [n, t] : items_)
      if (n == name) return &t;
    return nullptr;
  }

  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  size_t size() const { return items_.size(); }

  int64_t total_scalars() const {
    int64_t n = 0;
    for (const auto& [_, t] : items_) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : items_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

}  // namespace hoflow
