#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "hoflow/core/params.hpp"

namespace hoflow {

// Linear warmup to base_lr, then cosine decay to floor_lr over the remaining
// steps. Evaluated at integer steps; lr(warmup-1) == lr(warmup) == base_lr.
struct LrSchedule {
  float base_lr = 2e-4f;
  float floor_lr = 2e-5f;
  int warmup_steps = 100;
  int total_steps = 1000;

  float at(int step) const {
    if (warmup_steps > 0 && step < warmup_steps)
      return base_lr * static_cast<float>(step + 1) / static_cast<float>(warmup_steps);
    const int decay_span = std::max(1, total_steps - warmup_steps);
    const float p = std::min(1.0f, static_cast<float>(step - warmup_steps) /
                                       static_cast<float>(decay_span));
    return floor_lr + 0.5f * (base_lr - floor_lr) * (1.0f + std::cos(3.14159265358979f * p));
  }
};

struct AdamWConfig {
  LrSchedule schedule;
  float beta1 = 0.9f;
  float beta2 = 0.95f;
  float eps = 1e-8f;
  float weight_decay = 0.01f;
};

class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  int step_count() const { return step_; }
  float current_lr() const { return cfg_.schedule.at(step_); }
  const AdamWConfig& config() const { return cfg_; }

  // Applies one decoupled-weight-decay Adam step from the gradients currently
  // accumulated in the parameters, then clears them.
  void step(ParamSet& params) {
    const float lr = cfg_.schedule.at(step_);
    const int t = step_ + 1;
    const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t));
    const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t));
    for (auto& [name, p] : params.items()) {
      const float* g = p.grad();
      if (!g) throw std::invalid_argument("AdamW: parameter '" + name + "' has no gradient");
      for (int64_t i = 0; i < p.size(); ++i)
        if (!std::isfinite(g[i]))
          throw std::runtime_error("AdamW: non-finite gradient in parameter '" + name + "'");
      Moments& mo = moments_[name];
      if (mo.m.empty()) {
        mo.m.assign(static_cast<size_t>(p.size()), 0.0f);
        mo.v.assign(static_cast<size_t>(p.size()), 0.0f);
      }
      float* w = p.data();
      for (int64_t i = 0; i < p.size(); ++i) {
        float& m = mo.m[static_cast<size_t>(i)];
        float& v = mo.v[static_cast<size_t>(i)];
        m = cfg_.beta1 * m + (1.0f - cfg_.beta1) * g[i];
        v = cfg_.beta2 * v + (1.0f - cfg_.beta2) * g[i] * g[i];
        const float mhat = m / bc1;
        const float vhat = v / bc2;
        w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
      }
    }
    params.zero_grad();
    ++step_;
  }

 private:
  struct Moments {
    std::vector<float> m, v;
  };
  AdamWConfig cfg_;
  std::map<std::string, Moments> moments_;
  int step_ = 0;
};

// Shadow copy of the parameters: shadow <- decay*shadow + (1-decay)*param.
class Ema {
 public:
  explicit Ema(float decay = 0.9999f) : decay_(decay) {
    if (!(decay >= 0.0f && decay <= 1.0f))
      throw std::invalid_argument("Ema: decay " + std::to_string(decay) + " outside [0,1]");
  }

  float decay() const { return decay_; }

  void update(const ParamSet& params) {
    for (const auto& [name, p] : params.items()) {
      auto it = shadow_.find(name);
      if (it == shadow_.end()) {
        shadow_[name] = p.vec();  // first update seeds the shadow
        continue;
      }
      std::vector<float>& s = it->second;
      if (s.size() != static_cast<size_t>(p.size()))
        throw std::invalid_argument("Ema: shape drift in parameter '" + name + "'");
      const float* w = p.data();
      for (size_t i = 0; i < s.size(); ++i)
        s[i] = decay_ * s[i] + (1.0f - decay_) * w[i];
    }
  }

  // Copy the shadow values into the parameters (e.g. before inference).
  void copy_to(ParamSet& params) const {
    for (auto& [name, p] : params.items()) {
      auto it = shadow_.find(name);
      if (it == shadow_.end())
        throw std::invalid_argument("Ema: no shadow for parameter '" + name + "'");
      std::copy(it->second.begin(), it->second.end(), p.data());
    }
  }

  const std::vector<float>* shadow(const std::string& name) const {
    auto it = shadow_.find(name);
    return it == shadow_.end() ? nullptr : &it->second;
  }

 private:
  float decay_;
  std::map<std::string, std::vector<float>> shadow_;
};

}  // namespace hoflow
