#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mmt/errors.hpp"
#include "mmt/registry.hpp"

namespace mmt {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
};

// Adam with bias correction over the trainable slice of a registry. Frozen
// parameters are never bound, so they cannot move.
class Adam {
 public:
  Adam(ParameterRegistry& reg, AdamConfig cfg = {}) : cfg_(cfg) {
    if (cfg_.lr <= 0.0) throw ValidationError("Adam lr must be positive");
    if (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 ||
        cfg_.beta2 >= 1.0)
      throw ValidationError("Adam betas must lie in [0, 1)");
    for (const ParamEntry& e : reg.entries()) {
      if (e.frozen) continue;
      names_.push_back(e.name);
      m_.emplace_back(e.tensor.size(), 0.0);
      v_.emplace_back(e.tensor.size(), 0.0);
    }
  }

  const std::vector<std::string>& bound_names() const { return names_; }
  long step_count() const { return t_; }

  // Consumes the gradients currently held by the bound tensors and clears
  // them afterwards.
  void step(ParameterRegistry& reg) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t i = 0; i < names_.size(); ++i) {
      Tensor& p = reg.get(names_[i]);
      if (static_cast<std::size_t>(p.size()) != m_[i].size())
        throw ValidationError("parameter " + names_[i] +
                              " changed size since optimizer construction");
      auto& grad = p.grad();
      auto& vals = p.values();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < m.size(); ++j) {
        const double g = grad[j];
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        vals[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
      p.zero_grad();
    }
  }

 private:
  AdamConfig cfg_;
  std::vector<std::string> names_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace mmt
