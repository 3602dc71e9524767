// SPDX-License-Identifier: Apache-2.0
#include "cfcap/trainer/optimizer.hpp"

#include <cmath>

namespace cfcap::trainer {

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kSgd ? "sgd" : "adam"; }

Optimizer::Optimizer(OptimizerKind kind, double learning_rate) : kind_(kind), lr_(learning_rate) {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be finite and non-negative");
  }
}

void Optimizer::step(captioner::ModelParams& params, const captioner::ModelParams& grad) {
  auto p = params.flat();
  auto g = grad.flat();
  if (p.size() != g.size()) throw InputError("optimizer: gradient layout mismatch");
  ++t_;
  if (lr_ == 0.0) return;
  if (kind_ == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr_ * g[i];
    return;
  }
  if (m_.empty()) {
    m_.assign(p.size(), 0.0);
    v_.assign(p.size(), 0.0);
  }
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t i = 0; i < p.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g[i] * g[i];
    p[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

double clip_global_norm(captioner::ModelParams& grad, double max_norm) {
  const double norm = std::sqrt(grad.squared_norm());
  if (max_norm > 0.0 && norm > max_norm) {
    // The small margin keeps the rescaled norm at or below the bound after rounding.
    const double scale = max_norm / (norm * (1.0 + 1e-12));
    for (double& x : grad.flat()) x *= scale;
  }
  return norm;
}

}  // namespace cfcap::trainer
