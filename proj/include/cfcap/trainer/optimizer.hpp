// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "cfcap/captioner/model.hpp"

namespace cfcap::trainer {

enum class OptimizerKind { kSgd, kAdam };

OptimizerKind optimizer_from_string(const std::string& name);
std::string to_string(OptimizerKind kind);

// Plain SGD or Adam (beta1 0.9, beta2 0.999, eps 1e-8) over the flat
// parameter vector. Moment buffers start at zero.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate);

  // params -= update(grad)
  void step(captioner::ModelParams& params, const captioner::ModelParams& grad);
  int steps_taken() const { return t_; }

 private:
  OptimizerKind kind_;
  double lr_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  int t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

// Rescales `grad` so its global L2 norm is at most `max_norm` (no-op for
// max_norm <= 0). Returns the norm before clipping.
double clip_global_norm(captioner::ModelParams& grad, double max_norm);

}  // namespace cfcap::trainer
