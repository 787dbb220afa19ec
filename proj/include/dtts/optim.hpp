#pragma once

#include "dtts/nn.hpp"

#include <map>
#include <string>
#include <vector>

namespace dtts {

/// lr(step) = peak * min(step / warmup, sqrt(warmup / step)), with
/// peak = base_lr / sqrt(dim). Steps count from 1.
struct LrSchedule {
  double base_lr = 1e-3;
  int warmup = 4000;
  int dim = 384;

  double peak() const;
  double at(long step) const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

class Adam {
 public:
  Adam(const std::vector<NamedParameter>& params, AdamConfig config = {});

  /// Applies one update with the given learning rate using current grads.
  void step(double lr);
  void reset();
  long steps() const { return steps_; }

  /// Moment buffers keyed "adam.m/<param>" and "adam.v/<param>".
  std::map<std::string, const Matrix*> state() const;
  void load_state(const std::map<std::string, Matrix>& tensors, long steps);

 private:
  std::vector<NamedParameter> params_;
  std::vector<Matrix> m_, v_;
  AdamConfig config_;
  long steps_ = 0;
};

/// Scales all gradients so their global L2 norm is at most max_norm;
/// returns the norm before clipping.
double clip_grad_norm(const std::vector<NamedParameter>& params, double max_norm);

}  // namespace dtts
