#pragma once

#include <vector>

#include "fiml/tensor.hpp"

namespace fiml::meta {

struct ParamSlot {
  bool trainable = true;
  bool decay = true;  // weight decay applies (embedding parameters only)
};

/// SGD with Nesterov momentum in look-ahead form:
///   d = g + wd * p          (wd only where slot.decay)
///   v <- mu * v - lr * d
///   p <- p + mu * v - lr * d
/// Frozen slots are left untouched, bit for bit.
class NesterovSgd {
 public:
  NesterovSgd(real momentum, real weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, const std::vector<ParamSlot>& slots,
            real lr);

  const std::vector<Tensor>& velocity() const { return velocity_; }
  void set_velocity(std::vector<Tensor> v) { velocity_ = std::move(v); }

 private:
  real momentum_;
  real weight_decay_;
  std::vector<Tensor> velocity_;
};

}  // namespace fiml::meta
