#include "fiml/optimizer.hpp"

namespace fiml::meta {

void NesterovSgd::step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                       const std::vector<ParamSlot>& slots, real lr) {
  if (params.size() != grads.size() || params.size() != slots.size()) {
    throw ShapeError("optimizer: parameter, gradient and slot counts differ");
  }
  if (velocity_.empty()) {
    for (const auto& p : params) velocity_.push_back(Tensor::zeros(p.shape()));
  }
  if (velocity_.size() != params.size()) throw ShapeError("optimizer: state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!slots[i].trainable) continue;
    Tensor& p = params[i];
    const Tensor& g = grads[i];
    Tensor& v = velocity_[i];
    if (p.shape() != g.shape() || p.shape() != v.shape()) {
      throw ShapeError("optimizer: shape mismatch at parameter " + std::to_string(i) + ", " +
                       shape_string(p.shape()) + " vs " + shape_string(g.shape()));
    }
    const real wd = slots[i].decay ? weight_decay_ : real{0};
    for (std::size_t j = 0; j < p.size(); ++j) {
      const real d = g[j] + wd * p[j];
      v[j] = momentum_ * v[j] - lr * d;
      p[j] = p[j] + momentum_ * v[j] - lr * d;
    }
  }
}

}  // namespace fiml::meta
