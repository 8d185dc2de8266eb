#include "fiml/base_learner.hpp"

#include <cmath>
#include <string>

namespace fiml::learner {

using ad::Var;
using objective::EpisodeTensors;

const char* to_string(InitKind kind) { return kind == InitKind::Zero ? "zero" : "support"; }

InitKind init_kind_from_string(const std::string& name) {
  if (name == "zero") return InitKind::Zero;
  if (name == "support") return InitKind::Support;
  throw ConfigError("unknown initializer '" + name + "'");
}

Var init_theta(const EpisodeTensors& et, const PsiVars& psi, InitKind kind) {
  ad::Tape& tape = et.support.tape();
  const std::size_t features = et.support.shape()[1];
  const std::size_t k = et.ways;
  if (kind == InitKind::Zero) return tape.constant(Tensor::zeros({features, k}));

  const Tensor& y = et.pooled_targets;  // [N, k]
  const std::size_t n = y.dim(0);
  if (n == 0) throw ConfigError("support initializer needs a non-empty support set");

  // Averaging operators: class means [k, N] and complement means [k, N].
  Tensor own = Tensor::zeros({k, n});
  Tensor other = Tensor::zeros({k, n});
  for (std::size_t c = 0; c < k; ++c) {
    real count = 0;
    for (std::size_t j = 0; j < n; ++j) count += y.at(j, c);
    const real rest = static_cast<real>(n) - count;
    for (std::size_t j = 0; j < n; ++j) {
      if (y.at(j, c) > 0) {
        own.at(c, j) = real{1} / count;
      } else if (rest > 0) {
        other.at(c, j) = real{1} / rest;
      }
    }
  }
  Var pooled = et.support_pooled;  // [N, F]
  Var mu = ad::matmul(tape.constant(std::move(own)), pooled);
  Var mu_not = ad::matmul(tape.constant(std::move(other)), pooled);
  Var mbar = ad::scale(ad::sum_squares(pooled), real{1} / static_cast<real>(n));
  if (!(mbar.item() > real{1e-12})) mbar = tape.constant(real{1});
  Var w = (psi.o_pos * mu - psi.o_neg * mu_not) / mbar;  // [k, F]
  return ad::transpose(w);
}

InnerResult run_inner(const EpisodeTensors& et, const PsiVars& psi, InitKind init, std::size_t iterations,
                      bool record_trace) {
  InnerResult out;
  out.theta = init_theta(et, psi, init);
  for (std::size_t d = 0;; ++d) {
    if (d == iterations && !record_trace) break;
    try {
      objective::Linearization lin = objective::linearize(out.theta, et, psi);
      if (record_trace) {
        const real loss = objective::base_loss(lin, et, psi).item();
        out.trace.losses.push_back(loss);
      }
      if (d == iterations) break;
      Var g = objective::grad_base(lin, et, psi);
      Var q_lsq = objective::quad_lsq(g, lin, et, psi);
      Var q_tran = objective::quad_tran(g, lin, et, psi);
      Var alpha = objective::step_length(g, q_lsq, q_tran, psi);
      out.trace.steps.push_back(alpha.item());
      out.theta = out.theta - alpha * g;
    } catch (const NumericError& e) {
      throw NumericError("inner iteration " + std::to_string(d) + ": " + e.what());
    }
  }
  return out;
}

Var fuse_logits(Var theta, Var query_block, Var fusion) {
  return ad::matmul(ad::contract_axis1(query_block, fusion), theta);
}

Prediction predict(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("predict: logits must be [Q, k]");
  const std::size_t q = logits.dim(0), k = logits.dim(1);
  Prediction p;
  p.labels.resize(q);
  p.confidences = Tensor::zeros(logits.shape());
  for (std::size_t j = 0; j < q; ++j) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (logits.at(j, c) > logits.at(j, best)) best = c;
    }
    p.labels[j] = best;
    const real m = logits.at(j, best);
    real z = 0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(logits.at(j, c) - m);
    for (std::size_t c = 0; c < k; ++c) p.confidences.at(j, c) = std::exp(logits.at(j, c) - m) / z;
  }
  return p;
}

}  // namespace fiml::learner
