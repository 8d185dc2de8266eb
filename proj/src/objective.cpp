#include "fiml/objective.hpp"

#include <algorithm>

namespace fiml::objective {

using ad::Var;

const char* to_string(TransductiveMode mode) {
  return mode == TransductiveMode::Fused ? "fused" : "per-location";
}

Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t ways) {
  Tensor y = Tensor::zeros({labels.size(), ways});
  for (std::size_t j = 0; j < labels.size(); ++j) {
    if (labels[j] >= ways) throw ShapeError("label outside episode classes");
    y.at(j, labels[j]) = 1;
  }
  return y;
}

EpisodeTensors make_episode_tensors(Var support_block, const std::vector<std::size_t>& support_labels,
                                    Var query_block, std::size_t ways, bool dense, TransductiveMode mode) {
  if (support_block.value().rank() != 3 || query_block.value().rank() != 3) {
    throw ShapeError("episode tensors: feature blocks must be [batch, L, F]");
  }
  const std::size_t n = support_block.shape()[0];
  const std::size_t locations = support_block.shape()[1];
  const std::size_t features = support_block.shape()[2];
  if (query_block.shape()[1] != locations || query_block.shape()[2] != features) {
    throw ShapeError("episode tensors: support and query blocks disagree");
  }
  if (support_labels.size() != n) throw ShapeError("episode tensors: one label per support sample");

  EpisodeTensors et;
  et.ways = ways;
  et.dense = dense;
  et.mode = mode;
  et.pooled_targets = one_hot(support_labels, ways);
  et.support_pooled = ad::mean(support_block, 1);
  if (!dense) {
    et.locations = 1;
    et.support = et.support_pooled;
    et.support_targets = et.pooled_targets;
    et.query = ad::reshape(ad::mean(query_block, 1), {query_block.shape()[0], 1, features});
    return et;
  }
  et.locations = locations;
  et.support = ad::reshape(support_block, {n * locations, features});
  std::vector<std::size_t> row_labels;
  row_labels.reserve(n * locations);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t l = 0; l < locations; ++l) row_labels.push_back(support_labels[j]);
  et.support_targets = one_hot(row_labels, ways);
  et.query = query_block;
  return et;
}

Var fusion_weights(const EpisodeTensors& et, const PsiVars& psi) {
  if (!et.dense) return psi.fusion.tape().constant(Tensor::full({1}, real{1}));
  if (psi.fusion.size() != et.locations) {
    throw ShapeError("fusion weights have " + std::to_string(psi.fusion.size()) + " entries for " +
                     std::to_string(et.locations) + " locations");
  }
  return psi.fusion;
}

Var fused_query(const EpisodeTensors& et, const PsiVars& psi) {
  return ad::contract_axis1(et.query, fusion_weights(et, psi));
}

QueryRows transductive_rows(const EpisodeTensors& et, const PsiVars& psi) {
  if (et.mode == TransductiveMode::Fused || et.locations == 1) return {fused_query(et, psi), real{1}};
  const auto& s = et.query.shape();
  return {ad::reshape(et.query, {s[0] * s[1], s[2]}), real{1} / static_cast<real>(et.locations)};
}

namespace {

// a * Y + b * (1 - Y) for scalar vars a, b and a constant one-hot Y.
Var class_select(const Tensor& targets, Var on_class, Var off_class) {
  ad::Tape& tape = on_class.tape();
  Tensor off = targets;
  for (auto& x : off.mutable_data()) x = real{1} - x;
  return on_class * tape.constant(targets) + off_class * tape.constant(std::move(off));
}

real inv_locations(const EpisodeTensors& et) { return real{1} / static_cast<real>(et.locations); }

// x - rowmax(x) with the row maxima held constant. Used where the result is
// shift invariant, so equal entries cancel to exactly zero.
Var shifted_rows(Var x) {
  const Tensor& v = x.value();
  const std::size_t k = v.dim(1);
  Tensor shift = Tensor::zeros(v.shape());
  for (std::size_t i = 0; i < v.dim(0); ++i) {
    real m = v.at(i, 0);
    for (std::size_t c = 1; c < k; ++c) m = std::max(m, v.at(i, c));
    for (std::size_t c = 0; c < k; ++c) shift.at(i, c) = m;
  }
  return x - x.tape().constant(std::move(shift));
}

Var entropy_rows(Var logits, Var probs) {
  return ad::logsumexp(logits) - ad::sum(logits * probs, logits.value().rank() - 1);
}

}  // namespace

Var residual_weights(const Tensor& targets, const PsiVars& psi) {
  return class_select(targets, psi.a_pos, psi.a_neg);
}

Var residual_map(Var scores, const Tensor& targets, const PsiVars& psi) {
  Var t = class_select(targets, psi.l_pos, psi.l_neg);
  return residual_weights(targets, psi) * (scores - t);
}

Var inductive_loss(Var theta, const EpisodeTensors& et, const PsiVars& psi) {
  Var r = residual_map(ad::matmul(et.support, theta), et.support_targets, psi);
  return ad::scale(ad::sum_squares(r), inv_locations(et));
}

Var entropy_loss(Var logits) { return entropy_rows(logits, ad::softmax(logits)); }

Var transductive_loss(Var theta, const EpisodeTensors& et, const PsiVars& psi) {
  QueryRows q = transductive_rows(et, psi);
  if (q.rows.shape()[0] == 0) return theta.tape().constant(real{0});
  Var logits = psi.beta * ad::matmul(q.rows, theta);
  return ad::scale(ad::sum(entropy_loss(logits)), q.weight);
}

Var base_loss(Var theta, const EpisodeTensors& et, const PsiVars& psi) {
  Var loss = inductive_loss(theta, et, psi) + psi.lambda_reg * ad::sum_squares(theta);
  if (psi.transductive) loss = loss + psi.lambda_tran * transductive_loss(theta, et, psi);
  return loss;
}

Linearization linearize(Var theta, const EpisodeTensors& et, const PsiVars& psi) {
  Linearization lin;
  lin.theta = theta;
  lin.weights = residual_weights(et.support_targets, psi);
  Var t = class_select(et.support_targets, psi.l_pos, psi.l_neg);
  lin.residual = lin.weights * (ad::matmul(et.support, theta) - t);
  if (psi.transductive) {
    lin.query = transductive_rows(et, psi);
    if (lin.query.rows.shape()[0] > 0) {
      lin.query_logits = psi.beta * ad::matmul(lin.query.rows, theta);
      lin.query_probs = ad::softmax(lin.query_logits);
    }
  }
  return lin;
}

namespace {
bool has_entropy_term(const Linearization& lin, const PsiVars& psi) {
  return psi.transductive && lin.query_logits.valid();
}
}  // namespace

Var base_loss(const Linearization& lin, const EpisodeTensors& et, const PsiVars& psi) {
  Var loss = ad::scale(ad::sum_squares(lin.residual), inv_locations(et)) +
             psi.lambda_reg * ad::sum_squares(lin.theta);
  if (has_entropy_term(lin, psi)) {
    Var tran = ad::scale(ad::sum(entropy_rows(lin.query_logits, lin.query_probs)), lin.query.weight);
    loss = loss + psi.lambda_tran * tran;
  }
  return loss;
}

Var entropy_logit_grad(Var logits, Var probs) {
  Var s = shifted_rows(logits);
  Var sbar = ad::sum(probs * s, 1);
  return probs * (ad::repeat_last(sbar, logits.shape()[1]) - s);
}

Var grad_base(const Linearization& lin, const EpisodeTensors& et, const PsiVars& psi) {
  Var g = ad::scale(ad::matmul(ad::transpose(et.support), lin.weights * lin.residual), 2 * inv_locations(et)) +
          ad::scale(psi.lambda_reg * lin.theta, 2);
  if (has_entropy_term(lin, psi)) {
    Var e = entropy_logit_grad(lin.query_logits, lin.query_probs);
    Var g_tran = ad::matmul(ad::transpose(lin.query.rows), e);
    g = g + ad::scale(psi.lambda_tran * psi.beta * g_tran, lin.query.weight);
  }
  return g;
}

Var grad_base(Var theta, const EpisodeTensors& et, const PsiVars& psi) {
  return grad_base(linearize(theta, et, psi), et, psi);
}

Var quad_lsq(Var direction, const Linearization& lin, const EpisodeTensors& et, const PsiVars& psi) {
  Var jg = lin.weights * ad::matmul(et.support, direction);
  return ad::scale(ad::sum_squares(jg), 2 * inv_locations(et)) +
         ad::scale(psi.lambda_reg * ad::sum_squares(direction), 2);
}

Var quad_tran(Var direction, const Linearization& lin, const EpisodeTensors& et, const PsiVars& psi) {
  if (!has_entropy_term(lin, psi)) return direction.tape().constant(real{0});
  // Softmax-weighted variance of u_j = beta * G^T x_j, summed over rows. The
  // centered form sum_c p_c (u_c - ubar)^2 equals u^T (diag(p) - p p^T) u
  // and is non-negative term by term.
  Var u = shifted_rows(psi.beta * ad::matmul(lin.query.rows, direction));
  Var p = lin.query_probs;
  Var ubar = ad::sum(p * u, 1);
  Var centered = u - ad::repeat_last(ubar, et.ways);
  return ad::scale(ad::sum(p * ad::square(centered)), lin.query.weight);
}

Var step_length(Var direction, Var q_lsq, Var q_tran, const PsiVars& psi) {
  Var num = ad::sum_squares(direction);
  Var den = psi.transductive ? q_lsq + psi.lambda_tran * q_tran : q_lsq;
  if (!(den.item() >= kStepDenominatorFloor)) return direction.tape().constant(real{0});
  return num / den;
}

}  // namespace fiml::objective
