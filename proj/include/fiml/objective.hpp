#pragma once

#include <vector>

#include "fiml/autodiff.hpp"
#include "fiml/psi.hpp"

// Base-learner objective for a linear head W [F, k] on spatial features:
//
//   L_base(W) = L_ind(W) + lambda_tran * L_tran(W) + lambda_reg * |W|^2
//
// together with its closed-form gradient and the two Hessian quadratic forms
// (Gauss-Newton for the least-squares part, diag(p) - p p^T for the entropy
// part) that give the exact steepest-descent step length. Everything is built
// from tape operations, so outer gradients flow through all of it.
namespace fiml::objective {

enum class TransductiveMode {
  Fused,        // entropy of the fused (location-weighted) query logits
  PerLocation,  // mean over locations of per-location entropies
};

const char* to_string(TransductiveMode mode);

inline constexpr real kStepDenominatorFloor = real(1e-12);

struct EpisodeTensors {
  ad::Var support;            // [N*L, F], row j*L + l is location l of sample j
  Tensor support_targets;     // one-hot [N*L, k]
  ad::Var support_pooled;     // [N, F] spatial-mean features
  Tensor pooled_targets;      // one-hot [N, k]
  ad::Var query;              // [Q, L, F]
  std::size_t ways = 0;
  std::size_t locations = 1;
  bool dense = true;
  TransductiveMode mode = TransductiveMode::Fused;
};

// Builds the episode view from embedded blocks. With dense == false both
// blocks are pooled over locations first and treated as L = 1.
EpisodeTensors make_episode_tensors(ad::Var support_block, const std::vector<std::size_t>& support_labels,
                                    ad::Var query_block, std::size_t ways, bool dense,
                                    TransductiveMode mode = TransductiveMode::Fused);

Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t ways);

// v when dense, the constant [1] otherwise.
ad::Var fusion_weights(const EpisodeTensors& et, const PsiVars& psi);
// Sum_l v_l * query[:, l, :] -> [Q, F].
ad::Var fused_query(const EpisodeTensors& et, const PsiVars& psi);

// Rows fed to the entropy term with their per-row weight.
struct QueryRows {
  ad::Var rows;  // [M, F]
  real weight = 1;
};
QueryRows transductive_rows(const EpisodeTensors& et, const PsiVars& psi);

// A[j,c] = a+ if c is the label of row j else a-.
ad::Var residual_weights(const Tensor& targets, const PsiVars& psi);
// R[j,c] = a+ (S - l+) on the true class, a- (S - l-) elsewhere.
ad::Var residual_map(ad::Var scores, const Tensor& targets, const PsiVars& psi);

ad::Var inductive_loss(ad::Var theta, const EpisodeTensors& et, const PsiVars& psi);
// Per-row entropy of softmax(s): scalar for [k], [M] for [M, k].
ad::Var entropy_loss(ad::Var logits);
// dH/ds = p * (sbar - s) row-wise, sbar the softmax-weighted mean logit.
// Logits are shifted by their row maximum first, so equal logits give an
// exactly zero gradient.
ad::Var entropy_logit_grad(ad::Var logits, ad::Var probs);

ad::Var transductive_loss(ad::Var theta, const EpisodeTensors& et, const PsiVars& psi);
ad::Var base_loss(ad::Var theta, const EpisodeTensors& et, const PsiVars& psi);

/// Quantities at the current iterate, shared by the gradient, the quadratic
/// forms and the loss.
struct Linearization {
  ad::Var theta;
  ad::Var weights;       // A
  ad::Var residual;      // R
  QueryRows query;       // entropy inputs (only when transductive)
  ad::Var query_logits;  // beta * rows * W
  ad::Var query_probs;   // softmax of query_logits
};

Linearization linearize(ad::Var theta, const EpisodeTensors& et, const PsiVars& psi);

ad::Var base_loss(const Linearization& lin, const EpisodeTensors& et, const PsiVars& psi);
ad::Var grad_base(const Linearization& lin, const EpisodeTensors& et, const PsiVars& psi);
ad::Var grad_base(ad::Var theta, const EpisodeTensors& et, const PsiVars& psi);

// G^T H_lsq G with H_lsq the Gauss-Newton matrix of L_ind plus 2 lambda_reg I.
ad::Var quad_lsq(ad::Var direction, const Linearization& lin, const EpisodeTensors& et, const PsiVars& psi);
// G^T H_tran G with the convexified entropy Hessian diag(p) - p p^T.
ad::Var quad_tran(ad::Var direction, const Linearization& lin, const EpisodeTensors& et, const PsiVars& psi);

// |G|^2 / (Q_lsq + lambda_tran Q_tran); 0 when the denominator is below
// kStepDenominatorFloor.
ad::Var step_length(ad::Var direction, ad::Var q_lsq, ad::Var q_tran, const PsiVars& psi);

}  // namespace fiml::objective
