#pragma once

#include <string>
#include <vector>

#include "fiml/objective.hpp"

namespace fiml::learner {

enum class InitKind { Zero, Support };

const char* to_string(InitKind kind);
InitKind init_kind_from_string(const std::string& name);

struct InnerConfig {
  std::size_t iters_train = 10;
  std::size_t iters_eval = 15;

  friend bool operator==(const InnerConfig&, const InnerConfig&) = default;
};

/// Base loss before the first step and after every step, plus the step
/// lengths taken.
struct InnerTrace {
  std::vector<real> losses;
  std::vector<real> steps;
};

// Zero: W = 0. Support: column c is (o+ mu_c - o- mu_notc) / mbar, where mu_c
// is the mean pooled support feature of class c, mu_notc the mean over the
// other support samples (dropped when ways == 1) and mbar the mean squared
// norm of the pooled support features.
ad::Var init_theta(const objective::EpisodeTensors& et, const PsiVars& psi, InitKind kind);

struct InnerResult {
  ad::Var theta;
  InnerTrace trace;
};

// Runs `iterations` steepest-descent steps with closed-form step lengths,
// fully recorded on the tape. Throws NumericError naming the iteration when
// the loss stops being finite.
InnerResult run_inner(const objective::EpisodeTensors& et, const PsiVars& psi, InitKind init,
                      std::size_t iterations, bool record_trace = true);

// s_j = sum_l v_l W^T x_{j,l}: [Q, L, F] x [L] -> [Q, k].
ad::Var fuse_logits(ad::Var theta, ad::Var query_block, ad::Var fusion);

struct Prediction {
  std::vector<std::size_t> labels;  // argmax, ties to the lowest class index
  Tensor confidences;               // softmax of the fused logits
};

Prediction predict(const Tensor& logits);

}  // namespace fiml::learner
