#pragma once

#include <array>
#include <bitset>
#include <string>
#include <vector>

#include "fiml/autodiff.hpp"

namespace fiml {

// Meta-learned base-learner parameters.
enum class PsiField : std::size_t {
  LPos,        // score target of the true class
  LNeg,        // score target of the other classes
  APos,        // residual weight, true class (log-space)
  ANeg,        // residual weight, other classes (log-space)
  OPos,        // initializer weight of the class mean
  ONeg,        // initializer weight of the mean of the other classes
  LambdaReg,   // ridge weight (log-space)
  LambdaTran,  // entropy weight (log-space)
  Beta,        // entropy temperature (log-space)
  Fusion,      // per-location fusion weights v, length L
};

inline constexpr std::size_t kPsiScalars = 9;
inline constexpr std::size_t kPsiFields = 10;

const char* to_string(PsiField field);
PsiField psi_field_from_string(const std::string& name);
bool is_log_space(PsiField field);

/// Raw storage. Positive quantities are kept as logarithms so the outer
/// optimizer works on unconstrained values.
struct Psi {
  std::array<real, kPsiScalars> raw{};
  std::vector<real> fusion;
  // When false the entropy term is switched off and lambda_tran is exactly 0.
  bool transductive = false;

  // l+ = 1, l- = -1, a+ = a- = 1, o+ = o- = 1, lambda_reg = 0.01,
  // lambda_tran = 0.1 (inactive until `transductive`), beta = 1, v = 1/L.
  static Psi baseline(std::size_t locations);

  // Constrained value (exponentiated for log-space fields).
  real value(PsiField field) const;
  void set_value(PsiField field, real value);
  real lambda_tran() const { return transductive ? value(PsiField::LambdaTran) : real{0}; }

  friend bool operator==(const Psi&, const Psi&) = default;
};

/// Which fields the meta-learner may update.
class PsiMask {
 public:
  static PsiMask none() { return PsiMask(); }
  static PsiMask all();

  bool operator[](PsiField f) const { return bits_[static_cast<std::size_t>(f)]; }
  PsiMask& set(PsiField f, bool on = true) {
    bits_[static_cast<std::size_t>(f)] = on;
    return *this;
  }
  bool any() const { return bits_.any(); }
  friend bool operator==(const PsiMask&, const PsiMask&) = default;

 private:
  std::bitset<kPsiFields> bits_;
};

/// Psi placed on a tape. `raw` / `fusion_raw` are the leaves (parameters when
/// learnable, constants otherwise); the remaining members are the constrained
/// values used by the objective.
struct PsiVars {
  std::array<ad::Var, kPsiScalars> raw;
  ad::Var fusion_raw;

  ad::Var l_pos, l_neg, a_pos, a_neg, o_pos, o_neg, lambda_reg, lambda_tran, beta;
  ad::Var fusion;
  bool transductive = false;

  ad::Var leaf(PsiField f) const {
    return f == PsiField::Fusion ? fusion_raw : raw[static_cast<std::size_t>(f)];
  }
};

PsiVars bind_psi(ad::Tape& tape, const Psi& psi, const PsiMask& learn);

// Gradient w.r.t. the raw (log-space) storage, shaped like Psi.
Psi psi_gradient(const ad::Gradients& grads, const PsiVars& vars);

}  // namespace fiml
