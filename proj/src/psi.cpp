#include "fiml/psi.hpp"

#include <cmath>

namespace fiml {

namespace {
constexpr std::array<const char*, kPsiFields> kNames = {
    "l_pos", "l_neg", "a_pos", "a_neg", "o_pos", "o_neg", "lambda_reg", "lambda_tran", "beta", "fusion"};
}

const char* to_string(PsiField field) { return kNames[static_cast<std::size_t>(field)]; }

PsiField psi_field_from_string(const std::string& name) {
  for (std::size_t i = 0; i < kPsiFields; ++i) {
    if (name == kNames[i]) return static_cast<PsiField>(i);
  }
  throw ConfigError("unknown psi field '" + name + "'");
}

bool is_log_space(PsiField f) {
  switch (f) {
    case PsiField::APos:
    case PsiField::ANeg:
    case PsiField::LambdaReg:
    case PsiField::LambdaTran:
    case PsiField::Beta: return true;
    default: return false;
  }
}

Psi Psi::baseline(std::size_t locations) {
  Psi p;
  p.set_value(PsiField::LPos, 1);
  p.set_value(PsiField::LNeg, -1);
  p.set_value(PsiField::APos, 1);
  p.set_value(PsiField::ANeg, 1);
  p.set_value(PsiField::OPos, 1);
  p.set_value(PsiField::ONeg, 1);
  p.set_value(PsiField::LambdaReg, real(0.01));
  p.set_value(PsiField::LambdaTran, real(0.1));
  p.set_value(PsiField::Beta, 1);
  p.fusion.assign(locations, real{1} / static_cast<real>(locations));
  return p;
}

real Psi::value(PsiField f) const {
  if (f == PsiField::Fusion) throw Error("Psi::value: fusion is a vector");
  const real r = raw[static_cast<std::size_t>(f)];
  return is_log_space(f) ? std::exp(r) : r;
}

void Psi::set_value(PsiField f, real v) {
  if (f == PsiField::Fusion) throw Error("Psi::set_value: fusion is a vector");
  if (is_log_space(f) && !(v > 0)) {
    throw ConfigError(std::string("psi field ") + to_string(f) + " must be positive");
  }
  raw[static_cast<std::size_t>(f)] = is_log_space(f) ? std::log(v) : v;
}

PsiMask PsiMask::all() {
  PsiMask m;
  m.bits_.set();
  return m;
}

PsiVars bind_psi(ad::Tape& tape, const Psi& psi, const PsiMask& learn) {
  PsiVars v;
  v.transductive = psi.transductive;
  for (std::size_t i = 0; i < kPsiScalars; ++i) {
    Tensor t = Tensor::scalar(psi.raw[i]);
    v.raw[i] = learn[static_cast<PsiField>(i)] ? tape.parameter(std::move(t)) : tape.constant(std::move(t));
  }
  Tensor fusion({psi.fusion.size()}, psi.fusion);
  v.fusion_raw = learn[PsiField::Fusion] ? tape.parameter(std::move(fusion)) : tape.constant(std::move(fusion));

  auto field = [&](PsiField f) {
    ad::Var r = v.raw[static_cast<std::size_t>(f)];
    return is_log_space(f) ? ad::exp(r) : r;
  };
  v.l_pos = field(PsiField::LPos);
  v.l_neg = field(PsiField::LNeg);
  v.a_pos = field(PsiField::APos);
  v.a_neg = field(PsiField::ANeg);
  v.o_pos = field(PsiField::OPos);
  v.o_neg = field(PsiField::ONeg);
  v.lambda_reg = field(PsiField::LambdaReg);
  v.lambda_tran = psi.transductive ? field(PsiField::LambdaTran) : tape.constant(real{0});
  v.beta = field(PsiField::Beta);
  v.fusion = v.fusion_raw;
  return v;
}

Psi psi_gradient(const ad::Gradients& grads, const PsiVars& vars) {
  Psi g;
  g.transductive = vars.transductive;
  for (std::size_t i = 0; i < kPsiScalars; ++i) g.raw[i] = grads[vars.raw[i]].item();
  const Tensor gf = grads[vars.fusion_raw];
  g.fusion.assign(gf.data().begin(), gf.data().end());
  return g;
}

}  // namespace fiml
