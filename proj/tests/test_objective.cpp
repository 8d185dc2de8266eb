#include <cmath>

#include "doctest.h"
#include "support/episode.hpp"

using namespace fiml;
using fixture::random_instance;

namespace {

double loss_at(const fixture::Instance& in, bool dense, const Tensor& w,
               objective::TransductiveMode mode = objective::TransductiveMode::Fused) {
  ad::Tape tape;
  auto b = fixture::bind(tape, in, dense, mode);
  return objective::base_loss(tape.constant(w), b.et, b.psi).item();
}

}  // namespace

TEST_CASE("inductive loss matches a naive double loop") {
  const auto in = random_instance(1, 3, 2, 4, 5, 6, false);
  const Tensor w = oracle::random_tensor({5, 3}, 2);
  const double lp = in.psi.value(PsiField::LPos), ln = in.psi.value(PsiField::LNeg);
  const double ap = in.psi.value(PsiField::APos), an = in.psi.value(PsiField::ANeg);
  const double lam = in.psi.value(PsiField::LambdaReg);
  double expect = 0;
  for (std::size_t j = 0; j < 6; ++j)
    for (std::size_t l = 0; l < 4; ++l)
      for (std::size_t c = 0; c < 3; ++c) {
        double s = 0;
        for (std::size_t f = 0; f < 5; ++f) s += in.support[(j * 4 + l) * 5 + f] * w.at(f, c);
        const bool own = in.labels[j] == c;
        const double r = (own ? ap : an) * (s - (own ? lp : ln));
        expect += r * r / 4;
      }
  for (real x : w.data()) expect += lam * x * x;
  CHECK(loss_at(in, true, w) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("entropy equals -sum p log p and is log k at uniform logits") {
  ad::Tape tape;
  const Tensor s = oracle::random_tensor({5, 4}, 3, 2.0);
  const Tensor h = objective::entropy_loss(tape.constant(s)).value();
  for (std::size_t i = 0; i < 5; ++i) {
    const auto p = oracle::softmax({s.at(i, 0), s.at(i, 1), s.at(i, 2), s.at(i, 3)});
    double naive = 0;
    for (double v : p) naive -= v * std::log(v);
    CHECK(h[i] == doctest::Approx(naive).epsilon(1e-12));
  }
  const Tensor u = objective::entropy_loss(tape.constant(Tensor::full({2, 4}, 3.7))).value();
  CHECK(u[0] == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  ad::Var logits = tape.constant(Tensor::full({2, 4}, 3.7));
  const Tensor g = objective::entropy_logit_grad(logits, ad::softmax(logits)).value();
  for (real v : g.data()) CHECK(v == 0);
}

TEST_CASE("grad_base agrees with finite differences in every configuration") {
  using objective::TransductiveMode;
  for (bool dense : {false, true})
    for (bool tran : {false, true})
      for (auto mode : {TransductiveMode::Fused, TransductiveMode::PerLocation}) {
        const auto in = random_instance(10 + dense * 2 + tran, 3, 2, 3, 4, 5, tran);
        const Tensor w = oracle::random_tensor({4, 3}, 20);
        ad::Tape tape;
        auto b = fixture::bind(tape, in, dense, mode);
        const Tensor g = objective::grad_base(tape.constant(w), b.et, b.psi).value();
        const Tensor fd = oracle::numeric_grad([&](const Tensor& t) { return loss_at(in, dense, t, mode); }, w, 1e-5);
        CHECK(oracle::rel_diff(g, fd) < 1e-8);
      }
}

TEST_CASE("grad_base agrees with the tape gradient of base_loss") {
  const auto in = random_instance(30, 4, 1, 2, 3, 8, true);
  ad::Tape tape;
  auto b = fixture::bind(tape, in, true);
  ad::Var w = tape.parameter(oracle::random_tensor({3, 4}, 31));
  const Tensor analytic = objective::grad_base(w, b.et, b.psi).value();
  const Tensor taped = tape.backward(objective::base_loss(w, b.et, b.psi))[w];
  CHECK(oracle::rel_diff(analytic, taped) < 1e-12);
}

TEST_CASE("quad_lsq equals g^T H g with H from differences of the gradient") {
  const auto in = random_instance(40, 3, 2, 2, 4, 4, false);
  const Tensor w = oracle::random_tensor({4, 3}, 41);
  const Tensor dir = oracle::random_tensor({4, 3}, 42);
  auto grad_at = [&](const Tensor& t) {
    ad::Tape tape;
    auto b = fixture::bind(tape, in, true);
    return objective::grad_base(tape.constant(t), b.et, b.psi).value();
  };
  // loss is quadratic, so the central difference of the gradient is exact up to rounding
  const double h = 1e-3;
  Tensor up = w, down = w;
  for (std::size_t i = 0; i < w.size(); ++i) {
    up[i] += h * dir[i];
    down[i] -= h * dir[i];
  }
  const Tensor gu = grad_at(up), gd = grad_at(down);
  double expect = 0;
  for (std::size_t i = 0; i < w.size(); ++i) expect += dir[i] * (gu[i] - gd[i]) / (2 * h);
  ad::Tape tape;
  auto b = fixture::bind(tape, in, true);
  const auto lin = objective::linearize(tape.constant(w), b.et, b.psi);
  CHECK(objective::quad_lsq(tape.constant(dir), lin, b.et, b.psi).item() == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("quad_tran equals sum_j K_j^T (diag p - p p^T) K_j assembled explicitly") {
  const auto in = random_instance(50, 4, 1, 1, 3, 5, true);
  const Tensor w = oracle::random_tensor({3, 4}, 51);
  const Tensor dir = oracle::random_tensor({3, 4}, 52);
  const double beta = in.psi.value(PsiField::Beta);
  ad::Tape tape;
  auto b = fixture::bind(tape, in, false);
  const auto lin = objective::linearize(tape.constant(w), b.et, b.psi);
  const double got = objective::quad_tran(tape.constant(dir), lin, b.et, b.psi).item();

  double expect = 0;
  for (std::size_t j = 0; j < 5; ++j) {
    std::vector<double> s(4), u(4);
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t f = 0; f < 3; ++f) {
        s[c] += beta * in.query[j * 3 + f] * w.at(f, c);
        u[c] += beta * in.query[j * 3 + f] * dir.at(f, c);
      }
    const auto p = oracle::softmax(s);
    Eigen::MatrixXd hm(4, 4);
    for (int a = 0; a < 4; ++a)
      for (int c = 0; c < 4; ++c) hm(a, c) = (a == c ? p[a] : 0.0) - p[a] * p[c];
    Eigen::Map<Eigen::VectorXd> uv(u.data(), 4);
    expect += uv.dot(hm * uv);
  }
  CHECK(got == doctest::Approx(expect).epsilon(1e-10));
  CHECK(got >= 0);
}

TEST_CASE("the exact step minimizes the inductive loss along the gradient") {
  const auto in = random_instance(60, 5, 1, 3, 4, 5, false);
  const Tensor w = oracle::random_tensor({4, 5}, 61);
  ad::Tape tape;
  auto b = fixture::bind(tape, in, true);
  const auto lin = objective::linearize(tape.constant(w), b.et, b.psi);
  ad::Var g = objective::grad_base(lin, b.et, b.psi);
  const double alpha = objective::step_length(g, objective::quad_lsq(g, lin, b.et, b.psi),
                                              objective::quad_tran(g, lin, b.et, b.psi), b.psi)
                           .item();
  auto phi = [&](double a) {
    Tensor t = w;
    for (std::size_t i = 0; i < t.size(); ++i) t[i] -= a * g.value()[i];
    return loss_at(in, true, t);
  };
  const double h = 1e-4 * alpha;
  CHECK(alpha > 0);
  CHECK(std::abs((phi(alpha + h) - phi(alpha - h)) / (2 * h)) < 1e-6 * std::abs(phi(0)));
  CHECK(phi(alpha) < phi(0.5 * alpha));
  CHECK(phi(alpha) < phi(1.5 * alpha));
}

TEST_CASE("a zero gradient gives a zero step") {
  const auto in = random_instance(70, 2, 1, 1, 2, 2, false);
  ad::Tape tape;
  auto b = fixture::bind(tape, in, false);
  ad::Var z = tape.constant(Tensor::zeros({2, 2}));
  CHECK(objective::step_length(z, tape.constant(0.0), tape.constant(0.0), b.psi).item() == 0);
}

TEST_CASE("uniform fusion weights make fused query features the spatial mean") {
  auto in = random_instance(80, 2, 1, 4, 3, 3, false);
  in.psi = Psi::baseline(4);
  ad::Tape tape;
  auto b = fixture::bind(tape, in, true);
  const Tensor fused = objective::fused_query(b.et, b.psi).value();
  for (std::size_t q = 0; q < 3; ++q)
    for (std::size_t f = 0; f < 3; ++f) {
      double s = 0;
      for (std::size_t l = 0; l < 4; ++l) s += in.query[(q * 4 + l) * 3 + f];
      CHECK(fused.at(q, f) == doctest::Approx(s / 4));
    }
}
