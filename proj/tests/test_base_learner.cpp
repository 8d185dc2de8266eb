#include <cmath>

#include "doctest.h"
#include "fiml/base_learner.hpp"
#include "support/episode.hpp"

using namespace fiml;
using fixture::random_instance;

TEST_CASE("zero init is zero and support init matches the class-mean formula") {
  auto in = random_instance(1, 3, 2, 2, 4, 3, false);
  in.psi.set_value(PsiField::OPos, 1.3);
  in.psi.set_value(PsiField::ONeg, 0.4);
  ad::Tape tape;
  auto b = fixture::bind(tape, in, true);
  const Tensor zero = learner::init_theta(b.et, b.psi, learner::InitKind::Zero).value();
  CHECK(zero == Tensor::zeros({4, 3}));

  const Tensor w = learner::init_theta(b.et, b.psi, learner::InitKind::Support).value();
  // pooled features by hand
  std::vector<std::vector<double>> pooled(6, std::vector<double>(4));
  double mbar = 0;
  for (std::size_t j = 0; j < 6; ++j) {
    for (std::size_t f = 0; f < 4; ++f) {
      for (std::size_t l = 0; l < 2; ++l) pooled[j][f] += in.support[(j * 2 + l) * 4 + f] / 2;
      mbar += pooled[j][f] * pooled[j][f] / 6;
    }
  }
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t f = 0; f < 4; ++f) {
      double own = 0, other = 0;
      for (std::size_t j = 0; j < 6; ++j) (in.labels[j] == c ? own : other) += pooled[j][f];
      const double expect = (1.3 * own / 2 - 0.4 * other / 4) / mbar;
      CHECK(w.at(f, c) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("zero iterations return the initializer and traces have D + 1 losses") {
  const auto in = random_instance(2, 3, 1, 2, 3, 4, true);
  ad::Tape tape;
  auto b = fixture::bind(tape, in, true);
  const auto r0 = learner::run_inner(b.et, b.psi, learner::InitKind::Support, 0);
  CHECK(r0.theta.value() == learner::init_theta(b.et, b.psi, learner::InitKind::Support).value());
  const auto r5 = learner::run_inner(b.et, b.psi, learner::InitKind::Support, 5);
  CHECK(r5.trace.losses.size() == 6);
  CHECK(r5.trace.steps.size() == 5);
}

TEST_CASE("inductive steepest descent never increases the loss") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto in = random_instance(100 + seed, 4, 2, 3, 5, 6, false);
    ad::Tape tape;
    auto b = fixture::bind(tape, in, true);
    const auto r = learner::run_inner(b.et, b.psi, learner::InitKind::Zero, 15);
    for (std::size_t i = 1; i < r.trace.losses.size(); ++i)
      CHECK(r.trace.losses[i] <= r.trace.losses[i - 1] * (1 + 1e-12));
  }
}

TEST_CASE("pooled inner loop converges to the normal-equation solution") {
  auto in = random_instance(3, 3, 2, 2, 4, 3, false);
  in.psi = Psi::baseline(2);
  in.psi.set_value(PsiField::LambdaReg, 0.1);
  ad::Tape tape;
  auto b = fixture::bind(tape, in, false);
  const auto r = learner::run_inner(b.et, b.psi, learner::InitKind::Zero, 400, false);

  const Eigen::MatrixXd x = oracle::to_eigen(b.et.support_pooled.value());
  Eigen::MatrixXd t = Eigen::MatrixXd::Constant(6, 3, -1.0);
  for (std::size_t j = 0; j < 6; ++j) t(j, in.labels[j]) = 1.0;
  const Eigen::MatrixXd a = x.transpose() * x + 0.1 * Eigen::MatrixXd::Identity(4, 4);
  const Eigen::MatrixXd w = a.ldlt().solve(x.transpose() * t);
  // steps stop once the step denominator drops under its floor
  CHECK(oracle::rel_diff(r.theta.value(), oracle::from_eigen(w)) < 1e-6);
}

TEST_CASE("relabeling the classes permutes the learned columns") {
  auto in = random_instance(4, 3, 2, 2, 4, 3, true);
  auto perm = in;
  // swap classes 0 and 2
  for (auto& l : perm.labels) l = l == 0 ? 2 : l == 2 ? 0 : l;
  ad::Tape tape;
  auto b = fixture::bind(tape, in, true);
  auto bp = fixture::bind(tape, perm, true);
  const Tensor w = learner::run_inner(b.et, b.psi, learner::InitKind::Support, 6).theta.value();
  const Tensor wp = learner::run_inner(bp.et, bp.psi, learner::InitKind::Support, 6).theta.value();
  const std::size_t map[3] = {2, 1, 0};
  for (std::size_t f = 0; f < 4; ++f)
    for (std::size_t c = 0; c < 3; ++c) CHECK(wp.at(f, map[c]) == doctest::Approx(w.at(f, c)).epsilon(1e-12));
}

TEST_CASE("fused logits equal the naive weighted sum over locations") {
  ad::Tape tape;
  const Tensor w = oracle::random_tensor({3, 2}, 5);
  const Tensor q = oracle::random_tensor({4, 2, 3}, 6);
  const Tensor v = Tensor::vector({0.7, 0.2});
  const Tensor s = learner::fuse_logits(tape.constant(w), tape.constant(q), tape.constant(v)).value();
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t c = 0; c < 2; ++c) {
      double e = 0;
      for (std::size_t l = 0; l < 2; ++l)
        for (std::size_t f = 0; f < 3; ++f) e += v[l] * q[(j * 2 + l) * 3 + f] * w.at(f, c);
      CHECK(s.at(j, c) == doctest::Approx(e).epsilon(1e-13));
    }
}

TEST_CASE("predictions break ties toward the lowest class and confidences sum to one") {
  const auto p = learner::predict(Tensor::matrix(2, 3, {1, 1, 0, -2, 5, 5}));
  CHECK(p.labels == std::vector<std::size_t>{0, 1});
  for (std::size_t j = 0; j < 2; ++j) {
    double s = 0;
    for (std::size_t c = 0; c < 3; ++c) s += p.confidences.at(j, c);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("non-finite inputs raise a numeric error") {
  auto in = random_instance(7, 2, 1, 1, 2, 2, false);
  in.support[0] = std::numeric_limits<real>::infinity();
  auto run = [&] {
    ad::Tape tape;
    auto b = fixture::bind(tape, in, false);
    learner::run_inner(b.et, b.psi, learner::InitKind::Zero, 3);
  };
  CHECK_THROWS_AS(run(), NumericError);
}
