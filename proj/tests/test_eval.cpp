#include <cmath>
#include <sstream>

#include "doctest.h"
#include "fiml/eval.hpp"

using namespace fiml;

namespace {

data::TaskFamily family(double prior_std, double within_std) {
  data::FamilyConfig c;
  c.classes = 30;
  c.dim = 8;
  c.split = {10, 10, 10};
  c.prior_std = prior_std;
  c.within_std = within_std;
  return data::TaskFamily::generate(c, 4);
}

meta::Model grid_model(bool dense, learner::InitKind init, bool transductive = false) {
  meta::ModelSpec s;
  s.embedding.kind = embed::Kind::IdentityGrid;
  s.embedding.input_dim = 8;
  s.embedding.locations = 2;
  s.embedding.features = 4;
  s.dense = dense;
  s.init = init;
  Psi psi = Psi::baseline(2);
  psi.transductive = transductive;
  return meta::Model::create(s, psi, PsiMask::none(), 0);
}

eval::EvalProtocol protocol(std::size_t episodes) {
  eval::EvalProtocol p;
  p.episodes = episodes;
  p.query_per_class = 5;
  p.seed = 7;
  return p;
}

}  // namespace

TEST_CASE("interval of two episodes at 0.6 and 0.8") {
  const auto r = eval::summarize("x", {0.6, 0.8});
  CHECK(r.mean_accuracy == doctest::Approx(70.0));
  CHECK(r.ci95 == doctest::Approx(19.6).epsilon(1e-12));
  CHECK(eval::format_accuracy(r) == "70.00±19.60");
}

TEST_CASE("separable classes give a perfect score with zero width") {
  const auto r = eval::evaluate(grid_model(false, learner::InitKind::Zero), family(10.0, 0.01), protocol(20), 1);
  CHECK(r.mean_accuracy == 100.0);
  CHECK(r.ci95 == 0.0);
}

TEST_CASE("pure noise stays near chance level") {
  const auto r = eval::evaluate(grid_model(false, learner::InitKind::Zero), family(0.0, 1.0), protocol(400), 1);
  CHECK(std::abs(r.mean_accuracy - 20.0) < 3 * r.ci95 / 1.96 + 0.5);
}

TEST_CASE("evaluation is identical for any thread count") {
  const auto fam = family(1.0, 1.0);
  const auto m = grid_model(true, learner::InitKind::Support, true);
  const auto a = eval::evaluate(m, fam, protocol(30), 1);
  const auto b = eval::evaluate(m, fam, protocol(30), 3);
  CHECK(a.episode_accuracies == b.episode_accuracies);
  std::ostringstream sa, sb;
  eval::write_report_csv(sa, {a});
  eval::write_report_csv(sb, {b});
  CHECK(sa.str() == sb.str());
  CHECK(sa.str().rfind("label,ways,shots,iterations,episodes,accuracy,ci95\n", 0) == 0);
}

TEST_CASE("a converged baseline matches the closed-form ridge classifier") {
  const auto fam = family(1.0, 1.5);
  auto p = protocol(60);
  p.iterations = 300;
  const auto m = grid_model(false, learner::InitKind::Zero);
  const auto pipeline = eval::evaluate(m, fam, p, 1);
  const auto ridge = eval::evaluate_closed_form_ridge(m, fam, p, m.psi.value(PsiField::LambdaReg), 1);
  CHECK(std::abs(pipeline.mean_accuracy - ridge.mean_accuracy) <= 0.5);
}

TEST_CASE("zero iterations evaluate the initializer alone") {
  const auto fam = family(1.0, 1.0);
  auto p = protocol(10);
  p.iterations = 0;
  const auto zero = eval::evaluate(grid_model(false, learner::InitKind::Zero), fam, p, 1);
  // all-zero logits predict class 0 on every query
  CHECK(zero.mean_accuracy == doctest::Approx(20.0));
}

TEST_CASE("exchanging psi between identical models changes nothing") {
  const auto fam = family(1.0, 1.0);
  const auto m = grid_model(true, learner::InitKind::Support, true);
  const auto r = eval::crossval_psi(m, m, fam, protocol(20), 1);
  CHECK(r.delta == 0.0);
  auto other = m;
  other.spec.embedding.locations = 4;
  other.spec.embedding.features = 2;
  other.psi = Psi::baseline(4);
  CHECK_THROWS_AS(eval::crossval_psi(other, m, fam, protocol(20), 1), ConfigError);
}

TEST_CASE("confidence rows are distributions and both variants are reported") {
  const auto fam = family(1.0, 1.0);
  const auto m = grid_model(true, learner::InitKind::Support, true);
  const auto ep = data::sample_episode(fam, data::Split::Test, 5, 1, 3, 2);
  const auto rep = eval::export_confidence_report(m, ep, 0, 15);
  CHECK(rep.rows.size() == 2 * ep.query_size());
  for (const auto& row : rep.rows) {
    double s = 0;
    for (double p : row.probs) s += p;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(rep.mean_max_prob_tran == doctest::Approx(eval::mean_max_probability(rep.rows, "transductive")));
  std::ostringstream os;
  eval::write_confidence_csv(os, rep.rows, 5);
  CHECK(os.str().rfind("episode_id,query_id,true_class,p_0,p_1,p_2,p_3,p_4,variant\n", 0) == 0);
}

TEST_CASE("the standard ladder has five rungs in order") {
  const auto ladder = eval::ablation_ladder(eval::LadderKind::Standard);
  REQUIRE(ladder.size() == 5);
  CHECK(ladder[0].name == "Baseline");
  CHECK(ladder[4].name == "+Transductive");
  CHECK(ladder[4].transductive);
  CHECK_FALSE(ladder[1].dense);
  CHECK(ladder[2].dense);
  const auto free = eval::ablation_ladder(eval::LadderKind::DenseFree);
  CHECK(free.back().dense);
  CHECK_FALSE(free[3].dense);
}

TEST_CASE("eval-side sweep reports one row per grid value") {
  const auto fam = family(1.0, 1.0);
  const auto r = eval::sweep_eval_iterations(grid_model(false, learner::InitKind::Support), fam, protocol(10),
                                             {0, 3, 6}, 1);
  REQUIRE(r.sweep.size() == 3);
  CHECK(r.sweep[2].iterations == 6);
  CHECK(r.mean_accuracy == r.sweep[2].accuracy);
  std::ostringstream os;
  eval::write_sweep_csv(os, r);
  CHECK(os.str().rfind("iterations,accuracy,ci95\n0,", 0) == 0);
}
