#include "doctest.h"
#include "fiml/config.hpp"

using namespace fiml;
using config::Json;

namespace {

config::RunConfig parse(const std::string& text) { return config::parse_run_config(Json::parse(text)); }

}  // namespace

TEST_CASE("an empty document gives the defaults and the echo parses back to itself") {
  const auto c = parse("{}");
  CHECK(c.seed == 0);
  CHECK(c.inner.iters_train == 10);
  CHECK(c.inner.iters_eval == 15);
  CHECK(c.meta.tasks_per_batch == 16);
  CHECK(c.family.split == std::array<std::size_t, 3>{64, 16, 20});
  const Json echo = config::to_json(c);
  CHECK(config::to_json(config::parse_run_config(echo)) == echo);
}

TEST_CASE("nested values are read in constrained space") {
  const auto c = parse(R"({"psi": {"lambda_reg": 0.5, "beta": 2.0, "transductive": true, "learn": ["beta"]},
                           "model": {"dense": false, "init": "zero"}})");
  CHECK(c.psi.value(PsiField::LambdaReg) == doctest::Approx(0.5));
  CHECK(c.psi.value(PsiField::Beta) == doctest::Approx(2.0));
  CHECK(c.psi.transductive);
  CHECK(c.learn[PsiField::Beta]);
  CHECK_FALSE(c.learn[PsiField::LambdaReg]);
  CHECK_FALSE(c.model.dense);
  CHECK(c.model.init == learner::InitKind::Zero);
}

TEST_CASE("unknown keys and bad values are config errors") {
  CHECK_THROWS_AS(parse(R"({"sed": 1})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"meta": {"epochz": 1}})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"eval": {"split": "dev"}})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"eval": {"episodes": 1}})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"psi": {"fusion": [1, 2, 3]}})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"embedding": {"input_dim": 16}})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"family": {"kind": "spiral"}})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"psi": {"learn": ["nope"]}})"), ConfigError);
  CHECK_THROWS_AS(parse(R"({"seed": "one"})"), ConfigError);
}
