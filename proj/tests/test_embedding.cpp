#include "doctest.h"
#include "fiml/embedding.hpp"
#include "fiml/objective.hpp"
#include "support/oracles.hpp"

using namespace fiml;

namespace {

embed::EmbeddingConfig config(embed::Kind kind, std::size_t dim, std::size_t locations, std::size_t features) {
  embed::EmbeddingConfig c;
  c.kind = kind;
  c.input_dim = dim;
  c.locations = locations;
  c.features = features;
  c.hidden = 5;
  return c;
}

Tensor run_embed(const embed::EmbeddingConfig& c, const std::vector<Tensor>& params, const Tensor& x) {
  ad::Tape tape;
  std::vector<ad::Var> p;
  for (const auto& t : params) p.push_back(tape.constant(t));
  return embed::embed(c, p, tape.constant(x)).value();
}

}  // namespace

TEST_CASE("identity grid cuts the input into contiguous cells") {
  const auto c = config(embed::Kind::IdentityGrid, 6, 3, 2);
  const Tensor x = oracle::random_tensor({2, 6}, 1);
  const Tensor out = run_embed(c, {}, x);
  REQUIRE(out.shape() == Shape{2, 3, 2});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 6; ++i) CHECK(out[b * 6 + i] == x.at(b, i));
}

TEST_CASE("linear embedding with identity weights equals the identity grid") {
  const auto lin = config(embed::Kind::Linear, 8, 2, 4);
  const auto grid = config(embed::Kind::IdentityGrid, 8, 2, 4);
  Tensor eye = Tensor::zeros({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1;
  const Tensor x = oracle::random_tensor({3, 8}, 2);
  CHECK(run_embed(lin, {eye}, x) == run_embed(grid, {}, x));
}

TEST_CASE("mlp2 matches a naive per-cell loop") {
  const auto c = config(embed::Kind::Mlp2, 6, 2, 3);
  const auto params = embed::init_params(c, 7);
  REQUIRE(params.size() == 4);
  const Tensor& w1 = params[0];
  const Tensor& b1 = params[1];
  const Tensor& w2 = params[2];
  const Tensor& b2 = params[3];
  const Tensor x = oracle::random_tensor({2, 6}, 3);
  const Tensor out = run_embed(c, params, x);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t l = 0; l < 2; ++l) {
      std::vector<double> h(5);
      for (std::size_t j = 0; j < 5; ++j) {
        double s = b1[j];
        for (std::size_t i = 0; i < 3; ++i) s += x.at(b, l * 3 + i) * w1.at(i, j);
        h[j] = std::max(0.0, s);
      }
      for (std::size_t f = 0; f < 3; ++f) {
        double s = b2[f];
        for (std::size_t j = 0; j < 5; ++j) s += h[j] * w2.at(j, f);
        CHECK(out[(b * 2 + l) * 3 + f] == doctest::Approx(s).epsilon(1e-13));
      }
    }
}

TEST_CASE("embedding parameter gradients agree with finite differences") {
  const auto c = config(embed::Kind::Linear, 6, 3, 2);
  const Tensor w = oracle::random_tensor({2, 2}, 4);
  const Tensor x = oracle::random_tensor({4, 6}, 5);
  auto loss = [&](const Tensor& wt) {
    ad::Tape tape;
    std::vector<ad::Var> p{tape.constant(wt)};
    return ad::sum_squares(embed::spatial_mean(embed::embed(c, p, tape.constant(x)))).item();
  };
  ad::Tape tape;
  std::vector<ad::Var> p{tape.parameter(w)};
  auto g = tape.backward(ad::sum_squares(embed::spatial_mean(embed::embed(c, p, tape.constant(x)))));
  CHECK(oracle::rel_diff(g[p[0]], oracle::numeric_grad(loss, w)) < 1e-8);
}

TEST_CASE("spatial mean averages locations") {
  ad::Tape tape;
  const Tensor block = oracle::random_tensor({2, 4, 3}, 6);
  const Tensor m = embed::spatial_mean(tape.constant(block)).value();
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t f = 0; f < 3; ++f) {
      double s = 0;
      for (std::size_t l = 0; l < 4; ++l) s += block[(b * 4 + l) * 3 + f];
      CHECK(m.at(b, f) == doctest::Approx(s / 4));
    }
}

TEST_CASE("a single location makes dense and pooled episodes identical") {
  ad::Tape tape;
  const ad::Var s = tape.constant(oracle::random_tensor({4, 1, 3}, 8));
  const ad::Var q = tape.constant(oracle::random_tensor({6, 1, 3}, 9));
  const std::vector<std::size_t> labels{0, 0, 1, 1};
  const auto dense = objective::make_episode_tensors(s, labels, q, 2, true);
  const auto pooled = objective::make_episode_tensors(s, labels, q, 2, false);
  Psi psi = Psi::baseline(1);
  psi.transductive = true;
  const PsiVars pv = bind_psi(tape, psi, PsiMask::none());
  const ad::Var theta = tape.constant(oracle::random_tensor({3, 2}, 10));
  CHECK(objective::base_loss(theta, dense, pv).item() == doctest::Approx(objective::base_loss(theta, pooled, pv).item()));
  CHECK(objective::grad_base(theta, dense, pv).value() == objective::grad_base(theta, pooled, pv).value());
}

TEST_CASE("bad embedding configs are rejected") {
  auto c = config(embed::Kind::Mlp2, 7, 2, 3);
  CHECK_THROWS_AS(embed::validate(c), ConfigError);
  c = config(embed::Kind::IdentityGrid, 8, 2, 3);
  CHECK_THROWS_AS(embed::validate(c), ConfigError);
}
