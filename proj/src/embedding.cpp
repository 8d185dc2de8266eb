#include "fiml/embedding.hpp"

#include <cmath>
#include <string>

#include "fiml/rng.hpp"

namespace fiml::embed {

const char* to_string(Kind kind) {
  switch (kind) {
    case Kind::IdentityGrid: return "identity-grid";
    case Kind::Linear: return "linear";
    case Kind::Mlp2: return "mlp2";
  }
  return "?";
}

Kind kind_from_string(const std::string& name) {
  if (name == "identity-grid") return Kind::IdentityGrid;
  if (name == "linear") return Kind::Linear;
  if (name == "mlp2") return Kind::Mlp2;
  throw ConfigError("embedding: unknown kind '" + name + "'");
}

void validate(const EmbeddingConfig& c) {
  if (c.locations == 0 || c.features == 0 || c.input_dim == 0) {
    throw ConfigError("embedding: dims and location count must be positive");
  }
  if (c.input_dim % c.locations != 0) {
    throw ConfigError("embedding: input dim " + std::to_string(c.input_dim) + " not divisible by " +
                      std::to_string(c.locations) + " locations");
  }
  if (c.kind == Kind::IdentityGrid && c.features != c.cell_dim()) {
    throw ConfigError("embedding: identity-grid requires features == input_dim / locations");
  }
  if (c.kind == Kind::Mlp2 && c.hidden == 0) throw ConfigError("embedding: mlp2 needs a hidden width");
}

namespace {

Tensor uniform_init(Shape shape, std::size_t fan_in, std::uint64_t seed, std::uint64_t slot) {
  CounterRng rng = CounterRng::stream(seed, {streams::kInit, slot});
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& x : t.mutable_data()) x = static_cast<real>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

std::vector<Tensor> init_params(const EmbeddingConfig& c, std::uint64_t seed) {
  validate(c);
  const std::size_t cell = c.cell_dim();
  switch (c.kind) {
    case Kind::IdentityGrid: return {};
    case Kind::Linear: return {uniform_init({cell, c.features}, cell, seed, 0)};
    case Kind::Mlp2:
      return {uniform_init({cell, c.hidden}, cell, seed, 0), uniform_init({c.hidden}, cell, seed, 1),
              uniform_init({c.hidden, c.features}, c.hidden, seed, 2),
              uniform_init({c.features}, c.hidden, seed, 3)};
  }
  return {};
}

ad::Var embed(const EmbeddingConfig& c, std::span<const ad::Var> params, ad::Var x) {
  if (x.value().rank() != 2 || x.shape()[1] != c.input_dim) {
    throw ShapeError("embed: expected input [batch, " + std::to_string(c.input_dim) + "], got " +
                     shape_string(x.shape()));
  }
  const std::size_t batch = x.shape()[0];
  const std::size_t rows = batch * c.locations;
  ad::Var cells = ad::reshape(x, {rows, c.cell_dim()});
  ad::Var out;
  switch (c.kind) {
    case Kind::IdentityGrid:
      out = cells;
      break;
    case Kind::Linear:
      if (params.size() != 1) throw ShapeError("embed: linear expects 1 parameter tensor");
      out = ad::matmul(cells, params[0]);
      break;
    case Kind::Mlp2: {
      if (params.size() != 4) throw ShapeError("embed: mlp2 expects 4 parameter tensors");
      ad::Var h = ad::relu(ad::matmul(cells, params[0]) + ad::repeat_first(params[1], rows));
      out = ad::matmul(h, params[2]) + ad::repeat_first(params[3], rows);
      break;
    }
  }
  return ad::reshape(out, {batch, c.locations, c.features});
}

ad::Var spatial_mean(ad::Var block) {
  if (block.value().rank() != 3) throw ShapeError("spatial_mean: expected [batch, L, F]");
  const std::size_t locations = block.shape()[1];
  if (locations == 0) throw ShapeError("spatial_mean: no locations");
  return ad::mean(block, 1);
}

}  // namespace fiml::embed
