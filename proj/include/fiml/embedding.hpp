#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fiml/autodiff.hpp"

// Small trainable feature extractors producing spatial feature blocks
// [batch, L, F]. The input vector is cut into L contiguous cells and the same
// map is applied to every cell, so each cell becomes one spatial location.
namespace fiml::embed {

enum class Kind { IdentityGrid, Linear, Mlp2 };

const char* to_string(Kind kind);
Kind kind_from_string(const std::string& name);

struct EmbeddingConfig {
  Kind kind = Kind::Mlp2;
  std::size_t input_dim = 32;
  std::size_t features = 16;   // F
  std::size_t locations = 4;   // L
  std::size_t hidden = 32;     // mlp2 only

  std::size_t cell_dim() const { return input_dim / locations; }
};

void validate(const EmbeddingConfig& config);

// Parameter tensors in a fixed order: linear -> {W [cell, F]};
// mlp2 -> {W1 [cell, H], b1 [H], W2 [H, F], b2 [F]}; identity-grid -> {}.
std::vector<Tensor> init_params(const EmbeddingConfig& config, std::uint64_t seed);

// x: [batch, input_dim] -> [batch, L, F].
ad::Var embed(const EmbeddingConfig& config, std::span<const ad::Var> params, ad::Var x);

// Mean over the location axis: [batch, L, F] -> [batch, F].
ad::Var spatial_mean(ad::Var block);

}  // namespace fiml::embed
