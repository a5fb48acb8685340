#pragma once

#include <cstdint>
#include <vector>

#include "loopstack/model/weights.hpp"
#include "loopstack/numerics/rng.hpp"

namespace loopstack::test {

inline ModelConfig dense_config(std::size_t n_layers = 6, std::size_t d = 32, std::size_t heads = 4) {
  ModelConfig c;
  c.n_layers = n_layers;
  c.d_model = d;
  c.n_heads = heads;
  c.head_dim = d / heads;
  c.ffn_hidden = 2 * d;
  c.vocab_size = 64;
  return c;
}

inline ModelConfig moe_config(std::size_t n_layers = 6, std::size_t d = 32) {
  ModelConfig c = dense_config(n_layers, d);
  c.moe = MoeConfig{4, 2, d};
  for (std::size_t i = 0; i < n_layers; ++i) c.moe_layer_indices.insert(i);
  return c;
}

inline std::vector<std::uint32_t> tokens(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::uint32_t> t(n);
  for (auto& v : t) v = static_cast<std::uint32_t>(rng.below(vocab));
  return t;
}

template <typename T>
Matrix<T> random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Matrix<T> m(r, c);
  for (auto& v : m.flat()) v = static_cast<T>(rng.normal(0.0, scale));
  return m;
}

}  // namespace loopstack::test
