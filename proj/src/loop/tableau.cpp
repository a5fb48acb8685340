#include "loopstack/loop/tableau.hpp"

#include <string>

#include "loopstack/error.hpp"

namespace loopstack {

void ButcherTableau::validate() const {
  if (stages == 0) throw ConfigError("tableau: zero stages");
  if (a.size() != stages * stages || b.size() != stages) throw ConfigError("tableau: coefficient sizes mismatch");
  for (std::size_t i = 0; i < stages; ++i)
    for (std::size_t j = i; j < stages; ++j)
      if (coeff(i, j) != 0.0)
        throw ConfigError("tableau: not explicit (a_" + std::to_string(i + 1) + std::to_string(j + 1) + " != 0)");
}

ButcherTableau ButcherTableau::forward_euler() { return {1, {0.0}, {1.0}}; }

ButcherTableau ButcherTableau::midpoint() { return {2, {0.0, 0.0, 0.5, 0.0}, {0.0, 1.0}}; }

ButcherTableau ButcherTableau::heun() { return {2, {0.0, 0.0, 1.0, 0.0}, {0.5, 0.5}}; }

ButcherTableau ButcherTableau::rk4() {
  return {4,
          {0.0, 0.0, 0.0, 0.0,  //
           0.5, 0.0, 0.0, 0.0,  //
           0.0, 0.5, 0.0, 0.0,  //
           0.0, 0.0, 1.0, 0.0},
          {1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0}};
}

ButcherTableau ButcherTableau::anchored(std::size_t K, double beta) {
  if (K == 0) throw ConfigError("anchored tableau: K must be >= 1");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("anchored tableau: beta must lie in [0,1]");
  ButcherTableau t;
  t.stages = K;
  t.a.assign(K * K, 0.0);
  const double inv = 1.0 / static_cast<double>(K);
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = 0; j < i; ++j) t.a[i * K + j] = inv;
  t.b.assign(K, (1.0 - beta) * inv);
  t.b[0] = beta + (1.0 - beta) * inv;
  return t;
}

}  // namespace loopstack
