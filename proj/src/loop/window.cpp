#include "loopstack/loop/window.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "loopstack/error.hpp"

namespace loopstack {

void LoopWindow::validate(std::size_t n_layers) const {
  if (a > b || b >= n_layers)
    throw ConfigError("loop window [" + std::to_string(a) + "," + std::to_string(b) + "] invalid for " +
                      std::to_string(n_layers) + " layers");
}

std::string_view to_string(IterationMode m) noexcept { return m == IterationMode::block ? "block" : "layer"; }

IterationMode iteration_mode_from_string(std::string_view s) {
  if (s == "block") return IterationMode::block;
  if (s == "layer") return IterationMode::layer;
  throw ConfigError("unknown iteration mode '" + std::string(s) + "'");
}

LoopWindow default_window(std::size_t n_layers, std::size_t width, double fraction) {
  if (n_layers == 0) throw ConfigError("default_window: model has no layers");
  if (width == 0) throw ConfigError("default_window: width must be positive");
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("default_window: fraction must lie in [0,1]");
  width = std::min(width, n_layers);
  const double start = fraction * static_cast<double>(n_layers) - static_cast<double>(width) / 2.0;
  const double max_start = static_cast<double>(n_layers - width);
  const auto a = static_cast<std::size_t>(std::clamp(std::round(start), 0.0, max_start));
  return {a, a + width - 1};
}

}  // namespace loopstack
