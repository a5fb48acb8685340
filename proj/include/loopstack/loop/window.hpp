#pragma once

#include <cstddef>
#include <string_view>

namespace loopstack {

/// Contiguous loop window [a, b] of decoder layers (inclusive).
struct LoopWindow {
  std::size_t a = 0;
  std::size_t b = 0;

  std::size_t width() const noexcept { return b - a + 1; }
  bool contains(std::size_t layer) const noexcept { return layer >= a && layer <= b; }
  /// Throws ConfigError unless 0 <= a <= b <= n_layers - 1.
  void validate(std::size_t n_layers) const;

  friend bool operator==(const LoopWindow&, const LoopWindow&) = default;
};

/// block: (L_b o ... o L_a)^K. layer: L_b^K o ... o L_a^K.
enum class IterationMode { block, layer };

std::string_view to_string(IterationMode m) noexcept;
IterationMode iteration_mode_from_string(std::string_view s);

inline constexpr double kDefaultDepthFraction = 0.525;
inline constexpr std::size_t kDefaultWindowWidth = 4;

/// Window of `width` layers whose centre (a + width/2, in continuous depth) is
/// nearest to fraction * n_layers, clamped into [0, n_layers - 1].
LoopWindow default_window(std::size_t n_layers, std::size_t width = kDefaultWindowWidth,
                          double fraction = kDefaultDepthFraction);

}  // namespace loopstack
