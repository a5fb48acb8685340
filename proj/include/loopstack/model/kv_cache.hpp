#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "loopstack/numerics/matrix.hpp"

namespace loopstack {

struct CacheEvent {
  enum class Kind { append, crop };
  Kind kind;
  std::size_t layer;
  std::size_t count;       // rows appended, or rows removed by the crop
  std::size_t new_length;
};

using CacheObserver = std::function<void(const CacheEvent&)>;

/// Append-only key/value rows for one layer. Keys are stored post-RoPE.
class KvSlot {
 public:
  KvSlot(std::size_t layer, std::size_t width) : layer_(layer), width_(width) {}

  std::size_t layer() const noexcept { return layer_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t length() const noexcept { return width_ == 0 ? 0 : keys_.size() / width_; }

  std::span<const float> key(std::size_t i) const noexcept { return {keys_.data() + i * width_, width_}; }
  std::span<const float> value(std::size_t i) const noexcept { return {values_.data() + i * width_, width_}; }

  /// Appends every row of k/v (same shape, width columns).
  void append(const Matrix<float>& k, const Matrix<float>& v);
  /// Truncates to `length` entries; survivors keep their order. Throws when
  /// `length` exceeds the current length.
  void crop(std::size_t length);

  void set_observer(CacheObserver obs) { observer_ = std::move(obs); }

  friend bool operator==(const KvSlot& a, const KvSlot& b) {
    return a.layer_ == b.layer_ && a.width_ == b.width_ && a.keys_ == b.keys_ && a.values_ == b.values_;
  }

 private:
  std::size_t layer_;
  std::size_t width_;
  std::vector<float> keys_;
  std::vector<float> values_;
  CacheObserver observer_;
};

/// Per-layer KV slots C_0..C_{N-1} plus the number of sequence positions the
/// owner has consumed (RoPE position of the next token). Slot lengths can lag
/// the position when the loop region is run with cache strategy `none`.
class KVCache {
 public:
  KVCache() = default;
  KVCache(std::size_t n_layers, std::size_t width);

  std::size_t n_layers() const noexcept { return slots_.size(); }
  KvSlot& slot(std::size_t layer) { return slots_.at(layer); }
  const KvSlot& slot(std::size_t layer) const { return slots_.at(layer); }
  std::size_t length(std::size_t layer) const { return slots_.at(layer).length(); }
  void crop(std::size_t layer, std::size_t length) { slots_.at(layer).crop(length); }

  std::size_t position() const noexcept { return position_; }
  void advance(std::size_t n) noexcept { position_ += n; }

  void set_observer(const CacheObserver& obs);

  friend bool operator==(const KVCache& a, const KVCache& b) {
    return a.position_ == b.position_ && a.slots_ == b.slots_;
  }

 private:
  std::vector<KvSlot> slots_;
  std::size_t position_ = 0;
};

}  // namespace loopstack
