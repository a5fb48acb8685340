#include "loopstack/model/kv_cache.hpp"

#include <string>

#include "loopstack/error.hpp"

namespace loopstack {

void KvSlot::append(const Matrix<float>& k, const Matrix<float>& v) {
  if (!k.same_shape(v) || k.cols() != width_) throw ShapeError("KvSlot::append: key/value shape mismatch");
  keys_.insert(keys_.end(), k.storage().begin(), k.storage().end());
  values_.insert(values_.end(), v.storage().begin(), v.storage().end());
  if (observer_) observer_({CacheEvent::Kind::append, layer_, k.rows(), length()});
}

void KvSlot::crop(std::size_t len) {
  const std::size_t cur = length();
  if (len > cur) {
    throw InvariantError("KvSlot::crop: layer " + std::to_string(layer_) + " has " + std::to_string(cur) +
                         " entries, cannot crop to " + std::to_string(len));
  }
  keys_.resize(len * width_);
  values_.resize(len * width_);
  if (observer_) observer_({CacheEvent::Kind::crop, layer_, cur - len, len});
}

KVCache::KVCache(std::size_t n_layers, std::size_t width) {
  slots_.reserve(n_layers);
  for (std::size_t i = 0; i < n_layers; ++i) slots_.emplace_back(i, width);
}

void KVCache::set_observer(const CacheObserver& obs) {
  for (auto& s : slots_) s.set_observer(obs);
}

}  // namespace loopstack
