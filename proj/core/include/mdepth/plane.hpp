#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace mdepth {

/// Row-major single-channel map.
template <typename V>
struct Plane {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<V> data;

  Plane() = default;
  Plane(std::size_t h, std::size_t w, V fill = V{}) : height(h), width(w), data(h * w, fill) {}

  std::size_t size() const { return data.size(); }
  V& operator()(std::size_t r, std::size_t c) { return data[r * width + c]; }
  const V& operator()(std::size_t r, std::size_t c) const { return data[r * width + c]; }
  bool same_shape(const Plane& o) const { return height == o.height && width == o.width; }
};

template <typename A, typename B>
void require_same_shape(const Plane<A>& a, const Plane<B>& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw std::invalid_argument(std::string(what) + ": map shapes differ");
  }
}

}  // namespace mdepth
