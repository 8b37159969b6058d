#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "cdm/errors.hpp"

namespace cdm::nn {

// Channel-outermost (C,H,W) buffer. A flat vector is represented as
// (C,1,1).
template <typename T>
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int c_, int h_, int w_, T fill = T(0))
      : c(c_), h(h_), w(w_),
        data(static_cast<size_t>(c_) * h_ * w_, fill) {}
  static Tensor flat(int n, T fill = T(0)) { return Tensor(n, 1, 1, fill); }

  size_t size() const { return data.size(); }
  T& at(int ci, int y, int x) {
    return data[(static_cast<size_t>(ci) * h + y) * w + x];
  }
  T at(int ci, int y, int x) const {
    return data[(static_cast<size_t>(ci) * h + y) * w + x];
  }
  bool same_shape(const Tensor& o) const {
    return c == o.c && h == o.h && w == o.w;
  }
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace cdm::nn
