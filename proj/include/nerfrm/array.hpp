#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "nerfrm/common.hpp"

namespace nerfrm {

// Dense row-major matrix of doubles. Vectors are [n,1], scalars [1,1].
struct Array {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<double> v;

  Array() = default;
  Array(int64_t r, int64_t c) : rows(r), cols(c), v(static_cast<size_t>(r * c), 0.0) {
    NERFRM_CHECK(r >= 0 && c >= 0, "negative array shape");
  }

  static Array full(int64_t r, int64_t c, double value) {
    Array a(r, c);
    std::fill(a.v.begin(), a.v.end(), value);
    return a;
  }

  static Array scalar(double value) { return full(1, 1, value); }

  static Array from(std::vector<double> data, int64_t r, int64_t c) {
    NERFRM_CHECK(static_cast<int64_t>(data.size()) == r * c, "data size does not match shape");
    Array a;
    a.rows = r;
    a.cols = c;
    a.v = std::move(data);
    return a;
  }

  int64_t size() const { return rows * cols; }
  bool same_shape(const Array& o) const { return rows == o.rows && cols == o.cols; }

  double& at(int64_t r, int64_t c) { return v[static_cast<size_t>(r * cols + c)]; }
  double at(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * cols + c)]; }

  double* data() { return v.data(); }
  const double* data() const { return v.data(); }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

}  // namespace nerfrm
