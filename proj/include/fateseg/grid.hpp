#pragma once

#include <cstdint>
#include <vector>

namespace fateseg {

// Row-major 2D scalar grid (h rows, w cols).
struct Grid2D {
  int h = 0;
  int w = 0;
  std::vector<float> v;

  Grid2D() = default;
  Grid2D(int h_, int w_, float fill = 0.0f) : h(h_), w(w_), v(size_t(h_) * w_, fill) {}

  float& at(int r, int c) { return v[size_t(r) * w + c]; }
  float at(int r, int c) const { return v[size_t(r) * w + c]; }
  size_t size() const { return v.size(); }

  bool operator==(const Grid2D& o) const { return h == o.h && w == o.w && v == o.v; }
};

// Row-major 2D binary mask, entries 0 or 1.
struct MaskGrid {
  int h = 0;
  int w = 0;
  std::vector<uint8_t> v;

  MaskGrid() = default;
  MaskGrid(int h_, int w_, uint8_t fill = 0) : h(h_), w(w_), v(size_t(h_) * w_, fill) {}

  uint8_t& at(int r, int c) { return v[size_t(r) * w + c]; }
  uint8_t at(int r, int c) const { return v[size_t(r) * w + c]; }
  size_t count() const {
    size_t n = 0;
    for (uint8_t x : v) n += x != 0;
    return n;
  }

  bool operator==(const MaskGrid& o) const { return h == o.h && w == o.w && v == o.v; }
};

// Row-major float matrix; the token-stack view used by attention (rows = tokens).
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<float> v;

  Mat() = default;
  Mat(int r, int c, float fill = 0.0f) : rows(r), cols(c), v(size_t(r) * c, fill) {}

  float& at(int r, int c) { return v[size_t(r) * cols + c]; }
  float at(int r, int c) const { return v[size_t(r) * cols + c]; }

  bool operator==(const Mat& o) const { return rows == o.rows && cols == o.cols && v == o.v; }
};

}  // namespace fateseg
