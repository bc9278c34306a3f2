#pragma once

// 8-bit grayscale PNG export through libpng. Link against PNG::PNG when including this header.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "svmar/core/error.hpp"
#include "svmar/core/tensor.hpp"

namespace svmar {

/// Maps [lo, hi] linearly to [0, 255] (clamped) and writes an 8-bit grayscale PNG.
template <class Tag>
void write_png(const std::filesystem::path& path, const Grid<Tag>& g, double lo, double hi) {
  require(hi > lo, "write_png: empty window");
  std::vector<unsigned char> px(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double t = std::clamp((g[i] - lo) / (hi - lo), 0.0, 1.0);
    px[i] = static_cast<unsigned char>(std::lround(255.0 * t));
  }
  std::FILE* f = std::fopen(path.string().c_str(), "wb");
  if (!f) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(f);
    throw IoError("libpng failed writing " + path.string());
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(g.cols()), static_cast<png_uint_32>(g.rows()), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < g.rows(); ++r) png_write_row(png, px.data() + r * g.cols());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(f);
}

/// Window taken from the min/max of a reference image.
template <class Tag, class RefTag>
void write_png(const std::filesystem::path& path, const Grid<Tag>& g, const Grid<RefTag>& ref) {
  double lo = ref.size() ? ref[0] : 0.0, hi = lo;
  for (double v : ref.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi <= lo) hi = lo + 1.0;
  write_png(path, g, lo, hi);
}

}  // namespace svmar
