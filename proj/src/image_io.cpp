#include "slotvae/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace slotvae::imageio {

void write_png(const std::string& path, const float* chw, int64_t c, int64_t h, int64_t w) {
  if (c != 1 && c != 3) throw std::invalid_argument("write_png: channels must be 1 or 3");
  if (h <= 0 || w <= 0) throw std::invalid_argument("write_png: empty image");
  std::vector<uint8_t> rows((size_t)(h * w * c));
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j)
      for (int64_t ch = 0; ch < c; ++ch) {
        const float v = std::clamp(chw[(ch * h + i) * w + j], 0.0f, 1.0f);
        rows[(size_t)((i * w + j) * c + ch)] = (uint8_t)std::lround(255.0f * v);
      }

  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("write_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("write_png: libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("write_png: libpng write failed for " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, (png_uint_32)w, (png_uint_32)h, 8,
               c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> row_ptrs((size_t)h);
  for (int64_t i = 0; i < h; ++i) row_ptrs[(size_t)i] = rows.data() + i * w * c;
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

Tensor<float> make_grid(const std::vector<Tensor<float>>& cells, int64_t cols, int64_t pad,
                        float bg) {
  if (cells.empty()) throw std::invalid_argument("make_grid: no cells");
  if (cols <= 0) throw std::invalid_argument("make_grid: cols must be positive");
  const int64_t c = cells[0].dim(0), h = cells[0].dim(1), w = cells[0].dim(2);
  for (const auto& cell : cells)
    if (cell.ndim() != 3 || cell.dim(0) != c || cell.dim(1) != h || cell.dim(2) != w)
      throw std::invalid_argument("make_grid: cells must share one [c, h, w] shape");
  const int64_t n = (int64_t)cells.size();
  const int64_t rows = (n + cols - 1) / cols;
  const int64_t gh = rows * h + (rows + 1) * pad;
  const int64_t gw = cols * w + (cols + 1) * pad;
  Tensor<float> grid({c, gh, gw});
  std::fill(grid.data(), grid.data() + grid.numel(), bg);
  for (int64_t idx = 0; idx < n; ++idx) {
    const int64_t r = idx / cols, col = idx % cols;
    const int64_t oi = pad + r * (h + pad), oj = pad + col * (w + pad);
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < h; ++i)
        for (int64_t j = 0; j < w; ++j)
          grid[(ch * gh + oi + i) * gw + oj + j] = cells[(size_t)idx][(ch * h + i) * w + j];
  }
  return grid;
}

}  // namespace slotvae::imageio
