// PNG output for qualitative panels: single images and padded grids.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slotvae/tensor.hpp"

namespace slotvae::imageio {

// Writes a [c, h, w] float image in [0,1] as an 8-bit PNG. c = 3 writes RGB,
// c = 1 writes grayscale. Values are clamped before quantization.
void write_png(const std::string& path, const float* chw, int64_t c, int64_t h, int64_t w);

inline void write_png(const std::string& path, const Tensor<float>& img) {
  if (img.ndim() != 3) throw std::invalid_argument("write_png: image must be [c, h, w]");
  write_png(path, img.data(), img.dim(0), img.dim(1), img.dim(2));
}

// Lays out same-shaped [c, h, w] cells into a grid with `cols` columns,
// separated (and framed) by `pad` pixels of `bg` gray. Row-major cell order.
Tensor<float> make_grid(const std::vector<Tensor<float>>& cells, int64_t cols, int64_t pad = 2,
                        float bg = 1.0f);

}  // namespace slotvae::imageio
