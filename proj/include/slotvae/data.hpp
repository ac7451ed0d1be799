// Dataset records -> training tensors. Records are stored at the generator's
// canvas resolution; the model may run at a smaller power-of-two size, in
// which case images are box-averaged and label masks nearest-sampled.
#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "slotvae/scenegen.hpp"
#include "slotvae/tensor.hpp"

namespace slotvae::data {

// [C, S, S] float image in [0,1]; box-average when downsampling.
template <typename T>
Tensor<T> record_image(const scenegen::SceneRecord& rec, int64_t size) {
  if (rec.h != rec.w) throw std::invalid_argument("record_image: non-square record");
  if (rec.h % size != 0)
    throw std::invalid_argument("record_image: size " + std::to_string(size) +
                                " does not divide canvas " + std::to_string(rec.h));
  const int64_t f = rec.h / size, C = rec.c;
  Tensor<T> out({C, size, size});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < size; ++i)
      for (int64_t j = 0; j < size; ++j) {
        double acc = 0;
        for (int64_t di = 0; di < f; ++di)
          for (int64_t dj = 0; dj < f; ++dj)
            acc += rec.image[((i * f + di) * rec.w + (j * f + dj)) * C + c];
        out[(c * size + i) * size + j] = (T)(acc / (255.0 * (double)(f * f)));
      }
  return out;
}

// [S, S] labels; nearest (top-left) sampling preserves label ids.
inline Tensor<uint8_t> record_mask(const scenegen::SceneRecord& rec, int64_t size) {
  if (rec.h % size != 0) throw std::invalid_argument("record_mask: size does not divide canvas");
  const int64_t f = rec.h / size;
  Tensor<uint8_t> out({size, size});
  for (int64_t i = 0; i < size; ++i)
    for (int64_t j = 0; j < size; ++j) out[i * size + j] = rec.mask[i * f * rec.w + j * f];
  return out;
}

template <typename T>
Tensor<T> make_batch(const std::vector<scenegen::SceneRecord>& records,
                     const std::vector<int64_t>& indices, int64_t size) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty index list");
  const int64_t B = (int64_t)indices.size();
  const int64_t C = records.at(0).c;
  Tensor<T> out({B, C, size, size});
  const int64_t n = C * size * size;
  for (int64_t b = 0; b < B; ++b) {
    Tensor<T> one = record_image<T>(records.at((size_t)indices[(size_t)b]), size);
    std::copy(one.data(), one.data() + n, out.data() + b * n);
  }
  return out;
}

}  // namespace slotvae::data
