#pragma once

#include <filesystem>
#include <vector>

#include "earfa/tensor.hpp"

namespace earfa::image {

// 8-bit PNG <-> (1, 3, H, W) in [0, 1]. Gray, palette and alpha inputs are
// expanded/stripped to RGB.
TensorF read_png(const std::filesystem::path& path);
// Writes 3-channel tensors as RGB and 1-channel tensors as gray; values are
// clamped to [0, 1] and rounded to 8 bits. Only n = 1 is accepted.
void write_png(const std::filesystem::path& path, const TensorF& img);

// Rounds to the nearest 1/255 step after clamping, as a PNG round trip would.
TensorF quantize8(const TensorF& img);

// BT.601 luma in the limited range: (65.481 R + 128.553 G + 24.966 B + 16) / 255.
TensorF rgb_to_y(const TensorF& rgb);

struct ResampleTap {
  int index;  // clamped source index
  double weight;
};

// Source taps for output sample `out_index` along an axis of length
// `in_len`, resampled by `factor`. Cubic kernel a = -0.5, widened by 1/factor
// when shrinking; weights are normalized to sum to 1.
std::vector<ResampleTap> resample_taps(int out_index, int in_len, double factor);

// Bicubic resize by `factor` (> 0). Output extent = round(in * factor); an
// extent below 1 throws. Edge samples are clamped.
TensorF bicubic_resize(const TensorF& x, double factor);

}  // namespace earfa::image
