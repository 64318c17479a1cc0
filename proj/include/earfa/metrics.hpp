#pragma once

#include "earfa/tensor.hpp"

namespace earfa::metrics {

// PSNR in dB with peak 1.0 over all channels, after removing `shave` pixels
// from every border. Identical inputs give +infinity.
double psnr(const TensorF& a, const TensorF& b, int shave = 0);

// Mean SSIM over channels, 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
// K2 = 0.03, dynamic range 1, valid-region filtering after shaving.
double ssim(const TensorF& a, const TensorF& b, int shave = 0);

}  // namespace earfa::metrics
