#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "earfa/tensor.hpp"

namespace earfa::data {

struct ImagePair {
  TensorF hr;  // (1, 3, H, W), H and W divisible by scale
  TensorF lr;  // (1, 3, H / scale, W / scale)
  int scale = 4;
  std::string id;
};

// Crops HR to a multiple of `scale` and synthesizes LR with bicubic_resize,
// rounded to 8 bits.
ImagePair make_pair(const TensorF& hr, int scale, std::string id);

// Sorted HR PNGs in `dir`; cached LR files named <name>_x<s>.png are skipped.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);
// Throws IoError when the directory is missing or holds no images.
std::vector<ImagePair> load_dataset(const std::filesystem::path& dir, int scale);

struct Patch {
  TensorF lr;
  TensorF hr;
};

// Aligned crop: an lr_size x lr_size LR window and the HR window it maps to.
// nullopt when the image is smaller than the patch.
std::optional<Patch> sample_patch(const ImagePair& pair, int lr_size, std::mt19937_64& rng);

// Applies the same dihedral transform (op in [0, 8)) to both halves.
Patch augment(const Patch& p, int op);

struct Batch {
  TensorF lr;  // (batch, 3, p, p)
  TensorF hr;  // (batch, 3, p * s, p * s)
};

// Uniform sampling with replacement of image, position and dihedral op.
Batch sample_batch(const std::vector<ImagePair>& pairs, int batch, int lr_size, bool augment_ops,
                   std::mt19937_64& rng);

// Procedural test image: gradient background with antialiased rectangles,
// discs, stripes and smooth texture. Deterministic in `seed`.
TensorF synthetic_image(int h, int w, std::uint64_t seed);

// Writes `count` synthetic HR PNGs into `dir` (created if needed).
std::vector<std::filesystem::path> write_synthetic_dataset(const std::filesystem::path& dir, int count, int h,
                                                           int w, std::uint64_t seed);

}  // namespace earfa::data
