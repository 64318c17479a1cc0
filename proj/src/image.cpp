#include "earfa/image.hpp"

#include <png.h>

#include <cmath>
#include <cstring>

namespace earfa::image {

TensorF read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw IoError("cannot read PNG '" + path.string() + "': " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  const int h = static_cast<int>(img.height), w = static_cast<int>(img.width);
  TensorF t(Shape{1, 3, h, w});
  float* p = t.mutable_ptr();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) p[c * plane + i] = buf[i * 3 + c] / 255.0f;
  return t;
}

void write_png(const std::filesystem::path& path, const TensorF& t) {
  const Shape s = t.shape();
  if (s.n != 1 || (s.c != 3 && s.c != 1)) {
    throw DimensionError("write_png expects (1, 3, h, w) or (1, 1, h, w), got " + s.str());
  }
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(s.w);
  img.height = static_cast<png_uint_32>(s.h);
  img.format = s.c == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const std::size_t plane = s.plane();
  std::vector<png_byte> buf(plane * s.c);
  const float* p = t.ptr();
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < s.c; ++c) {
      const float v = std::clamp(p[c * plane + i], 0.0f, 1.0f);
      buf[i * s.c + c] = static_cast<png_byte>(std::lround(v * 255.0f));
    }
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw IoError("cannot write PNG '" + path.string() + "': " + img.message);
  }
}

TensorF quantize8(const TensorF& img) {
  TensorF out = img.clone();
  for (float& v : out.mutable_data()) v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
  return out;
}

TensorF rgb_to_y(const TensorF& rgb) {
  const Shape s = rgb.shape();
  if (s.c != 3) throw DimensionError("rgb_to_y expects 3 channels, got " + s.str());
  TensorF y(Shape{s.n, 1, s.h, s.w});
  float* yp = y.mutable_ptr();
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    const float* r = rgb.ptr() + rgb.offset(n, 0, 0, 0);
    const float* g = r + plane;
    const float* b = g + plane;
    float* out = yp + y.offset(n, 0, 0, 0);
    for (std::size_t i = 0; i < plane; ++i) {
      out[i] = static_cast<float>((65.481 * r[i] + 128.553 * g[i] + 24.966 * b[i] + 16.0) / 255.0);
    }
  }
  return y;
}

namespace {

double cubic(double x) {
  constexpr double a = -0.5;
  const double ax = std::abs(x);
  const double ax2 = ax * ax, ax3 = ax2 * ax;
  if (ax <= 1.0) return (a + 2.0) * ax3 - (a + 3.0) * ax2 + 1.0;
  if (ax < 2.0) return a * ax3 - 5.0 * a * ax2 + 8.0 * a * ax - 4.0 * a;
  return 0.0;
}

int output_extent(int in, double factor) {
  const int out = static_cast<int>(std::lround(in * factor));
  if (out < 1) throw ValidationError("bicubic_resize: output extent below 1");
  return out;
}

}  // namespace

std::vector<ResampleTap> resample_taps(int out_index, int in_len, double factor) {
  if (!(factor > 0)) throw ValidationError("bicubic_resize: factor must be positive");
  const bool shrink = factor < 1.0;
  const double kernel_scale = shrink ? factor : 1.0;
  const double support = 2.0 / kernel_scale;  // half width
  const double center = (out_index + 0.5) / factor - 0.5;
  const int first = static_cast<int>(std::floor(center - support));
  const int last = static_cast<int>(std::ceil(center + support));
  std::vector<ResampleTap> taps;
  taps.reserve(static_cast<std::size_t>(last - first + 1));
  double total = 0;
  for (int i = first; i <= last; ++i) {
    const double w = kernel_scale * cubic((center - i) * kernel_scale);
    if (w == 0.0) continue;
    taps.push_back({std::clamp(i, 0, in_len - 1), w});
    total += w;
  }
  for (ResampleTap& t : taps) t.weight /= total;
  return taps;
}

TensorF bicubic_resize(const TensorF& x, double factor) {
  if (!(factor > 0)) throw ValidationError("bicubic_resize: factor must be positive");
  const Shape s = x.shape();
  const int oh = output_extent(s.h, factor), ow = output_extent(s.w, factor);

  std::vector<std::vector<ResampleTap>> row_taps(oh), col_taps(ow);
  for (int i = 0; i < oh; ++i) row_taps[i] = resample_taps(i, s.h, factor);
  for (int j = 0; j < ow; ++j) col_taps[j] = resample_taps(j, s.w, factor);

  TensorF out(Shape{s.n, s.c, oh, ow});
  float* op = out.mutable_ptr();
  std::vector<double> tmp(static_cast<std::size_t>(oh) * s.w);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const float* in = x.ptr() + x.offset(n, c, 0, 0);
      // Vertical pass into tmp (oh x w), then horizontal into the output.
      for (int i = 0; i < oh; ++i) {
        double* trow = tmp.data() + static_cast<std::size_t>(i) * s.w;
        std::fill(trow, trow + s.w, 0.0);
        for (const ResampleTap& t : row_taps[i]) {
          const float* irow = in + static_cast<std::size_t>(t.index) * s.w;
          for (int j = 0; j < s.w; ++j) trow[j] += t.weight * irow[j];
        }
      }
      float* dst = op + out.offset(n, c, 0, 0);
      for (int i = 0; i < oh; ++i) {
        const double* trow = tmp.data() + static_cast<std::size_t>(i) * s.w;
        for (int j = 0; j < ow; ++j) {
          double acc = 0;
          for (const ResampleTap& t : col_taps[j]) acc += t.weight * trow[t.index];
          dst[static_cast<std::size_t>(i) * ow + j] = static_cast<float>(acc);
        }
      }
    }
  return out;
}

}  // namespace earfa::image
