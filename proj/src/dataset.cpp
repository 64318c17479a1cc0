#include "earfa/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <regex>

#include "earfa/image.hpp"
#include "earfa/kernels.hpp"

namespace earfa::data {

namespace fs = std::filesystem;

namespace {

TensorF crop(const TensorF& x, int y0, int x0, int h, int w) {
  const Shape s = x.shape();
  TensorF out(Shape{s.n, s.c, h, w});
  float* o = out.mutable_ptr();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < h; ++y) {
        const float* src = x.ptr() + x.offset(n, c, y0 + y, x0);
        std::copy(src, src + w, o + out.offset(n, c, y, 0));
      }
  return out;
}

void copy_into(TensorF& dst, int n, const TensorF& src) {
  float* d = dst.mutable_ptr() + dst.offset(n, 0, 0, 0);
  std::copy(src.ptr(), src.ptr() + src.numel(), d);
}

}  // namespace

ImagePair make_pair(const TensorF& hr, int scale, std::string id) {
  if (scale < 1) throw ValidationError("scale must be positive");
  const Shape s = hr.shape();
  if (s.n != 1 || s.c != 3) throw DimensionError("HR image must be (1, 3, H, W), got " + s.str());
  const int h = s.h - s.h % scale, w = s.w - s.w % scale;
  if (h < scale || w < scale) {
    throw ValidationError("image '" + id + "' is smaller than the scale factor");
  }
  ImagePair p;
  p.hr = (h == s.h && w == s.w) ? hr : crop(hr, 0, 0, h, w);
  // Quantized like a cached LR PNG, which also keeps it inside [0, 1].
  p.lr = image::quantize8(image::bicubic_resize(p.hr, 1.0 / scale));
  p.scale = scale;
  p.id = std::move(id);
  return p;
}

std::vector<fs::path> list_images(const fs::path& dir) {
  static const std::regex cached(R"(.*_x[0-9]+\.png)", std::regex::icase);
  std::vector<fs::path> out;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path& p = entry.path();
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext != ".png") continue;
    if (std::regex_match(p.filename().string(), cached)) continue;
    out.push_back(p);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<ImagePair> load_dataset(const fs::path& dir, int scale) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("dataset directory not found: " + dir.string());
  const auto files = list_images(dir);
  if (files.empty()) throw IoError("no PNG images in " + dir.string());
  std::vector<ImagePair> pairs;
  pairs.reserve(files.size());
  for (const fs::path& f : files) pairs.push_back(make_pair(image::read_png(f), scale, f.stem().string()));
  return pairs;
}

std::optional<Patch> sample_patch(const ImagePair& pair, int lr_size, std::mt19937_64& rng) {
  if (lr_size < 1) throw ValidationError("patch size must be positive");
  const int lh = pair.lr.h(), lw = pair.lr.w();
  if (lh < lr_size || lw < lr_size) return std::nullopt;
  std::uniform_int_distribution<int> dy(0, lh - lr_size), dx(0, lw - lr_size);
  const int y = dy(rng), x = dx(rng);
  const int s = pair.scale;
  return Patch{crop(pair.lr, y, x, lr_size, lr_size), crop(pair.hr, y * s, x * s, lr_size * s, lr_size * s)};
}

Patch augment(const Patch& p, int op) {
  return Patch{kernels::dihedral(p.lr, op), kernels::dihedral(p.hr, op)};
}

Batch sample_batch(const std::vector<ImagePair>& pairs, int batch, int lr_size, bool augment_ops,
                   std::mt19937_64& rng) {
  if (batch < 1) throw ValidationError("batch must be positive");
  std::vector<const ImagePair*> usable;
  for (const ImagePair& p : pairs) {
    if (p.lr.h() >= lr_size && p.lr.w() >= lr_size) {
      usable.push_back(&p);
    } else {
      std::cerr << "warning: skipping '" << p.id << "' (" << p.lr.h() << "x" << p.lr.w()
                << " LR) smaller than the " << lr_size << "px patch\n";
    }
  }
  if (usable.empty()) throw ValidationError("no image is large enough for the requested patch size");
  const int s = usable.front()->scale;
  Batch b{TensorF(Shape{batch, 3, lr_size, lr_size}), TensorF(Shape{batch, 3, lr_size * s, lr_size * s})};
  std::uniform_int_distribution<std::size_t> pick(0, usable.size() - 1);
  std::uniform_int_distribution<int> pick_op(0, 7);
  for (int i = 0; i < batch; ++i) {
    const ImagePair& pair = *usable[pick(rng)];
    Patch p = *sample_patch(pair, lr_size, rng);
    if (augment_ops) p = augment(p, pick_op(rng));
    copy_into(b.lr, i, p.lr);
    copy_into(b.hr, i, p.hr);
  }
  return b;
}

namespace {

struct Shape2D {
  enum Kind { rect, disc, stripes } kind;
  double cx, cy, a, b, angle, period;
  double color[3];
};

// Coverage test of one sample point; stripes fill their bounding disc.
bool inside(const Shape2D& s, double x, double y) {
  const double dx = x - s.cx, dy = y - s.cy;
  const double ca = std::cos(s.angle), sa = std::sin(s.angle);
  const double u = ca * dx + sa * dy, v = -sa * dx + ca * dy;
  switch (s.kind) {
    case Shape2D::rect:
      return std::abs(u) <= s.a && std::abs(v) <= s.b;
    case Shape2D::disc:
      return (u * u) / (s.a * s.a) + (v * v) / (s.b * s.b) <= 1.0;
    case Shape2D::stripes:
      return u * u + v * v <= s.a * s.a && std::fmod(std::abs(u) + 1000.0 * s.period, 2.0 * s.period) < s.period;
  }
  return false;
}

}  // namespace

TensorF synthetic_image(int h, int w, std::uint64_t seed) {
  if (h < 1 || w < 1) throw ValidationError("synthetic image size must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double dim = std::min(h, w);

  double base[3], grad_x[3], grad_y[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = 0.2 + 0.6 * u01(rng);
    grad_x[c] = 0.3 * (u01(rng) - 0.5);
    grad_y[c] = 0.3 * (u01(rng) - 0.5);
  }
  // Smooth texture: a few low-frequency sinusoids.
  struct Wave { double fx, fy, phase, amp; };
  std::vector<Wave> waves(4);
  for (Wave& wv : waves) wv = {(u01(rng) - 0.5) * 0.5, (u01(rng) - 0.5) * 0.5, u01(rng) * 6.283185307179586, 0.04 * u01(rng)};

  std::vector<Shape2D> shapes(6 + static_cast<int>(u01(rng) * 6));
  for (Shape2D& s : shapes) {
    const double r = u01(rng);
    s.kind = r < 0.4 ? Shape2D::rect : (r < 0.8 ? Shape2D::disc : Shape2D::stripes);
    s.cx = u01(rng) * w;
    s.cy = u01(rng) * h;
    s.a = dim * (0.05 + 0.2 * u01(rng));
    s.b = dim * (0.05 + 0.2 * u01(rng));
    s.angle = u01(rng) * 3.141592653589793;
    s.period = 1.5 + 4.0 * u01(rng);
    for (double& c : s.color) c = 0.05 + 0.9 * u01(rng);
  }

  TensorF img(Shape{1, 3, h, w});
  float* p = img.mutable_ptr();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  constexpr double offs[2] = {0.25, 0.75};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc[3] = {0, 0, 0};
      for (double oy : offs)
        for (double ox : offs) {
          const double sx = x + ox, sy = y + oy;
          double col[3];
          double tex = 0;
          for (const Wave& wv : waves) tex += wv.amp * std::sin(wv.fx * sx + wv.fy * sy + wv.phase);
          for (int c = 0; c < 3; ++c) col[c] = base[c] + grad_x[c] * sx / w + grad_y[c] * sy / h + tex;
          for (const Shape2D& s : shapes)
            if (inside(s, sx, sy))
              for (int c = 0; c < 3; ++c) col[c] = s.color[c] + tex;
          for (int c = 0; c < 3; ++c) acc[c] += col[c];
        }
      for (int c = 0; c < 3; ++c) {
        p[c * plane + static_cast<std::size_t>(y) * w + x] = static_cast<float>(std::clamp(acc[c] / 4.0, 0.0, 1.0));
      }
    }
  return image::quantize8(img);
}

std::vector<fs::path> write_synthetic_dataset(const fs::path& dir, int count, int h, int w, std::uint64_t seed) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<fs::path> out;
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "synth_%03d.png", i);
    const fs::path path = dir / name;
    image::write_png(path, synthetic_image(h, w, seed + static_cast<std::uint64_t>(i) * 0x9E3779B97F4A7C15ull));
    out.push_back(path);
  }
  return out;
}

}  // namespace earfa::data
