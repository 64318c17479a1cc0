#include "earfa/metrics.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace earfa::metrics {

namespace {

void check_pair(const TensorF& a, const TensorF& b, int shave) {
  if (a.shape() != b.shape()) {
    throw DimensionError("metric inputs differ in shape: " + a.shape().str() + " vs " + b.shape().str());
  }
  if (shave < 0) throw ValidationError("shave must be >= 0");
  if (a.h() - 2 * shave < 1 || a.w() - 2 * shave < 1) {
    throw DimensionError("shave " + std::to_string(shave) + " removes the whole image " + a.shape().str());
  }
}

// 1-D Gaussian taps; the 2-D window is their outer product.
std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(size));
  const double mid = (size - 1) / 2.0;
  double total = 0;
  for (int i = 0; i < size; ++i) {
    g[i] = std::exp(-((i - mid) * (i - mid)) / (2.0 * sigma * sigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

// Valid-region separable filter of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w, const std::vector<double>& g) {
  const int k = static_cast<int>(g.size());
  const int oh = h - k + 1, ow = w - k + 1;
  std::vector<double> tmp(static_cast<std::size_t>(oh) * w, 0.0), out(static_cast<std::size_t>(oh) * ow, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int t = 0; t < k; ++t)
      for (int x = 0; x < w; ++x) tmp[y * w + x] += g[t] * src[(y + t) * w + x];
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int t = 0; t < k; ++t) acc += g[t] * tmp[y * w + x + t];
      out[y * ow + x] = acc;
    }
  return out;
}

}  // namespace

double psnr(const TensorF& a, const TensorF& b, int shave) {
  check_pair(a, b, shave);
  const Shape s = a.shape();
  double se = 0;
  std::size_t count = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = shave; y < s.h - shave; ++y)
        for (int x = shave; x < s.w - shave; ++x) {
          const double d = static_cast<double>(a.at(n, c, y, x)) - b.at(n, c, y, x);
          se += d * d;
          ++count;
        }
  const double mse = se / static_cast<double>(count);
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const TensorF& a, const TensorF& b, int shave) {
  check_pair(a, b, shave);
  constexpr int kWindow = 11;
  constexpr double kSigma = 1.5;
  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  const Shape s = a.shape();
  const int h = s.h - 2 * shave, w = s.w - 2 * shave;
  if (h < kWindow || w < kWindow) {
    throw DimensionError("ssim needs at least 11x11 pixels after shaving, got " + std::to_string(h) + "x" +
                         std::to_string(w));
  }
  const std::vector<double> g = gaussian_window(kWindow, kSigma);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<double> pa(plane), pb(plane), paa(plane), pbb(plane), pab(plane);
  double total = 0;
  std::size_t count = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double va = a.at(n, c, y + shave, x + shave), vb = b.at(n, c, y + shave, x + shave);
          const std::size_t i = static_cast<std::size_t>(y) * w + x;
          pa[i] = va;
          pb[i] = vb;
          paa[i] = va * va;
          pbb[i] = vb * vb;
          pab[i] = va * vb;
        }
      const auto mu_a = filter_valid(pa, h, w, g), mu_b = filter_valid(pb, h, w, g);
      const auto e_aa = filter_valid(paa, h, w, g), e_bb = filter_valid(pbb, h, w, g);
      const auto e_ab = filter_valid(pab, h, w, g);
      for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double var_a = e_aa[i] - mu_a[i] * mu_a[i];
        const double var_b = e_bb[i] - mu_b[i] * mu_b[i];
        const double cov = e_ab[i] - mu_a[i] * mu_b[i];
        const double num = (2.0 * mu_a[i] * mu_b[i] + C1) * (2.0 * cov + C2);
        const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + C1) * (var_a + var_b + C2);
        total += num / den;
        ++count;
      }
    }
  return total / static_cast<double>(count);
}

}  // namespace earfa::metrics
