#include "earfa/entropy.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "json.hpp"

#include "earfa/kernels.hpp"

#ifdef EARFA_HAVE_OPENMP
#include <omp.h>
#endif

namespace earfa::entropy {

double discrete_entropy(std::span<const double> p) {
  if (p.empty()) throw ValidationError("discrete_entropy: empty distribution");
  double total = 0;
  for (double v : p) {
    if (!(v >= 0)) throw ValidationError("discrete_entropy: negative or NaN probability");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ValidationError("discrete_entropy: probabilities sum to " + std::to_string(total));
  }
  double h = 0;
  for (double v : p) {
    if (v > 0) h -= v * std::log(v);
  }
  return h;
}

namespace {

template <class T>
std::pair<double, double> sample_range(std::span<const T> z) {
  constexpr std::size_t kLanes = 16;
  T lo[kLanes], hi[kLanes];
  std::fill(std::begin(lo), std::end(lo), z[0]);
  std::fill(std::begin(hi), std::end(hi), z[0]);
  const std::size_t full = z.size() - z.size() % kLanes;
  for (std::size_t i = 0; i < full; i += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) {
      lo[l] = z[i + l] < lo[l] ? z[i + l] : lo[l];
      hi[l] = z[i + l] > hi[l] ? z[i + l] : hi[l];
    }
  T mn = *std::min_element(std::begin(lo), std::end(lo));
  T mx = *std::max_element(std::begin(hi), std::end(hi));
  for (std::size_t i = full; i < z.size(); ++i) {
    mn = std::min(mn, z[i]);
    mx = std::max(mx, z[i]);
  }
  return {static_cast<double>(mn), static_cast<double>(mx)};
}

}  // namespace

template <class T>
HistogramEntropy differential_entropy_hist(std::span<const T> z, int bins) {
  if (z.size() < 2) throw ValidationError("differential_entropy_hist: need at least 2 samples");
  if (bins < 2) throw ValidationError("differential_entropy_hist: need at least 2 bins");
  const auto [lo, hi] = sample_range(z);
  if (!(hi > lo)) return {-std::numeric_limits<double>::infinity(), true};

  const double width = (hi - lo) / bins;
  const double inv_width = 1.0 / width;
  std::vector<std::uint32_t> counts(static_cast<std::size_t>(bins), 0);
  for (T v : z) {
    int k = static_cast<int>((static_cast<double>(v) - lo) * inv_width);
    k = std::min(k, bins - 1);  // v == max lands in the last bin
    ++counts[static_cast<std::size_t>(k)];
  }
  // Density p_k = n_k / (N * width); -sum p_k ln(p_k) * width
  const double n = static_cast<double>(z.size());
  double h = 0;
  for (std::uint32_t cnt : counts) {
    if (cnt == 0) continue;
    const double mass = cnt / n;
    h -= mass * std::log(mass * inv_width);
  }
  return {h, false};
}

double gaussian_entropy(double var, double eps) {
  if (!(var >= 0)) throw ValidationError("gaussian_entropy: variance must be >= 0");
  if (!(eps > 0)) throw ValidationError("gaussian_entropy: eps must be > 0");
  return 0.5 * std::log(2.0 * std::numbers::pi * (var + eps));
}

template <class T>
EntropyResult channel_entropy_hist(const Tensor<T>& x, int bins) {
  EntropyResult r{x.n(), x.c(), std::vector<double>(static_cast<std::size_t>(x.n()) * x.c())};
  for (int b = 0; b < x.n(); ++b)
    for (int c = 0; c < x.c(); ++c) r.nats[static_cast<std::size_t>(b) * x.c() + c] =
        differential_entropy_hist(x.plane(b, c), bins).nats;
  return r;
}

template <class T>
EntropyResult channel_entropy_gaussian(const Tensor<T>& x, double eps) {
  const Tensor<T> var = kernels::channel_var(x);
  EntropyResult r{x.n(), x.c(), std::vector<double>(var.numel())};
  const T* vp = var.ptr();
  for (std::size_t i = 0; i < var.numel(); ++i) r.nats[i] = gaussian_entropy(vp[i], eps);
  return r;
}

std::string BenchReport::text() const {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "entropy latency  shape=(%d, %d, %d, %d)  reps=%d\n"
                "  traditional (histogram): %10.3f ms\n"
                "  gaussian (closed form):  %10.3f ms\n"
                "  speedup:                 %10.2fx\n",
                batch, c, h, w, reps, traditional_ms, gaussian_ms, speedup);
  return buf;
}

std::string BenchReport::json() const {
  nlohmann::json j = {{"batch", batch},
                      {"c", c},
                      {"h", h},
                      {"w", w},
                      {"reps", reps},
                      {"traditional_ms", traditional_ms},
                      {"gaussian_ms", gaussian_ms},
                      {"speedup", speedup}};
  return j.dump();
}

BenchReport bench_entropy(int batch, int c, int h, int w, int reps, unsigned seed) {
  if (reps < 10) throw ValidationError("bench_entropy: reps must be >= 10");
  if (batch < 1 || c < 1 || h < 1 || w < 1) throw ValidationError("bench_entropy: extents must be >= 1");

#ifdef EARFA_HAVE_OPENMP
  const int saved_threads = omp_get_max_threads();
  omp_set_num_threads(1);
#endif

  TensorF x(Shape{batch, c, h, w});
  {
    std::mt19937 rng(seed);
    std::normal_distribution<float> dist(0.f, 1.f);
    for (float& v : x.mutable_data()) v = dist(rng);
  }

  using clock = std::chrono::steady_clock;
  volatile double sink = 0;
  auto time_ms = [&](auto&& fn) {
    sink = sink + fn().nats[0];  // warm-up
    const auto t0 = clock::now();
    for (int i = 0; i < reps; ++i) sink = sink + fn().nats[0];
    const auto t1 = clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
  };

  BenchReport r;
  r.batch = batch;
  r.c = c;
  r.h = h;
  r.w = w;
  r.reps = reps;
  r.traditional_ms = time_ms([&] { return channel_entropy_hist(x, kDefaultBins); });
  r.gaussian_ms = time_ms([&] { return channel_entropy_gaussian(x, kVarianceFloor); });
  r.speedup = r.traditional_ms / r.gaussian_ms;

#ifdef EARFA_HAVE_OPENMP
  omp_set_num_threads(saved_threads);
#endif
  return r;
}

template HistogramEntropy differential_entropy_hist(std::span<const float>, int);
template HistogramEntropy differential_entropy_hist(std::span<const double>, int);
template EntropyResult channel_entropy_hist(const Tensor<float>&, int);
template EntropyResult channel_entropy_hist(const Tensor<double>&, int);
template EntropyResult channel_entropy_gaussian(const Tensor<float>&, double);
template EntropyResult channel_entropy_gaussian(const Tensor<double>&, double);

}  // namespace earfa::entropy
