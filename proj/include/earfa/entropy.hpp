#pragma once

// Entropy in nats: discrete Shannon entropy, a histogram (plug-in) estimate of
// differential entropy, and the closed form under a Gaussian assumption,
// 0.5 * ln(2*pi*var), which needs only the variance.

#include <span>
#include <string>
#include <vector>

#include "earfa/tensor.hpp"

namespace earfa::entropy {

inline constexpr int kDefaultBins = 256;
inline constexpr double kVarianceFloor = 1e-5;

// -sum p ln p with 0 ln 0 = 0. Throws ValidationError unless p >= 0 and
// sums to 1 within 1e-9.
double discrete_entropy(std::span<const double> p);

struct HistogramEntropy {
  double nats = 0;
  bool degenerate = false;  // all samples equal; nats is -infinity
};

// Riemann sum of -p ln p over a `bins`-bin histogram spanning [min, max].
template <class T>
HistogramEntropy differential_entropy_hist(std::span<const T> z, int bins = kDefaultBins);

// 0.5 * ln(2*pi*(var + eps)).
double gaussian_entropy(double var, double eps = kVarianceFloor);

// Per-(n, c) entropy values, row-major over (n, c).
struct EntropyResult {
  int n = 0;
  int c = 0;
  std::vector<double> nats;
  double at(int b, int ch) const { return nats[static_cast<std::size_t>(b) * c + ch]; }
};

// The "traditional" path: one histogram estimate per channel plane.
template <class T>
EntropyResult channel_entropy_hist(const Tensor<T>& x, int bins = kDefaultBins);

// The Gaussian path: channel_var followed by gaussian_entropy.
template <class T>
EntropyResult channel_entropy_gaussian(const Tensor<T>& x, double eps = kVarianceFloor);

struct BenchReport {
  int batch = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  int reps = 0;
  double traditional_ms = 0;
  double gaussian_ms = 0;
  double speedup = 0;

  std::string text() const;
  std::string json() const;
};

// Times both paths on the same standard-normal float tensor, single-threaded.
// Each path is warmed up once, then the mean over `reps` calls is reported.
BenchReport bench_entropy(int batch, int c, int h, int w, int reps = 100, unsigned seed = 0);

}  // namespace earfa::entropy
