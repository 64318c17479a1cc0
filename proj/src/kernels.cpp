#include "earfa/kernels.hpp"

#include <cmath>
#include <cstring>

namespace earfa::kernels {

namespace {

// Parallelize only when a loop carries enough work to amortize the fork.
constexpr std::size_t kParallelGrain = 1 << 15;

// Output range [lo, hi) whose input coordinate o*stride + offset lies in [0, extent).
struct Range {
  int lo;
  int hi;
};

Range valid_range(int out_extent, int in_extent, int stride, int offset) {
  // o*stride + offset >= 0  and  o*stride + offset <= in_extent - 1
  int lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  int last = in_extent - 1 - offset;
  int hi = last < 0 ? 0 : last / stride + 1;
  lo = std::max(lo, 0);
  hi = std::min(hi, out_extent);
  if (hi < lo) hi = lo;
  return {lo, hi};
}

void check_rank4_bias(const Shape& bias, int channels, const char* what) {
  if (bias.n != 1 || bias.c != channels || bias.h != 1 || bias.w != 1) {
    throw DimensionError(std::string(what) + " must have shape (1, " + std::to_string(channels) +
                         ", 1, 1), got " + bias.str());
  }
}

}  // namespace

template <class T>
double plane_sum(std::span<const T> v) {
  // Fixed lane count: the reduction order is independent of the compiler's
  // vectorization choices and the lanes map onto SIMD registers.
  constexpr std::size_t kLanes = 16;
  double lanes[kLanes] = {};
  const std::size_t full = v.size() - v.size() % kLanes;
  for (std::size_t i = 0; i < full; i += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += static_cast<double>(v[i + l]);
  double total = 0;
  for (std::size_t i = full; i < v.size(); ++i) total += static_cast<double>(v[i]);
  for (double l : lanes) total += l;
  return total;
}

template <class T>
double plane_variance(std::span<const T> v) {
  if (v.empty()) throw DimensionError("plane_variance: empty input");
  // Single pass over values shifted by the first sample; in double the
  // shift removes the cancellation problem of the raw sum-of-squares form.
  constexpr std::size_t kLanes = 16;
  const double shift = static_cast<double>(v[0]);
  double s1[kLanes] = {}, s2[kLanes] = {};
  const std::size_t full = v.size() - v.size() % kLanes;
  for (std::size_t i = 0; i < full; i += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) {
      const double d = static_cast<double>(v[i + l]) - shift;
      s1[l] += d;
      s2[l] += d * d;
    }
  double t1 = 0, t2 = 0;
  for (std::size_t i = full; i < v.size(); ++i) {
    const double d = static_cast<double>(v[i]) - shift;
    t1 += d;
    t2 += d * d;
  }
  for (std::size_t l = 0; l < kLanes; ++l) {
    t1 += s1[l];
    t2 += s2[l];
  }
  const double inv = 1.0 / static_cast<double>(v.size());
  const double m = t1 * inv;
  return std::max(0.0, t2 * inv - m * m);
}

Shape conv2d_output_shape(const Shape& x, const Shape& w, const ConvParams& p) {
  if (p.groups < 1 || p.stride < 1 || p.dilation < 1 || p.padding < 0) {
    throw ConfigError("conv2d: stride/dilation/groups must be >= 1 and padding >= 0");
  }
  if (x.c % p.groups != 0 || w.n % p.groups != 0) {
    throw ConfigError("conv2d: groups " + std::to_string(p.groups) + " do not divide channels " +
                      std::to_string(x.c) + " -> " + std::to_string(w.n));
  }
  if (w.c != x.c / p.groups) {
    throw DimensionError("conv2d: weight " + w.str() + " expects " + std::to_string(w.c * p.groups) +
                         " input channels, input is " + x.str());
  }
  if (w.h != w.w || w.h < 1) throw DimensionError("conv2d: kernel must be square, got " + w.str());
  const int span = p.dilation * (w.h - 1) + 1;
  const int oh = (x.h + 2 * p.padding - span) / p.stride + 1;
  const int ow = (x.w + 2 * p.padding - span) / p.stride + 1;
  if (oh < 1 || ow < 1) throw DimensionError("conv2d: input " + x.str() + " smaller than kernel span");
  return {x.n, w.n, oh, ow};
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const std::type_identity_t<Tensor<T>>* bias,
                 const ConvParams& p) {
  const Shape os = conv2d_output_shape(x.shape(), w.shape(), p);
  if (bias) check_rank4_bias(bias->shape(), os.c, "conv2d bias");
  const int n = x.n(), cin = x.c(), h = x.h(), wd = x.w();
  const int cout = os.c, oh = os.h, ow = os.w, k = w.h();
  const int cin_g = cin / p.groups, cout_g = cout / p.groups;
  const std::size_t in_plane = x.shape().plane(), out_plane = os.plane();

  Tensor<T> y(os);
  T* yp = y.mutable_ptr();
  const T* xp = x.ptr();
  const T* wp = w.ptr();
  const T* bp = bias ? bias->ptr() : nullptr;

  std::vector<Range> rows(k), cols(k);
  for (int t = 0; t < k; ++t) {
    const int off = t * p.dilation - p.padding;
    rows[t] = valid_range(oh, h, p.stride, off);
    cols[t] = valid_range(ow, wd, p.stride, off);
  }

  const bool pointwise = k == 1 && p.stride == 1 && p.padding == 0;
  const long long jobs = static_cast<long long>(n) * cout;
  const bool par = os.numel() * static_cast<std::size_t>(cin_g * k * k) > kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
  for (long long job = 0; job < jobs; ++job) {
    const int b = static_cast<int>(job / cout), co = static_cast<int>(job % cout);
    T* out = yp + static_cast<std::size_t>(job) * out_plane;
    const T init = bp ? bp[co] : T(0);
    std::fill(out, out + out_plane, init);
    const int g = co / cout_g;
    for (int cl = 0; cl < cin_g; ++cl) {
      const T* in = xp + (static_cast<std::size_t>(b) * cin + g * cin_g + cl) * in_plane;
      const T* wk = wp + (static_cast<std::size_t>(co) * cin_g + cl) * k * k;
      for (int ky = 0; ky < k; ++ky) {
        const int yoff = ky * p.dilation - p.padding;
        for (int kx = 0; kx < k; ++kx) {
          const T wv = wk[ky * k + kx];
          if (pointwise) {
            for (std::size_t i = 0; i < out_plane; ++i) out[i] += wv * in[i];
            continue;
          }
          const int xoff = kx * p.dilation - p.padding;
          const Range cr = cols[kx];
          for (int oy = rows[ky].lo; oy < rows[ky].hi; ++oy) {
            T* orow = out + static_cast<std::size_t>(oy) * ow;
            const T* irow = in + static_cast<std::size_t>(oy * p.stride + yoff) * wd;
            if (p.stride == 1) {
              const T* src = irow + xoff;
              for (int ox = cr.lo; ox < cr.hi; ++ox) orow[ox] += wv * src[ox];
            } else {
              for (int ox = cr.lo; ox < cr.hi; ++ox) orow[ox] += wv * irow[ox * p.stride + xoff];
            }
          }
        }
      }
    }
  }
  debug_check_finite(y, "conv2d");
  return y;
}

template <class T>
Tensor<T> conv2d_grad_input(const Tensor<T>& grad_out, const Tensor<T>& w, const Shape& x_shape,
                            const ConvParams& p) {
  const Shape os = conv2d_output_shape(x_shape, w.shape(), p);
  if (grad_out.shape() != os) throw DimensionError("conv2d_grad_input: gradient shape mismatch");
  const int n = x_shape.n, cin = x_shape.c, h = x_shape.h, wd = x_shape.w;
  const int cout = os.c, oh = os.h, ow = os.w, k = w.h();
  const int cin_g = cin / p.groups, cout_g = cout / p.groups;
  const std::size_t in_plane = x_shape.plane(), out_plane = os.plane();

  Tensor<T> gx(x_shape);
  T* gxp = gx.mutable_ptr();
  const T* gyp = grad_out.ptr();
  const T* wp = w.ptr();

  std::vector<Range> rows(k), cols(k);
  for (int t = 0; t < k; ++t) {
    const int off = t * p.dilation - p.padding;
    rows[t] = valid_range(oh, h, p.stride, off);
    cols[t] = valid_range(ow, wd, p.stride, off);
  }

  const bool pointwise = k == 1 && p.stride == 1 && p.padding == 0;
  const long long jobs = static_cast<long long>(n) * cin;
  const bool par = os.numel() * static_cast<std::size_t>(cin_g * k * k) > kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
  for (long long job = 0; job < jobs; ++job) {
    const int b = static_cast<int>(job / cin), ci = static_cast<int>(job % cin);
    T* gin = gxp + static_cast<std::size_t>(job) * in_plane;
    const int g = ci / cin_g, cl = ci % cin_g;
    for (int co = g * cout_g; co < (g + 1) * cout_g; ++co) {
      const T* go = gyp + (static_cast<std::size_t>(b) * cout + co) * out_plane;
      const T* wk = wp + (static_cast<std::size_t>(co) * cin_g + cl) * k * k;
      for (int ky = 0; ky < k; ++ky) {
        const int yoff = ky * p.dilation - p.padding;
        for (int kx = 0; kx < k; ++kx) {
          const T wv = wk[ky * k + kx];
          if (pointwise) {
            for (std::size_t i = 0; i < in_plane; ++i) gin[i] += wv * go[i];
            continue;
          }
          const int xoff = kx * p.dilation - p.padding;
          const Range cr = cols[kx];
          for (int oy = rows[ky].lo; oy < rows[ky].hi; ++oy) {
            const T* grow = go + static_cast<std::size_t>(oy) * ow;
            T* irow = gin + static_cast<std::size_t>(oy * p.stride + yoff) * wd;
            if (p.stride == 1) {
              T* dst = irow + xoff;
              for (int ox = cr.lo; ox < cr.hi; ++ox) dst[ox] += wv * grow[ox];
            } else {
              for (int ox = cr.lo; ox < cr.hi; ++ox) irow[ox * p.stride + xoff] += wv * grow[ox];
            }
          }
        }
      }
    }
  }
  return gx;
}

// Dot product with 8 independent partial sums so the loop vectorizes; the
// summation order is fixed, so results stay deterministic.
template <class T>
T dot_lanes(const T* a, const T* b, std::size_t n) {
  T lanes[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int j = 0; j < 8; ++j) lanes[j] += a[i + j] * b[i + j];
  T acc = 0;
  for (; i < n; ++i) acc += a[i] * b[i];
  for (int j = 0; j < 8; ++j) acc += lanes[j];
  return acc;
}

template <class T>
Tensor<T> conv2d_grad_weight(const Tensor<T>& grad_out, const Tensor<T>& x, const Shape& w_shape,
                             const ConvParams& p) {
  const Shape os = conv2d_output_shape(x.shape(), w_shape, p);
  if (grad_out.shape() != os) throw DimensionError("conv2d_grad_weight: gradient shape mismatch");
  const int n = x.n(), cin = x.c(), h = x.h(), wd = x.w();
  const int cout = os.c, oh = os.h, ow = os.w, k = w_shape.h;
  const int cin_g = cin / p.groups, cout_g = cout / p.groups;
  const std::size_t in_plane = x.shape().plane(), out_plane = os.plane();

  Tensor<T> gw(w_shape);
  T* gwp = gw.mutable_ptr();
  const T* gyp = grad_out.ptr();
  const T* xp = x.ptr();

  std::vector<Range> rows(k), cols(k);
  for (int t = 0; t < k; ++t) {
    const int off = t * p.dilation - p.padding;
    rows[t] = valid_range(oh, h, p.stride, off);
    cols[t] = valid_range(ow, wd, p.stride, off);
  }

  // 1x1, stride 1, no padding: each tap is one dot product over the plane.
  const bool pointwise = k == 1 && p.stride == 1 && p.padding == 0;
  const bool par = os.numel() * static_cast<std::size_t>(cin_g * k * k) > kParallelGrain;
#pragma omp parallel for schedule(static) if (par)
  for (int co = 0; co < cout; ++co) {
    const int g = co / cout_g;
    for (int cl = 0; cl < cin_g; ++cl) {
      T* gk = gwp + (static_cast<std::size_t>(co) * cin_g + cl) * k * k;
      for (int b = 0; b < n; ++b) {
        const T* go = gyp + (static_cast<std::size_t>(b) * cout + co) * out_plane;
        const T* in = xp + (static_cast<std::size_t>(b) * cin + g * cin_g + cl) * in_plane;
        for (int ky = 0; ky < k; ++ky) {
          const int yoff = ky * p.dilation - p.padding;
          for (int kx = 0; kx < k; ++kx) {
            const int xoff = kx * p.dilation - p.padding;
            const Range cr = cols[kx];
            T acc = 0;
            if (pointwise) {
              acc = dot_lanes(go, in, out_plane);
            } else {
              for (int oy = rows[ky].lo; oy < rows[ky].hi; ++oy) {
                const T* grow = go + static_cast<std::size_t>(oy) * ow;
                const T* irow = in + static_cast<std::size_t>(oy * p.stride + yoff) * wd;
                if (p.stride == 1) {
                  acc += dot_lanes(grow + cr.lo, irow + xoff + cr.lo, static_cast<std::size_t>(cr.hi - cr.lo));
                } else {
                  T row_acc = 0;
                  for (int ox = cr.lo; ox < cr.hi; ++ox) row_acc += grow[ox] * irow[ox * p.stride + xoff];
                  acc += row_acc;
                }
              }
            }
            gk[ky * k + kx] += acc;
          }
        }
      }
    }
  }
  return gw;
}

template <class T>
Tensor<T> reduce_to_channels(const Tensor<T>& grad_out) {
  const Shape s = grad_out.shape();
  Tensor<T> out(Shape{1, s.c, 1, 1});
  T* op = out.mutable_ptr();
  for (int b = 0; b < s.n; ++b) {
    for (int c = 0; c < s.c; ++c) {
      T acc = 0;
      for (T v : grad_out.plane(b, c)) acc += v;
      op[c] += acc;
    }
  }
  return out;
}

template <class T>
LayerNormResult<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const Shape s = x.shape();
  if (s.c == 0) throw DimensionError("layer_norm: zero-size channel dimension");
  if (!(eps > T(0))) throw ConfigError("layer_norm: eps must be positive");
  check_rank4_bias(gamma.shape(), s.c, "layer_norm gamma");
  check_rank4_bias(beta.shape(), s.c, "layer_norm beta");
  const std::size_t plane = s.plane();
  LayerNormResult<T> r{Tensor<T>(s), Tensor<T>(s), Tensor<T>(Shape{s.n, 1, s.h, s.w})};
  T* yp = r.out.mutable_ptr();
  T* np = r.normalized.mutable_ptr();
  T* sp = r.inv_std.mutable_ptr();
  const T* xp = x.ptr();
  const T* gp = gamma.ptr();
  const T* bp = beta.ptr();
  const T inv_c = T(1) / static_cast<T>(s.c);
  std::vector<T> mean(plane), var(plane);
  for (int b = 0; b < s.n; ++b) {
    const T* xb = xp + static_cast<std::size_t>(b) * s.c * plane;
    std::fill(mean.begin(), mean.end(), T(0));
    std::fill(var.begin(), var.end(), T(0));
    for (int c = 0; c < s.c; ++c) {
      const T* xc = xb + c * plane;
      for (std::size_t i = 0; i < plane; ++i) mean[i] += xc[i];
    }
    for (std::size_t i = 0; i < plane; ++i) mean[i] *= inv_c;
    for (int c = 0; c < s.c; ++c) {
      const T* xc = xb + c * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T d = xc[i] - mean[i];
        var[i] += d * d;
      }
    }
    T* sb = sp + static_cast<std::size_t>(b) * plane;
    for (std::size_t i = 0; i < plane; ++i) sb[i] = T(1) / std::sqrt(var[i] * inv_c + eps);
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(b) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T nv = (xp[base + i] - mean[i]) * sb[i];
        np[base + i] = nv;
        yp[base + i] = gp[c] * nv + bp[c];
      }
    }
  }
  debug_check_finite(r.out, "layer_norm");
  return r;
}

template <class T>
LayerNormGrads<T> layer_norm_backward(const Tensor<T>& grad_out, const Tensor<T>& normalized,
                                      const Tensor<T>& inv_std, const Tensor<T>& gamma) {
  const Shape s = grad_out.shape();
  const std::size_t plane = s.plane();
  LayerNormGrads<T> g{Tensor<T>(s), Tensor<T>(gamma.shape()), Tensor<T>(gamma.shape())};
  T* gxp = g.x.mutable_ptr();
  T* ggp = g.gamma.mutable_ptr();
  T* gbp = g.beta.mutable_ptr();
  const T* gyp = grad_out.ptr();
  const T* np = normalized.ptr();
  const T* sp = inv_std.ptr();
  const T* gp = gamma.ptr();
  const T inv_c = T(1) / static_cast<T>(s.c);
  std::vector<T> mean_d(plane), mean_dn(plane);
  for (int b = 0; b < s.n; ++b) {
    std::fill(mean_d.begin(), mean_d.end(), T(0));
    std::fill(mean_dn.begin(), mean_dn.end(), T(0));
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(b) * s.c + c) * plane;
      T acc_g = 0, acc_b = 0;
      for (std::size_t i = 0; i < plane; ++i) {
        const T go = gyp[base + i];
        const T d = go * gp[c];
        mean_d[i] += d;
        mean_dn[i] += d * np[base + i];
        acc_g += go * np[base + i];
        acc_b += go;
      }
      ggp[c] += acc_g;
      gbp[c] += acc_b;
    }
    const T* sb = sp + static_cast<std::size_t>(b) * plane;
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(b) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T d = gyp[base + i] * gp[c];
        gxp[base + i] = sb[i] * (d - mean_d[i] * inv_c - np[base + i] * mean_dn[i] * inv_c);
      }
    }
  }
  return g;
}

std::array<ChannelGroup, 5> shift_groups(int channels) {
  if (channels < 5) {
    throw ConfigError("channel_shift needs at least 5 channels, got " + std::to_string(channels));
  }
  std::array<ChannelGroup, 5> groups{};
  const int base = channels / 5, extra = channels % 5;
  int begin = 0;
  for (int g = 0; g < 5; ++g) {
    const int size = base + (g < extra ? 1 : 0);
    groups[g] = {begin, begin + size, static_cast<ShiftDir>(g)};
    begin += size;
  }
  return groups;
}

template <class T>
Tensor<T> channel_shift(const Tensor<T>& x, int shift_px, bool reverse) {
  if (shift_px < 1) throw ConfigError("channel_shift: shift_px must be >= 1");
  const Shape s = x.shape();
  const auto groups = shift_groups(s.c);
  Tensor<T> y(s);
  T* yp = y.mutable_ptr();
  const int sign = reverse ? -1 : 1;
  for (int b = 0; b < s.n; ++b) {
    for (const ChannelGroup& grp : groups) {
      // out[y][x] = in[y + dy][x + dx]
      int dy = 0, dx = 0;
      switch (grp.dir) {
        case ShiftDir::up: dy = shift_px; break;
        case ShiftDir::down: dy = -shift_px; break;
        case ShiftDir::left: dx = shift_px; break;
        case ShiftDir::right: dx = -shift_px; break;
        case ShiftDir::none: break;
      }
      dy *= sign;
      dx *= sign;
      const Range rr = valid_range(s.h, s.h, 1, dy);
      const Range cr = valid_range(s.w, s.w, 1, dx);
      for (int c = grp.begin; c < grp.end; ++c) {
        const T* in = x.ptr() + x.offset(b, c, 0, 0);
        T* out = yp + y.offset(b, c, 0, 0);
        for (int oy = rr.lo; oy < rr.hi; ++oy) {
          const T* src = in + static_cast<std::size_t>(oy + dy) * s.w + dx;
          T* dst = out + static_cast<std::size_t>(oy) * s.w;
          std::copy(src + cr.lo, src + cr.hi, dst + cr.lo);
        }
      }
    }
  }
  return y;
}

template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int r) {
  if (r < 1) throw ConfigError("pixel_shuffle: factor must be >= 1");
  const Shape s = x.shape();
  if (s.c % (r * r) != 0) {
    throw DimensionError("pixel_shuffle: channels " + std::to_string(s.c) + " not divisible by " +
                         std::to_string(r * r));
  }
  const Shape os{s.n, s.c / (r * r), s.h * r, s.w * r};
  Tensor<T> y(os);
  T* yp = y.mutable_ptr();
  for (int b = 0; b < os.n; ++b)
    for (int c = 0; c < os.c; ++c)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) {
          const T* in = x.ptr() + x.offset(b, c * r * r + i * r + j, 0, 0);
          for (int yy = 0; yy < s.h; ++yy) {
            T* orow = yp + y.offset(b, c, yy * r + i, 0);
            const T* irow = in + static_cast<std::size_t>(yy) * s.w;
            for (int xx = 0; xx < s.w; ++xx) orow[xx * r + j] = irow[xx];
          }
        }
  return y;
}

template <class T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r) {
  if (r < 1) throw ConfigError("pixel_unshuffle: factor must be >= 1");
  const Shape s = x.shape();
  if (s.h % r != 0 || s.w % r != 0) {
    throw DimensionError("pixel_unshuffle: spatial size " + s.str() + " not divisible by factor");
  }
  const Shape os{s.n, s.c * r * r, s.h / r, s.w / r};
  Tensor<T> y(os);
  T* yp = y.mutable_ptr();
  for (int b = 0; b < s.n; ++b)
    for (int c = 0; c < s.c; ++c)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) {
          T* out = yp + y.offset(b, c * r * r + i * r + j, 0, 0);
          for (int yy = 0; yy < os.h; ++yy) {
            const T* irow = x.ptr() + x.offset(b, c, yy * r + i, 0);
            T* orow = out + static_cast<std::size_t>(yy) * os.w;
            for (int xx = 0; xx < os.w; ++xx) orow[xx] = irow[xx * r + j];
          }
        }
  return y;
}

template <class T>
Tensor<T> channel_mean(const Tensor<T>& x) {
  const Shape s = x.shape();
  if (s.plane() == 0) throw DimensionError("channel_mean: empty spatial plane");
  Tensor<T> out(Shape{s.n, s.c, 1, 1});
  T* op = out.mutable_ptr();
  const T inv = T(1) / static_cast<T>(s.plane());
  for (int b = 0; b < s.n; ++b)
    for (int c = 0; c < s.c; ++c) {
      T acc = 0;
      for (T v : x.plane(b, c)) acc += v;
      op[b * s.c + c] = acc * inv;
    }
  return out;
}

template <class T>
Tensor<T> channel_var(const Tensor<T>& x) {
  const Shape s = x.shape();
  if (s.plane() == 0) throw DimensionError("channel_var: empty spatial plane");
  Tensor<T> out(Shape{s.n, s.c, 1, 1});
  T* op = out.mutable_ptr();
  for (int b = 0; b < s.n; ++b)
    for (int c = 0; c < s.c; ++c) op[b * s.c + c] = static_cast<T>(plane_variance(x.plane(b, c)));
  return out;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  auto dim = [&](int x, int y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw DimensionError("cannot broadcast " + a.str() + " with " + b.str());
  };
  return {dim(a.n, b.n), dim(a.c, b.c), dim(a.h, b.h), dim(a.w, b.w)};
}

namespace {

template <class T, class F>
Tensor<T> broadcast_binary(const Tensor<T>& a, const Tensor<T>& b, F f) {
  const Shape os = broadcast_shape(a.shape(), b.shape());
  Tensor<T> y(os);
  T* yp = y.mutable_ptr();
  const T* ap = a.ptr();
  const T* bp = b.ptr();
  if (a.shape() == os && b.shape() == os) {
    for (std::size_t i = 0; i < os.numel(); ++i) yp[i] = f(ap[i], bp[i]);
    return y;
  }
  const Shape as = a.shape(), bs = b.shape();
  for (int n = 0; n < os.n; ++n)
    for (int c = 0; c < os.c; ++c)
      for (int yy = 0; yy < os.h; ++yy) {
        T* orow = yp + y.offset(n, c, yy, 0);
        const T* arow = ap + a.offset(as.n == 1 ? 0 : n, as.c == 1 ? 0 : c, as.h == 1 ? 0 : yy, 0);
        const T* brow = bp + b.offset(bs.n == 1 ? 0 : n, bs.c == 1 ? 0 : c, bs.h == 1 ? 0 : yy, 0);
        const bool a_row = as.w != 1, b_row = bs.w != 1;
        for (int xx = 0; xx < os.w; ++xx) orow[xx] = f(arow[a_row ? xx : 0], brow[b_row ? xx : 0]);
      }
  return y;
}

}  // namespace

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return broadcast_binary(a, b, [](T x, T y) { return x + y; });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return broadcast_binary(a, b, [](T x, T y) { return x * y; });
}

template <class T>
Tensor<T> sum_to_shape(const Tensor<T>& g, const Shape& target) {
  if (g.shape() == target) return g;
  const Shape gs = g.shape();
  if (broadcast_shape(gs, target) != gs) {
    throw DimensionError("sum_to_shape: " + target.str() + " does not broadcast to " + gs.str());
  }
  Tensor<T> out(target);
  T* op = out.mutable_ptr();
  const T* gp = g.ptr();
  for (int n = 0; n < gs.n; ++n)
    for (int c = 0; c < gs.c; ++c)
      for (int yy = 0; yy < gs.h; ++yy) {
        const T* grow = gp + g.offset(n, c, yy, 0);
        T* orow = op + out.offset(target.n == 1 ? 0 : n, target.c == 1 ? 0 : c, target.h == 1 ? 0 : yy, 0);
        if (target.w == 1) {
          T acc = 0;
          for (int xx = 0; xx < gs.w; ++xx) acc += grow[xx];
          orow[0] += acc;
        } else {
          for (int xx = 0; xx < gs.w; ++xx) orow[xx] += grow[xx];
        }
      }
  return out;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, int first) {
  const Shape s = x.shape();
  if (first < 0 || first > s.c) {
    throw DimensionError("split_channels: split point " + std::to_string(first) + " outside " + s.str());
  }
  Tensor<T> a(Shape{s.n, first, s.h, s.w});
  Tensor<T> b(Shape{s.n, s.c - first, s.h, s.w});
  const std::size_t plane = s.plane();
  T* ap = a.mutable_ptr();
  T* bp = b.mutable_ptr();
  for (int n = 0; n < s.n; ++n) {
    const T* src = x.ptr() + x.offset(n, 0, 0, 0);
    std::copy(src, src + first * plane, ap + static_cast<std::size_t>(n) * first * plane);
    std::copy(src + first * plane, src + s.c * plane, bp + static_cast<std::size_t>(n) * (s.c - first) * plane);
  }
  return {std::move(a), std::move(b)};
}

template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape as = a.shape(), bs = b.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
    throw DimensionError("concat_channels: " + as.str() + " vs " + bs.str());
  }
  Tensor<T> y(Shape{as.n, as.c + bs.c, as.h, as.w});
  const std::size_t plane = as.plane();
  T* yp = y.mutable_ptr();
  for (int n = 0; n < as.n; ++n) {
    T* dst = yp + y.offset(n, 0, 0, 0);
    const T* sa = a.ptr() + a.offset(n, 0, 0, 0);
    const T* sb = b.ptr() + b.offset(n, 0, 0, 0);
    std::copy(sa, sa + as.c * plane, dst);
    std::copy(sb, sb + bs.c * plane, dst + as.c * plane);
  }
  return y;
}

template <class T>
Tensor<T> dihedral(const Tensor<T>& x, int op) {
  if (op < 0 || op > 7) throw ConfigError("dihedral: op must be in [0, 8)");
  const bool flip = (op & 4) != 0;
  const int turns = op & 3;
  const Shape s = x.shape();
  const bool swap = (turns & 1) != 0;
  const Shape os{s.n, s.c, swap ? s.w : s.h, swap ? s.h : s.w};
  Tensor<T> y(os);
  T* yp = y.mutable_ptr();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T* in = x.ptr() + x.offset(n, c, 0, 0);
      T* out = yp + y.offset(n, c, 0, 0);
      for (int oy = 0; oy < os.h; ++oy)
        for (int ox = 0; ox < os.w; ++ox) {
          // Undo the quarter turns (counter-clockwise) to find the source in
          // the flipped frame, then undo the flip.
          int fy = 0, fx = 0;
          switch (turns) {
            case 0: fy = oy; fx = ox; break;
            case 1: fy = ox; fx = s.w - 1 - oy; break;
            case 2: fy = s.h - 1 - oy; fx = s.w - 1 - ox; break;
            case 3: fy = s.h - 1 - ox; fx = oy; break;
          }
          if (flip) fx = s.w - 1 - fx;
          out[static_cast<std::size_t>(oy) * os.w + ox] = in[static_cast<std::size_t>(fy) * s.w + fx];
        }
    }
  return y;
}

int dihedral_inverse(int op) {
  if (op < 0 || op > 7) throw ConfigError("dihedral: op must be in [0, 8)");
  if (op & 4) return op;  // reflections are involutions
  return (4 - op) & 3;
}

#define EARFA_INSTANTIATE(T)                                                                          \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const std::type_identity_t<Tensor<T>>*, const ConvParams&); \
  template Tensor<T> conv2d_grad_input(const Tensor<T>&, const Tensor<T>&, const Shape&,              \
                                       const ConvParams&);                                            \
  template Tensor<T> conv2d_grad_weight(const Tensor<T>&, const Tensor<T>&, const Shape&,             \
                                        const ConvParams&);                                           \
  template Tensor<T> reduce_to_channels(const Tensor<T>&);                                            \
  template LayerNormResult<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);    \
  template LayerNormGrads<T> layer_norm_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                                 const Tensor<T>&);                                   \
  template Tensor<T> channel_shift(const Tensor<T>&, int, bool);                                      \
  template Tensor<T> pixel_shuffle(const Tensor<T>&, int);                                            \
  template Tensor<T> pixel_unshuffle(const Tensor<T>&, int);                                          \
  template Tensor<T> channel_var(const Tensor<T>&);                                                   \
  template double plane_sum(std::span<const T>);                                                      \
  template double plane_variance(std::span<const T>);                                                   \
  template Tensor<T> channel_mean(const Tensor<T>&);                                                  \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                         \
  template Tensor<T> sum_to_shape(const Tensor<T>&, const Shape&);                                    \
  template std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>&, int);                     \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> dihedral(const Tensor<T>&, int);

EARFA_INSTANTIATE(float)
EARFA_INSTANTIATE(double)

#undef EARFA_INSTANTIATE

}  // namespace earfa::kernels
