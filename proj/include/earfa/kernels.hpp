#pragma once

// Forward and backward kernels over plain tensors. These carry no autograd
// state; the differentiable wrappers in autograd.hpp compose them.

#include <type_traits>
#include <array>

#include "earfa/tensor.hpp"

namespace earfa::kernels {

struct ConvParams {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int groups = 1;
};

// Padding that keeps the spatial size for an odd kernel at stride 1.
inline int same_padding(int kernel, int dilation) { return dilation * (kernel - 1) / 2; }

Shape conv2d_output_shape(const Shape& x, const Shape& w, const ConvParams& p);

// x (n, c_in, h, w), w (c_out, c_in/groups, k, k), bias (1, c_out, 1, 1) or null.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const std::type_identity_t<Tensor<T>>* bias,
                 const ConvParams& p);
template <class T>
Tensor<T> conv2d_grad_input(const Tensor<T>& grad_out, const Tensor<T>& w, const Shape& x_shape,
                            const ConvParams& p);
template <class T>
Tensor<T> conv2d_grad_weight(const Tensor<T>& grad_out, const Tensor<T>& x, const Shape& w_shape,
                             const ConvParams& p);
// Sums grad_out over (n, h, w) into shape (1, c, 1, 1).
template <class T>
Tensor<T> reduce_to_channels(const Tensor<T>& grad_out);

// Normalizes across channels at every (n, y, x); gamma/beta are (1, c, 1, 1).
template <class T>
struct LayerNormResult {
  Tensor<T> out;
  Tensor<T> normalized;  // pre-affine
  Tensor<T> inv_std;     // (n, 1, h, w)
};
template <class T>
LayerNormResult<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);
template <class T>
struct LayerNormGrads {
  Tensor<T> x;
  Tensor<T> gamma;
  Tensor<T> beta;
};
template <class T>
LayerNormGrads<T> layer_norm_backward(const Tensor<T>& grad_out, const Tensor<T>& normalized,
                                      const Tensor<T>& inv_std, const Tensor<T>& gamma);

// Channel groups in index order: up, down, left, right, identity.
enum class ShiftDir : int { up = 0, down = 1, left = 2, right = 3, none = 4 };
struct ChannelGroup {
  int begin;
  int end;
  ShiftDir dir;
};
std::array<ChannelGroup, 5> shift_groups(int channels);

// Translates each group by shift_px in its direction, filling with zeros.
// reverse = true moves every group the opposite way (the adjoint).
template <class T>
Tensor<T> channel_shift(const Tensor<T>& x, int shift_px, bool reverse = false);

template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int r);
template <class T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r);

// Population variance of every (n, c) plane -> (n, c, 1, 1).
template <class T>
Tensor<T> channel_var(const Tensor<T>& x);
template <class T>
Tensor<T> channel_mean(const Tensor<T>& x);
// Population statistics of one plane, accumulated in double.
template <class T>
double plane_sum(std::span<const T> v);
template <class T>
double plane_variance(std::span<const T> v);

// Broadcasting: every extent of b equals a's or is 1 (and vice versa).
Shape broadcast_shape(const Shape& a, const Shape& b);
template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
// Sums a broadcast gradient back down to `target`.
template <class T>
Tensor<T> sum_to_shape(const Tensor<T>& g, const Shape& target);

// Splits along channels into [0, first) and [first, c).
template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, int first);
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

// Dihedral group of the square: op in [0, 8). Bit 2 = horizontal flip applied
// first, bits 0-1 = number of counter-clockwise quarter turns.
template <class T>
Tensor<T> dihedral(const Tensor<T>& x, int op);
int dihedral_inverse(int op);

}  // namespace earfa::kernels
