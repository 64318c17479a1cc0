#include "earfa/autograd.hpp"

#include <cmath>
#include <numbers>

namespace earfa {

template <class T>
void Node<T>::accumulate(const Tensor<T>& g) {
  if (g.shape() != value.shape()) {
    throw DimensionError(std::string("gradient shape ") + g.shape().str() + " does not match value " +
                         value.shape().str() + " of " + op);
  }
  if (!has_grad) {
    grad = g;
    has_grad = true;
    return;
  }
  T* dst = grad.mutable_ptr();
  const T* src = g.ptr();
  for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
}

template <class T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  Var<T> v;
  v.node_ = std::make_shared<Node<T>>();
  v.node_->value = std::move(value);
  v.node_->requires_grad = requires_grad && record_;
  v.tape_ = this;
  if (v.node_->requires_grad) leaves_.push_back(v.node_);
  return v;
}

template <class T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  return leaf(std::move(value), false);
}

template <class T>
Var<T> Tape<T>::record(const char* op, Tensor<T> out, std::initializer_list<const Var<T>*> inputs,
                       BackwardFn backward) {
  bool needs = false;
  for (const Var<T>* in : inputs) {
    if (in && in->requires_grad()) needs = true;
  }
  Var<T> v;
  v.node_ = std::make_shared<Node<T>>();
  v.node_->value = std::move(out);
  v.node_->op = op;
  v.tape_ = this;
  if (record_ && needs) {
    v.node_->requires_grad = true;
    v.node_->backward = std::move(backward);
    nodes_.push_back(v.node_);
  }
  return v;
}

template <class T>
void Tape<T>::backward(const Var<T>& loss) {
  if (!loss.valid() || loss.tape() != this || !loss.requires_grad()) {
    throw UsageError("backward: value is detached (not recorded on this tape)");
  }
  if (loss.value().numel() != 1) {
    throw UsageError("backward: loss must be a scalar, got shape " + loss.shape().str());
  }
  for (auto& n : leaves_) n->clear_grad();
  for (auto& n : nodes_) n->clear_grad();
  loss.node_->accumulate(Tensor<T>::ones(loss.shape()));
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node<T>& nd = **it;
    if (nd.has_grad && nd.backward) nd.backward(nd.grad);
  }
}

template <class T>
std::vector<std::string> Tape<T>::ops() const {
  std::vector<std::string> names;
  names.reserve(nodes_.size());
  for (const auto& n : nodes_) names.emplace_back(n->op);
  return names;
}

namespace ag {

namespace {

template <class T>
Tape<T>* common_tape(std::initializer_list<const Var<T>*> inputs) {
  Tape<T>* tape = nullptr;
  for (const Var<T>* in : inputs) {
    if (!in) continue;
    if (!in->valid()) throw UsageError("operator received an empty Var");
    if (!in->tape()) continue;
    if (tape && in->tape() != tape) throw UsageError("operator inputs live on different tapes");
    tape = in->tape();
  }
  return tape;
}

template <class T>
Var<T> emit(const char* op, Tensor<T> out, std::initializer_list<const Var<T>*> inputs,
            typename Tape<T>::BackwardFn fn) {
  Tape<T>* tape = common_tape(inputs);
  if (!tape) return Var<T>::constant(std::move(out));
  return tape->record(op, std::move(out), inputs, std::move(fn));
}

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

}  // namespace

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>* bias, const kernels::ConvParams& p) {
  Tensor<T> out = kernels::conv2d(x.value(), w.value(), bias ? &bias->value() : nullptr, p);
  NodePtr<T> xn = x.node(), wn = w.node(), bn = bias ? bias->node() : nullptr;
  return emit<T>("conv2d", std::move(out), {&x, &w, bias}, [xn, wn, bn, p](const Tensor<T>& g) {
    if (xn->requires_grad) xn->accumulate(kernels::conv2d_grad_input(g, wn->value, xn->value.shape(), p));
    if (wn->requires_grad) wn->accumulate(kernels::conv2d_grad_weight(g, xn->value, wn->value.shape(), p));
    if (bn && bn->requires_grad) bn->accumulate(kernels::reduce_to_channels(g));
  });
}

template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  auto r = kernels::layer_norm(x.value(), gamma.value(), beta.value(), eps);
  NodePtr<T> xn = x.node(), gn = gamma.node(), bn = beta.node();
  Tensor<T> normalized = r.normalized, inv_std = r.inv_std;
  return emit<T>("layer_norm", std::move(r.out), {&x, &gamma, &beta},
                 [xn, gn, bn, normalized, inv_std](const Tensor<T>& g) {
                   auto grads = kernels::layer_norm_backward(g, normalized, inv_std, gn->value);
                   if (xn->requires_grad) xn->accumulate(grads.x);
                   if (gn->requires_grad) gn->accumulate(grads.gamma);
                   if (bn->requires_grad) bn->accumulate(grads.beta);
                 });
}

template <class T>
Var<T> channel_shift(const Var<T>& x, int shift_px) {
  NodePtr<T> xn = x.node();
  return emit<T>("channel_shift", kernels::channel_shift(x.value(), shift_px), {&x},
                 [xn, shift_px](const Tensor<T>& g) {
                   if (xn->requires_grad) xn->accumulate(kernels::channel_shift(g, shift_px, true));
                 });
}

template <class T>
Var<T> pixel_shuffle(const Var<T>& x, int r) {
  NodePtr<T> xn = x.node();
  return emit<T>("pixel_shuffle", kernels::pixel_shuffle(x.value(), r), {&x}, [xn, r](const Tensor<T>& g) {
    if (xn->requires_grad) xn->accumulate(kernels::pixel_unshuffle(g, r));
  });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> y(x.shape());
  {
    T* yp = y.mutable_ptr();
    const T* xp = x.value().ptr();
    for (std::size_t i = 0; i < y.numel(); ++i) yp[i] = T(1) / (T(1) + std::exp(-xp[i]));
  }
  NodePtr<T> xn = x.node();
  Tensor<T> saved = y;
  return emit<T>("sigmoid", std::move(y), {&x}, [xn, saved](const Tensor<T>& g) {
    if (!xn->requires_grad) return;
    Tensor<T> gx(g.shape());
    T* dst = gx.mutable_ptr();
    const T* gp = g.ptr();
    const T* yp = saved.ptr();
    for (std::size_t i = 0; i < gx.numel(); ++i) dst[i] = gp[i] * yp[i] * (T(1) - yp[i]);
    xn->accumulate(gx);
  });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> y(x.shape());
  {
    T* yp = y.mutable_ptr();
    const T* xp = x.value().ptr();
    for (std::size_t i = 0; i < y.numel(); ++i) yp[i] = xp[i] > T(0) ? xp[i] : T(0);
  }
  NodePtr<T> xn = x.node();
  return emit<T>("relu", std::move(y), {&x}, [xn](const Tensor<T>& g) {
    if (!xn->requires_grad) return;
    Tensor<T> gx(g.shape());
    T* dst = gx.mutable_ptr();
    const T* gp = g.ptr();
    const T* xp = xn->value.ptr();
    for (std::size_t i = 0; i < gx.numel(); ++i) dst[i] = xp[i] > T(0) ? gp[i] : T(0);
    xn->accumulate(gx);
  });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  NodePtr<T> an = a.node(), bn = b.node();
  return emit<T>("add", kernels::add(a.value(), b.value()), {&a, &b}, [an, bn](const Tensor<T>& g) {
    if (an->requires_grad) an->accumulate(kernels::sum_to_shape(g, an->value.shape()));
    if (bn->requires_grad) bn->accumulate(kernels::sum_to_shape(g, bn->value.shape()));
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  NodePtr<T> an = a.node(), bn = b.node();
  return emit<T>("mul", kernels::mul(a.value(), b.value()), {&a, &b}, [an, bn](const Tensor<T>& g) {
    if (an->requires_grad) an->accumulate(kernels::sum_to_shape(kernels::mul(g, bn->value), an->value.shape()));
    if (bn->requires_grad) bn->accumulate(kernels::sum_to_shape(kernels::mul(g, an->value), bn->value.shape()));
  });
}

template <class T>
std::pair<Var<T>, Var<T>> split_channels(const Var<T>& x, int first) {
  auto [lo, hi] = kernels::split_channels(x.value(), first);
  NodePtr<T> xn = x.node();
  const Shape lo_shape = lo.shape(), hi_shape = hi.shape();
  // Each half scatters its gradient into the matching channel range.
  Var<T> a = emit<T>("split_lo", std::move(lo), {&x}, [xn, hi_shape](const Tensor<T>& g) {
    if (xn->requires_grad) xn->accumulate(kernels::concat_channels(g, Tensor<T>(hi_shape)));
  });
  Var<T> b = emit<T>("split_hi", std::move(hi), {&x}, [xn, lo_shape](const Tensor<T>& g) {
    if (xn->requires_grad) xn->accumulate(kernels::concat_channels(Tensor<T>(lo_shape), g));
  });
  return {a, b};
}

template <class T>
Var<T> channel_var(const Var<T>& x) {
  NodePtr<T> xn = x.node();
  return emit<T>("channel_var", kernels::channel_var(x.value()), {&x}, [xn](const Tensor<T>& g) {
    if (!xn->requires_grad) return;
    const Tensor<T>& xv = xn->value;
    const Shape s = xv.shape();
    const Tensor<T> mu = kernels::channel_mean(xv);
    Tensor<T> gx(s);
    T* dst = gx.mutable_ptr();
    const T scale = T(2) / static_cast<T>(s.plane());
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const T m = mu.ptr()[n * s.c + c];
        const T gc = g.ptr()[n * s.c + c] * scale;
        const T* src = xv.ptr() + xv.offset(n, c, 0, 0);
        T* out = dst + gx.offset(n, c, 0, 0);
        for (std::size_t i = 0; i < s.plane(); ++i) out[i] = gc * (src[i] - m);
      }
    xn->accumulate(gx);
  });
}

template <class T>
Var<T> channel_mean(const Var<T>& x) {
  NodePtr<T> xn = x.node();
  return emit<T>("channel_mean", kernels::channel_mean(x.value()), {&x}, [xn](const Tensor<T>& g) {
    if (!xn->requires_grad) return;
    const Shape s = xn->value.shape();
    Tensor<T> gx(s);
    T* dst = gx.mutable_ptr();
    const T inv = T(1) / static_cast<T>(s.plane());
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const T v = g.ptr()[n * s.c + c] * inv;
        T* out = dst + gx.offset(n, c, 0, 0);
        std::fill(out, out + s.plane(), v);
      }
    xn->accumulate(gx);
  });
}

template <class T>
Var<T> gaussian_entropy(const Var<T>& var, T eps) {
  if (!(eps > T(0))) throw ConfigError("gaussian_entropy: eps must be positive");
  Tensor<T> h(var.shape());
  {
    T* hp = h.mutable_ptr();
    const T* vp = var.value().ptr();
    const T two_pi = T(2) * std::numbers::pi_v<T>;
    for (std::size_t i = 0; i < h.numel(); ++i) {
      if (vp[i] < T(0)) throw ValidationError("gaussian_entropy: negative variance");
      hp[i] = T(0.5) * std::log(two_pi * (vp[i] + eps));
    }
  }
  NodePtr<T> vn = var.node();
  return emit<T>("gaussian_entropy", std::move(h), {&var}, [vn, eps](const Tensor<T>& g) {
    if (!vn->requires_grad) return;
    Tensor<T> gv(g.shape());
    T* dst = gv.mutable_ptr();
    const T* vp = vn->value.ptr();
    for (std::size_t i = 0; i < gv.numel(); ++i) dst[i] = g.ptr()[i] * T(0.5) / (vp[i] + eps);
    vn->accumulate(gv);
  });
}

template <class T>
Var<T> sum(const Var<T>& x) {
  T acc = 0;
  for (T v : x.value().data()) acc += v;
  NodePtr<T> xn = x.node();
  return emit<T>("sum", Tensor<T>::scalar(acc), {&x}, [xn](const Tensor<T>& g) {
    if (xn->requires_grad) xn->accumulate(Tensor<T>::full(xn->value.shape(), g.item()));
  });
}

template <class T>
Var<T> mean(const Var<T>& x) {
  const std::size_t count = x.value().numel();
  if (count == 0) throw DimensionError("mean of an empty tensor");
  T acc = 0;
  for (T v : x.value().data()) acc += v;
  NodePtr<T> xn = x.node();
  return emit<T>("mean", Tensor<T>::scalar(acc / static_cast<T>(count)), {&x}, [xn, count](const Tensor<T>& g) {
    if (xn->requires_grad) xn->accumulate(Tensor<T>::full(xn->value.shape(), g.item() / static_cast<T>(count)));
  });
}

template <class T>
Var<T> l1_loss(const Var<T>& pred, const Var<T>& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("l1_loss: " + pred.shape().str() + " vs " + target.shape().str());
  }
  const std::size_t count = pred.value().numel();
  if (count == 0) throw DimensionError("l1_loss of empty tensors");
  const T* pp = pred.value().ptr();
  const T* tp = target.value().ptr();
  // Double accumulator keeps the float loss independent of summation drift.
  double acc = 0;
  for (std::size_t i = 0; i < count; ++i) acc += std::abs(static_cast<double>(pp[i]) - tp[i]);
  NodePtr<T> pn = pred.node(), tn = target.node();
  return emit<T>("l1_loss", Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(count))),
                 {&pred, &target}, [pn, tn, count](const Tensor<T>& g) {
                   const T scale = g.item() / static_cast<T>(count);
                   Tensor<T> gp(pn->value.shape());
                   T* dst = gp.mutable_ptr();
                   const T* a = pn->value.ptr();
                   const T* b = tn->value.ptr();
                   for (std::size_t i = 0; i < count; ++i) {
                     const T d = a[i] - b[i];
                     dst[i] = d > T(0) ? scale : (d < T(0) ? -scale : T(0));
                   }
                   if (tn->requires_grad) {
                     Tensor<T> gt(gp.shape());
                     T* gtp = gt.mutable_ptr();
                     for (std::size_t i = 0; i < count; ++i) gtp[i] = -dst[i];
                     tn->accumulate(gt);
                   }
                   if (pn->requires_grad) pn->accumulate(gp);
                 });
}

#define EARFA_INSTANTIATE(T)                                                                       \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>*, const kernels::ConvParams&); \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                      \
  template Var<T> channel_shift(const Var<T>&, int);                                               \
  template Var<T> pixel_shuffle(const Var<T>&, int);                                               \
  template Var<T> sigmoid(const Var<T>&);                                                          \
  template Var<T> relu(const Var<T>&);                                                             \
  template Var<T> add(const Var<T>&, const Var<T>&);                                               \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                               \
  template std::pair<Var<T>, Var<T>> split_channels(const Var<T>&, int);                           \
  template Var<T> channel_var(const Var<T>&);                                                      \
  template Var<T> channel_mean(const Var<T>&);                                                     \
  template Var<T> gaussian_entropy(const Var<T>&, T);                                              \
  template Var<T> sum(const Var<T>&);                                                              \
  template Var<T> mean(const Var<T>&);                                                             \
  template Var<T> l1_loss(const Var<T>&, const Var<T>&);

EARFA_INSTANTIATE(float)
EARFA_INSTANTIATE(double)

#undef EARFA_INSTANTIATE

}  // namespace ag

template struct Node<float>;
template struct Node<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace earfa
