#include "earfa/blocks.hpp"

namespace earfa {

std::string to_string(SpatialAttention a) {
  switch (a) {
    case SpatialAttention::slka: return "slka";
    case SpatialAttention::lka: return "lka";
    case SpatialAttention::none: return "none";
  }
  return "?";
}

std::string to_string(ChannelAttention a) {
  switch (a) {
    case ChannelAttention::ea: return "ea";
    case ChannelAttention::se: return "se";
    case ChannelAttention::none: return "none";
  }
  return "?";
}

SpatialAttention parse_spatial_attention(const std::string& s) {
  if (s == "slka") return SpatialAttention::slka;
  if (s == "lka") return SpatialAttention::lka;
  if (s == "none") return SpatialAttention::none;
  throw ConfigError("unknown spatial attention '" + s + "' (expected slka, lka or none)", "spatial");
}

ChannelAttention parse_channel_attention(const std::string& s) {
  if (s == "ea") return ChannelAttention::ea;
  if (s == "se") return ChannelAttention::se;
  if (s == "none") return ChannelAttention::none;
  throw ConfigError("unknown channel attention '" + s + "' (expected ea, se or none)", "channel");
}

void BlockConfig::validate() const {
  auto odd_kernel = [](int k, const char* key) {
    if (k < 1 || k % 2 == 0) throw ConfigError(std::string(key) + " must be a positive odd kernel size", key);
  };
  if (channels < 1) throw ConfigError("width must be >= 1", "width");
  if (compression < 1) throw ConfigError("r_c must be >= 1", "r_c");
  if (channels < compression) {
    throw ConfigError("width " + std::to_string(channels) + " is smaller than r_c " + std::to_string(compression),
                      "r_c");
  }
  odd_kernel(k_dw, "k_dw");
  odd_kernel(k_ddw, "k_ddw");
  odd_kernel(k_sgfn, "k_sgfn");
  if (dilation < 1) throw ConfigError("dilation must be >= 1", "dilation");
  if (hidden < 2 || hidden % 2 != 0) throw ConfigError("SGFN hidden width must be even", "sgfn_ratio");
  if (shift_px < 1) throw ConfigError("shift_px must be >= 1", "shift_px");
  if (spatial == SpatialAttention::slka && channels < 5) {
    throw ConfigError("channel shifting needs at least 5 channels", "width");
  }
}

namespace {

void declare_conv(ParamList& out, const std::string& prefix, int cout, int cin_per_group, int k, bool spatial) {
  const long long macs = spatial ? static_cast<long long>(cout) * cin_per_group * k * k : 0;
  out.push_back({prefix + ".weight", Shape{cout, cin_per_group, k, k}, Init::kernel, macs});
  out.push_back({prefix + ".bias", Shape{1, cout, 1, 1}, Init::zeros, 0});
}

kernels::ConvParams pointwise() { return {}; }

kernels::ConvParams depthwise(int channels, int k, int dilation) {
  return {1, kernels::same_padding(k, dilation), dilation, channels};
}

template <class T>
Var<T> conv(const Var<T>& x, const ParamMap<T>& p, const std::string& name, const kernels::ConvParams& cp) {
  return ag::conv2d(x, p[name + ".weight"], &p[name + ".bias"], cp);
}

template <class T>
Var<T> norm(const Var<T>& x, const ParamMap<T>& p, const std::string& name, const BlockConfig& cfg) {
  return ag::layer_norm(x, p[name + ".gamma"], p[name + ".beta"], static_cast<T>(cfg.ln_eps));
}

void require_channels(const Shape& s, const BlockConfig& cfg, const char* block) {
  if (s.c != cfg.channels) {
    throw DimensionError(std::string(block) + ": expected " + std::to_string(cfg.channels) + " channels, got " +
                         s.str());
  }
}

}  // namespace

template <class T>
const Var<T>& ParamMap<T>::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw LoadError("missing parameter '" + name + "'");
  return it->second;
}

void declare_layer_norm(ParamList& out, const std::string& prefix, int channels) {
  out.push_back({prefix + ".gamma", Shape{1, channels, 1, 1}, Init::ones, 0});
  out.push_back({prefix + ".beta", Shape{1, channels, 1, 1}, Init::zeros, 0});
}

void declare_slka(ParamList& out, const std::string& prefix, const BlockConfig& cfg) {
  const int c = cfg.channels;
  declare_conv(out, prefix + ".sc", c, c, 1, true);
  declare_conv(out, prefix + ".dw", c, 1, cfg.k_dw, true);
  declare_conv(out, prefix + ".ddw", c, 1, cfg.k_ddw, true);
}

void declare_lka(ParamList& out, const std::string& prefix, const BlockConfig& cfg) {
  const int c = cfg.channels;
  declare_conv(out, prefix + ".pw", c, c, 1, true);
  declare_conv(out, prefix + ".dw", c, 1, cfg.k_dw, true);
  declare_conv(out, prefix + ".ddw", c, 1, cfg.k_ddw, true);
}

void declare_ea(ParamList& out, const std::string& prefix, const BlockConfig& cfg) {
  declare_conv(out, prefix + ".dec", cfg.reduced(), cfg.channels, 1, true);
  declare_conv(out, prefix + ".inc", cfg.channels, cfg.reduced(), 1, false);
}

void declare_se(ParamList& out, const std::string& prefix, const BlockConfig& cfg) {
  declare_conv(out, prefix + ".fc1", cfg.reduced(), cfg.channels, 1, false);
  declare_conv(out, prefix + ".fc2", cfg.channels, cfg.reduced(), 1, false);
}

void declare_sgfn(ParamList& out, const std::string& prefix, const BlockConfig& cfg) {
  const int half = cfg.hidden / 2;
  declare_conv(out, prefix + ".fc1", cfg.hidden, cfg.channels, 1, true);
  declare_conv(out, prefix + ".dw", half, 1, cfg.k_sgfn, true);
  declare_conv(out, prefix + ".fc2", cfg.channels, half, 1, true);
}

void declare_dab(ParamList& out, const std::string& prefix, const BlockConfig& cfg) {
  cfg.validate();
  if (cfg.spatial != SpatialAttention::none) {
    declare_layer_norm(out, prefix + ".norm1", cfg.channels);
    if (cfg.spatial == SpatialAttention::slka) declare_slka(out, prefix + ".slka", cfg);
    else declare_lka(out, prefix + ".lka", cfg);
  }
  declare_layer_norm(out, prefix + ".norm2", cfg.channels);
  declare_sgfn(out, prefix + ".ffn1", cfg);
  if (cfg.channel != ChannelAttention::none) {
    declare_layer_norm(out, prefix + ".norm3", cfg.channels);
    if (cfg.channel == ChannelAttention::ea) declare_ea(out, prefix + ".ea", cfg);
    else declare_se(out, prefix + ".se", cfg);
  }
  declare_layer_norm(out, prefix + ".norm4", cfg.channels);
  declare_sgfn(out, prefix + ".ffn2", cfg);
}

template <class T>
Var<T> ea_channel_weights(const Var<T>& x, const ParamMap<T>& p, const std::string& prefix,
                          const BlockConfig& cfg) {
  require_channels(x.shape(), cfg, "ea");
  if (cfg.reduced() < 1) throw ConfigError("EA reduction leaves no channels", "r_c");
  Var<T> reduced = conv(x, p, prefix + ".dec", pointwise());
  Var<T> entropy = ag::gaussian_entropy(ag::channel_var(reduced), static_cast<T>(cfg.entropy_eps));
  // Inc acts on the (n, c/r_c, 1, 1) vector as a 1x1 convolution.
  return conv(ag::sigmoid(entropy), p, prefix + ".inc", pointwise());
}

template <class T>
Var<T> ea_forward(const Var<T>& x, const ParamMap<T>& p, const std::string& prefix, const BlockConfig& cfg) {
  return ag::mul(x, ea_channel_weights(x, p, prefix, cfg));
}

template <class T>
Var<T> slka_forward(const Var<T>& x, const ParamMap<T>& p, const std::string& prefix, const BlockConfig& cfg) {
  require_channels(x.shape(), cfg, "slka");
  const int c = cfg.channels;
  Var<T> attn = conv(ag::channel_shift(x, cfg.shift_px), p, prefix + ".sc", pointwise());
  attn = conv(attn, p, prefix + ".dw", depthwise(c, cfg.k_dw, 1));
  attn = conv(attn, p, prefix + ".ddw", depthwise(c, cfg.k_ddw, cfg.dilation));
  return ag::mul(attn, x);
}

template <class T>
Var<T> lka_forward(const Var<T>& x, const ParamMap<T>& p, const std::string& prefix, const BlockConfig& cfg) {
  require_channels(x.shape(), cfg, "lka");
  const int c = cfg.channels;
  Var<T> attn = conv(x, p, prefix + ".pw", pointwise());
  attn = conv(attn, p, prefix + ".dw", depthwise(c, cfg.k_dw, 1));
  attn = conv(attn, p, prefix + ".ddw", depthwise(c, cfg.k_ddw, cfg.dilation));
  return ag::mul(attn, x);
}

template <class T>
Var<T> se_forward(const Var<T>& x, const ParamMap<T>& p, const std::string& prefix, const BlockConfig& cfg) {
  require_channels(x.shape(), cfg, "se");
  if (cfg.reduced() < 1) throw ConfigError("SE reduction leaves no channels", "r_c");
  Var<T> s = ag::relu(conv(ag::channel_mean(x), p, prefix + ".fc1", pointwise()));
  s = ag::sigmoid(conv(s, p, prefix + ".fc2", pointwise()));
  return ag::mul(x, s);
}

template <class T>
Var<T> sgfn_forward(const Var<T>& x, const ParamMap<T>& p, const std::string& prefix, const BlockConfig& cfg) {
  require_channels(x.shape(), cfg, "sgfn");
  if (cfg.hidden % 2 != 0) throw ConfigError("SGFN hidden width must be even", "sgfn_ratio");
  const int half = cfg.hidden / 2;
  Var<T> hidden = conv(x, p, prefix + ".fc1", pointwise());
  auto [value, gate] = ag::split_channels(hidden, half);
  gate = conv(gate, p, prefix + ".dw", depthwise(half, cfg.k_sgfn, 1));
  return conv(ag::mul(value, gate), p, prefix + ".fc2", pointwise());
}

template <class T>
Var<T> dab_forward(const Var<T>& x, const ParamMap<T>& p, const std::string& prefix, const BlockConfig& cfg) {
  if (!x.value().all_finite()) throw NumericError("dab_forward: non-finite input");
  Var<T> t = x;
  if (cfg.spatial == SpatialAttention::slka) {
    t = ag::add(slka_forward(norm(t, p, prefix + ".norm1", cfg), p, prefix + ".slka", cfg), t);
  } else if (cfg.spatial == SpatialAttention::lka) {
    t = ag::add(lka_forward(norm(t, p, prefix + ".norm1", cfg), p, prefix + ".lka", cfg), t);
  }
  Var<T> m = ag::add(sgfn_forward(norm(t, p, prefix + ".norm2", cfg), p, prefix + ".ffn1", cfg), t);
  if (cfg.channel == ChannelAttention::ea) {
    m = ag::add(ea_forward(norm(m, p, prefix + ".norm3", cfg), p, prefix + ".ea", cfg), m);
  } else if (cfg.channel == ChannelAttention::se) {
    m = ag::add(se_forward(norm(m, p, prefix + ".norm3", cfg), p, prefix + ".se", cfg), m);
  }
  return ag::add(sgfn_forward(norm(m, p, prefix + ".norm4", cfg), p, prefix + ".ffn2", cfg), m);
}

#define EARFA_INSTANTIATE(T)                                                                                  \
  template class ParamMap<T>;                                                                                 \
  template Var<T> ea_channel_weights(const Var<T>&, const ParamMap<T>&, const std::string&, const BlockConfig&); \
  template Var<T> ea_forward(const Var<T>&, const ParamMap<T>&, const std::string&, const BlockConfig&);      \
  template Var<T> slka_forward(const Var<T>&, const ParamMap<T>&, const std::string&, const BlockConfig&);    \
  template Var<T> lka_forward(const Var<T>&, const ParamMap<T>&, const std::string&, const BlockConfig&);     \
  template Var<T> se_forward(const Var<T>&, const ParamMap<T>&, const std::string&, const BlockConfig&);      \
  template Var<T> sgfn_forward(const Var<T>&, const ParamMap<T>&, const std::string&, const BlockConfig&);    \
  template Var<T> dab_forward(const Var<T>&, const ParamMap<T>&, const std::string&, const BlockConfig&);

EARFA_INSTANTIATE(float)
EARFA_INSTANTIATE(double)

#undef EARFA_INSTANTIATE

}  // namespace earfa
