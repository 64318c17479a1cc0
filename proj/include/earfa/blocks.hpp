#pragma once

// Building blocks of the dual-attention block (DAB):
//
//   x~t = SLKA(LN(xt)) + xt
//   xm  = SGFN(LN(x~t)) + x~t
//   x~m = EA(LN(xm)) + xm
//   xo  = SGFN(LN(x~m)) + x~m
//
// plus the LKA and SE blocks used as ablation substitutes for SLKA and EA.
// Parameters are looked up by name from a ParamMap so the same code runs for
// training (tape leaves) and inference (constants).

#include <map>
#include <string>
#include <vector>

#include "earfa/autograd.hpp"

namespace earfa {

enum class SpatialAttention { slka, lka, none };
enum class ChannelAttention { ea, se, none };

std::string to_string(SpatialAttention a);
std::string to_string(ChannelAttention a);
SpatialAttention parse_spatial_attention(const std::string& s);
ChannelAttention parse_channel_attention(const std::string& s);

struct BlockConfig {
  int channels = 64;
  int compression = 8;  // EA / SE channel reduction r_c
  int k_dw = 5;
  int k_ddw = 7;
  int dilation = 3;
  int k_sgfn = 5;
  int hidden = 128;  // SGFN expansion width, even
  int shift_px = 1;
  double ln_eps = 1e-6;
  double entropy_eps = 1e-5;
  SpatialAttention spatial = SpatialAttention::slka;
  ChannelAttention channel = ChannelAttention::ea;

  // Throws ConfigError on invalid combinations.
  void validate() const;
  int reduced() const { return channels / compression; }
  // (k_dw - 1) + dilation * (k_ddw - 1) + 1 per axis.
  int slka_receptive_field() const { return (k_dw - 1) + dilation * (k_ddw - 1) + 1; }
};

enum class Init { kernel, zeros, ones };

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init;
  // Multiply-accumulates per output position, 0 for per-image maps.
  long long macs_per_position = 0;
};

using ParamList = std::vector<ParamSpec>;

void declare_layer_norm(ParamList& out, const std::string& prefix, int channels);
void declare_slka(ParamList& out, const std::string& prefix, const BlockConfig& cfg);
void declare_lka(ParamList& out, const std::string& prefix, const BlockConfig& cfg);
void declare_ea(ParamList& out, const std::string& prefix, const BlockConfig& cfg);
void declare_se(ParamList& out, const std::string& prefix, const BlockConfig& cfg);
void declare_sgfn(ParamList& out, const std::string& prefix, const BlockConfig& cfg);
void declare_dab(ParamList& out, const std::string& prefix, const BlockConfig& cfg);

template <class T>
class ParamMap {
 public:
  void set(const std::string& name, Var<T> v) { vars_[name] = std::move(v); }
  const Var<T>& operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return vars_.count(name) != 0; }
  const std::map<std::string, Var<T>>& vars() const { return vars_; }

 private:
  std::map<std::string, Var<T>> vars_;
};

template <class T>
Var<T> ea_forward(const Var<T>& x, const ParamMap<T>& p, const std::string& prefix, const BlockConfig& cfg);
template <class T>
Var<T> slka_forward(const Var<T>& x, const ParamMap<T>& p, const std::string& prefix, const BlockConfig& cfg);
template <class T>
Var<T> lka_forward(const Var<T>& x, const ParamMap<T>& p, const std::string& prefix, const BlockConfig& cfg);
template <class T>
Var<T> se_forward(const Var<T>& x, const ParamMap<T>& p, const std::string& prefix, const BlockConfig& cfg);
template <class T>
Var<T> sgfn_forward(const Var<T>& x, const ParamMap<T>& p, const std::string& prefix, const BlockConfig& cfg);
template <class T>
Var<T> dab_forward(const Var<T>& x, const ParamMap<T>& p, const std::string& prefix, const BlockConfig& cfg);

// EA's realized per-channel weights, shape (n, c, 1, 1).
template <class T>
Var<T> ea_channel_weights(const Var<T>& x, const ParamMap<T>& p, const std::string& prefix,
                          const BlockConfig& cfg);

}  // namespace earfa
