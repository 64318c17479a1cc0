#pragma once

// EARFA: 3x3 shallow-feature conv -> n_dabs DABs -> 3x3 conv to 3*scale^2
// channels -> pixel shuffle.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "earfa/blocks.hpp"
#include "earfa/weights.hpp"

namespace earfa {

enum class Variant { full, light, custom };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct ModelConfig {
  int scale = 4;
  int n_dabs = 12;
  int width = 96;
  int r_c = 8;
  int k_dw = 5;
  int k_ddw = 7;
  int dilation = 3;
  int k_sgfn = 5;
  double sgfn_ratio = 2.0;
  Variant variant = Variant::full;
  SpatialAttention spatial = SpatialAttention::slka;
  ChannelAttention channel = ChannelAttention::ea;

  // Shipped presets. full and light fix block count, kernel sizes, dilation
  // and r_c; width and sgfn_ratio come from the parameter-count calibration.
  static ModelConfig earfa(int scale = 4);
  static ModelConfig earfa_light(int scale = 4);
  // Desk-scale model for tests and demos: 2 DABs of width 16, light kernels.
  static ModelConfig tiny(int scale = 2);

  void validate() const;
  int sgfn_hidden() const;
  BlockConfig block() const;

  // One key=value per line in a fixed order; the basis of hash().
  std::string canonical() const;
  std::uint64_t hash() const;
};

// Flat key=value text. '#' starts a comment. `variant` selects the preset the
// other keys override (custom starts from the full preset's values). Unknown
// keys throw ConfigError carrying the key name.
ModelConfig parse_model_config(std::string_view text);
ModelConfig load_model_config(const std::filesystem::path& path);
void save_model_config(const ModelConfig& cfg, const std::filesystem::path& path);

ParamList declare_params(const ModelConfig& cfg);

// Truncated normal (+-2 sigma, sigma 0.02) kernels, zero biases, unit LN scale.
WeightStore init_weights(const ModelConfig& cfg, std::uint64_t seed);

// Checks that `store` holds exactly the declared parameters with the declared
// shapes and was written for this config; throws LoadError otherwise.
void check_weights(const ModelConfig& cfg, const WeightStore& store);

template <class T>
ParamMap<T> bind_params(const WeightStore& store, Tape<T>& tape, bool requires_grad);

template <class T>
Var<T> model_forward(const Var<T>& x, const ParamMap<T>& params, const ModelConfig& cfg);

// Inference without gradient bookkeeping. x is (n, 3, h, w) in [0, 1].
TensorF forward(const TensorF& x, const ModelConfig& cfg, const WeightStore& store);

// Mean of the forward pass over the 8 dihedral transforms, each mapped back.
TensorF geometric_self_ensemble(const TensorF& x, const ModelConfig& cfg, const WeightStore& store);

long long count_params(const ModelConfig& cfg);
// Convolution multiply-accumulates for an LR input of lr_h x lr_w. Per-image
// maps on pooled vectors (EA Inc, SE) do not scale with positions and are
// left out.
long long count_multiadds_lr(const ModelConfig& cfg, long long lr_h, long long lr_w);
// Same, for the LR size that upscales to out_h x out_w.
long long count_multiadds(const ModelConfig& cfg, long long out_h = 720, long long out_w = 1280);

struct CalibrationRow {
  int width;
  double sgfn_ratio;
  long long params;
  double rel_error;
};

// Sweeps width x sgfn_ratio for a preset and reports |params - target|.
std::vector<CalibrationRow> calibration_sweep(Variant variant, int scale, long long target_params);

}  // namespace earfa
