#include "earfa/model.hpp"

#include <cmath>
#include <random>

namespace earfa {

namespace {

constexpr double kInitStd = 0.02;

std::string body_prefix(int i) { return "body." + std::to_string(i); }

}  // namespace

ParamList declare_params(const ModelConfig& cfg) {
  cfg.validate();
  const BlockConfig block = cfg.block();
  ParamList out;
  const int c = cfg.width;
  const int out_ch = 3 * cfg.scale * cfg.scale;
  out.push_back({"head.weight", Shape{c, 3, 3, 3}, Init::kernel, static_cast<long long>(c) * 3 * 9});
  out.push_back({"head.bias", Shape{1, c, 1, 1}, Init::zeros, 0});
  for (int i = 0; i < cfg.n_dabs; ++i) declare_dab(out, body_prefix(i), block);
  out.push_back({"tail.weight", Shape{out_ch, c, 3, 3}, Init::kernel, static_cast<long long>(out_ch) * c * 9});
  out.push_back({"tail.bias", Shape{1, out_ch, 1, 1}, Init::zeros, 0});
  return out;
}

WeightStore init_weights(const ModelConfig& cfg, std::uint64_t seed) {
  WeightStore store(cfg.hash());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const ParamSpec& spec : declare_params(cfg)) {
    TensorF t(spec.shape);
    switch (spec.init) {
      case Init::zeros: break;
      case Init::ones: t = TensorF::ones(spec.shape); break;
      case Init::kernel:
        for (float& v : t.mutable_data()) {
          double z = normal(rng);
          while (std::abs(z) > 2.0) z = normal(rng);
          v = static_cast<float>(z * kInitStd);
        }
        break;
    }
    store.set(spec.name, std::move(t));
  }
  return store;
}

void check_weights(const ModelConfig& cfg, const WeightStore& store) {
  if (store.config_hash() != cfg.hash()) throw LoadError("weights were written for a different model config");
  const ParamList specs = declare_params(cfg);
  if (store.size() != specs.size()) {
    throw LoadError("weight store holds " + std::to_string(store.size()) + " tensors, config declares " +
                    std::to_string(specs.size()));
  }
  for (const ParamSpec& spec : specs) {
    const TensorF& t = store.at(spec.name);
    if (t.shape() != spec.shape) {
      throw LoadError("tensor '" + spec.name + "' has shape " + t.shape().str() + ", expected " + spec.shape.str());
    }
  }
}

template <class T>
ParamMap<T> bind_params(const WeightStore& store, Tape<T>& tape, bool requires_grad) {
  ParamMap<T> params;
  for (const auto& [name, t] : store.entries()) {
    if constexpr (std::is_same_v<T, float>) {
      params.set(name, tape.leaf(t, requires_grad));
    } else {
      params.set(name, tape.leaf(t.template cast<T>(), requires_grad));
    }
  }
  return params;
}

template <class T>
Var<T> model_forward(const Var<T>& x, const ParamMap<T>& params, const ModelConfig& cfg) {
  const Shape s = x.shape();
  if (s.c != 3) throw DimensionError("model input must have 3 channels, got " + s.str());
  for (T v : x.value().data()) {
    if (!(v >= T(0) && v <= T(1))) throw ValidationError("model input must lie in [0, 1]");
  }
  const BlockConfig block = cfg.block();
  const kernels::ConvParams conv3{1, 1, 1, 1};
  Var<T> feat = ag::conv2d(x, params["head.weight"], &params["head.bias"], conv3);
  for (int i = 0; i < cfg.n_dabs; ++i) feat = dab_forward(feat, params, body_prefix(i), block);
  Var<T> up = ag::conv2d(feat, params["tail.weight"], &params["tail.bias"], conv3);
  return ag::pixel_shuffle(up, cfg.scale);
}

TensorF forward(const TensorF& x, const ModelConfig& cfg, const WeightStore& store) {
  check_weights(cfg, store);
  Tape<float> tape(false);
  ParamMap<float> params = bind_params(store, tape, false);
  return model_forward(tape.constant(x), params, cfg).value();
}

TensorF geometric_self_ensemble(const TensorF& x, const ModelConfig& cfg, const WeightStore& store) {
  check_weights(cfg, store);
  Tape<float> tape(false);
  ParamMap<float> params = bind_params(store, tape, false);
  const Shape s = x.shape();
  TensorF acc(Shape{s.n, 3, s.h * cfg.scale, s.w * cfg.scale});
  for (int op = 0; op < 8; ++op) {
    const TensorF y = model_forward(tape.constant(kernels::dihedral(x, op)), params, cfg).value();
    const TensorF back = kernels::dihedral(y, kernels::dihedral_inverse(op));
    acc = kernels::add(acc, back);
  }
  float* p = acc.mutable_ptr();
  for (std::size_t i = 0; i < acc.numel(); ++i) p[i] /= 8.0f;
  return acc;
}

long long count_params(const ModelConfig& cfg) {
  long long total = 0;
  for (const ParamSpec& spec : declare_params(cfg)) total += static_cast<long long>(spec.shape.numel());
  return total;
}

long long count_multiadds_lr(const ModelConfig& cfg, long long lr_h, long long lr_w) {
  long long per_position = 0;
  for (const ParamSpec& spec : declare_params(cfg)) per_position += spec.macs_per_position;
  return per_position * lr_h * lr_w;
}

long long count_multiadds(const ModelConfig& cfg, long long out_h, long long out_w) {
  return count_multiadds_lr(cfg, out_h / cfg.scale, out_w / cfg.scale);
}

std::vector<CalibrationRow> calibration_sweep(Variant variant, int scale, long long target_params) {
  std::vector<CalibrationRow> rows;
  for (int width : {48, 64, 96}) {
    for (double ratio : {2.0, 8.0 / 3.0, 4.0}) {
      ModelConfig cfg = variant == Variant::light ? ModelConfig::earfa_light(scale) : ModelConfig::earfa(scale);
      cfg.width = width;
      cfg.sgfn_ratio = ratio;
      const long long p = count_params(cfg);
      rows.push_back({width, ratio, p, std::abs(static_cast<double>(p - target_params)) / target_params});
    }
  }
  return rows;
}

template ParamMap<float> bind_params(const WeightStore&, Tape<float>&, bool);
template ParamMap<double> bind_params(const WeightStore&, Tape<double>&, bool);
template Var<float> model_forward(const Var<float>&, const ParamMap<float>&, const ModelConfig&);
template Var<double> model_forward(const Var<double>&, const ParamMap<double>&, const ModelConfig&);

}  // namespace earfa
