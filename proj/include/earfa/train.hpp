#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "earfa/dataset.hpp"
#include "earfa/model.hpp"

namespace earfa::train {

struct TrainConfig {
  int batch = 64;
  long long iters = 500000;
  double lr0 = 5e-4;
  std::vector<long long> milestones{250000, 400000, 450000, 475000};
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  int patch = 64;  // LR side length
  bool augment = true;
  long long eval_every = 1000;
  long long log_every = 100;

  // lr0 is 5e-4 for the full model and 1e-3 for light.
  static TrainConfig for_variant(Variant v);
  // Desk-scale recipe for tiny and custom models: 2000 steps of 16 32x32
  // patches at lr 4e-3, halved once at step 1500.
  static TrainConfig toy();
  void validate() const;
  std::string describe() const;
};

// lr0 halved once for every milestone <= iter.
double lr_at(long long iter, const TrainConfig& cfg);

struct AdamMoments {
  TensorF m;
  TensorF v;
};

class Adam {
 public:
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // One bias-corrected update of every parameter that has a gradient.
  // Throws NumericError naming the parameter on a non-finite gradient.
  void step(WeightStore& params, const std::map<std::string, TensorF>& grads, double lr);

  long long steps() const { return t_; }
  void set_steps(long long t) { t_ = t; }
  std::map<std::string, AdamMoments>& moments() { return moments_; }
  const std::map<std::string, AdamMoments>& moments() const { return moments_; }

 private:
  double beta1_, beta2_, eps_;
  long long t_ = 0;
  std::map<std::string, AdamMoments> moments_;
};

struct EvalResult {
  double psnr = 0;  // mean over images, Y channel, shave = scale
  double ssim = 0;
  double bicubic_psnr = 0;
  double bicubic_ssim = 0;
};

// Model and bicubic upscaling scored against the HR images.
EvalResult evaluate(const ModelConfig& cfg, const WeightStore& weights, const std::vector<data::ImagePair>& pairs);

class Trainer {
 public:
  // Throws ValidationError when `train_set` is empty. `val_set` may be empty,
  // in which case evaluation is skipped.
  Trainer(ModelConfig model, TrainConfig cfg, std::vector<data::ImagePair> train_set,
          std::vector<data::ImagePair> val_set = {});

  // One optimizer step on a freshly sampled batch; returns the batch loss.
  double step();

  // Runs until cfg.iters. Writes the CSV log (iter,lr,loss,eval_psnr) and
  // short progress lines when the streams are given. Returns per-step losses.
  std::vector<double> run(std::ostream* csv_log = nullptr, std::ostream* progress = nullptr);

  EvalResult evaluate_now() const { return evaluate(model_, weights_, val_); }

  // Writes `path` (weights) and `path` + ".opt" (optimizer state sidecar).
  void save_checkpoint(const std::filesystem::path& path) const;
  // Restores weights, moments, iteration, RNG state and best PSNR.
  void load_checkpoint(const std::filesystem::path& path);

  long long iteration() const { return iter_; }
  double best_psnr() const { return best_psnr_; }
  const WeightStore& weights() const { return weights_; }
  const WeightStore& best_weights() const { return best_weights_; }
  const ModelConfig& model() const { return model_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  ModelConfig model_;
  TrainConfig cfg_;
  std::vector<data::ImagePair> train_;
  std::vector<data::ImagePair> val_;
  WeightStore weights_;
  WeightStore best_weights_;
  Adam adam_;
  std::mt19937_64 rng_;
  long long iter_ = 0;
  double best_psnr_ = -1.0;
};

std::filesystem::path optimizer_sidecar(const std::filesystem::path& weights_path);

struct AblationVariant {
  std::string name;
  SpatialAttention spatial;
  ChannelAttention channel;
};

// none, SLKA only, EA only, LKA + EA, SLKA + SE, SLKA + EA.
std::vector<AblationVariant> ablation_variants();

struct AblationRow {
  AblationVariant variant;
  long long params = 0;
  long long multiadds = 0;
  double final_loss = 0;
  EvalResult eval;
};

// Trains every variant from `base` with the same seed and data order.
std::vector<AblationRow> ablate(const ModelConfig& base, const TrainConfig& cfg,
                                const std::vector<data::ImagePair>& train_set,
                                const std::vector<data::ImagePair>& val_set, std::ostream* progress = nullptr);

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);

}  // namespace earfa::train
