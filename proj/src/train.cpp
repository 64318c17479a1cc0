#include "earfa/train.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "earfa/autograd.hpp"
#include "earfa/image.hpp"
#include "earfa/metrics.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace earfa::train {

namespace fs = std::filesystem;

namespace {

// Every step allocates and frees the same multi-megabyte activations. glibc
// serves those with mmap and hands them back each time, so a third of the run
// went to page faults. Keeping them on the heap removes that.
void keep_heap_resident() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)once;
#endif
}

}  // namespace

TrainConfig TrainConfig::for_variant(Variant v) {
  TrainConfig cfg;
  if (v == Variant::light) cfg.lr0 = 1e-3;
  return cfg;
}

TrainConfig TrainConfig::toy() {
  TrainConfig cfg;
  cfg.batch = 16;
  cfg.iters = 2000;
  cfg.lr0 = 4e-3;
  cfg.milestones = {1500};
  cfg.patch = 32;
  return cfg;
}

void TrainConfig::validate() const {
  if (batch < 1) throw ConfigError("batch must be >= 1", "batch");
  if (iters < 1) throw ConfigError("iters must be >= 1", "iters");
  if (!(lr0 > 0) || !std::isfinite(lr0)) throw ConfigError("lr0 must be positive", "lr0");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (milestones[i] < 1 || milestones[i] >= iters) {
      throw ConfigError("milestone " + std::to_string(milestones[i]) + " must lie in [1, iters)", "milestones");
    }
    if (i > 0 && milestones[i] <= milestones[i - 1]) {
      throw ConfigError("milestones must be strictly increasing", "milestones");
    }
  }
  if (!(beta1 >= 0 && beta1 < 1)) throw ConfigError("beta1 must lie in [0, 1)", "beta1");
  if (!(beta2 >= 0 && beta2 < 1)) throw ConfigError("beta2 must lie in [0, 1)", "beta2");
  if (!(eps > 0)) throw ConfigError("eps must be positive", "eps");
  if (patch < 1) throw ConfigError("patch must be >= 1", "patch");
  if (eval_every < 0) throw ConfigError("eval_every must be >= 0", "eval_every");
  if (log_every < 1) throw ConfigError("log_every must be >= 1", "log_every");
}

std::string TrainConfig::describe() const {
  std::ostringstream os;
  os << "batch=" << batch << "\niters=" << iters << "\nlr0=" << lr0 << "\nmilestones=";
  for (std::size_t i = 0; i < milestones.size(); ++i) os << (i ? "," : "") << milestones[i];
  os << "\nbeta1=" << beta1 << "\nbeta2=" << beta2 << "\neps=" << eps << "\nseed=" << seed << "\npatch=" << patch
     << "\naugment=" << (augment ? 1 : 0) << "\neval_every=" << eval_every << "\nlog_every=" << log_every << "\n";
  return os.str();
}

double lr_at(long long iter, const TrainConfig& cfg) {
  int passed = 0;
  for (long long m : cfg.milestones) passed += iter >= m ? 1 : 0;
  return std::ldexp(cfg.lr0, -passed);
}

void Adam::step(WeightStore& params, const std::map<std::string, TensorF>& grads, double lr) {
  for (const auto& [name, g] : grads) {
    for (float v : g.data()) {
      if (!std::isfinite(v)) throw NumericError("non-finite gradient for parameter '" + name + "'");
    }
    if (g.shape() != params.at(name).shape()) {
      throw DimensionError("gradient shape mismatch for '" + name + "'");
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& [name, g] : grads) {
    TensorF& p = params.at(name);
    auto it = moments_.find(name);
    if (it == moments_.end()) {
      it = moments_.emplace(name, AdamMoments{TensorF(p.shape()), TensorF(p.shape())}).first;
    }
    float* pp = p.mutable_ptr();
    float* m = it->second.m.mutable_ptr();
    float* v = it->second.v.mutable_ptr();
    const float* gp = g.ptr();
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double gi = gp[i];
      const double mi = beta1_ * m[i] + (1.0 - beta1_) * gi;
      const double vi = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps_);
      pp[i] = static_cast<float>(pp[i] - update);
    }
  }
}

namespace {

TensorF luma(const TensorF& rgb) { return image::rgb_to_y(image::quantize8(rgb)); }

std::vector<std::pair<std::string, TensorF>> collect_grads(const ParamMap<float>& params) {
  std::vector<std::pair<std::string, TensorF>> out;
  for (const auto& [name, var] : params.vars()) out.emplace_back(name, var.grad());
  return out;
}

}  // namespace

EvalResult evaluate(const ModelConfig& cfg, const WeightStore& weights, const std::vector<data::ImagePair>& pairs) {
  EvalResult r;
  if (pairs.empty()) return r;
  for (const data::ImagePair& p : pairs) {
    const TensorF hr = luma(p.hr);
    const TensorF sr = luma(forward(p.lr, cfg, weights));
    const TensorF bic = luma(image::bicubic_resize(p.lr, p.scale));
    r.psnr += metrics::psnr(sr, hr, p.scale);
    r.ssim += metrics::ssim(sr, hr, p.scale);
    r.bicubic_psnr += metrics::psnr(bic, hr, p.scale);
    r.bicubic_ssim += metrics::ssim(bic, hr, p.scale);
  }
  const double n = static_cast<double>(pairs.size());
  r.psnr /= n;
  r.ssim /= n;
  r.bicubic_psnr /= n;
  r.bicubic_ssim /= n;
  return r;
}

Trainer::Trainer(ModelConfig model, TrainConfig cfg, std::vector<data::ImagePair> train_set,
                 std::vector<data::ImagePair> val_set)
    : model_(std::move(model)),
      cfg_(std::move(cfg)),
      train_(std::move(train_set)),
      val_(std::move(val_set)),
      adam_(cfg_.beta1, cfg_.beta2, cfg_.eps),
      rng_(cfg_.seed) {
  keep_heap_resident();
  model_.validate();
  cfg_.validate();
  if (train_.empty()) throw ValidationError("training set is empty");
  for (const auto& p : train_) {
    if (p.scale != model_.scale) {
      throw ConfigError("training pair '" + p.id + "' has scale " + std::to_string(p.scale), "scale");
    }
  }
  weights_ = init_weights(model_, cfg_.seed);
  best_weights_ = weights_;
}

double Trainer::step() {
  const data::Batch batch = data::sample_batch(train_, cfg_.batch, cfg_.patch, cfg_.augment, rng_);
  Tape<float> tape;
  ParamMap<float> params = bind_params(weights_, tape, true);
  Var<float> pred = model_forward(tape.constant(batch.lr), params, model_);
  Var<float> loss = ag::l1_loss(pred, tape.constant(batch.hr));
  const double value = loss.value().item();
  if (!std::isfinite(value)) {
    throw NumericError("non-finite loss at iteration " + std::to_string(iter_ + 1));
  }
  tape.backward(loss);
  std::map<std::string, TensorF> grads;
  for (auto& [name, g] : collect_grads(params)) grads.emplace(name, std::move(g));
  adam_.step(weights_, grads, lr_at(iter_, cfg_));
  ++iter_;
  return value;
}

std::vector<double> Trainer::run(std::ostream* csv_log, std::ostream* progress) {
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(std::max<long long>(0, cfg_.iters - iter_)));
  if (csv_log && iter_ == 0) *csv_log << "iter,lr,loss,eval_psnr\n";
  double window = 0;
  long long window_n = 0;
  while (iter_ < cfg_.iters) {
    const double lr = lr_at(iter_, cfg_);
    const double loss = step();
    losses.push_back(loss);
    window += loss;
    ++window_n;

    std::string eval_field;
    const bool last = iter_ == cfg_.iters;
    if (!val_.empty() && ((cfg_.eval_every > 0 && iter_ % cfg_.eval_every == 0) || last)) {
      const EvalResult e = evaluate_now();
      std::ostringstream f;
      f << std::setprecision(6) << std::fixed << e.psnr;
      eval_field = f.str();
      if (e.psnr > best_psnr_) {
        best_psnr_ = e.psnr;
        best_weights_ = weights_;
      }
      if (progress) {
        *progress << "iter " << iter_ << " eval psnr " << eval_field << " dB (bicubic " << std::fixed
                  << std::setprecision(4) << e.bicubic_psnr << ")\n";
      }
    }
    if (iter_ % cfg_.log_every == 0 || last || !eval_field.empty()) {
      const double mean_loss = window / static_cast<double>(window_n);
      if (csv_log) {
        *csv_log << iter_ << ',' << std::setprecision(9) << std::defaultfloat << lr << ',' << mean_loss << ','
                 << eval_field << '\n';
      }
      if (progress && iter_ % cfg_.log_every == 0) {
        *progress << "iter " << iter_ << " lr " << std::defaultfloat << lr << " loss " << std::setprecision(6)
                  << mean_loss << '\n';
      }
      window = 0;
      window_n = 0;
    }
  }
  return losses;
}

fs::path optimizer_sidecar(const fs::path& weights_path) {
  fs::path p = weights_path;
  p += ".opt";
  return p;
}

namespace {
constexpr char kOptMagic[4] = {'E', 'A', 'O', 'P'};
constexpr std::uint32_t kOptVersion = 1;
}  // namespace

void Trainer::save_checkpoint(const fs::path& path) const {
  save_weights(weights_, path);
  std::ostringstream os(std::ios::binary);
  os.write(kOptMagic, 4);
  write_u32(os, kOptVersion);
  write_u64(os, model_.hash());
  write_u64(os, static_cast<std::uint64_t>(iter_));
  write_u64(os, static_cast<std::uint64_t>(adam_.steps()));
  write_f64(os, best_psnr_);
  std::ostringstream rng_text;
  rng_text << rng_;
  const std::string rng = rng_text.str();
  write_u32(os, static_cast<std::uint32_t>(rng.size()));
  os.write(rng.data(), static_cast<std::streamsize>(rng.size()));
  std::vector<std::pair<std::string, TensorF>> tensors;
  for (const auto& [name, mv] : adam_.moments()) {
    tensors.emplace_back("m/" + name, mv.m);
    tensors.emplace_back("v/" + name, mv.v);
  }
  write_tensor_records(os, tensors);
  write_file_bytes(optimizer_sidecar(path), os.str());
}

void Trainer::load_checkpoint(const fs::path& path) {
  WeightStore w = load_weights(path, model_.hash());
  check_weights(model_, w);
  const std::string bytes = read_file_bytes(optimizer_sidecar(path));
  std::istringstream is(bytes, std::ios::binary);
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != std::string(kOptMagic, 4)) {
    throw LoadError("optimizer state: bad magic in " + optimizer_sidecar(path).string());
  }
  if (read_u32(is) != kOptVersion) throw LoadError("optimizer state: unsupported version");
  if (read_u64(is) != model_.hash()) throw LoadError("optimizer state was written for a different model config");
  const auto iter = static_cast<long long>(read_u64(is));
  const auto steps = static_cast<long long>(read_u64(is));
  const double best = read_f64(is);
  const std::uint32_t rng_len = read_u32(is);
  std::string rng(rng_len, '\0');
  is.read(rng.data(), rng_len);
  if (!is) throw LoadError("optimizer state: truncated RNG state");
  std::istringstream rng_text(rng);
  std::mt19937_64 restored;
  rng_text >> restored;
  if (rng_text.fail()) throw LoadError("optimizer state: unreadable RNG state");

  std::map<std::string, AdamMoments> moments;
  for (auto& [name, t] : read_tensor_records(is)) {
    const bool is_m = name.rfind("m/", 0) == 0;
    if (!is_m && name.rfind("v/", 0) != 0) throw LoadError("optimizer state: unexpected tensor '" + name + "'");
    const std::string pname = name.substr(2);
    if (!w.contains(pname) || w.at(pname).shape() != t.shape()) {
      throw LoadError("optimizer state: moment '" + name + "' does not match the weights");
    }
    (is_m ? moments[pname].m : moments[pname].v) = std::move(t);
  }
  for (const auto& [name, mv] : moments) {
    if (mv.m.numel() == 0 || mv.v.numel() == 0) throw LoadError("optimizer state: incomplete moments for " + name);
  }

  weights_ = std::move(w);
  best_weights_ = weights_;
  adam_.moments() = std::move(moments);
  adam_.set_steps(steps);
  rng_ = restored;
  iter_ = iter;
  best_psnr_ = best;
}

std::vector<AblationVariant> ablation_variants() {
  using S = SpatialAttention;
  using C = ChannelAttention;
  return {{"none", S::none, C::none},  {"slka", S::slka, C::none},  {"ea", S::none, C::ea},
          {"lka+ea", S::lka, C::ea},   {"slka+se", S::slka, C::se}, {"slka+ea", S::slka, C::ea}};
}

std::vector<AblationRow> ablate(const ModelConfig& base, const TrainConfig& cfg,
                                const std::vector<data::ImagePair>& train_set,
                                const std::vector<data::ImagePair>& val_set, std::ostream* progress) {
  std::vector<AblationRow> rows;
  for (const AblationVariant& v : ablation_variants()) {
    ModelConfig m = base;
    m.variant = Variant::custom;
    m.spatial = v.spatial;
    m.channel = v.channel;
    if (progress) *progress << "ablate: training " << v.name << '\n';
    Trainer trainer(m, cfg, train_set, val_set);
    const std::vector<double> losses = trainer.run(nullptr, nullptr);
    const std::size_t tail = std::min<std::size_t>(losses.size(), 100);
    double final_loss = 0;
    for (std::size_t i = losses.size() - tail; i < losses.size(); ++i) final_loss += losses[i];
    AblationRow row;
    row.variant = v;
    row.params = count_params(m);
    row.multiadds = count_multiadds(m);
    row.final_loss = final_loss / static_cast<double>(tail);
    row.eval = trainer.evaluate_now();
    rows.push_back(row);
  }
  return rows;
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "variant,spatial,channel,params,multiadds,final_loss,psnr,ssim\n";
  for (const AblationRow& r : rows) {
    os << r.variant.name << ',' << to_string(r.variant.spatial) << ',' << to_string(r.variant.channel) << ','
       << r.params << ',' << r.multiadds << ',' << std::setprecision(6) << std::fixed << r.final_loss << ','
       << std::setprecision(4) << r.eval.psnr << ',' << std::setprecision(6) << r.eval.ssim << '\n';
    os << std::defaultfloat;
  }
}

}  // namespace earfa::train
