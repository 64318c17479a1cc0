// earfa: train / infer / eval / bench-entropy / stats / ablate / synth.
//
// Exit codes: 0 ok, 2 I/O, 3 config or weight mismatch, 4 numeric failure,
// 1 anything else. Command-line parse errors use CLI11's codes.

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "earfa/dataset.hpp"
#include "earfa/entropy.hpp"
#include "earfa/image.hpp"
#include "earfa/metrics.hpp"
#include "earfa/model.hpp"
#include "earfa/train.hpp"

#ifdef EARFA_HAVE_OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;
using namespace earfa;

namespace {

enum Exit { kOk = 0, kOther = 1, kIo = 2, kConfig = 3, kNumeric = 4 };

int apply_thread_cap() {
  const char* env = std::getenv("EARFA_THREADS");
  if (!env || !*env) return 0;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("EARFA_THREADS must be a positive integer, got '") + env + "'", "EARFA_THREADS");
#ifdef EARFA_HAVE_OPENMP
  omp_set_num_threads(static_cast<int>(n));
#endif
  return static_cast<int>(n);
}

void print_block(const std::string& title, const std::string& body) {
  std::cerr << "# " << title << '\n';
  std::istringstream is(body);
  for (std::string line; std::getline(is, line);) std::cerr << "#   " << line << '\n';
}

ModelConfig preset(const std::string& name, int scale) {
  if (name == "earfa") return ModelConfig::earfa(scale);
  if (name == "light") return ModelConfig::earfa_light(scale);
  if (name == "tiny") return ModelConfig::tiny(scale);
  throw ConfigError("unknown preset '" + name + "' (earfa, light, tiny)", "preset");
}

// --config wins; otherwise the named preset.
ModelConfig resolve_model(const std::string& config_path, const std::string& preset_name, int scale) {
  ModelConfig cfg = config_path.empty() ? preset(preset_name, scale) : load_model_config(config_path);
  cfg.validate();
  return cfg;
}

// Model config for a weight file: --config, then <weights>.cfg or model.cfg
// beside it, then any preset at `scale` whose hash matches the file.
ModelConfig config_for_weights(const fs::path& weights, const WeightStore& store, const std::string& config_path,
                               int scale) {
  std::optional<ModelConfig> cfg;
  if (!config_path.empty()) {
    cfg = load_model_config(config_path);
  } else {
    fs::path sibling = weights;
    sibling.replace_extension(".cfg");
    const fs::path shared = weights.parent_path() / "model.cfg";
    if (fs::exists(sibling)) {
      cfg = load_model_config(sibling);
    } else if (fs::exists(shared)) {
      cfg = load_model_config(shared);
    } else {
      for (int s : {2, 3, 4}) {
        if (scale != 0 && s != scale) continue;
        for (const char* name : {"earfa", "light", "tiny"}) {
          const ModelConfig p = preset(name, s);
          if (p.hash() == store.config_hash()) cfg = p;
        }
      }
      if (!cfg) throw ConfigError("no config found for " + weights.string() + "; pass --config", "config");
    }
  }
  cfg->validate();
  if (scale != 0 && cfg->scale != scale) {
    throw ConfigError("weights are for x" + std::to_string(cfg->scale) + ", --scale is " + std::to_string(scale),
                      "scale");
  }
  if (cfg->hash() != store.config_hash()) {
    throw ConfigError("weight file " + weights.string() + " was written for a different model config", "config");
  }
  check_weights(*cfg, store);
  return *cfg;
}

WeightStore read_weights(const std::string& path) {
  if (!fs::exists(path)) throw IoError("weight file not found: " + path);
  return load_weights(path);
}

fs::path default_output(const fs::path& input, int scale) {
  fs::path out = input;
  out.replace_filename(input.stem().string() + "_x" + std::to_string(scale) + ".png");
  return out;
}

struct TrainFlags {
  std::string data, val, out = "run", config, preset = "tiny", resume;
  int scale = 2;
  train::TrainConfig cfg;
  bool no_augment = false;
  CLI::App* cmd = nullptr;
};

// Schedule defaults: the 500k-step recipe for the full and light presets, the
// short toy recipe for anything else. Flags given explicitly win.
train::TrainConfig resolve_train(const TrainFlags& f, const ModelConfig& model) {
  const train::TrainConfig base = model.variant == Variant::custom ? train::TrainConfig::toy()
                                                                   : train::TrainConfig::for_variant(model.variant);
  auto given = [&](const char* flag) { return f.cmd->count(flag) > 0; };
  train::TrainConfig cfg = base;
  if (given("--iters")) cfg.iters = f.cfg.iters;
  if (given("--batch")) cfg.batch = f.cfg.batch;
  if (given("--patch")) cfg.patch = f.cfg.patch;
  if (given("--lr")) cfg.lr0 = f.cfg.lr0;
  if (given("--milestones")) cfg.milestones = f.cfg.milestones;
  if (given("--beta1")) cfg.beta1 = f.cfg.beta1;
  if (given("--beta2")) cfg.beta2 = f.cfg.beta2;
  if (given("--seed")) cfg.seed = f.cfg.seed;
  if (given("--eval-every")) cfg.eval_every = f.cfg.eval_every;
  if (given("--log-every")) cfg.log_every = f.cfg.log_every;
  // Default milestones beyond a shortened run are dropped rather than rejected.
  if (!given("--milestones") && given("--iters")) {
    std::erase_if(cfg.milestones, [&](long long m) { return m >= cfg.iters; });
  }
  cfg.augment = !f.no_augment;
  cfg.validate();
  return cfg;
}

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool with_output_dir) {
  f.cmd = cmd;
  cmd->add_option("--data", f.data, "Directory of HR training PNGs")->required();
  cmd->add_option("--val", f.val, "Directory of HR validation PNGs");
  cmd->add_option("--config", f.config, "Model config file (key=value)");
  cmd->add_option("--preset", f.preset, "Model preset when no --config: earfa, light, tiny")->capture_default_str();
  cmd->add_option("--scale", f.scale, "Upscaling factor for presets")->capture_default_str();
  cmd->add_option("--iters", f.cfg.iters, "Training iterations (earfa/light: 500000, else 2000)");
  cmd->add_option("--batch", f.cfg.batch, "Patches per batch (earfa/light: 64, else 16)");
  cmd->add_option("--patch", f.cfg.patch, "LR patch side in pixels (earfa/light: 64, else 32)");
  cmd->add_option("--lr", f.cfg.lr0, "Initial learning rate (earfa: 5e-4, light: 1e-3, else 4e-3)");
  cmd->add_option("--milestones", f.cfg.milestones,
                  "Comma-separated iterations at which the learning rate halves "
                  "(earfa/light: 250000,400000,450000,475000, else 1500)")
      ->delimiter(',');
  cmd->add_option("--beta1", f.cfg.beta1, "Adam beta1")->capture_default_str();
  cmd->add_option("--beta2", f.cfg.beta2, "Adam beta2")->capture_default_str();
  cmd->add_option("--seed", f.cfg.seed, "Seed for initialization and sampling")->capture_default_str();
  cmd->add_option("--eval-every", f.cfg.eval_every, "Evaluate every N iterations (0: only at the end)")
      ->capture_default_str();
  cmd->add_option("--log-every", f.cfg.log_every, "Log every N iterations")->capture_default_str();
  cmd->add_flag("--no-augment", f.no_augment, "Disable dihedral augmentation");
  if (with_output_dir) {
    cmd->add_option("--out", f.out, "Output directory")->capture_default_str();
    cmd->add_option("--resume", f.resume, "Checkpoint (weights file with .opt sidecar) to resume from");
  }
}

int cmd_train(const TrainFlags& f) {
  ModelConfig model = resolve_model(f.config, f.preset, f.scale);
  const train::TrainConfig cfg = resolve_train(f, model);
  print_block("model", model.canonical());
  print_block("train", cfg.describe());

  auto train_set = data::load_dataset(f.data, model.scale);
  std::vector<data::ImagePair> val_set;
  if (!f.val.empty()) val_set = data::load_dataset(f.val, model.scale);

  train::Trainer trainer(model, cfg, std::move(train_set), std::move(val_set));
  const fs::path out(f.out);
  fs::create_directories(out);
  save_model_config(model, out / "model.cfg");
  if (!f.resume.empty()) {
    if (!fs::exists(f.resume)) throw IoError("checkpoint not found: " + f.resume);
    trainer.load_checkpoint(f.resume);
    std::cerr << "# resumed at iteration " << trainer.iteration() << '\n';
  }
  std::ofstream log(out / "train_log.csv", f.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw IoError("cannot write " + (out / "train_log.csv").string());
  trainer.run(&log, &std::cout);
  trainer.save_checkpoint(out / "weights.earf");
  if (trainer.best_psnr() >= 0) save_weights(trainer.best_weights(), out / "best.earf");
  std::cout << "saved " << (out / "weights.earf").string() << " after " << trainer.iteration() << " iterations\n";
  return kOk;
}

int cmd_infer(const std::string& weights_path, const std::string& input, const std::string& output,
              const std::string& config, int scale, bool ensemble) {
  const WeightStore store = read_weights(weights_path);
  const ModelConfig cfg = config_for_weights(weights_path, store, config, scale);
  print_block("model", cfg.canonical());
  if (!fs::exists(input)) throw IoError("input image not found: " + input);
  const TensorF lr = image::read_png(input);
  const TensorF sr = ensemble ? geometric_self_ensemble(lr, cfg, store) : forward(lr, cfg, store);
  const fs::path out = output.empty() ? default_output(input, cfg.scale) : fs::path(output);
  image::write_png(out, sr);
  std::cout << out.string() << " (" << sr.h() << "x" << sr.w() << ")\n";
  return kOk;
}

int cmd_eval(const std::string& weights_path, const std::string& dataset, const std::string& config, int scale,
             int shave_flag, bool identity, bool ensemble, const std::string& csv_path) {
  std::optional<ModelConfig> cfg;
  WeightStore store;
  if (!identity) {
    if (weights_path.empty()) throw ConfigError("--weights is required unless --identity is given", "weights");
    store = read_weights(weights_path);
    cfg = config_for_weights(weights_path, store, config, scale);
    scale = cfg->scale;
    print_block("model", cfg->canonical());
  } else if (scale == 0) {
    scale = 4;
  }
  const int shave = shave_flag >= 0 ? shave_flag : scale;
  std::cerr << "# scale=" << scale << " shave=" << shave << (identity ? " identity" : "") << '\n';

  const auto pairs = data::load_dataset(dataset, scale);
  const std::string name = fs::path(dataset).filename().empty() ? fs::path(dataset).parent_path().filename().string()
                                                                 : fs::path(dataset).filename().string();
  std::ofstream file;
  if (!csv_path.empty()) {
    file.open(csv_path);
    if (!file) throw IoError("cannot write " + csv_path);
  }
  std::ostream& os = csv_path.empty() ? std::cout : file;
  os << "dataset,image,psnr,ssim,bicubic_psnr,bicubic_ssim\n" << std::fixed;
  double sum[4] = {0, 0, 0, 0};
  for (const auto& p : pairs) {
    const TensorF hr = image::rgb_to_y(p.hr);
    TensorF sr_rgb = p.hr;
    if (!identity) sr_rgb = ensemble ? geometric_self_ensemble(p.lr, *cfg, store) : forward(p.lr, *cfg, store);
    const TensorF sr = image::rgb_to_y(image::quantize8(sr_rgb));
    const TensorF bic = image::rgb_to_y(image::quantize8(image::bicubic_resize(p.lr, scale)));
    const double v[4] = {metrics::psnr(sr, hr, shave), metrics::ssim(sr, hr, shave), metrics::psnr(bic, hr, shave),
                         metrics::ssim(bic, hr, shave)};
    os << name << ',' << p.id << ',' << std::setprecision(4) << v[0] << ',' << std::setprecision(6) << v[1] << ','
       << std::setprecision(4) << v[2] << ',' << std::setprecision(6) << v[3] << '\n';
    for (int i = 0; i < 4; ++i) sum[i] += v[i];
  }
  const double n = static_cast<double>(pairs.size());
  std::ostream& summary = csv_path.empty() ? std::cerr : std::cout;
  summary << std::fixed << "mean " << name << ": psnr " << std::setprecision(4) << sum[0] / n << " ssim "
          << std::setprecision(6) << sum[1] / n << " | bicubic psnr " << std::setprecision(4) << sum[2] / n
          << " ssim " << std::setprecision(6) << sum[3] / n << " (" << pairs.size() << " images)\n";
  return kOk;
}

int cmd_stats(const std::string& config, const std::string& preset_name, int scale, bool sweep) {
  const ModelConfig cfg = resolve_model(config, preset_name, scale);
  print_block("model", cfg.canonical());
  const BlockConfig b = cfg.block();
  std::cout << std::left << std::setw(28) << "params" << count_params(cfg) << '\n'
            << std::setw(28) << "multi-adds (1280x720 out)" << std::fixed << std::setprecision(2)
            << static_cast<double>(count_multiadds(cfg)) / 1e9 << "G (" << count_multiadds(cfg) << ")\n"
            << std::setw(28) << "slka receptive field" << b.slka_receptive_field() << 'x' << b.slka_receptive_field()
            << '\n';
  if (sweep && cfg.variant != Variant::custom) {
    const long long target = cfg.variant == Variant::light ? 209000 : 1045000;
    std::cout << "\nwidth,sgfn_ratio,params,rel_error (target " << target << ")\n";
    for (const auto& r : calibration_sweep(cfg.variant, cfg.scale, target)) {
      std::cout << r.width << ',' << std::setprecision(4) << r.sgfn_ratio << ',' << r.params << ','
                << std::setprecision(4) << r.rel_error << '\n';
    }
  }
  return kOk;
}

int cmd_bench(int batch, int c, int h, int w, int reps, unsigned seed, const std::string& json_path) {
  std::cerr << "# bench-entropy batch=" << batch << " c=" << c << " h=" << h << " w=" << w << " reps=" << reps
            << " seed=" << seed << " threads=1\n";
  const entropy::BenchReport r = entropy::bench_entropy(batch, c, h, w, reps, seed);
  std::cout << r.text();
  if (!json_path.empty()) {
    std::ofstream f(json_path);
    if (!f) throw IoError("cannot write " + json_path);
    f << r.json() << '\n';
  }
  return kOk;
}

int cmd_ablate(const TrainFlags& f, const std::string& csv_path) {
  ModelConfig base = resolve_model(f.config, f.preset, f.scale);
  base.variant = Variant::custom;
  const train::TrainConfig cfg = resolve_train(f, base);
  print_block("base model", base.canonical());
  print_block("train", cfg.describe());
  const auto train_set = data::load_dataset(f.data, base.scale);
  std::vector<data::ImagePair> val_set;
  if (!f.val.empty()) val_set = data::load_dataset(f.val, base.scale);
  const auto rows = train::ablate(base, cfg, train_set, val_set, &std::cerr);
  if (csv_path.empty()) {
    train::write_ablation_csv(std::cout, rows);
  } else {
    std::ofstream file(csv_path);
    if (!file) throw IoError("cannot write " + csv_path);
    train::write_ablation_csv(file, rows);
    std::cout << "wrote " << rows.size() << " rows to " << csv_path << '\n';
  }
  return kOk;
}

int cmd_synth(const std::string& out, int count, int h, int w, std::uint64_t seed) {
  std::cerr << "# synth count=" << count << " size=" << h << "x" << w << " seed=" << seed << '\n';
  const auto files = data::write_synthetic_dataset(out, count, h, w, seed);
  std::cout << "wrote " << files.size() << " images to " << out << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EARFA super-resolution toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  TrainFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "Train a model with L1 loss and Adam");
  add_train_flags(train_cmd, train_flags, true);

  std::string weights, input, output, config, dataset, csv, json;
  int scale = 0, shave = -1;
  bool ensemble = false, identity = false;
  auto* infer_cmd = app.add_subcommand("infer", "Upscale one PNG");
  infer_cmd->add_option("--weights", weights, "Weight file")->required();
  infer_cmd->add_option("--input", input, "Input PNG")->required();
  infer_cmd->add_option("--output", output, "Output PNG (default <input>_x<s>.png)");
  infer_cmd->add_option("--config", config, "Model config (default: beside the weights, else a matching preset)");
  infer_cmd->add_option("--scale", scale, "Expected upscaling factor; mismatch exits 3");
  infer_cmd->add_flag("--self-ensemble", ensemble, "Average over the 8 dihedral transforms");

  auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM on the Y channel against bicubic");
  eval_cmd->add_option("--weights", weights, "Weight file");
  eval_cmd->add_option("--dataset", dataset, "Directory of HR PNGs")->required();
  eval_cmd->add_option("--config", config, "Model config (default: beside the weights, else a matching preset)");
  eval_cmd->add_option("--scale", scale, "Upscaling factor");
  eval_cmd->add_option("--shave", shave, "Border pixels excluded from metrics (default: scale)");
  eval_cmd->add_option("--csv", csv, "Write the per-image CSV here instead of stdout");
  eval_cmd->add_flag("--identity", identity, "Score HR against itself (no model)");
  eval_cmd->add_flag("--self-ensemble", ensemble, "Average over the 8 dihedral transforms");

  int batch = 8, channels = 64, height = 180, width = 320, reps = 100;
  unsigned bench_seed = 0;
  auto* bench_cmd = app.add_subcommand("bench-entropy", "Histogram vs Gaussian entropy latency");
  bench_cmd->set_help_flag("--help", "Print this help message and exit");  // -h would clash with --h
  bench_cmd->add_option("--batch", batch, "Batch size")->capture_default_str();
  bench_cmd->add_option("--c", channels, "Channels")->capture_default_str();
  bench_cmd->add_option("--h", height, "Height")->capture_default_str();
  bench_cmd->add_option("--w", width, "Width")->capture_default_str();
  bench_cmd->add_option("--reps", reps, "Timed repetitions (>= 10)")->capture_default_str();
  bench_cmd->add_option("--seed", bench_seed, "Seed for the random input")->capture_default_str();
  bench_cmd->add_option("--json", json, "Also write the report as JSON");

  std::string stats_preset = "earfa";
  int stats_scale = 4;
  bool sweep = false;
  auto* stats_cmd = app.add_subcommand("stats", "Parameters, multi-adds and SLKA receptive field");
  stats_cmd->add_option("--config", config, "Model config file");
  stats_cmd->add_option("--preset", stats_preset, "Preset when no --config: earfa, light, tiny")
      ->capture_default_str();
  stats_cmd->add_option("--scale", stats_scale, "Upscaling factor for presets")->capture_default_str();
  stats_cmd->add_flag("--sweep", sweep, "Also print the width/sgfn_ratio calibration sweep");

  TrainFlags ablate_flags;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train the six attention variants and emit a CSV");
  add_train_flags(ablate_cmd, ablate_flags, false);
  ablate_cmd->add_option("--csv", csv, "Write the CSV here instead of stdout");

  std::string synth_out;
  int synth_count = 8, synth_h = 96, synth_w = 96;
  std::uint64_t synth_seed = 0;
  auto* synth_cmd = app.add_subcommand("synth", "Write procedural HR PNGs for desk-scale experiments");
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();
  synth_cmd->add_option("--count", synth_count, "Number of images")->capture_default_str();
  synth_cmd->add_option("--height", synth_h, "Image height")->capture_default_str();
  synth_cmd->add_option("--width", synth_w, "Image width")->capture_default_str();
  synth_cmd->add_option("--seed", synth_seed, "Seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const int threads = apply_thread_cap();
    if (threads > 0) std::cerr << "# EARFA_THREADS=" << threads << '\n';
    if (*train_cmd) return cmd_train(train_flags);
    if (*infer_cmd) return cmd_infer(weights, input, output, config, scale, ensemble);
    if (*eval_cmd) return cmd_eval(weights, dataset, config, scale, shave, identity, ensemble, csv);
    if (*bench_cmd) return cmd_bench(batch, channels, height, width, reps, bench_seed, json);
    if (*stats_cmd) return cmd_stats(config, stats_preset, stats_scale, sweep);
    if (*ablate_cmd) return cmd_ablate(ablate_flags, csv);
    if (*synth_cmd) return cmd_synth(synth_out, synth_count, synth_h, synth_w, synth_seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error [" << e.key() << "]: " << e.what() << '\n';
    return kConfig;
  } catch (const LoadError& e) {
    std::cerr << "load error: " << e.what() << '\n';
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
  return kOther;
}
