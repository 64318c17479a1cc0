#include <sys/wait.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "earfa/dataset.hpp"
#include "earfa/image.hpp"
#include "earfa/metrics.hpp"
#include "earfa/model.hpp"
#include "earfa/weights.hpp"

using namespace earfa;
namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::temp_directory_path() / "earfa_test_cli";

struct Run {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Run cli(const std::string& args, const std::string& env = "") {
  const fs::path out = kDir / "stdout.txt", err = kDir / "stderr.txt";
  const std::string cmd = env + " " + std::string(EARFA_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream lines(text);
  for (std::string line; std::getline(lines, line);) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::istringstream cs(line);
    for (std::string cell; std::getline(cs, cell, ',');) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

struct Fixture {
  Fixture() {
    fs::remove_all(kDir);
    fs::create_directories(kDir / "model");
    const ModelConfig cfg = ModelConfig::tiny(4);
    save_weights(init_weights(cfg, 3), kDir / "model" / "weights.earf");
    save_model_config(cfg, kDir / "model" / "model.cfg");
    image::write_png(kDir / "small.png", data::synthetic_image(8, 8, 1));
    data::write_synthetic_dataset(kDir / "set", 3, 48, 40, 5);
    fs::create_directories(kDir / "empty");
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

}  // namespace

TEST_CASE("help lists every flag and unknown flags are rejected") {
  fixture();
  const Run train = cli("train --help");
  CHECK(train.code == 0);
  for (const char* flag : {"--data", "--val", "--config", "--preset", "--scale", "--iters", "--batch", "--patch", "--lr",
                           "--milestones", "--beta1", "--beta2", "--seed", "--eval-every", "--log-every",
                           "--no-augment", "--out", "--resume"}) {
    CHECK_MESSAGE(train.out.find(flag) != std::string::npos, flag);
  }
  const Run bench = cli("bench-entropy --help");
  for (const char* flag : {"--batch", "--c", "--h", "--w", "--reps", "--seed", "--json"}) {
    CHECK_MESSAGE(bench.out.find(flag) != std::string::npos, flag);
  }
  CHECK(cli("stats --bogus").code != 0);
  CHECK(cli("").code != 0);
}

TEST_CASE("stats reports calibrated parameters and the receptive field") {
  fixture();
  const Run r = cli("stats --preset earfa --scale 4");
  REQUIRE(r.code == 0);
  const auto pos = r.out.find("params");
  REQUIRE(pos != std::string::npos);
  const long long params = std::stoll(r.out.substr(r.out.find_first_of("0123456789", pos)));
  CHECK(params == count_params(ModelConfig::earfa(4)));
  CHECK(std::abs(params - 1045000.0) / 1045000.0 <= 0.15);
  CHECK(r.out.find("23x23") != std::string::npos);
  CHECK(r.err.find("variant=full") != std::string::npos);

  std::ofstream(kDir / "bad.cfg") << "variant=custom\nwidht=12\n";
  const Run bad = cli("stats --config " + (kDir / "bad.cfg").string());
  CHECK(bad.code == 3);
  CHECK(bad.err.find("widht") != std::string::npos);
}

TEST_CASE("infer: shape, determinism, library equality and errors") {
  fixture();
  const std::string w = (kDir / "model" / "weights.earf").string();
  const Run r = cli("infer --weights " + w + " --input " + (kDir / "small.png").string());
  REQUIRE(r.code == 0);
  const fs::path out = kDir / "small_x4.png";
  REQUIRE(fs::exists(out));
  const TensorF sr = image::read_png(out);
  CHECK(sr.shape() == Shape{1, 3, 32, 32});
  const std::string first = slurp(out);
  REQUIRE(cli("infer --weights " + w + " --input " + (kDir / "small.png").string()).code == 0);
  CHECK(slurp(out) == first);

  const ModelConfig cfg = ModelConfig::tiny(4);
  const TensorF direct = image::quantize8(forward(image::read_png(kDir / "small.png"), cfg, load_weights(w)));
  CHECK(std::equal(sr.data().begin(), sr.data().end(), direct.data().begin()));

  CHECK(cli("infer --weights " + w + " --input " + (kDir / "nope.png").string()).code == 2);
  CHECK(cli("infer --weights " + (kDir / "nope.earf").string() + " --input " + (kDir / "small.png").string()).code == 2);
  CHECK(cli("infer --weights " + w + " --scale 2 --input " + (kDir / "small.png").string()).code == 3);
  std::ofstream(kDir / "other.cfg") << ModelConfig::tiny(2).canonical();
  CHECK(cli("infer --weights " + w + " --config " + (kDir / "other.cfg").string() + " --input " +
            (kDir / "small.png").string())
            .code == 3);
}

TEST_CASE("eval: identity rows, bicubic column and shave") {
  fixture();
  const Run id = cli("eval --identity --scale 2 --dataset " + (kDir / "set").string());
  REQUIRE(id.code == 0);
  auto rows = csv_rows(id.out);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == std::vector<std::string>{"dataset", "image", "psnr", "ssim", "bicubic_psnr", "bicubic_ssim"});
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(std::stod(rows[i][3]) == 1.0);

  const auto pairs = data::load_dataset(kDir / "set", 2);
  const TensorF hr = image::rgb_to_y(pairs[0].hr);
  const TensorF bic = image::rgb_to_y(image::quantize8(image::bicubic_resize(pairs[0].lr, 2)));
  CHECK(std::stod(rows[1][4]) == doctest::Approx(metrics::psnr(bic, hr, 2)).epsilon(1e-4));
  CHECK(std::stod(rows[1][5]) == doctest::Approx(metrics::ssim(bic, hr, 2)).epsilon(1e-5));

  const Run shaved = cli("eval --identity --scale 2 --shave 6 --dataset " + (kDir / "set").string());
  auto rows6 = csv_rows(shaved.out);
  CHECK(std::stod(rows6[1][4]) != std::stod(rows[1][4]));
  CHECK(std::stod(rows6[1][4]) == doctest::Approx(metrics::psnr(bic, hr, 6)).epsilon(1e-4));

  const std::string w = (kDir / "model" / "weights.earf").string();
  const Run model = cli("eval --weights " + w + " --dataset " + (kDir / "set").string() + " --csv " +
                        (kDir / "eval.csv").string());
  CHECK(model.code == 0);
  CHECK(csv_rows(slurp(kDir / "eval.csv")).size() == 4);
  CHECK(model.out.find("mean set") != std::string::npos);

  CHECK(cli("eval --identity --dataset " + (kDir / "empty").string()).code == 2);
  CHECK(cli("eval --identity --dataset " + (kDir / "missing").string()).code == 2);
}

TEST_CASE("bench-entropy, train and ablate run end to end") {
  fixture();
  const Run b = cli("bench-entropy --batch 1 --c 4 --h 32 --w 32 --reps 10 --json " + (kDir / "b.json").string());
  CHECK(b.code == 0);
  CHECK(b.out.find("speedup") != std::string::npos);
  CHECK(slurp(kDir / "b.json").find("\"speedup\"") != std::string::npos);

  const std::string set = (kDir / "set").string();
  const Run t = cli("train --data " + set + " --val " + set + " --iters 4 --batch 2 --patch 8 --log-every 2 --out " +
                        (kDir / "run").string(),
                    "EARFA_THREADS=1");
  CHECK(t.code == 0);
  CHECK(t.err.find("seed=0") != std::string::npos);
  CHECK(fs::exists(kDir / "run" / "weights.earf"));
  CHECK(fs::exists(kDir / "run" / "weights.earf.opt"));
  CHECK(csv_rows(slurp(kDir / "run" / "train_log.csv")).size() == 3);
  CHECK(cli("infer --weights " + (kDir / "run" / "weights.earf").string() + " --input " +
            (kDir / "small.png").string() + " --output " + (kDir / "o.png").string())
            .code == 0);
  CHECK(image::read_png(kDir / "o.png").shape() == Shape{1, 3, 16, 16});

  const Run resumed = cli("train --data " + set + " --iters 6 --batch 2 --patch 8 --log-every 2 --out " +
                          (kDir / "run").string() + " --resume " + (kDir / "run" / "weights.earf").string());
  CHECK(resumed.code == 0);
  CHECK(resumed.err.find("resumed at iteration 4") != std::string::npos);

  CHECK(cli("train --data " + (kDir / "missing").string()).code == 2);
  CHECK(cli("train --data " + set + " --milestones 5,3").code == 3);
  CHECK(cli("stats", "EARFA_THREADS=zero").code == 3);

  const Run a = cli("ablate --data " + set + " --iters 2 --batch 1 --patch 8 --csv " + (kDir / "abl.csv").string());
  CHECK(a.code == 0);
  const auto rows = csv_rows(slurp(kDir / "abl.csv"));
  REQUIRE(rows.size() == 7);
  CHECK(rows[1][0] == "none");
  CHECK(rows[6][0] == "slka+ea");
}
