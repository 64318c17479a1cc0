#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "earfa/dataset.hpp"
#include "earfa/image.hpp"
#include "earfa/kernels.hpp"
#include "earfa/metrics.hpp"
#include "support/reference.hpp"

using namespace earfa;
namespace fs = std::filesystem;
using TD = Tensor<double>;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("earfa_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

TensorF random_image(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ref::uniform(s, rng).cast<float>();
}

// Direct resampling along one axis from the kernel definition.
std::vector<double> resample_1d(const std::vector<double>& in, double factor) {
  const int n_out = static_cast<int>(std::lround(in.size() * factor));
  const double ks = std::min(1.0, factor);
  std::vector<double> out(n_out);
  for (int i = 0; i < n_out; ++i) {
    const double center = (i + 0.5) / factor - 0.5;
    double acc = 0, norm = 0;
    for (int j = static_cast<int>(std::floor(center - 2 / ks)) - 1; j <= static_cast<int>(std::ceil(center + 2 / ks)) + 1; ++j) {
      const double w = ref::cubic((center - j) * ks);
      const int src = std::clamp(j, 0, static_cast<int>(in.size()) - 1);
      acc += w * in[src];
      norm += w;
    }
    out[i] = acc / norm;
  }
  return out;
}

}  // namespace

TEST_CASE("bicubic: identity, constants and partition of unity") {
  const TensorF x = random_image(Shape{1, 3, 9, 11}, 1);
  const TensorF same = image::bicubic_resize(x, 1.0);
  CHECK(ref::max_abs_diff(same.cast<double>(), x.cast<double>()) < 1e-6);

  const TensorF flat(Shape{1, 2, 10, 13}, 0.37f);
  for (double f : {0.5, 0.25, 1.0 / 3.0, 2.0, 3.0, 4.0, 0.7}) {
    const TensorF y = image::bicubic_resize(flat, f);
    for (float v : y.data()) CHECK(v == doctest::Approx(0.37).epsilon(1e-6));
  }

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> fd(0.1, 5.0);
  for (int trial = 0; trial < 100; ++trial) {
    const double f = fd(rng);
    const int len = 5 + trial;
    const int out_len = static_cast<int>(std::lround(len * f));
    const int i = static_cast<int>(rng() % static_cast<unsigned>(std::max(1, out_len)));
    double total = 0;
    for (const auto& t : image::resample_taps(i, len, f)) total += t.weight;
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
  CHECK_THROWS_AS(image::bicubic_resize(x, 0.0), ValidationError);
  CHECK_THROWS_AS(image::bicubic_resize(x, 0.01), ValidationError);
}

TEST_CASE("bicubic downscale of a ramp equals direct kernel sampling") {
  TensorF ramp(Shape{1, 1, 12, 16});
  std::vector<double> rows(12), cols(16);
  for (int y = 0; y < 12; ++y) rows[y] = y / 11.0;
  for (int x = 0; x < 16; ++x) cols[x] = 0.5 * x / 15.0;
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 16; ++x) ramp.at(0, 0, y, x) = static_cast<float>(rows[y] + cols[x]);
  // A separable sum resamples axis by axis (weights are normalized).
  const auto ry = resample_1d(rows, 0.5), rx = resample_1d(cols, 0.5);
  const TensorF got = image::bicubic_resize(ramp, 0.5);
  REQUIRE(got.shape() == Shape{1, 1, 6, 8});
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 8; ++x) CHECK(got.at(0, 0, y, x) == doctest::Approx(ry[y] + rx[x]).epsilon(1e-6));
  // Away from clamped borders a linear ramp is reproduced exactly.
  CHECK(ry[2] == doctest::Approx((2 * 2 + 0.5) / 11.0).epsilon(1e-12));

  TensorF up(Shape{1, 1, 1, 7});
  std::vector<double> line(7);
  for (int x = 0; x < 7; ++x) up.at(0, 0, 0, x) = static_cast<float>(line[x] = std::sin(x * 0.9));
  const auto expect = resample_1d(line, 3.0);
  const TensorF got_up = image::bicubic_resize(up, 3.0);
  for (int x = 0; x < 21; ++x) CHECK(got_up.at(0, 0, 0, x) == doctest::Approx(expect[x]).epsilon(1e-6));
}

TEST_CASE("luma conversion") {
  const TensorF black(Shape{1, 3, 1, 1}, 0.0f), white(Shape{1, 3, 1, 1}, 1.0f);
  CHECK(image::rgb_to_y(black).item() == doctest::Approx(16.0 / 255).epsilon(1e-7));
  CHECK(image::rgb_to_y(white).item() == doctest::Approx(235.0 / 255).epsilon(1e-6));
  const TensorF px(Shape{1, 3, 1, 1}, std::vector<float>{0.2f, 0.7f, 0.4f});
  const double expect = (65.481 * 0.2f + 128.553 * 0.7f + 24.966 * 0.4f + 16) / 255;
  CHECK(image::rgb_to_y(px).item() == doctest::Approx(expect).epsilon(1e-7));
}

TEST_CASE("psnr and ssim") {
  const TensorF a = random_image(Shape{1, 1, 32, 40}, 3);
  CHECK(std::isinf(metrics::psnr(a, a)));
  CHECK(metrics::ssim(a, a) == 1.0);
  CHECK(metrics::ssim(a, a, 4) == 1.0);

  // Dyadic values make the MSE exactly (1/256)^2.
  TensorF ad = a, b = a;
  for (std::size_t i = 0; i < ad.numel(); ++i) {
    ad.mutable_data()[i] = std::round(a.data()[i] * 200.0f) / 256.0f;
    b.mutable_data()[i] = ad.data()[i] + 1.0f / 256.0f;
  }
  CHECK(metrics::psnr(ad, b) == doctest::Approx(20 * std::log10(256.0)).epsilon(1e-12));
  TensorF c(Shape{1, 1, 4, 4}, 0.0f), d(Shape{1, 1, 4, 4}, 1.0f / 255.0f);
  CHECK(metrics::psnr(c, d) == doctest::Approx(20 * std::log10(255.0)).epsilon(1e-6));
  CHECK(20 * std::log10(255.0) == doctest::Approx(48.13).epsilon(1e-4));

  const TensorF e = random_image(Shape{1, 1, 32, 40}, 4);
  CHECK(metrics::psnr(a, e, 3) == metrics::psnr(e, a, 3));
  CHECK(metrics::psnr(a, e, 3) == doctest::Approx(ref::psnr(a.cast<double>(), e.cast<double>(), 3)).epsilon(1e-12));
  CHECK(metrics::ssim(a, e, 2) == doctest::Approx(ref::ssim(a.cast<double>(), e.cast<double>(), 2)).epsilon(1e-9));
  const TensorF f = image::bicubic_resize(image::bicubic_resize(a, 0.5), 2.0);
  CHECK(metrics::ssim(a, f, 2) == doctest::Approx(ref::ssim(a.cast<double>(), f.cast<double>(), 2)).epsilon(1e-9));

  CHECK_THROWS_AS(metrics::psnr(a, TensorF(Shape{1, 1, 32, 39})), DimensionError);
  CHECK_THROWS_AS(metrics::ssim(a, a, 12), DimensionError);
}

TEST_CASE("shaving only changes the border contribution") {
  const TensorF a = random_image(Shape{1, 1, 30, 30}, 5);
  TensorF b = a;
  for (int y = 0; y < 30; ++y)
    for (int x = 0; x < 30; ++x)
      if (y < 2 || x < 2 || y >= 28 || x >= 28) b.at(0, 0, y, x) = 1.0f - b.at(0, 0, y, x);
  CHECK(std::isinf(metrics::psnr(a, b, 2)));
  CHECK(metrics::ssim(a, b, 2) == 1.0);
  CHECK(std::isfinite(metrics::psnr(a, b, 1)));
}

TEST_CASE("dihedral transforms leave psnr unchanged") {
  const TensorF a = random_image(Shape{1, 3, 20, 26}, 6), b = random_image(Shape{1, 3, 20, 26}, 7);
  const double base = metrics::psnr(a, b, 2);
  for (int op = 0; op < 8; ++op) {
    CHECK(std::abs(metrics::psnr(kernels::dihedral(a, op), kernels::dihedral(b, op), 2) - base) < 1e-9);
  }
}

TEST_CASE("png round trip and error handling") {
  const fs::path dir = fresh_dir("png");
  const TensorF img = random_image(Shape{1, 3, 7, 9}, 8);
  image::write_png(dir / "a.png", img);
  const TensorF back = image::read_png(dir / "a.png");
  CHECK(back.shape() == img.shape());
  const TensorF q = image::quantize8(img);
  CHECK(std::equal(back.data().begin(), back.data().end(), q.data().begin()));

  image::write_png(dir / "g.png", TensorF(Shape{1, 1, 3, 3}, 0.5f));
  const TensorF gray = image::read_png(dir / "g.png");
  CHECK(gray.shape() == Shape{1, 3, 3, 3});
  CHECK(gray.at(0, 2, 1, 1) == gray.at(0, 0, 1, 1));

  CHECK_THROWS_AS(image::read_png(dir / "missing.png"), IoError);
  CHECK_THROWS_AS(image::write_png(dir / "x.png", TensorF(Shape{2, 3, 2, 2})), DimensionError);
}

TEST_CASE("dataset listing, pairing and loading") {
  const fs::path dir = fresh_dir("dataset");
  image::write_png(dir / "b.png", data::synthetic_image(37, 42, 1));
  image::write_png(dir / "a.png", data::synthetic_image(40, 40, 2));
  image::write_png(dir / "a_x2.png", data::synthetic_image(20, 20, 3));
  const auto files = data::list_images(dir);
  REQUIRE(files.size() == 2);
  CHECK(files[0].filename() == "a.png");

  const auto pairs = data::load_dataset(dir, 4);
  CHECK(pairs[1].hr.shape() == Shape{1, 3, 36, 40});
  CHECK(pairs[1].lr.shape() == Shape{1, 3, 9, 10});
  CHECK(pairs[1].id == "b");
  for (float v : pairs[1].lr.data()) CHECK((v >= 0.0f && v <= 1.0f));

  CHECK_THROWS_AS(data::load_dataset(dir / "nope", 2), IoError);
  CHECK_THROWS_AS(data::load_dataset(fresh_dir("empty"), 2), IoError);
}

TEST_CASE("patches are aligned and augmentation is consistent") {
  const auto pair = data::make_pair(data::synthetic_image(96, 96, 4), 2, "s");
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = data::sample_patch(pair, 16, rng);
    REQUIRE(p.has_value());
    CHECK(p->lr.shape() == Shape{1, 3, 16, 16});
    CHECK(p->hr.shape() == Shape{1, 3, 32, 32});
    const TensorF down = image::bicubic_resize(p->hr, 0.5);
    double mad = 0;
    for (std::size_t i = 0; i < down.numel(); ++i) mad += std::abs(down.data()[i] - p->lr.data()[i]);
    CHECK(mad / static_cast<double>(down.numel()) < 2.0 / 255.0);

    const auto same = data::augment(*p, 0);
    CHECK(std::equal(same.hr.data().begin(), same.hr.data().end(), p->hr.data().begin()));
    const auto twice = data::augment(data::augment(*p, 4), 4);
    CHECK(std::equal(twice.lr.data().begin(), twice.lr.data().end(), p->lr.data().begin()));
    const auto rot = data::augment(*p, 3);
    CHECK(ref::max_abs_diff(rot.lr.cast<double>(), kernels::dihedral(p->lr, 3).cast<double>()) == 0.0);
    CHECK(ref::max_abs_diff(rot.hr.cast<double>(), kernels::dihedral(p->hr, 3).cast<double>()) == 0.0);
  }
  CHECK_FALSE(data::sample_patch(pair, 49, rng).has_value());
}

TEST_CASE("batches skip images that are too small") {
  std::vector<data::ImagePair> pairs{data::make_pair(data::synthetic_image(20, 20, 1), 2, "small"),
                                     data::make_pair(data::synthetic_image(64, 64, 2), 2, "big")};
  std::mt19937_64 rng(3);
  const auto b = data::sample_batch(pairs, 4, 16, true, rng);
  CHECK(b.lr.shape() == Shape{4, 3, 16, 16});
  CHECK(b.hr.shape() == Shape{4, 3, 32, 32});
  std::vector<data::ImagePair> only_small{pairs[0]};
  CHECK_THROWS_AS(data::sample_batch(only_small, 4, 16, true, rng), ValidationError);

  std::mt19937_64 r1(9), r2(9);
  const auto b1 = data::sample_batch(pairs, 3, 8, true, r1), b2 = data::sample_batch(pairs, 3, 8, true, r2);
  CHECK(std::equal(b1.hr.data().begin(), b1.hr.data().end(), b2.hr.data().begin()));
}

TEST_CASE("synthetic images are deterministic and in range") {
  const TensorF a = data::synthetic_image(30, 40, 11), b = data::synthetic_image(30, 40, 11);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  CHECK_FALSE(std::equal(a.data().begin(), a.data().end(), data::synthetic_image(30, 40, 12).data().begin()));
  for (float v : a.data()) CHECK((v >= 0.0f && v <= 1.0f));
}
