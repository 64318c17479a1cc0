#include <random>

#include "doctest.h"
#include "earfa/blocks.hpp"
#include "support/gradcheck.hpp"
#include "support/params.hpp"

using namespace earfa;
using TD = Tensor<double>;
using VD = Var<double>;

namespace {

template <class F>
TD run(const TD& x, const ref::Params& p, F f) {
  Tape<double> tape(false);
  const ParamMap<double> m = tp::bind(p, tape);
  return f(tape.constant(x), m).value();
}

ref::Params declare(void (*fn)(ParamList&, const std::string&, const BlockConfig&), const BlockConfig& c,
                    const std::string& prefix, std::mt19937_64& rng) {
  ParamList specs;
  fn(specs, prefix, c);
  return tp::random_params(specs, rng);
}

}  // namespace

TEST_CASE("each block equals its step-by-step reference") {
  std::mt19937_64 rng(1);
  BlockConfig c = tp::small_block();
  const auto d = tp::dims(c);
  const TD x = ref::randn(Shape{2, c.channels, 9, 8}, rng);

  const auto pe = declare(declare_ea, c, "b.ea", rng);
  CHECK(ref::max_abs_diff(run(x, pe, [&](const VD& v, auto& m) { return ea_forward(v, m, "b.ea", c); }),
                          ref::ea(x, pe, "b.ea", d)) < 1e-5);
  const auto ps = declare(declare_slka, c, "b.slka", rng);
  CHECK(ref::max_abs_diff(run(x, ps, [&](const VD& v, auto& m) { return slka_forward(v, m, "b.slka", c); }),
                          ref::slka(x, ps, "b.slka", d)) < 1e-5);
  const auto pl = declare(declare_lka, c, "b.lka", rng);
  CHECK(ref::max_abs_diff(run(x, pl, [&](const VD& v, auto& m) { return lka_forward(v, m, "b.lka", c); }),
                          ref::lka(x, pl, "b.lka", d)) < 1e-5);
  const auto pse = declare(declare_se, c, "b.se", rng);
  CHECK(ref::max_abs_diff(run(x, pse, [&](const VD& v, auto& m) { return se_forward(v, m, "b.se", c); }),
                          ref::se(x, pse, "b.se", d)) < 1e-5);
  const auto pg = declare(declare_sgfn, c, "b.ffn", rng);
  CHECK(ref::max_abs_diff(run(x, pg, [&](const VD& v, auto& m) { return sgfn_forward(v, m, "b.ffn", c); }),
                          ref::sgfn(x, pg, "b.ffn", d)) < 1e-5);

  for (auto sp : {SpatialAttention::slka, SpatialAttention::lka, SpatialAttention::none})
    for (auto ch : {ChannelAttention::ea, ChannelAttention::se, ChannelAttention::none}) {
      c.spatial = sp;
      c.channel = ch;
      const auto pd = declare(declare_dab, c, "dab", rng);
      const TD out = run(x, pd, [&](const VD& v, auto& m) { return dab_forward(v, m, "dab", c); });
      CHECK(out.shape() == x.shape());
      CHECK(ref::max_abs_diff(out, ref::dab(x, pd, "dab", d, to_string(sp), to_string(ch))) < 1e-5);
    }
}

TEST_CASE("SLKA equals LKA when the 1x1 conv only reads the unshifted group") {
  std::mt19937_64 rng(2);
  const BlockConfig c = tp::small_block();
  auto p = declare(declare_slka, c, "s", rng);
  const auto groups = kernels::shift_groups(c.channels);
  TD& w = p["s.sc.weight"];
  for (int o = 0; o < c.channels; ++o)
    for (int i = 0; i < groups[4].begin; ++i) w.at(o, i, 0, 0) = 0.0;
  ref::Params q;
  q["l.pw.weight"] = p["s.sc.weight"];
  q["l.pw.bias"] = p["s.sc.bias"];
  for (const char* n : {"dw", "ddw"})
    for (const char* f : {"weight", "bias"}) q[std::string("l.") + n + "." + f] = p[std::string("s.") + n + "." + f];
  const TD x = ref::randn(Shape{1, c.channels, 7, 7}, rng);
  const TD a = run(x, p, [&](const VD& v, auto& m) { return slka_forward(v, m, "s", c); });
  const TD b = run(x, q, [&](const VD& v, auto& m) { return lka_forward(v, m, "l", c); });
  CHECK(ref::max_abs_diff(a, b) == 0.0);
}

TEST_CASE("annihilation and identity cases") {
  std::mt19937_64 rng(3);
  const BlockConfig c = tp::small_block();
  const TD x = ref::randn(Shape{1, c.channels, 6, 6}, rng);

  auto ps = declare(declare_slka, c, "s", rng);
  for (auto& [n, t] : ps) t = TD(t.shape());
  CHECK(ref::max_abs_diff(run(x, ps, [&](const VD& v, auto& m) { return slka_forward(v, m, "s", c); }),
                          TD(x.shape())) == 0.0);

  // Zero input with zero biases stays zero.
  auto pg = declare(declare_sgfn, c, "f", rng);
  const TD zero(x.shape());
  auto unbiased = pg;
  for (const char* n : {"f.fc1.bias", "f.dw.bias", "f.fc2.bias"}) unbiased[n] = TD(unbiased[n].shape());
  CHECK(ref::max_abs_diff(run(zero, unbiased, [&](const VD& v, auto& m) { return sgfn_forward(v, m, "f", c); }),
                          TD(x.shape())) == 0.0);

  // Gate kernel zero: only the dw bias reaches fc2.
  auto pg2 = pg;
  pg2["f.dw.weight"] = TD(pg2["f.dw.weight"].shape());
  const TD gated = run(x, pg2, [&](const VD& v, auto& m) { return sgfn_forward(v, m, "f", c); });
  CHECK(ref::max_abs_diff(gated, ref::sgfn(x, pg2, "f", tp::dims(c))) < 1e-12);

  const auto pe = declare(declare_ea, c, "e", rng);
  CHECK(ref::max_abs_diff(run(zero, pe, [&](const VD& v, auto& m) { return ea_forward(v, m, "e", c); }),
                          TD(x.shape())) == 0.0);

  // Output projections zero: every residual line adds nothing.
  auto pd = declare(declare_dab, c, "d", rng);
  for (const char* n : {"d.slka.ddw", "d.ffn1.fc2", "d.ea.inc", "d.ffn2.fc2"})
    for (const char* f : {".weight", ".bias"}) pd[std::string(n) + f] = TD(pd[std::string(n) + f].shape());
  CHECK(ref::max_abs_diff(run(x, pd, [&](const VD& v, auto& m) { return dab_forward(v, m, "d", c); }), x) == 0.0);
}

TEST_CASE("EA rescales channels without touching spatial patterns") {
  std::mt19937_64 rng(4);
  const BlockConfig c = tp::small_block();
  TD x(Shape{1, c.channels, 6, 6}, 0.5);
  for (int y = 0; y < 6; ++y)
    for (int xx = 0; xx < 6; ++xx) x.at(0, 3, y, xx) = 5.0 * std::sin(y * 1.3 + xx * 0.7);
  const auto pe = declare(declare_ea, c, "e", rng);
  Tape<double> tape(false);
  const auto m = tp::bind(pe, tape);
  const TD w = ea_channel_weights(tape.constant(x), m, "e", c).value();
  const TD out = ea_forward(tape.constant(x), m, "e", c).value();
  CHECK(w.shape() == Shape{1, c.channels, 1, 1});
  for (int ch = 0; ch < c.channels; ++ch)
    for (int y = 0; y < 6; ++y)
      for (int xx = 0; xx < 6; ++xx) {
        CHECK(out.at(0, ch, y, xx) == doctest::Approx(w.at(0, ch, 0, 0) * x.at(0, ch, y, xx)).epsilon(1e-14));
        CHECK(std::abs(out.at(0, ch, y, xx)) <= std::abs(w.at(0, ch, 0, 0)) * std::abs(x.at(0, ch, y, xx)) + 1e-15);
      }
}

TEST_CASE("SE pools a per-channel constant to that constant") {
  std::mt19937_64 rng(5);
  const BlockConfig c = tp::small_block();
  TD x(Shape{1, c.channels, 4, 4});
  for (int ch = 0; ch < c.channels; ++ch)
    for (int y = 0; y < 4; ++y)
      for (int xx = 0; xx < 4; ++xx) x.at(0, ch, y, xx) = 0.1 * ch - 0.3;
  const TD pooled = kernels::channel_mean(x);
  for (int ch = 0; ch < c.channels; ++ch) CHECK(pooled.at(0, ch, 0, 0) == doctest::Approx(0.1 * ch - 0.3));
}

TEST_CASE("block configuration errors") {
  BlockConfig c = tp::small_block();
  c.compression = 20;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tp::small_block();
  c.hidden = 13;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tp::small_block();
  c.channels = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(BlockConfig{}.slka_receptive_field() == 4 + 18 + 1);
  CHECK_THROWS_AS(parse_spatial_attention("conv"), ConfigError);
  CHECK(parse_channel_attention("se") == ChannelAttention::se);
}

TEST_CASE("one DAB passes the finite-difference check") {
  std::mt19937_64 rng(6);
  const BlockConfig c = tp::small_block();
  ParamList specs;
  declare_dab(specs, "d", c);
  const auto p = tp::random_params(specs, rng);
  std::vector<TD> inputs{ref::randn(Shape{1, c.channels, 6, 6}, rng)};
  std::vector<std::string> names;
  for (const auto& [n, t] : p) {
    names.push_back(n);
    inputs.push_back(t);
  }
  const gc::Builder f = [&](Tape<double>&, const std::vector<VD>& v) {
    ParamMap<double> m;
    for (std::size_t i = 0; i < names.size(); ++i) m.set(names[i], v[i + 1]);
    return dab_forward(v[0], m, "d", c);
  };
  const gc::Report r = gc::check(f, inputs, 150);
  INFO("max rel err " << r.max_rel);
  CHECK(r.coords >= 100);
  CHECK(r.max_rel < 1e-3);
}
