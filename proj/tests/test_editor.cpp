#include <doctest.h>

#include "texsyn/editor.hpp"

using namespace texsyn;

namespace {

GeneratorConfig tiny_config() {
  GeneratorConfig cfg;
  cfg.levels = 3;
  cfg.channels = {8, 6, 4};
  cfg.seed_channels = 8;
  cfg.n_w = 5;
  cfg.n_freq = 3;
  return cfg;
}

struct Rig {
  PeriodicSystem<float> per;
  Generator<float> gen;

  explicit Rig(std::uint64_t seed) : gen(tiny_config()) {
    const GeneratorConfig cfg = tiny_config();
    per.init(cfg.n_freq, cfg.levels, cfg.n_w, 8);
    per.init_seeded(seed);
    gen.init_seeded(seed + 1);
    // style heads with some life so codes matter
    auto rng = make_rng({seed, 0xED17ULL});
    std::vector<Parameter<float>*> params;
    gen.params(params);
    for (auto* p : params)
      if (p->name.find("sty_") != std::string::npos) {
        MatX<float> r(p->v.rows(), p->v.cols());
        fill_normal(rng, r, 0.2);
        p->v += r;
      }
  }
};

Latent<float> random_code(int n, std::uint64_t seed) {
  Latent<float> w(n);
  auto rng = make_rng(seed);
  fill_normal(rng, w, 1.0);
  return w;
}

}  // namespace

TEST_CASE("interpolate_latents: exact endpoints, fixed point, domain check") {
  const Latent<float> a = random_code(6, 1);
  const Latent<float> b = random_code(6, 2);
  CHECK((interpolate_latents<float>(a, b, 0.0f) - a).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((interpolate_latents<float>(a, b, 1.0f) - b).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((interpolate_latents<float>(a, a, 0.5f) - a).cwiseAbs().maxCoeff() == 0.0f);
  CHECK_THROWS_AS(interpolate_latents<float>(a, b, 1.5f), DomainError);
  CHECK_THROWS_AS(interpolate_latents<float>(a, b, -0.1f), DomainError);
}

TEST_CASE("palette: corner queries are exact, the center is the corner mean") {
  PaletteSpec<float> spec;
  for (int i = 0; i < 4; ++i) spec.corners[i] = random_code(5, 10 + i);
  spec.field_h = 7;
  spec.field_w = 9;
  CHECK((palette_code_at(spec, 0.0f, 0.0f) - spec.corners[0]).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((palette_code_at(spec, 1.0f, 0.0f) - spec.corners[1]).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((palette_code_at(spec, 0.0f, 1.0f) - spec.corners[2]).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((palette_code_at(spec, 1.0f, 1.0f) - spec.corners[3]).cwiseAbs().maxCoeff() == 0.0f);
  const Latent<float> center = palette_code_at(spec, 0.5f, 0.5f);
  const Latent<float> mean =
      0.25f * (spec.corners[0] + spec.corners[1] + spec.corners[2] + spec.corners[3]);
  CHECK((center - mean).cwiseAbs().maxCoeff() < 1e-6f);
  // edge midpoint blends the two adjacent corners only
  const Latent<float> top_mid = palette_code_at(spec, 0.5f, 0.0f);
  const Latent<float> expect = 0.5f * spec.corners[0] + 0.5f * spec.corners[1];
  CHECK((top_mid - expect).cwiseAbs().maxCoeff() < 1e-6f);
  CHECK_THROWS_AS(palette_code_at(spec, 1.2f, 0.0f), DomainError);
}

TEST_CASE("build_palette_field: constant corners give a constant field; cells stay in hull") {
  PaletteSpec<float> spec;
  const Latent<float> w = random_code(5, 20);
  for (int i = 0; i < 4; ++i) spec.corners[i] = w;
  spec.field_h = 5;
  spec.field_w = 6;
  const SpatialLatentField<float> field = build_palette_field(spec);
  for (Eigen::Index p = 0; p < field.codes.cols(); ++p)
    CHECK((field.codes.col(p) - w).cwiseAbs().maxCoeff() == 0.0f);

  // all-ones corners: blend weights summing to one means every cell is exactly 1
  PaletteSpec<float> ones;
  for (int i = 0; i < 4; ++i) ones.corners[i] = Latent<float>::Ones(5);
  ones.field_h = 16;
  ones.field_w = 16;
  const SpatialLatentField<float> unit = build_palette_field(ones);
  CHECK((unit.codes.array() - 1.0f).abs().maxCoeff() == 0.0f);

  // convex hull per coordinate
  PaletteSpec<float> mixed;
  for (int i = 0; i < 4; ++i) mixed.corners[i] = random_code(5, 30 + i);
  mixed.field_h = 9;
  mixed.field_w = 4;
  const SpatialLatentField<float> f = build_palette_field(mixed);
  for (int d = 0; d < 5; ++d) {
    float lo = 1e9f, hi = -1e9f;
    for (int i = 0; i < 4; ++i) {
      lo = std::min(lo, mixed.corners[i](d));
      hi = std::max(hi, mixed.corners[i](d));
    }
    CHECK(f.codes.row(d).minCoeff() >= lo - 1e-6f);
    CHECK(f.codes.row(d).maxCoeff() <= hi + 1e-6f);
  }
}

TEST_CASE("synthesize_at: corner positions reproduce the corner synthesis bitwise") {
  Rig rig(40);
  PaletteSpec<float> spec;
  for (int i = 0; i < 4; ++i) spec.corners[i] = random_code(5, 50 + i);
  GenOptions<float> opt;
  opt.noise_seed = 3;
  opt.phase_seed = 4;
  const Grid<float> at_corner = synthesize_at(rig.gen, rig.per, spec, 0.0f, 0.0f, 16, 16, opt);
  const Grid<float> direct = rig.gen.generate(rig.per, spec.corners[0], 16, 16, opt);
  CHECK((at_corner.chw - direct.chw).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("synthesize_at: nearby positions give nearby codes (bilinear Lipschitz bound)") {
  PaletteSpec<float> spec;
  for (int i = 0; i < 4; ++i) spec.corners[i] = random_code(5, 60 + i);
  float span = 0.0f;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      span = std::max(span, (spec.corners[i] - spec.corners[j]).cwiseAbs().maxCoeff());
  auto rng = make_rng(61);
  for (int t = 0; t < 50; ++t) {
    const float u = uniform<float>(rng, 0.0f, 0.95f);
    const float v = uniform<float>(rng, 0.0f, 0.95f);
    const float du = uniform<float>(rng, 0.0f, 0.05f);
    const float dv = uniform<float>(rng, 0.0f, 0.05f);
    const Latent<float> w0 = palette_code_at(spec, u, v);
    const Latent<float> w1 = palette_code_at(spec, u + du, v + dv);
    // per-coordinate Lipschitz constant of the bilinear map is bounded by the
    // corner spread in each direction
    CHECK((w1 - w0).cwiseAbs().maxCoeff() <= (du + dv) * span + 1e-6f);
  }
}

TEST_CASE("render_palette: identical corners reduce to the single-code synthesis") {
  Rig rig(70);
  PaletteSpec<float> spec;
  const Latent<float> w = random_code(5, 71);
  for (int i = 0; i < 4; ++i) spec.corners[i] = w;
  spec.field_h = 4;
  spec.field_w = 4;
  GenOptions<float> opt;
  opt.noise_seed = 5;
  opt.phase_seed = 6;
  opt.stat_window = 1 << 20;  // full-extent statistics
  const Grid<float> pal = render_palette(rig.gen, rig.per, spec, 20, 20, 1, opt);
  const Grid<float> direct = rig.gen.generate(rig.per, w, 20, 20, opt);
  CHECK((pal.chw - direct.chw).cwiseAbs().maxCoeff() <= 1e-5f);
}

TEST_CASE("render_palette: expansion factor scales the canvas") {
  Rig rig(80);
  PaletteSpec<float> spec;
  for (int i = 0; i < 4; ++i) spec.corners[i] = random_code(5, 81 + i);
  spec.field_h = 3;
  spec.field_w = 3;
  GenOptions<float> opt;
  opt.stat_window = 7;
  const Grid<float> base = render_palette(rig.gen, rig.per, spec, 12, 14, 1, opt);
  const Grid<float> expanded = render_palette(rig.gen, rig.per, spec, 12, 14, 2, opt);
  CHECK(base.h == 12);
  CHECK(base.w == 14);
  CHECK(expanded.h == 24);
  CHECK(expanded.w == 28);
  CHECK_THROWS_AS(render_palette(rig.gen, rig.per, spec, 12, 14, 0, opt), DomainError);
}
