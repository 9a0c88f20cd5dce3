#pragma once

#include "texsyn/generator.hpp"

namespace texsyn {

// (1 - t) a + t b; both endpoints are reproduced exactly.
template <class S>
Latent<S> interpolate_latents(const Latent<S>& a, const Latent<S>& b, S t) {
  if (!(t >= S(0) && t <= S(1))) throw DomainError("interpolate_latents: t must lie in [0, 1]");
  if (a.size() != b.size()) throw ShapeError("interpolate_latents: code lengths differ");
  return (S(1) - t) * a + t * b;
}

// Four corner codes spanning a texture palette. Corner order: top-left,
// top-right, bottom-left, bottom-right.
template <class S>
struct PaletteSpec {
  std::array<Latent<S>, 4> corners;
  int field_h = 16;
  int field_w = 16;

  void validate() const {
    if (field_h < 1 || field_w < 1) throw DomainError("palette: field resolution must be positive");
    const Eigen::Index n = corners[0].size();
    for (const auto& c : corners)
      if (c.size() != n || n == 0) throw ShapeError("palette: corner codes must share one length");
  }
};

namespace detail {

// Endpoint-branched lerp: exact at t in {0,1} and exact for equal inputs.
template <class S>
Latent<S> lerp_exact(const Latent<S>& a, const Latent<S>& b, S t) {
  if (t == S(0)) return a;
  if (t == S(1)) return b;
  return a + t * (b - a);
}

}  // namespace detail

// Bilinear blend of the corner codes at (u, v) in the unit square, u along the
// width. Corner queries return the corner code exactly, and equal corners
// reproduce their code bit for bit.
template <class S>
Latent<S> palette_code_at(const PaletteSpec<S>& spec, S u, S v) {
  if (!(u >= S(0) && u <= S(1) && v >= S(0) && v <= S(1)))
    throw DomainError("palette: query position must lie in the unit square");
  const Latent<S> top = detail::lerp_exact(spec.corners[0], spec.corners[1], u);
  const Latent<S> bottom = detail::lerp_exact(spec.corners[2], spec.corners[3], u);
  return detail::lerp_exact(top, bottom, v);
}

template <class S>
SpatialLatentField<S> build_palette_field(const PaletteSpec<S>& spec) {
  spec.validate();
  SpatialLatentField<S> field;
  field.h = spec.field_h;
  field.w = spec.field_w;
  field.codes.resize(spec.corners[0].size(), static_cast<Eigen::Index>(field.h) * field.w);
  for (int y = 0; y < field.h; ++y) {
    const S v = field.h == 1 ? S(0) : static_cast<S>(y) / static_cast<S>(field.h - 1);
    for (int x = 0; x < field.w; ++x) {
      const S u = field.w == 1 ? S(0) : static_cast<S>(x) / static_cast<S>(field.w - 1);
      field.codes.col(static_cast<Eigen::Index>(y) * field.w + x) = palette_code_at(spec, u, v);
    }
  }
  return field;
}

// Synthesis from a single interpolated code (a red-dot query on the palette).
template <class S>
Grid<S> synthesize_at(const Generator<S>& gen, const PeriodicSystem<S>& per,
                      const PaletteSpec<S>& spec, S u, S v, int h, int w,
                      const GenOptions<S>& opt = {}) {
  return gen.generate(per, palette_code_at(spec, u, v), h, w, opt);
}

// Full palette render: spatially varying synthesis over the blended field,
// optionally expanded by an integer factor.
template <class S>
Grid<S> render_palette(const Generator<S>& gen, const PeriodicSystem<S>& per,
                       const PaletteSpec<S>& spec, int h, int w, int expand_factor = 1,
                       const GenOptions<S>& opt = {}) {
  if (expand_factor < 1) throw DomainError("render_palette: expansion factor must be >= 1");
  spec.validate();
  const SpatialLatentField<S> field = build_palette_field(spec);
  return gen.generate_spatial(per, field, h * expand_factor, w * expand_factor, opt);
}

}  // namespace texsyn
