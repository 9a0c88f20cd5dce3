#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "texsyn/nn.hpp"

namespace texsyn {

// Triangular per-level magnitude weighting on a dyadic ladder anchored at f0.
// Support of level k is (f0*2^k, f0*2^(k+2)); the negative tail of the raw
// formula is clamped to zero, which makes adjacent levels hand a frequency over
// smoothly and sum to one inside the ladder.
template <class S>
S level_weight(S magnitude, int k_level, S f0) {
  if (!(magnitude > S(0))) return S(0);  // degenerate frequency carries no periodic content
  const S r = static_cast<S>(std::log2(static_cast<double>(magnitude) /
                                       (static_cast<double>(f0) * std::pow(2.0, k_level))));
  const S t = S(1) - std::abs(S(1) - r);
  return t > S(0) ? t : S(0);
}

// d level_weight / d magnitude (almost everywhere).
template <class S>
S level_weight_grad(S magnitude, int k_level, S f0) {
  if (!(magnitude > S(0))) return S(0);
  const double r = std::log2(static_cast<double>(magnitude) /
                             (static_cast<double>(f0) * std::pow(2.0, k_level)));
  if (r <= 0.0 || r >= 2.0) return S(0);
  const double slope = (r < 1.0 ? 1.0 : -1.0) / (static_cast<double>(magnitude) * std::log(2.0));
  return static_cast<S>(slope);
}

// Scale/orientation pair predicted per input; scale is kept as log s so it is
// positive by construction.
template <class S>
struct TransformParams {
  S log_s = S(0);
  S theta = S(0);
  S s() const { return static_cast<S>(std::exp(static_cast<double>(log_s))); }
};

// The n_freq learnable global 2-D frequencies plus the reference magnitude f0,
// in radians per output pixel. Column i of freqs.v is f_i = (fx, fy).
template <class S>
struct FrequencyBank {
  Parameter<S> freqs;
  S f0 = S(0);
  int levels = 0;

  void init(int n_freq, int n_levels) {
    levels = n_levels;
    f0 = static_cast<S>(kPi * std::pow(2.0, -n_levels));
    freqs.init("per/freqs", 2, n_freq);
  }

  void init_seeded(std::uint64_t seed) {
    auto rng = make_rng({seed, 0xF1E0ULL});
    // Log-uniform magnitudes across the full dyadic ladder, uniform orientation.
    const double lo = std::log(2.0 * static_cast<double>(f0));
    const double hi = std::log(static_cast<double>(f0) * std::pow(2.0, levels));
    for (Eigen::Index i = 0; i < freqs.v.cols(); ++i) {
      const double mag = std::exp(uniform<double>(rng, lo, hi));
      const double ang = uniform<double>(rng, 0.0, 2.0 * kPi);
      freqs.v(0, i) = static_cast<S>(mag * std::cos(ang));
      freqs.v(1, i) = static_cast<S>(mag * std::sin(ang));
    }
  }

  int n_freq() const { return static_cast<int>(freqs.v.cols()); }

  // Nyquist clamp at output resolution, applied after each optimizer step.
  void clamp_nyquist() {
    for (Eigen::Index i = 0; i < freqs.v.cols(); ++i) {
      const S mag = freqs.v.col(i).norm();
      if (mag > S(kPi)) freqs.v.col(i) *= S(kPi) / mag;
    }
  }
};

// f'_i = s * R(theta) * f_i.
template <class S>
MatX<S> transform_frequencies(const MatX<S>& freqs, const TransformParams<S>& p) {
  const S c = static_cast<S>(std::cos(static_cast<double>(p.theta)));
  const S s = static_cast<S>(std::sin(static_cast<double>(p.theta)));
  MatX<S> rot(2, 2);
  rot << c, -s, s, c;
  return p.s() * (rot * freqs);
}

// Chain rule back through the transform: fills d_freqs, returns (d_log_s, d_theta).
template <class S>
Vec2<S> transform_frequencies_backward(const MatX<S>& freqs, const TransformParams<S>& p,
                                       const MatX<S>& d_fprime, MatX<S>& d_freqs) {
  const S scale = p.s();
  const S c = static_cast<S>(std::cos(static_cast<double>(p.theta)));
  const S s = static_cast<S>(std::sin(static_cast<double>(p.theta)));
  MatX<S> rot(2, 2), drot(2, 2);
  rot << c, -s, s, c;
  drot << -s, -c, c, -s;
  d_freqs = scale * (rot.transpose() * d_fprime);
  const S d_scale = (d_fprime.cwiseProduct(rot * freqs)).sum();
  const S d_theta = scale * (d_fprime.cwiseProduct(drot * freqs)).sum();
  // d/d(log s) = s * d/ds
  return Vec2<S>(scale * d_scale, d_theta);
}

template <class S>
VecX<S> sample_phases(int n_freq, std::mt19937_64& rng) {
  VecX<S> phi(n_freq);
  for (int i = 0; i < n_freq; ++i) phi(i) = uniform<S>(rng, S(0), S(2.0 * kPi));
  return phi;
}

// One rendered stack of sine channels for a generator level.
template <class S>
struct SineField {
  MatX<S> s;    // (n_freq, H*W), values in [-1, 1]
  MatX<S> arg;  // cached phase arguments for the backward pass
  VecX<S> phases;
  int h = 0, w = 0;
  int level = 0;
  S step = S(1);  // output pixels per level pixel
};

// S_i(p, q) = sin(f'_i . x + phi_i) with x = (q, p) * 2^(K-1-k) in output-pixel
// units; the first frequency component runs along the image width.
template <class S>
SineField<S> render_sine_field(const MatX<S>& fprime, const VecX<S>& phases, int k_level,
                               int n_levels, int h, int w) {
  if (h <= 0 || w <= 0) throw SizeError("render_sine_field: grid must be positive");
  if (fprime.cols() != phases.size())
    throw ShapeError("render_sine_field: frequency/phase count mismatch");
  SineField<S> out;
  out.h = h;
  out.w = w;
  out.level = k_level;
  out.phases = phases;
  out.step = static_cast<S>(std::pow(2.0, n_levels - 1 - k_level));
  const int n = static_cast<int>(fprime.cols());
  out.arg.resize(n, static_cast<Eigen::Index>(h) * w);
  for (int y = 0; y < h; ++y) {
    const S py = static_cast<S>(y) * out.step;
    for (int x = 0; x < w; ++x) {
      const S px = static_cast<S>(x) * out.step;
      const Eigen::Index col = static_cast<Eigen::Index>(y) * w + x;
      for (int i = 0; i < n; ++i) out.arg(i, col) = fprime(0, i) * px + fprime(1, i) * py + phases(i);
    }
  }
  // scalar double-precision sine keeps every evaluation path bit-identical
  out.s.resize(out.arg.rows(), out.arg.cols());
  for (Eigen::Index j = 0; j < out.arg.cols(); ++j)
    for (Eigen::Index i = 0; i < out.arg.rows(); ++i)
      out.s(i, j) = static_cast<S>(std::sin(static_cast<double>(out.arg(i, j))));
  return out;
}

// d arg / d f'_i accumulated from dS; returns (2, n_freq) gradient.
template <class S>
MatX<S> sine_field_backward(const SineField<S>& field, const MatX<S>& ds) {
  MatX<S> cosv = field.arg.array().cos().matrix();
  MatX<S> darg = ds.cwiseProduct(cosv);
  const int n = static_cast<int>(field.s.rows());
  MatX<S> d_fprime = MatX<S>::Zero(2, n);
  for (int y = 0; y < field.h; ++y) {
    const S py = static_cast<S>(y) * field.step;
    for (int x = 0; x < field.w; ++x) {
      const S px = static_cast<S>(x) * field.step;
      const Eigen::Index col = static_cast<Eigen::Index>(y) * field.w + x;
      for (int i = 0; i < n; ++i) {
        d_fprime(0, i) += darg(i, col) * px;
        d_fprime(1, i) += darg(i, col) * py;
      }
    }
  }
  return d_fprime;
}

// Auxiliary network Pred: w -> (log s, theta). The final layer starts at zero so
// the initial transform is the identity.
template <class S>
class TransformPredictor {
 public:
  TransformPredictor(int n_w = 32, int hidden = 64) {
    fc_[0].init("per/pred0", hidden, n_w);
    fc_[1].init("per/pred1", 2, hidden);
  }

  void init_seeded(std::uint64_t seed) {
    auto rng = make_rng({seed, 0x93EDULL});
    fc_[0].he_init(rng);
    fc_[1].w.v.setZero();
    fc_[1].b.v.setZero();
  }

  struct Cache {
    Latent<S> w;
    MatX<S> h;
  };

  TransformParams<S> predict(const Latent<S>& w, Cache* cache = nullptr) const {
    MatX<S> h = fc_[0].forward(w);
    leaky_relu_inplace(h, kSlope);
    if (cache) {
      cache->w = w;
      cache->h = h;
    }
    const MatX<S> o = fc_[1].forward(h);
    TransformParams<S> p;
    p.log_s = o(0, 0);
    p.theta = o(1, 0);
    return p;
  }

  // Batched over columns of ws: returns (2, N) of (log s, theta).
  MatX<S> predict_all(const MatX<S>& ws) const {
    MatX<S> h = fc_[0].forward(ws);
    leaky_relu_inplace(h, kSlope);
    return fc_[1].forward(h);
  }

  // Accumulates parameter grads, returns dL/dw.
  Latent<S> backward(const Cache& cache, S d_log_s, S d_theta) {
    MatX<S> dout(2, 1);
    dout << d_log_s, d_theta;
    MatX<S> d = fc_[1].backward(cache.h, dout);
    d = leaky_relu_backward(cache.h, d, kSlope);
    return fc_[0].backward(cache.w, d).col(0);
  }

  void params(std::vector<Parameter<S>*>& out) {
    fc_[0].params(out);
    fc_[1].params(out);
  }

 private:
  static constexpr S kSlope = S(0.2);
  std::array<Dense<S>, 2> fc_;
};

// Frequency bank + Pred + the global modulation matrix A (n_freq, n_w).
template <class S>
struct PeriodicSystem {
  FrequencyBank<S> bank;
  TransformPredictor<S> pred;
  Parameter<S> inject_a;

  void init(int n_freq, int n_levels, int n_w, int pred_hidden) {
    bank.init(n_freq, n_levels);
    pred = TransformPredictor<S>(n_w, pred_hidden);
    inject_a.init("per/inject_a", n_freq, n_w);
  }

  void init_seeded(std::uint64_t seed) {
    bank.init_seeded(mix_seed({seed, 1}));
    pred.init_seeded(mix_seed({seed, 2}));
    // near-silent modulation at the start, but differentiable end to end
    auto rng = make_rng({seed, 3});
    fill_normal(rng, inject_a.v, 0.01);
  }

  void params(std::vector<Parameter<S>*>& out) {
    out.push_back(&bank.freqs);
    pred.params(out);
    out.push_back(&inject_a);
  }
};

// F += W1x1 * (S ∘ weight_k ∘ (A w)); returns the per-channel modulated stack
// through `modulated` for the backward pass.
template <class S>
void modulate_and_inject(Grid<S>& f, const SineField<S>& field, const VecX<S>& level_weights,
                         const VecX<S>& aw, const MatX<S>& conv1x1, MatX<S>* modulated = nullptr) {
  if (field.s.cols() != f.pixels())
    throw ShapeError("modulate_and_inject: sine field grid does not match features");
  if (conv1x1.rows() != f.channels() || conv1x1.cols() != field.s.rows())
    throw ShapeError("modulate_and_inject: 1x1 conv shape mismatch");
  MatX<S> local;
  MatX<S>& m = modulated ? *modulated : local;
  m = (level_weights.cwiseProduct(aw)).asDiagonal() * field.s;
  f.chw.noalias() += conv1x1 * m;
}

}  // namespace texsyn
