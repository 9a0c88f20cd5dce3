#pragma once

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <vector>

#include "texsyn/encoder.hpp"
#include "texsyn/vgg.hpp"

namespace texsyn {

// Spatially normalized Gram matrix G = F F^T / K, K the spatial sample count.
template <class S>
MatX<S> gram_matrix(const MatX<S>& f) {
  return (f * f.transpose()) / static_cast<S>(f.cols());
}

struct LossWeights {
  double style = 1.0;
  double adversarial = 1.0;
  double histogram = 1.0;
  double spectral = 1.0;
  double ssl = 1.0;
  double lambda_gp = 10.0;
};

// --- style loss -----------------------------------------------------------------

// Sum over depths of the mean squared Gram difference. Both stacks must come
// from images of equal size.
template <class S>
S style_loss_from_stacks(const FeatureStack<S>& a, const FeatureStack<S>& b,
                         std::array<Grid<S>, 5>* tap_grads_b = nullptr) {
  if (a.src_h != b.src_h || a.src_w != b.src_w)
    throw SizeError("style_loss: images must have equal sizes (resize the inputs)");
  S total = S(0);
  for (int l = 0; l < 5; ++l) {
    const MatX<S>& fa = a.maps[l].chw;
    const MatX<S>& fb = b.maps[l].chw;
    const S c = static_cast<S>(fa.rows());
    MatX<S> diff = gram_matrix<S>(fb) - gram_matrix<S>(fa);
    total += diff.squaredNorm() / (c * c);
    if (tap_grads_b) {
      // d/dF_b of mean((G_b - G_a)^2) = 4 (G_b - G_a) F_b / (C^2 K)
      Grid<S>& g = (*tap_grads_b)[l];
      g.h = b.maps[l].h;
      g.w = b.maps[l].w;
      g.chw.noalias() = (S(4) / (c * c * static_cast<S>(fb.cols()))) * (diff * fb);
    }
  }
  return total;
}

// Convenience wrapper running the feature extractor on both images.
template <class S>
S style_loss(const VggFeatures<S>& vgg, const Grid<S>& i1, const Grid<S>& i2) {
  if (i1.h != i2.h || i1.w != i2.w)
    throw SizeError("style_loss: images must have equal sizes (resize the inputs)");
  return style_loss_from_stacks<S>(vgg.forward(i1), vgg.forward(i2));
}

// Full gradient of style_loss w.r.t. the second image.
template <class S>
S style_loss_grad(VggFeatures<S>& vgg, const Grid<S>& i1, const Grid<S>& i2, Grid<S>& d_i2) {
  typename VggFeatures<S>::Cache cache;
  const FeatureStack<S> s1 = vgg.forward(i1);
  const FeatureStack<S> s2 = vgg.forward(i2, &cache);
  std::array<Grid<S>, 5> taps;
  const S loss = style_loss_from_stacks<S>(s1, s2, &taps);
  d_i2 = vgg.backward(cache, taps);
  return loss;
}

// --- spectral loss ----------------------------------------------------------------

namespace detail {

template <class S>
MatX<std::complex<S>> fft2(const MatX<S>& img, int h, int w) {
  Eigen::FFT<S> fft;
  MatX<std::complex<S>> tmp(h, w);
  std::vector<std::complex<S>> line_out;
  std::vector<S> line_in(static_cast<size_t>(w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) line_in[x] = img(0, static_cast<Eigen::Index>(y) * w + x);
    fft.fwd(line_out, line_in);
    for (int x = 0; x < w; ++x) tmp(y, x) = line_out[x];
  }
  MatX<std::complex<S>> out(h, w);
  std::vector<std::complex<S>> col_in(static_cast<size_t>(h)), col_out;
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) col_in[y] = tmp(y, x);
    fft.fwd(col_out, col_in);
    for (int y = 0; y < h; ++y) out(y, x) = col_out[y];
  }
  return out;
}

template <class S>
MatX<std::complex<S>> ifft2(const MatX<std::complex<S>>& f) {
  Eigen::FFT<S> fft;
  const int h = static_cast<int>(f.rows()), w = static_cast<int>(f.cols());
  MatX<std::complex<S>> tmp(h, w);
  std::vector<std::complex<S>> line_in(static_cast<size_t>(w)), line_out;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) line_in[x] = f(y, x);
    fft.inv(line_out, line_in);
    for (int x = 0; x < w; ++x) tmp(y, x) = line_out[x];
  }
  MatX<std::complex<S>> out(h, w);
  std::vector<std::complex<S>> col_in(static_cast<size_t>(h)), col_out;
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) col_in[y] = tmp(y, x);
    fft.inv(col_out, col_in);
    for (int y = 0; y < h; ++y) out(y, x) = col_out[y];
  }
  return out;
}

}  // namespace detail

// Mean squared difference of per-channel Fourier magnitude spectra. Magnitudes
// are scaled by 1/(H W) so the DC bin reads as the channel mean and the loss is
// resolution-comparable; the modulus makes it exactly invariant to circular
// translation of either image.
template <class S>
S spectral_loss(const Grid<S>& i1, const Grid<S>& i2, Grid<S>* d_i2 = nullptr) {
  if (i1.h != i2.h || i1.w != i2.w || i1.channels() != i2.channels())
    throw SizeError("spectral_loss: images must have equal sizes");
  const int h = i1.h, w = i1.w, nc = i1.channels();
  const S norm = static_cast<S>(h) * static_cast<S>(w);
  S total = S(0);
  if (d_i2) *d_i2 = Grid<S>(nc, h, w);
  for (int c = 0; c < nc; ++c) {
    MatX<std::complex<S>> f1 = detail::fft2<S>(i1.chw.row(c), h, w);
    MatX<std::complex<S>> f2 = detail::fft2<S>(i2.chw.row(c), h, w);
    MatX<S> a1 = f1.cwiseAbs() / norm;
    MatX<S> a2 = f2.cwiseAbs() / norm;
    total += (a1 - a2).squaredNorm() / (norm * static_cast<S>(nc));
    if (d_i2) {
      // dL/dX2 = 2 (a2 - a1) / (HW nc norm) * X2/|X2|; pull back through the DFT.
      MatX<std::complex<S>> beta(h, w);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const S mag = std::abs(f2(y, x));
          if (mag > S(0)) {
            const S coef = S(2) * (a2(y, x) - a1(y, x)) / (norm * norm * static_cast<S>(nc));
            beta(y, x) = coef * (f2(y, x) / mag);
          } else {
            beta(y, x) = std::complex<S>(0, 0);
          }
        }
      MatX<std::complex<S>> grad = detail::ifft2<S>(beta);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          d_i2->chw(c, static_cast<Eigen::Index>(y) * w + x) = norm * grad(y, x).real();
    }
  }
  return total;
}

// --- sliced colour histogram loss --------------------------------------------------

// Average over random unit colour directions of the mean squared difference of
// sorted projections. Spatial layout is irrelevant by construction.
template <class S>
S sliced_hist_loss(const Grid<S>& i1, const Grid<S>& i2, int n_dirs, std::uint64_t seed,
                   Grid<S>* d_i2 = nullptr) {
  if (i1.pixels() != i2.pixels() || i1.channels() != i2.channels())
    throw SizeError("sliced_hist_loss: images must have equal pixel counts");
  const Eigen::Index n = i1.pixels();
  const int nc = i1.channels();
  auto rng = make_rng({seed, 0x415CULL});
  if (d_i2) *d_i2 = Grid<S>(nc, i2.h, i2.w);
  S total = S(0);
  std::vector<int> idx1(n), idx2(n);
  for (int d = 0; d < n_dirs; ++d) {
    VecX<S> v(nc);
    for (int c = 0; c < nc; ++c) v(c) = normal<S>(rng);
    const S vn = v.norm();
    v = vn > S(0) ? VecX<S>(v / vn) : VecX<S>(VecX<S>::Unit(nc, 0));
    VecX<S> p1 = i1.chw.transpose() * v;
    VecX<S> p2 = i2.chw.transpose() * v;
    std::iota(idx1.begin(), idx1.end(), 0);
    std::iota(idx2.begin(), idx2.end(), 0);
    std::sort(idx1.begin(), idx1.end(), [&](int a, int b) { return p1(a) < p1(b); });
    std::sort(idx2.begin(), idx2.end(), [&](int a, int b) { return p2(a) < p2(b); });
    S acc = S(0);
    for (Eigen::Index k = 0; k < n; ++k) {
      const S diff = p1(idx1[k]) - p2(idx2[k]);
      acc += diff * diff;
      if (d_i2) {
        const S g = S(-2) * diff / (static_cast<S>(n) * static_cast<S>(n_dirs));
        d_i2->chw.col(idx2[k]) += g * v;
      }
    }
    total += acc / static_cast<S>(n);
  }
  return total / static_cast<S>(n_dirs);
}

// --- geometric self-supervision loss -----------------------------------------------

// Wrap to [0, pi): the natural modulus for image orientation.
template <class S>
S wrap_mod_pi(S x) {
  S r = static_cast<S>(std::fmod(static_cast<double>(x), kPi));
  if (r < S(0)) r += static_cast<S>(kPi);
  return r;
}

template <class S>
struct SslGrads {
  S d_theta_pred0 = S(0), d_theta_pred1 = S(0);
  S d_s_pred0 = S(0), d_s_pred1 = S(0);
};

// 1 - |pi/2 - ((ta1 - ta0) - (tp1 - tp0)) mod pi| + (sa1/sa0 - sp1/sp0)^2.
// Applied augmentation parameters (ta, sa) against the network's predictions
// (tp, sp); minimal at 1 - pi/2 exactly when the angle differences agree mod pi
// and the scale ratios match. Gradients are taken w.r.t. the predictions.
template <class S>
S ssl_loss(S theta_applied0, S theta_applied1, S theta_pred0, S theta_pred1, S s_applied0,
           S s_applied1, S s_pred0, S s_pred1, SslGrads<S>* grads = nullptr) {
  if (!(s_applied0 > S(0)) || !(s_applied1 > S(0)) || !(s_pred0 > S(0)) || !(s_pred1 > S(0)))
    throw DomainError("ssl_loss: scales must be positive");
  const S delta =
      wrap_mod_pi<S>((theta_applied1 - theta_applied0) - (theta_pred1 - theta_pred0));
  const S inner = static_cast<S>(kPi) / S(2) - delta;
  const S angular = S(1) - std::abs(inner);
  const S r_applied = s_applied1 / s_applied0;
  const S r_pred = s_pred1 / s_pred0;
  const S diff = r_applied - r_pred;
  if (grads) {
    // d angular / d delta = sign(inner); d delta / d theta_pred1 = -1 (a.e.)
    const S sgn = inner >= S(0) ? S(1) : S(-1);
    grads->d_theta_pred1 = -sgn;
    grads->d_theta_pred0 = sgn;
    grads->d_s_pred1 = S(-2) * diff / s_pred0;
    grads->d_s_pred0 = S(2) * diff * s_pred1 / (s_pred0 * s_pred0);
  }
  return angular + diff * diff;
}

// --- combined objective ---------------------------------------------------------------

struct LossReport {
  double style = 0, adversarial = 0, histogram = 0, spectral = 0, ssl = 0;
  double total(const LossWeights& w) const {
    return w.style * style + w.adversarial * adversarial + w.histogram * histogram +
           w.spectral * spectral + w.ssl * ssl;
  }
};

inline double total_loss(const LossReport& r, const LossWeights& w) { return r.total(w); }

}  // namespace texsyn
