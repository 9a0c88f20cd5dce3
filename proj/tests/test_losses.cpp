#include <doctest.h>

#include "texsyn/losses.hpp"

using namespace texsyn;

namespace {

template <class S>
Grid<S> random_image01(int h, int w, std::uint64_t seed) {
  Grid<S> img(3, h, w);
  auto rng = make_rng(seed);
  for (Eigen::Index j = 0; j < img.chw.cols(); ++j)
    for (int c = 0; c < 3; ++c) img.chw(c, j) = uniform<S>(rng, S(0), S(1));
  return img;
}

// Central finite differences of `f` against an analytic image gradient at a
// few randomly probed coordinates.
template <class F>
void check_image_gradient(const Grid<double>& at, const Grid<double>& grad, F f, int probes,
                          std::uint64_t seed, double tol) {
  auto rng = make_rng(seed);
  const double h = 1e-5;
  for (int t = 0; t < probes; ++t) {
    const int c = static_cast<int>(splitmix64(reinterpret_cast<std::uint64_t&>(rng)) % 3);
    const Eigen::Index p = static_cast<Eigen::Index>(
        splitmix64(reinterpret_cast<std::uint64_t&>(rng)) % static_cast<std::uint64_t>(at.pixels()));
    Grid<double> xp = at, xm = at;
    xp.chw(c, p) += h;
    xm.chw(c, p) -= h;
    const double fd = (f(xp) - f(xm)) / (2 * h);
    const double got = grad.chw(c, p);
    const double scale = std::max({std::abs(fd), std::abs(got), 1e-8});
    CHECK(std::abs(got - fd) / scale <= tol);
  }
}

}  // namespace

TEST_CASE("gram_matrix: zeros, diagonal structure, positive semidefiniteness") {
  CHECK(gram_matrix<double>(MatX<double>::Zero(3, 5)).cwiseAbs().maxCoeff() == 0.0);

  // rows with disjoint support give a diagonal Gram
  MatX<double> f = MatX<double>::Zero(3, 6);
  f(0, 0) = 2.0;
  f(1, 2) = -1.5;
  f(2, 4) = 0.5;
  const MatX<double> g = gram_matrix<double>(f);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i != j) CHECK(g(i, j) == 0.0);
  CHECK(g(0, 0) == doctest::Approx(4.0 / 6));

  auto rng = make_rng(51);
  MatX<double> r(6, 40);
  fill_normal(rng, r, 1.0);
  const MatX<double> gr = gram_matrix<double>(r);
  CHECK((gr - gr.transpose()).cwiseAbs().maxCoeff() < 1e-14);
  Eigen::SelfAdjointEigenSolver<MatX<double>> es(gr);
  CHECK(es.eigenvalues().minCoeff() >= -1e-8);
}

TEST_CASE("style_loss: zero at identity, symmetric, finite-difference gradient") {
  VggFeatures<double> vgg;
  vgg.init_seeded(404);
  const Grid<double> a = random_image01<double>(32, 32, 52);
  const Grid<double> b = random_image01<double>(32, 32, 53);
  CHECK(style_loss<double>(vgg, a, a) == 0.0);
  const double ab = style_loss<double>(vgg, a, b);
  const double ba = style_loss<double>(vgg, b, a);
  CHECK(ab > 0.0);
  CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
  CHECK_THROWS_AS(style_loss<double>(vgg, a, random_image01<double>(36, 32, 54)), SizeError);

  Grid<double> grad;
  style_loss_grad<double>(vgg, a, b, grad);
  check_image_gradient(
      b, grad, [&](const Grid<double>& img) { return style_loss<double>(vgg, a, img); }, 12, 55,
      1e-3);
}

TEST_CASE("spectral_loss: zero at identity, circular-translation invariance") {
  const Grid<double> a = random_image01<double>(16, 24, 56);
  CHECK(spectral_loss<double>(a, a) == 0.0);
  // circular translation leaves the Fourier modulus untouched
  Grid<double> rolled(3, 16, 24);
  const int dy = 5, dx = 9;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 24; ++x)
      rolled.chw.col(static_cast<Eigen::Index>(y) * 24 + x) =
          a.chw.col(static_cast<Eigen::Index>((y + dy) % 16) * 24 + (x + dx) % 24);
  CHECK(spectral_loss<double>(a, rolled) <= 1e-6);
  CHECK(spectral_loss<double>(a, random_image01<double>(16, 24, 57)) > 1e-6);
}

TEST_CASE("spectral_loss: sinusoid on a flat image matches the two-bin oracle") {
  const int h = 16, w = 16;
  Grid<double> flat(3, h, w);
  flat.chw.setConstant(0.5);
  Grid<double> wavy = flat;
  const double amp = 0.125;
  const int u = 3, v = 5;  // integer frequency bins
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        wavy.chw(c, static_cast<Eigen::Index>(y) * w + x) =
            0.5 + amp * std::cos(2.0 * kPi * (u * x / double(w) + v * y / double(h)));
  // the cosine adds magnitude amp*HW/2 at bins (v,u) and (-v,-u); with the
  // 1/(HW) scaling each contributes (amp/2)^2 to the squared difference
  const double expected = 2.0 * (amp / 2) * (amp / 2) / (h * w);
  CHECK(spectral_loss<double>(flat, wavy) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("spectral_loss gradient agrees with finite differences") {
  const Grid<double> a = random_image01<double>(12, 10, 58);
  const Grid<double> b = random_image01<double>(12, 10, 59);
  Grid<double> grad;
  spectral_loss<double>(a, b, &grad);
  check_image_gradient(
      b, grad, [&](const Grid<double>& img) { return spectral_loss<double>(a, img); }, 12, 60,
      1e-3);
}

TEST_CASE("sliced_hist_loss: permutation invariance is exact") {
  const Grid<double> a = random_image01<double>(8, 9, 61);
  Grid<double> perm(3, 8, 9);
  std::vector<int> idx(a.pixels());
  std::iota(idx.begin(), idx.end(), 0);
  auto rng = make_rng(62);
  std::shuffle(idx.begin(), idx.end(), rng);
  for (Eigen::Index p = 0; p < a.pixels(); ++p) perm.chw.col(p) = a.chw.col(idx[p]);
  CHECK(sliced_hist_loss<double>(a, perm, 8, 63) == 0.0);
}

TEST_CASE("sliced_hist_loss: constant images give the projected squared gap") {
  Grid<double> a(3, 4, 4), b(3, 4, 4);
  VecX<double> ca(3), cb(3);
  ca << 0.2, 0.5, 0.9;
  cb << 0.4, 0.1, 0.6;
  a.chw.colwise() = ca;
  b.chw.colwise() = cb;
  // one random direction; reproduce it to compute ((a-b).v)^2
  const std::uint64_t seed = 64;
  auto rng = make_rng({seed, 0x415CULL});
  VecX<double> v(3);
  for (int c = 0; c < 3; ++c) v(c) = normal<double>(rng);
  v.normalize();
  const double expect = std::pow((ca - cb).dot(v), 2.0);
  CHECK(sliced_hist_loss<double>(a, b, 1, seed) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("sliced_hist_loss: two-pixel images match the hand-sorted oracle") {
  Grid<double> a(3, 1, 2), b(3, 1, 2);
  auto rng = make_rng(65);
  fill_normal(rng, a.chw, 1.0);
  fill_normal(rng, b.chw, 1.0);
  const std::uint64_t seed = 66;
  auto drng = make_rng({seed, 0x415CULL});
  VecX<double> v(3);
  for (int c = 0; c < 3; ++c) v(c) = normal<double>(drng);
  v.normalize();
  double p1[2] = {a.chw.col(0).dot(v), a.chw.col(1).dot(v)};
  double p2[2] = {b.chw.col(0).dot(v), b.chw.col(1).dot(v)};
  if (p1[0] > p1[1]) std::swap(p1[0], p1[1]);
  if (p2[0] > p2[1]) std::swap(p2[0], p2[1]);
  const double expect =
      ((p1[0] - p2[0]) * (p1[0] - p2[0]) + (p1[1] - p2[1]) * (p1[1] - p2[1])) / 2.0;
  CHECK(sliced_hist_loss<double>(a, b, 1, seed) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("sliced_hist_loss gradient agrees with finite differences") {
  const Grid<double> a = random_image01<double>(6, 6, 67);
  const Grid<double> b = random_image01<double>(6, 6, 68);
  Grid<double> grad;
  sliced_hist_loss<double>(a, b, 4, 69, &grad);
  check_image_gradient(
      b, grad, [&](const Grid<double>& img) { return sliced_hist_loss<double>(a, img, 4, 69); },
      12, 70, 1e-3);
}

TEST_CASE("ssl_loss: analytic minimum, maximum, and pi periodicity") {
  // matching angle differences (mod pi) and matching scale ratios
  const double lo = ssl_loss<double>(0.3, 0.3 + 0.8, 0.1, 0.1 + 0.8, 1.0, 2.0, 1.5, 3.0);
  CHECK(lo == doctest::Approx(1.0 - kPi / 2).epsilon(1e-12));
  // the same with the angle difference off by exactly pi
  const double lo_pi = ssl_loss<double>(0.3, 0.3 + 0.8 + kPi, 0.1, 0.1 + 0.8, 1.0, 2.0, 1.5, 3.0);
  CHECK(lo_pi == doctest::Approx(lo).epsilon(1e-12));
  // angle mismatch of pi/2 maximizes the angular term at 1
  const double hi = ssl_loss<double>(0.0, kPi / 2, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0);
  CHECK(hi == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(ssl_loss<double>(0, 0, 0, 0, -1.0, 1, 1, 1), DomainError);
}

TEST_CASE("ssl_loss: grid scan finds the minimum only on the matching manifold") {
  const double target = 1.0 - kPi / 2;
  double best = 1e9;
  for (int ia = 0; ia <= 180; ++ia) {
    const double da = -kPi + ia * (2 * kPi / 180);  // angle error
    for (int ir = 0; ir <= 40; ++ir) {
      const double dr = -0.5 + ir * (1.0 / 40);  // ratio error
      const double loss = ssl_loss<double>(0.2, 0.9 + da, 0.0, 0.7, 1.0, 1.3 + dr, 1.0, 1.3);
      best = std::min(best, loss);
      const bool on_manifold =
          (std::abs(wrap_mod_pi(da)) < 1e-9 || std::abs(wrap_mod_pi(da) - kPi) < 1e-9) &&
          std::abs(dr) < 1e-12;
      if (on_manifold)
        CHECK(loss == doctest::Approx(target).epsilon(1e-9));
      else
        CHECK(loss > target + 1e-12);
    }
  }
  CHECK(best == doctest::Approx(target).epsilon(1e-9));
}

TEST_CASE("ssl_loss gradients agree with finite differences off the kinks") {
  auto rng = make_rng(71);
  for (int t = 0; t < 30; ++t) {
    const double ta0 = uniform<double>(rng, 0.0, 2 * kPi);
    const double ta1 = uniform<double>(rng, 0.0, 2 * kPi);
    const double tp0 = uniform<double>(rng, -1.0, 1.0);
    const double tp1 = uniform<double>(rng, -1.0, 1.0);
    const double sa0 = uniform<double>(rng, 0.5, 2.0), sa1 = uniform<double>(rng, 0.5, 2.0);
    const double sp0 = uniform<double>(rng, 0.5, 2.0), sp1 = uniform<double>(rng, 0.5, 2.0);
    SslGrads<double> g;
    ssl_loss<double>(ta0, ta1, tp0, tp1, sa0, sa1, sp0, sp1, &g);
    const double h = 1e-7;
    auto f = [&](double a, double b, double c, double d) {
      return ssl_loss<double>(ta0, ta1, a, b, sa0, sa1, c, d);
    };
    const double delta = wrap_mod_pi((ta1 - ta0) - (tp1 - tp0));
    if (delta > 1e-3 && std::abs(delta - kPi / 2) > 1e-3 && delta < kPi - 1e-3) {
      CHECK(g.d_theta_pred0 ==
            doctest::Approx((f(tp0 + h, tp1, sp0, sp1) - f(tp0 - h, tp1, sp0, sp1)) / (2 * h))
                .epsilon(1e-5));
      CHECK(g.d_theta_pred1 ==
            doctest::Approx((f(tp0, tp1 + h, sp0, sp1) - f(tp0, tp1 - h, sp0, sp1)) / (2 * h))
                .epsilon(1e-5));
    }
    CHECK(g.d_s_pred0 ==
          doctest::Approx((f(tp0, tp1, sp0 + h, sp1) - f(tp0, tp1, sp0 - h, sp1)) / (2 * h))
              .epsilon(1e-4));
    CHECK(g.d_s_pred1 ==
          doctest::Approx((f(tp0, tp1, sp0, sp1 + h) - f(tp0, tp1, sp0, sp1 - h)) / (2 * h))
              .epsilon(1e-4));
  }
}

TEST_CASE("total_loss: reductions and the arithmetic oracle") {
  LossWeights w;
  LossReport r;
  CHECK(total_loss(r, w) == 0.0);
  r.style = 0.7;
  CHECK(total_loss(r, w) == doctest::Approx(0.7));
  r.adversarial = 0.3;
  r.histogram = 0.1;
  r.spectral = 0.2;
  r.ssl = -0.5;
  w.style = 2.0;
  w.adversarial = 0.5;
  w.histogram = 3.0;
  w.spectral = 0.25;
  w.ssl = 1.5;
  CHECK(total_loss(r, w) ==
        doctest::Approx(2.0 * 0.7 + 0.5 * 0.3 + 3.0 * 0.1 + 0.25 * 0.2 + 1.5 * -0.5));
}
