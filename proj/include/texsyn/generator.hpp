#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "texsyn/nn.hpp"
#include "texsyn/periodic.hpp"

namespace texsyn {

struct GeneratorConfig {
  int levels = 5;
  std::vector<int> channels = {512, 256, 128, 64, 32};
  int seed_channels = 512;
  int n_w = 32;
  int n_freq = 16;
};

// Per-dimension level size bookkeeping. Each level runs two unpadded 3x3
// convolutions (total trim 4) and levels are separated by x2 nearest
// upsampling, so working sizes follow in_k = ceil(in_{k+1} / 2) + 4 backward
// from the target; the forward replay can overshoot, which the final center
// crop absorbs.
struct SizePlan {
  struct Level {
    int in_h = 0, in_w = 0;    // working size (post-upsample)
    int mid_h = 0, mid_w = 0;  // after first conv
    int out_h = 0, out_w = 0;  // after second conv
  };
  std::vector<Level> levels;
  int seed_h = 0, seed_w = 0;
  int target_h = 0, target_w = 0;
  int pre_h = 0, pre_w = 0;  // uncropped output size
};

inline SizePlan plan_sizes(int target_h, int target_w, int n_levels) {
  constexpr int kTrim = 4;
  if (target_h < 1 || target_w < 1)
    throw SizeError("plan_sizes: target must be at least 1x1, got " + std::to_string(target_h) +
                    "x" + std::to_string(target_w));
  if (n_levels < 2) throw SizeError("plan_sizes: need at least 2 levels");
  auto solve = [&](int target) {
    std::vector<int> in(n_levels);
    int need = target;  // required post-conv size of the level above
    for (int k = n_levels - 1; k >= 0; --k) {
      in[k] = need + kTrim;
      need = (in[k] + 1) / 2;
    }
    return in;
  };
  const std::vector<int> in_h = solve(target_h), in_w = solve(target_w);
  SizePlan plan;
  plan.levels.resize(n_levels);
  plan.target_h = target_h;
  plan.target_w = target_w;
  plan.seed_h = in_h[0];
  plan.seed_w = in_w[0];
  int h = in_h[0], w = in_w[0];
  for (int k = 0; k < n_levels; ++k) {
    if (k > 0) {
      h *= 2;
      w *= 2;
    }
    auto& lv = plan.levels[k];
    lv.in_h = h;
    lv.in_w = w;
    lv.mid_h = h - 2;
    lv.mid_w = w - 2;
    lv.out_h = h - 4;
    lv.out_w = w - 4;
    h = lv.out_h;
    w = lv.out_w;
  }
  plan.pre_h = plan.levels.back().out_h;
  plan.pre_w = plan.levels.back().out_w;
  return plan;
}

// One single-channel noise map per convolution layer. Values come from a
// coordinate-hashed field, so a stack drawn at offset (dy, dx) is the offset-0
// stack translated rigidly (dy, dx in output pixels, one lattice step per level
// grid unit).
template <class S>
struct NoiseStack {
  std::vector<Grid<S>> maps;  // 2 per level

  static NoiseStack gaussian(std::uint64_t seed, const SizePlan& plan) {
    return shifted(seed, plan, 0, 0);
  }

  static NoiseStack shifted(std::uint64_t seed, const SizePlan& plan, int dy, int dx) {
    const int n_levels = static_cast<int>(plan.levels.size());
    NoiseStack out;
    for (int k = 0; k < n_levels; ++k) {
      const int step = 1 << (n_levels - 1 - k);
      if (dy % step != 0 || dx % step != 0)
        throw DomainError("noise shift must be a multiple of the total upsampling factor");
      const int oy = dy / step, ox = dx / step;
      const auto& lv = plan.levels[k];
      const int hs[2] = {lv.mid_h, lv.out_h};
      const int ws[2] = {lv.mid_w, lv.out_w};
      for (int slot = 0; slot < 2; ++slot) {
        Grid<S> g(1, hs[slot], ws[slot]);
        for (int y = 0; y < g.h; ++y)
          for (int x = 0; x < g.w; ++x)
            g.at(0, y, x) = gauss_at<S>(seed, static_cast<std::uint64_t>(2 * k + slot), y + oy, x + ox);
        out.maps.push_back(std::move(g));
      }
    }
    return out;
  }

  static NoiseStack zeros(const SizePlan& plan) {
    NoiseStack out;
    for (const auto& lv : plan.levels) {
      out.maps.emplace_back(1, lv.mid_h, lv.mid_w);
      out.maps.emplace_back(1, lv.out_h, lv.out_w);
    }
    return out;
  }

  void check(const SizePlan& plan) const {
    if (maps.size() != plan.levels.size() * 2)
      throw ShapeError("noise stack: expected " + std::to_string(plan.levels.size() * 2) +
                       " maps, got " + std::to_string(maps.size()));
    for (size_t k = 0; k < plan.levels.size(); ++k) {
      const auto& lv = plan.levels[k];
      const auto& a = maps[2 * k];
      const auto& b = maps[2 * k + 1];
      if (a.h != lv.mid_h || a.w != lv.mid_w || b.h != lv.out_h || b.w != lv.out_w)
        throw ShapeError("noise stack: map size does not match the layer plan at level " +
                         std::to_string(k));
    }
  }
};

// Latent codes laid out on a coarse grid, bilinearly interpolated when sampled.
template <class S>
struct SpatialLatentField {
  MatX<S> codes;  // (n_w, h*w)
  int h = 0, w = 0;

  static SpatialLatentField constant(const Latent<S>& code) {
    SpatialLatentField f;
    f.codes = code;
    f.h = 1;
    f.w = 1;
    return f;
  }

  bool is_constant() const { return h == 1 && w == 1; }

  // True when every cell holds bitwise the same code.
  bool constant_content() const {
    for (Eigen::Index j = 1; j < codes.cols(); ++j)
      if ((codes.col(j).array() != codes.col(0).array()).any()) return false;
    return true;
  }

  // Align-corners bilinear resampling onto a (th, tw) grid. Uses the lerp form
  // a + t*(b - a), which reproduces a constant field bit-exactly.
  MatX<S> upsample(int th, int tw) const {
    MatX<S> out(codes.rows(), static_cast<Eigen::Index>(th) * tw);
    for (int y = 0; y < th; ++y) {
      const double fy = (h == 1 || th == 1) ? 0.0
                                            : static_cast<double>(y) * (h - 1) / static_cast<double>(th - 1);
      const int y0 = std::min(static_cast<int>(fy), h - 1);
      const int y1 = std::min(y0 + 1, h - 1);
      const S ty = static_cast<S>(fy - y0);
      for (int x = 0; x < tw; ++x) {
        const double fx = (w == 1 || tw == 1)
                              ? 0.0
                              : static_cast<double>(x) * (w - 1) / static_cast<double>(tw - 1);
        const int x0 = std::min(static_cast<int>(fx), w - 1);
        const int x1 = std::min(x0 + 1, w - 1);
        const S tx = static_cast<S>(fx - x0);
        const auto c00 = codes.col(static_cast<Eigen::Index>(y0) * w + x0);
        const auto c01 = codes.col(static_cast<Eigen::Index>(y0) * w + x1);
        const auto c10 = codes.col(static_cast<Eigen::Index>(y1) * w + x0);
        const auto c11 = codes.col(static_cast<Eigen::Index>(y1) * w + x1);
        out.col(static_cast<Eigen::Index>(y) * tw + x) =
            (c00 + tx * (c01 - c00)) + ty * ((c10 + tx * (c11 - c10)) - (c00 + tx * (c01 - c00)));
      }
    }
    return out;
  }
};

// --- adaptive instance normalization -------------------------------------------

template <class S>
struct AdainStats {
  VecX<S> mu, sigma;
};

// Per channel: (x - mu)/(sigma + eps) * sigma_hat + mu_hat, statistics taken
// over the spatial extent.
template <class S, class VMu, class VSg>
Grid<S> adain(const Grid<S>& x, const VMu& mu_hat_in, const VSg& sigma_hat_in,
              AdainStats<S>* stats = nullptr) {
  const VecX<S> mu_hat = mu_hat_in;
  const VecX<S> sigma_hat = sigma_hat_in;
  const S eps = S(1e-8);
  const S n = static_cast<S>(x.pixels());
  VecX<S> mu = x.chw.rowwise().mean();
  VecX<S> var = (x.chw.colwise() - mu).rowwise().squaredNorm() / n;
  VecX<S> sigma = var.cwiseMax(S(0)).cwiseSqrt();
  if (stats) {
    stats->mu = mu;
    stats->sigma = sigma;
  }
  Grid<S> y = x;
  y.chw = (((x.chw.colwise() - mu).array().colwise() / (sigma.array() + eps)).colwise() *
           sigma_hat.array())
              .colwise() +
          mu_hat.array();
  return y;
}

// Backward through adain. Returns dx; fills target gradients.
template <class S>
Grid<S> adain_backward(const Grid<S>& x, const AdainStats<S>& st, const VecX<S>& sigma_hat,
                       const Grid<S>& dy, VecX<S>& d_mu_hat, VecX<S>& d_sigma_hat) {
  const S eps = S(1e-8);
  const S n = static_cast<S>(x.pixels());
  MatX<S> u = x.chw.colwise() - st.mu;
  VecX<S> d = st.sigma.array() + eps;
  d_mu_hat = dy.chw.rowwise().sum();
  d_sigma_hat = (dy.chw.cwiseProduct(u).rowwise().sum()).cwiseQuotient(d);
  // du = sigma_hat * [ g/d - (sum g.u) u / (n sigma d^2) ], sigma-term guarded
  VecX<S> gu = dy.chw.cwiseProduct(u).rowwise().sum();
  VecX<S> coef(x.channels());
  for (int c = 0; c < x.channels(); ++c) {
    coef(c) = st.sigma(c) > S(0) ? sigma_hat(c) * gu(c) / (n * st.sigma(c) * d(c) * d(c)) : S(0);
  }
  Grid<S> dx = x;
  dx.chw = (dy.chw.array().colwise() * (sigma_hat.array() / d.array())).matrix() -
           (u.array().colwise() * coef.array()).matrix();
  VecX<S> mean_du = dx.chw.rowwise().mean();
  dx.chw.colwise() -= mean_du;
  return dx;
}

template <class S>
struct GenOptions {
  std::uint64_t noise_seed = 1;
  std::uint64_t phase_seed = 2;
  const NoiseStack<S>* noise = nullptr;  // explicit noise maps (else drawn from noise_seed)
  const VecX<S>* phases = nullptr;       // explicit phases (else drawn from phase_seed)
  bool disable_injection = false;        // null the sine modulation entirely
  int stat_window = 0;                   // spatial path: 0 = extent/4 (min 3)
};

// Style-based multi-level synthesis network. All spatial variation comes from
// the noise maps and the injected sine fields; the learned seed is spatially
// constant and convolutions use no padding.
template <class S>
class Generator {
 public:
  explicit Generator(GeneratorConfig cfg = {}) : cfg_(std::move(cfg)) {
    if (cfg_.levels < 2 || static_cast<int>(cfg_.channels.size()) != cfg_.levels)
      throw ConfigError("generator: channel plan must list one width per level");
    seed_.init("gen/seed", cfg_.seed_channels, 1);
    levels_.resize(cfg_.levels);
    int in_ch = cfg_.seed_channels;
    for (int k = 0; k < cfg_.levels; ++k) {
      auto& lv = levels_[k];
      const int ch = cfg_.channels[k];
      const std::string base = "gen/l" + std::to_string(k);
      lv.conv1.init(base + "/conv1", in_ch, ch, 3, 0);
      lv.conv2.init(base + "/conv2", ch, ch, 3, 0);
      lv.noise1.init(base + "/noise1", ch, 1);
      lv.noise2.init(base + "/noise2", ch, 1);
      lv.sty_scale1.init(base + "/sty_scale1", ch, cfg_.n_w);
      lv.sty_bias1.init(base + "/sty_bias1", ch, cfg_.n_w);
      lv.sty_scale2.init(base + "/sty_scale2", ch, cfg_.n_w);
      lv.sty_bias2.init(base + "/sty_bias2", ch, cfg_.n_w);
      lv.inject.init(base + "/inject", ch, cfg_.n_freq);
      in_ch = ch;
    }
    to_rgb_.init("gen/torgb", cfg_.channels.back(), 3, 1, 0);
  }

  const GeneratorConfig& config() const { return cfg_; }

  void init_seeded(std::uint64_t seed) {
    auto rng = make_rng({seed, 0x6E6ULL});
    fill_normal(rng, seed_.v, 1.0);
    for (auto& lv : levels_) {
      lv.conv1.he_init(rng);
      lv.conv2.he_init(rng);
      // Style heads and noise scales start neutral: targets (0,1), silent noise.
      fill_normal(rng, lv.inject.v, std::sqrt(1.0 / cfg_.n_freq));
    }
    to_rgb_.he_init(rng);
  }

  SizePlan plan(int target_h, int target_w) const {
    return plan_sizes(target_h, target_w, cfg_.levels);
  }

  // The learned seed replicated over an (h, w) grid.
  Grid<S> expand_seed(int h, int w) const {
    if (h < 1 || w < 1) throw SizeError("expand_seed: size must be positive");
    Grid<S> g(cfg_.seed_channels, h, w);
    g.chw.colwise() = seed_.v.col(0);
    return g;
  }

  struct Cache {
    SizePlan plan;
    Latent<S> w;
    typename TransformPredictor<S>::Cache pred;
    TransformParams<S> tp;
    MatX<S> fprime;
    VecX<S> phases;
    VecX<S> aw;
    NoiseStack<S> noise;
    struct LevelCache {
      Grid<S> x3;  // post lrelu, adain1 input
      Grid<S> x4;  // conv2 input (post injection)
      Grid<S> x7;  // post lrelu, adain2 input
      Grid<S> a2;  // level output
      AdainStats<S> st1, st2;
      VecX<S> mu1, sg1, mu2, sg2;  // adain targets
      SineField<S> field;
      VecX<S> lambda;
    };
    std::vector<LevelCache> levels;
    Grid<S> rgb;  // post tanh, pre crop
  };

  Grid<S> generate(const PeriodicSystem<S>& per, const Latent<S>& w, int target_h, int target_w,
                   const GenOptions<S>& opt = {}) const {
    return const_cast<Generator*>(this)->run(const_cast<PeriodicSystem<S>&>(per), w, target_h,
                                             target_w, opt, nullptr);
  }

  Grid<S> generate_cache(PeriodicSystem<S>& per, const Latent<S>& w, int target_h, int target_w,
                         const GenOptions<S>& opt, Cache& cache) {
    return run(per, w, target_h, target_w, opt, &cache);
  }

  // Backward from the output-image gradient. Accumulates all generator and
  // periodic-system gradients; returns dL/dw. extra_d_log_s / extra_d_theta let
  // the caller fold additional gradient into this sample's Pred outputs.
  Latent<S> backward(PeriodicSystem<S>& per, const Cache& cache, const Grid<S>& d_out,
                     S extra_d_log_s = S(0), S extra_d_theta = S(0)) {
    const int K = cfg_.levels;
    Latent<S> dw = Latent<S>::Zero(cfg_.n_w);
    MatX<S> d_fprime = MatX<S>::Zero(2, cfg_.n_freq);
    VecX<S> d_aw = VecX<S>::Zero(cfg_.n_freq);

    Grid<S> d = center_crop_backward(d_out, cache.rgb.h, cache.rgb.w);
    d.chw = d.chw.cwiseProduct((S(1) - cache.rgb.chw.array().square()).matrix());
    {
      const Grid<S>& rgb_in = cache.levels.back().a2;
      MatX<S> col;
      to_rgb_.im2col(rgb_in, col);
      d = to_rgb_.backward(rgb_in, col, d, true, true);
    }
    for (int k = K - 1; k >= 0; --k) {
      auto& lv = levels_[k];
      const auto& lc = cache.levels[k];
      // adain 2
      VecX<S> d_mu, d_sg;
      d = adain_backward(lc.x7, lc.st2, lc.sg2, d, d_mu, d_sg);
      dw += lv.sty_scale2.backward(cache.w, d_sg).col(0);
      dw += lv.sty_bias2.backward(cache.w, d_mu).col(0);
      d.chw = leaky_relu_backward(lc.x7.chw, d.chw, kSlope);
      lv.noise2.g.col(0).noalias() += d.chw * cache.noise.maps[2 * k + 1].chw.row(0).transpose();
      {
        MatX<S> col;
        lv.conv2.im2col(lc.x4, col);
        d = lv.conv2.backward(lc.x4, col, d, true, true);
      }
      // sine injection
      if (lc.field.s.size() > 0) {
        VecX<S> coef = lc.lambda.cwiseProduct(cache.aw);
        MatX<S> modulated = coef.asDiagonal() * lc.field.s;
        lv.inject.g.noalias() += d.chw * modulated.transpose();
        MatX<S> dm = lv.inject.v.transpose() * d.chw;
        MatX<S> ds = coef.asDiagonal() * dm;
        d_fprime += sine_field_backward(lc.field, ds);
        VecX<S> d_coef = dm.cwiseProduct(lc.field.s).rowwise().sum();
        d_aw += d_coef.cwiseProduct(lc.lambda);
        for (int i = 0; i < cfg_.n_freq; ++i) {
          const S mag = cache.fprime.col(i).norm();
          if (mag > S(0)) {
            const S d_mag = d_coef(i) * cache.aw(i) *
                            level_weight_grad<S>(mag, k, per.bank.f0);
            d_fprime.col(i) += (d_mag / mag) * cache.fprime.col(i);
          }
        }
      }
      // adain 1
      d = adain_backward(lc.x3, lc.st1, lc.sg1, d, d_mu, d_sg);
      dw += lv.sty_scale1.backward(cache.w, d_sg).col(0);
      dw += lv.sty_bias1.backward(cache.w, d_mu).col(0);
      d.chw = leaky_relu_backward(lc.x3.chw, d.chw, kSlope);
      lv.noise1.g.col(0).noalias() += d.chw * cache.noise.maps[2 * k].chw.row(0).transpose();
      {
        const Grid<S> x0 = (k == 0) ? expand_seed(cache.plan.seed_h, cache.plan.seed_w)
                                    : upsample2(cache.levels[k - 1].a2);
        MatX<S> col;
        lv.conv1.im2col(x0, col);
        d = lv.conv1.backward(x0, col, d, true, true);
      }
      if (k > 0)
        d = upsample2_backward(d);
      else
        seed_.g.col(0) += d.chw.rowwise().sum();
    }
    per.inject_a.g.noalias() += d_aw * cache.w.transpose();
    dw += per.inject_a.v.transpose() * d_aw;
    MatX<S> d_freqs;
    Vec2<S> d_tp = transform_frequencies_backward(per.bank.freqs.v, cache.tp, d_fprime, d_freqs);
    per.bank.freqs.g += d_freqs;
    dw += per.pred.backward(const_cast<typename TransformPredictor<S>::Cache&>(cache.pred),
                            d_tp(0) + extra_d_log_s, d_tp(1) + extra_d_theta);
    return dw;
  }

  Grid<S> generate_spatial(const PeriodicSystem<S>& per, const SpatialLatentField<S>& field,
                           int target_h, int target_w, const GenOptions<S>& opt = {}) const;

  // Same-code synthesis at a size scaled by `factor`; plumbing over generate.
  Grid<S> expand(const PeriodicSystem<S>& per, const Latent<S>& w, int base_h, int base_w,
                 int factor, const GenOptions<S>& opt = {}) const {
    if (factor < 1) throw DomainError("expand: factor must be >= 1");
    return generate(per, w, base_h * factor, base_w * factor, opt);
  }

  void params(std::vector<Parameter<S>*>& out) {
    out.push_back(&seed_);
    for (auto& lv : levels_) {
      lv.conv1.params(out);
      lv.conv2.params(out);
      out.push_back(&lv.noise1);
      out.push_back(&lv.noise2);
      lv.sty_scale1.params(out);
      lv.sty_bias1.params(out);
      lv.sty_scale2.params(out);
      lv.sty_bias2.params(out);
      out.push_back(&lv.inject);
    }
    to_rgb_.params(out);
  }

 private:
  static constexpr S kSlope = S(0.2);

  struct LevelParams {
    Conv2d<S> conv1, conv2;
    Parameter<S> noise1, noise2;
    Dense<S> sty_scale1, sty_bias1, sty_scale2, sty_bias2;
    Parameter<S> inject;
  };

  VecX<S> style_mu(const Dense<S>& head, const Latent<S>& w) const {
    return head.forward(w).col(0);
  }
  VecX<S> style_sigma(const Dense<S>& head, const Latent<S>& w) const {
    return VecX<S>::Ones(head.out_dim()) + head.forward(w).col(0);
  }

  Grid<S> run(PeriodicSystem<S>& per, const Latent<S>& w, int target_h, int target_w,
              const GenOptions<S>& opt, Cache* cache) {
    if (w.size() != cfg_.n_w) throw ShapeError("generate: latent code has wrong length");
    SizePlan plan = plan_sizes(target_h, target_w, cfg_.levels);
    typename TransformPredictor<S>::Cache pred_cache;
    const TransformParams<S> tp = per.pred.predict(w, &pred_cache);
    const MatX<S> fprime = transform_frequencies(per.bank.freqs.v, tp);
    VecX<S> phases;
    if (opt.phases) {
      phases = *opt.phases;
    } else {
      auto rng = make_rng({opt.phase_seed, 0x9A5E5ULL});
      phases = sample_phases<S>(cfg_.n_freq, rng);
    }
    const NoiseStack<S>* noise = opt.noise;
    NoiseStack<S> own_noise;
    if (!noise) {
      own_noise = NoiseStack<S>::gaussian(opt.noise_seed, plan);
      noise = &own_noise;
    }
    noise->check(plan);
    const VecX<S> aw = per.inject_a.v * w;

    if (cache) {
      cache->plan = plan;
      cache->w = w;
      cache->pred = pred_cache;
      cache->tp = tp;
      cache->fprime = fprime;
      cache->phases = phases;
      cache->aw = aw;
      cache->noise = *noise;
      cache->levels.assign(cfg_.levels, {});
    }

    Grid<S> x = expand_seed(plan.seed_h, plan.seed_w);
    for (int k = 0; k < cfg_.levels; ++k) {
      auto& lv = levels_[k];
      if (k > 0) x = upsample2(x);
      x = lv.conv1.forward(x);
      x.chw.noalias() += lv.noise1.v.col(0) * noise->maps[2 * k].chw.row(0);
      leaky_relu_inplace(x.chw, kSlope);
      if (cache) cache->levels[k].x3 = x;
      {
        VecX<S> mu = style_mu(lv.sty_bias1, w);
        VecX<S> sg = style_sigma(lv.sty_scale1, w);
        AdainStats<S> st;
        x = adain(x, mu, sg, &st);
        if (cache) {
          cache->levels[k].st1 = st;
          cache->levels[k].mu1 = mu;
          cache->levels[k].sg1 = sg;
        }
      }
      if (!opt.disable_injection) {
        SineField<S> field =
            render_sine_field(fprime, phases, k, cfg_.levels, x.h, x.w);
        VecX<S> lambda(cfg_.n_freq);
        for (int i = 0; i < cfg_.n_freq; ++i)
          lambda(i) = level_weight<S>(fprime.col(i).norm(), k, per.bank.f0);
        modulate_and_inject(x, field, lambda, aw, lv.inject.v);
        if (cache) {
          cache->levels[k].field = std::move(field);
          cache->levels[k].lambda = std::move(lambda);
        }
      }
      if (cache) cache->levels[k].x4 = x;
      x = lv.conv2.forward(x);
      x.chw.noalias() += lv.noise2.v.col(0) * noise->maps[2 * k + 1].chw.row(0);
      leaky_relu_inplace(x.chw, kSlope);
      if (cache) cache->levels[k].x7 = x;
      {
        VecX<S> mu = style_mu(lv.sty_bias2, w);
        VecX<S> sg = style_sigma(lv.sty_scale2, w);
        AdainStats<S> st;
        x = adain(x, mu, sg, &st);
        if (cache) {
          cache->levels[k].st2 = st;
          cache->levels[k].mu2 = mu;
          cache->levels[k].sg2 = sg;
        }
      }
      if (cache) cache->levels[k].a2 = x;
    }
    x = to_rgb_.forward(x);
    x.chw = x.chw.array().tanh().matrix();
    if (cache) cache->rgb = x;
    return center_crop(x, target_h, target_w);
  }

  GeneratorConfig cfg_;
  Parameter<S> seed_;
  std::vector<LevelParams> levels_;
  Conv2d<S> to_rgb_;
};

// --- spatially varying synthesis ------------------------------------------------

namespace detail {

// Clipped box-filter means of each channel (and of squares), double-accumulated.
template <class S>
void box_stats(const Grid<S>& x, int win, MatX<S>& mean, MatX<S>& sqmean) {
  const int h = x.h, w = x.w, r = win / 2;
  MatX<double> acc = MatX<double>::Zero(x.channels() * 2, x.pixels());
  // prefix sums along rows of the (value, value^2) stack
  MatX<double> stack(x.channels() * 2, x.pixels());
  stack.topRows(x.channels()) = x.chw.template cast<double>();
  stack.bottomRows(x.channels()) =
      x.chw.template cast<double>().cwiseProduct(x.chw.template cast<double>());
  // integral image per row of `stack`
  for (int y = 0; y < h; ++y) {
    for (int xx = 0; xx < w; ++xx) {
      const Eigen::Index p = static_cast<Eigen::Index>(y) * w + xx;
      acc.col(p) = stack.col(p);
      if (xx > 0) acc.col(p) += acc.col(p - 1);
      if (y > 0) acc.col(p) += acc.col(p - w);
      if (xx > 0 && y > 0) acc.col(p) -= acc.col(p - w - 1);
    }
  }
  auto rect = [&](int y0, int x0, int y1, int x1) {  // inclusive corners
    MatX<double> s = acc.col(static_cast<Eigen::Index>(y1) * w + x1);
    if (x0 > 0) s -= acc.col(static_cast<Eigen::Index>(y1) * w + x0 - 1);
    if (y0 > 0) s -= acc.col(static_cast<Eigen::Index>(y0 - 1) * w + x1);
    if (x0 > 0 && y0 > 0) s += acc.col(static_cast<Eigen::Index>(y0 - 1) * w + x0 - 1);
    return s;
  };
  mean.resize(x.channels(), x.pixels());
  sqmean.resize(x.channels(), x.pixels());
  for (int y = 0; y < h; ++y) {
    const int y0 = std::max(0, y - r), y1 = std::min(h - 1, y + r);
    for (int xx = 0; xx < w; ++xx) {
      const int x0 = std::max(0, xx - r), x1 = std::min(w - 1, xx + r);
      const double count = static_cast<double>(y1 - y0 + 1) * (x1 - x0 + 1);
      MatX<double> s = rect(y0, x0, y1, x1) / count;
      const Eigen::Index p = static_cast<Eigen::Index>(y) * w + xx;
      mean.col(p) = s.topRows(x.channels()).template cast<S>();
      sqmean.col(p) = s.bottomRows(x.channels()).template cast<S>();
    }
  }
}

}  // namespace detail

template <class S>
Grid<S> Generator<S>::generate_spatial(const PeriodicSystem<S>& per,
                                       const SpatialLatentField<S>& field, int target_h,
                                       int target_w, const GenOptions<S>& opt) const {
  if (field.h < 1 || field.w < 1 || field.codes.cols() != static_cast<Eigen::Index>(field.h) * field.w ||
      field.codes.rows() != cfg_.n_w)
    throw ShapeError("generate_spatial: malformed latent field");
  // A constant field with global statistics is exactly generate().
  SizePlan plan = plan_sizes(target_h, target_w, cfg_.levels);
  VecX<S> phases;
  if (opt.phases) {
    phases = *opt.phases;
  } else {
    auto rng = make_rng({opt.phase_seed, 0x9A5E5ULL});
    phases = sample_phases<S>(cfg_.n_freq, rng);
  }
  const NoiseStack<S>* noise = opt.noise;
  NoiseStack<S> own_noise;
  if (!noise) {
    own_noise = NoiseStack<S>::gaussian(opt.noise_seed, plan);
    noise = &own_noise;
  }
  noise->check(plan);

  const bool constant_field = field.constant_content();
  // A constant field must reduce to generate() exactly; sharing the global
  // injection values avoids ulp noise that instance normalization can amplify
  // without bound through low-variance channels.
  TransformParams<S> tp_const;
  MatX<S> fp_const;
  VecX<S> aw_const;
  if (constant_field) {
    tp_const = per.pred.predict(field.codes.col(0));
    fp_const = transform_frequencies(per.bank.freqs.v, tp_const);
    aw_const = per.inject_a.v * field.codes.col(0);
  }
  const S eps = S(1e-8);
  auto adain_local = [&](const Grid<S>& x, const MatX<S>& wfield, const Dense<S>& bias_head,
                         const Dense<S>& scale_head, int win) {
    MatX<S> mu_hat = bias_head.forward(wfield);
    MatX<S> sg_hat = (S(1) + scale_head.forward(wfield).array()).matrix();
    Grid<S> y = x;
    const int extent = std::max(x.h, x.w);
    const int eff = win == 0 ? std::max(3, std::min(x.h, x.w) / 4) : win;
    if (eff >= extent) {
      AdainStats<S> st;
      VecX<S> mu = x.chw.rowwise().mean();
      VecX<S> var = (x.chw.colwise() - mu).rowwise().squaredNorm() / static_cast<S>(x.pixels());
      VecX<S> sigma = var.cwiseMax(S(0)).cwiseSqrt();
      y.chw = ((x.chw.colwise() - mu).array().colwise() / (sigma.array() + eps)).matrix();
    } else {
      MatX<S> mean, sqmean;
      detail::box_stats(x, eff | 1, mean, sqmean);
      MatX<S> sigma = (sqmean - mean.cwiseProduct(mean)).cwiseMax(S(0)).cwiseSqrt();
      y.chw = (x.chw - mean).cwiseQuotient((sigma.array() + eps).matrix());
    }
    y.chw = y.chw.cwiseProduct(sg_hat) + mu_hat;
    return y;
  };

  Grid<S> x = expand_seed(plan.seed_h, plan.seed_w);
  for (int k = 0; k < cfg_.levels; ++k) {
    const auto& lv = levels_[k];
    if (k > 0) x = upsample2(x);
    x = lv.conv1.forward(x);
    x.chw.noalias() += lv.noise1.v.col(0) * noise->maps[2 * k].chw.row(0);
    leaky_relu_inplace(x.chw, kSlope);
    MatX<S> wf_mid = field.upsample(x.h, x.w);
    x = adain_local(x, wf_mid, lv.sty_bias1, lv.sty_scale1, opt.stat_window);
    if (!opt.disable_injection && constant_field) {
      SineField<S> sf = render_sine_field(fp_const, phases, k, cfg_.levels, x.h, x.w);
      VecX<S> lambda(cfg_.n_freq);
      for (int i = 0; i < cfg_.n_freq; ++i)
        lambda(i) = level_weight<S>(fp_const.col(i).norm(), k, per.bank.f0);
      modulate_and_inject(x, sf, lambda, aw_const, lv.inject.v);
    } else if (!opt.disable_injection) {
      // Per-pixel transform parameters and modulation from the local code. The
      // arithmetic mirrors the global path expression for expression.
      MatX<S> tp_all = per.pred.predict_all(wf_mid);
      MatX<S> aw_all = per.inject_a.v * wf_mid;
      const S step = static_cast<S>(std::pow(2.0, cfg_.levels - 1 - k));
      MatX<S> m(cfg_.n_freq, x.pixels());
      for (int y = 0; y < x.h; ++y) {
        const S py = static_cast<S>(y) * step;
        for (int xx = 0; xx < x.w; ++xx) {
          const S px = static_cast<S>(xx) * step;
          const Eigen::Index p = static_cast<Eigen::Index>(y) * x.w + xx;
          TransformParams<S> tpp;
          tpp.log_s = tp_all(0, p);
          tpp.theta = tp_all(1, p);
          const MatX<S> fpp = transform_frequencies(per.bank.freqs.v, tpp);
          for (int i = 0; i < cfg_.n_freq; ++i) {
            const S lw = level_weight<S>(fpp.col(i).norm(), k, per.bank.f0);
            const S arg = fpp(0, i) * px + fpp(1, i) * py + phases(i);
            m(i, p) = (lw * aw_all(i, p)) * static_cast<S>(std::sin(static_cast<double>(arg)));
          }
        }
      }
      x.chw.noalias() += lv.inject.v * m;
    }
    x = lv.conv2.forward(x);
    x.chw.noalias() += lv.noise2.v.col(0) * noise->maps[2 * k + 1].chw.row(0);
    leaky_relu_inplace(x.chw, kSlope);
    MatX<S> wf_out = field.upsample(x.h, x.w);
    x = adain_local(x, wf_out, lv.sty_bias2, lv.sty_scale2, opt.stat_window);
  }
  x = to_rgb_.forward(x);
  x.chw = x.chw.array().tanh().matrix();
  return center_crop(x, target_h, target_w);
}

}  // namespace texsyn
