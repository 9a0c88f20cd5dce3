#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "texsyn/nn.hpp"

namespace texsyn {

// Noise-to-latent mapper T: z (n_z) -> w (n_w), 3-layer leaky-relu MLP.
template <class S>
class LatentMapper {
 public:
  LatentMapper(int n_z = 64, int n_w = 32, int width = 128) : n_z_(n_z) {
    fc_[0].init("map/fc0", width, n_z);
    fc_[1].init("map/fc1", width, width);
    fc_[2].init("map/fc2", n_w, width);
  }

  void init_seeded(std::uint64_t seed) {
    auto rng = make_rng({seed, 0x3A99ULL});
    for (auto& d : fc_) d.he_init(rng);
  }

  int noise_dim() const { return n_z_; }
  int latent_dim() const { return fc_[2].out_dim(); }

  struct Cache {
    MatX<S> z, h0, h1;
  };

  MatX<S> map(const MatX<S>& z, Cache* cache = nullptr) const {
    MatX<S> h = fc_[0].forward(z);
    leaky_relu_inplace(h, kSlope);
    MatX<S> h0 = h;
    h = fc_[1].forward(h);
    leaky_relu_inplace(h, kSlope);
    if (cache) {
      cache->z = z;
      cache->h0 = h0;
      cache->h1 = h;
    }
    return fc_[2].forward(h);
  }

  void backward(const Cache& cache, const MatX<S>& dw) {
    MatX<S> d = fc_[2].backward(cache.h1, dw);
    d = leaky_relu_backward(cache.h1, d, kSlope);
    d = fc_[1].backward(cache.h0, d);
    d = leaky_relu_backward(cache.h0, d, kSlope);
    fc_[0].backward(cache.z, d);
  }

  void params(std::vector<Parameter<S>*>& out) {
    for (auto& d : fc_) d.params(out);
  }

 private:
  static constexpr S kSlope = S(0.2);
  std::array<Dense<S>, 3> fc_;
  int n_z_;
};

// Latent-space critic D_W: w -> scalar score, 3-layer leaky-relu MLP with a
// hand-derived double-backward for the gradient penalty.
template <class S>
class LatentCritic {
 public:
  LatentCritic(int n_w = 32, int width = 128) {
    fc_[0].init("critic/fc0", width, n_w);
    fc_[1].init("critic/fc1", width, width);
    fc_[2].init("critic/fc2", 1, width);
  }

  void init_seeded(std::uint64_t seed) {
    auto rng = make_rng({seed, 0xC717ULL});
    for (auto& d : fc_) d.he_init(rng);
  }

  struct Cache {
    MatX<S> w, h0, h1;
  };

  // Scores for a batch of codes: (1, N).
  MatX<S> score(const MatX<S>& w, Cache* cache = nullptr) const {
    MatX<S> h = fc_[0].forward(w);
    leaky_relu_inplace(h, kSlope);
    MatX<S> h0 = h;
    h = fc_[1].forward(h);
    leaky_relu_inplace(h, kSlope);
    if (cache) {
      cache->w = w;
      cache->h0 = h0;
      cache->h1 = h;
    }
    return fc_[2].forward(h);
  }

  // Ordinary parameter backward from per-sample score gradients (1, N).
  void backward(const Cache& cache, const MatX<S>& dscore) {
    MatX<S> d = fc_[2].backward(cache.h1, dscore);
    d = leaky_relu_backward(cache.h1, d, kSlope);
    d = fc_[1].backward(cache.h0, d);
    d = leaky_relu_backward(cache.h0, d, kSlope);
    fc_[0].backward(cache.w, d);
  }

  // Gradient of the score w.r.t. its input, per column of w.
  MatX<S> input_grad(const MatX<S>& w, Cache* cache_out = nullptr) const {
    Cache cache;
    score(w, &cache);
    if (cache_out) *cache_out = cache;
    // grad = W0^T D0 W1^T D1 W2^T with Di the leaky-relu derivative masks
    MatX<S> g = fc_[2].w.v.transpose().replicate(1, w.cols());  // (width, N)
    g = leaky_relu_backward(cache.h1, g, kSlope);
    g = fc_[1].w.v.transpose() * g;
    g = leaky_relu_backward(cache.h0, g, kSlope);
    return fc_[0].w.v.transpose() * g;  // (n_w, N)
  }

  // Gradient penalty mean((||grad_w D(w)|| - 1)^2) over the given interpolates,
  // with gradients accumulated into the critic parameters (piecewise-linear
  // activations make the relu masks locally constant, so the double backward
  // reduces to a linear chain).
  S gradient_penalty_backward(const MatX<S>& w_hat, S weight) {
    const Eigen::Index n = w_hat.cols();
    Cache cache;
    MatX<S> g = input_grad(w_hat, &cache);  // (n_w, N)
    S penalty = S(0);
    MatX<S> r(g.rows(), n);  // dP/dg per sample (before `weight`)
    for (Eigen::Index j = 0; j < n; ++j) {
      const S norm = g.col(j).norm();
      penalty += (norm - S(1)) * (norm - S(1));
      r.col(j) = norm > S(0)
                     ? VecX<S>(S(2) * (norm - S(1)) / (norm * static_cast<S>(n)) * g.col(j))
                     : VecX<S>(VecX<S>::Zero(g.rows()));
    }
    penalty /= static_cast<S>(n);
    // g = W0^T D0 W1^T D1 w2 per sample; accumulate dP/dWi along the chain.
    const S c = weight;
    MatX<S> a0 = fc_[0].w.v * r;                         // (width, N)
    a0 = leaky_relu_backward(cache.h0, a0, kSlope);      // D0 applied
    MatX<S> a1 = fc_[1].w.v * a0;                        // (width, N)
    a1 = leaky_relu_backward(cache.h1, a1, kSlope);      // D1 applied
    // dP/dW2 = sum_j (D1 W1 D0 W0 r_j)^T
    fc_[2].w.g.noalias() += c * a1.rowwise().sum().transpose();
    // dP/dW1 = sum_j (D1 w2)_j (D0 W0 r_j)^T
    MatX<S> b1 = fc_[2].w.v.transpose().replicate(1, n);  // (width, N)
    b1 = leaky_relu_backward(cache.h1, b1, kSlope);       // D1 w2
    fc_[1].w.g.noalias() += c * (b1 * a0.transpose());
    // dP/dW0 = sum_j (D0 W1^T D1 w2)_j r_j^T
    MatX<S> b0 = fc_[1].w.v.transpose() * b1;
    b0 = leaky_relu_backward(cache.h0, b0, kSlope);
    fc_[0].w.g.noalias() += c * (b0 * r.transpose());
    return penalty;
  }

  void params(std::vector<Parameter<S>*>& out) {
    for (auto& d : fc_) d.params(out);
  }

 private:
  static constexpr S kSlope = S(0.2);
  std::array<Dense<S>, 3> fc_;
};

// --- WGAN-GP objective pieces ----------------------------------------------------

// Interpolates u * real + (1 - u) * fake with per-sample uniform u.
template <class S>
MatX<S> gp_interpolates(const MatX<S>& real, const MatX<S>& fake, std::mt19937_64& rng) {
  if (real.cols() != fake.cols() || real.rows() != fake.rows())
    throw ShapeError("gradient_penalty: batches must have identical shapes");
  MatX<S> out(real.rows(), real.cols());
  for (Eigen::Index j = 0; j < real.cols(); ++j) {
    const S u = uniform<S>(rng, S(0), S(1));
    out.col(j) = u * real.col(j) + (S(1) - u) * fake.col(j);
  }
  return out;
}

// Value-only gradient penalty for any critic exposing input_grad.
template <class S, class Critic>
S gradient_penalty(const Critic& critic, const MatX<S>& real, const MatX<S>& fake,
                   std::uint64_t seed) {
  auto rng = make_rng({seed, 0x69ULL});
  MatX<S> w_hat = gp_interpolates<S>(real, fake, rng);
  MatX<S> g = critic.input_grad(w_hat);
  S penalty = S(0);
  for (Eigen::Index j = 0; j < g.cols(); ++j) {
    const S norm = g.col(j).norm();
    penalty += (norm - S(1)) * (norm - S(1));
  }
  return penalty / static_cast<S>(g.cols());
}

// L_adv(T) = E_z[ D(T(z)) ]: the mapper minimizes the critic's score.
template <class S, class Critic>
S mapper_loss(const Critic& critic, const MatX<S>& mapped) {
  return critic.score(mapped).mean();
}

// L_adv(D) = E[D(real)] - E[D(fake)] + lambda_gp * L_GP.
template <class S, class Critic>
S critic_loss(const Critic& critic, const MatX<S>& real, const MatX<S>& fake, S lambda_gp,
              std::uint64_t seed) {
  if (real.cols() == 0 || fake.cols() == 0)
    throw DomainError("critic_loss: batches must be non-empty");
  return critic.score(real).mean() - critic.score(fake).mean() +
         lambda_gp * gradient_penalty<S>(critic, real, fake, seed);
}

// w_j = T(z_j), z standard Gaussian; reproducible under `seed`.
template <class S>
MatX<S> sample_latent(const LatentMapper<S>& mapper, int n, std::uint64_t seed) {
  auto rng = make_rng({seed, 0x5A3ULL});
  MatX<S> z(mapper.noise_dim(), n);
  fill_normal(rng, z, 1.0);
  return mapper.map(z);
}

// Sliced Wasserstein-2 distance between equally sized point sets (columns).
template <class S>
S sliced_wasserstein(const MatX<S>& a, const MatX<S>& b, int n_dirs, std::uint64_t seed) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("sliced_wasserstein: point sets must have identical shapes");
  auto rng = make_rng({seed, 0x50ADULL});
  const Eigen::Index n = a.cols();
  S acc = S(0);
  std::vector<S> pa(n), pb(n);
  for (int d = 0; d < n_dirs; ++d) {
    VecX<S> v(a.rows());
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = normal<S>(rng);
    v.normalize();
    Eigen::Map<VecX<S>>(pa.data(), n) = a.transpose() * v;
    Eigen::Map<VecX<S>>(pb.data(), n) = b.transpose() * v;
    std::sort(pa.begin(), pa.end());
    std::sort(pb.begin(), pb.end());
    S s = S(0);
    for (Eigen::Index i = 0; i < n; ++i) s += (pa[i] - pb[i]) * (pa[i] - pb[i]);
    acc += s / static_cast<S>(n);
  }
  return static_cast<S>(std::sqrt(static_cast<double>(acc / static_cast<S>(n_dirs))));
}

// One adversarial round: `critic_iters` critic updates then one mapper update.
// Real codes are treated as constants (the encoder is not an adversarial
// player). Returns (critic loss, mapper loss) from the last updates.
template <class S>
std::pair<S, S> adversarial_round(LatentMapper<S>& mapper, LatentCritic<S>& critic,
                                  AdamOptimizer<S>& opt_mapper, AdamOptimizer<S>& opt_critic,
                                  const MatX<S>& real, int critic_iters, S lambda_gp,
                                  std::uint64_t seed) {
  std::vector<Parameter<S>*> critic_params, mapper_params;
  critic.params(critic_params);
  mapper.params(mapper_params);
  const Eigen::Index batch = real.cols();
  S c_loss = S(0);
  for (int it = 0; it < critic_iters; ++it) {
    MatX<S> z(mapper.noise_dim(), batch);
    auto rng = make_rng({seed, 0xC0DEULL, static_cast<std::uint64_t>(it)});
    fill_normal(rng, z, 1.0);
    MatX<S> fake = mapper.map(z);
    typename LatentCritic<S>::Cache cr, cf;
    MatX<S> sr = critic.score(real, &cr);
    MatX<S> sf = critic.score(fake, &cf);
    MatX<S> w_hat = gp_interpolates<S>(real, fake, rng);
    zero_grads(critic_params);
    const S inv = S(1) / static_cast<S>(batch);
    critic.backward(cr, MatX<S>::Constant(1, batch, inv));
    critic.backward(cf, MatX<S>::Constant(1, batch, -inv));
    const S gp = critic.gradient_penalty_backward(w_hat, lambda_gp);
    c_loss = sr.mean() - sf.mean() + lambda_gp * gp;
    opt_critic.step(critic_params);
  }
  MatX<S> z(mapper.noise_dim(), batch);
  auto rng = make_rng({seed, 0x7A9EULL});
  fill_normal(rng, z, 1.0);
  typename LatentMapper<S>::Cache mc;
  MatX<S> fake = mapper.map(z, &mc);
  const S m_loss = critic.score(fake).mean();
  MatX<S> dfake = critic.input_grad(fake) / static_cast<S>(batch);
  zero_grads(mapper_params);
  mapper.backward(mc, dfake);
  opt_mapper.step(mapper_params);
  return {c_loss, m_loss};
}

}  // namespace texsyn
