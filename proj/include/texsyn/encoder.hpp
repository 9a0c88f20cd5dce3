#pragma once

#include <array>
#include <string>
#include <vector>

#include "texsyn/nn.hpp"
#include "texsyn/vgg.hpp"

namespace texsyn {

// Quadratic second-order readout: Q_i = || m_i^T F ||^2, row i of M being the
// projection vector m_i. Equivalent to m_i^T (F F^T) m_i but computed without
// ever forming the (C, C) Gram matrix, dropping the cost by a factor C.
template <class S>
VecX<S> quadratic_extract(const MatX<S>& f, const MatX<S>& m, MatX<S>* proj_cache = nullptr) {
  if (m.cols() != f.rows())
    throw ShapeError("quadratic_extract: bank has " + std::to_string(m.cols()) +
                     " columns, features have " + std::to_string(f.rows()) + " rows");
  MatX<S> local;
  MatX<S>& p = proj_cache ? *proj_cache : local;
  p.noalias() = m * f;  // (n_w, K)
  return p.rowwise().squaredNorm();
}

// Maps an RGB texture to the n_w-dimensional latent code: quadratic readouts of
// the five feature depths, concatenated and combined by a small MLP.
template <class S>
class Encoder {
 public:
  Encoder(int n_w = 32, int hidden = 256) : n_w_(n_w) {
    for (int l = 0; l < 5; ++l) {
      const int c = VggFeatures<S>::kTapChannels[l];
      banks_[l].init("enc/bank" + std::to_string(l), n_w, c);
    }
    fc_[0].init("enc/mlp0", hidden, 5 * n_w);
    fc_[1].init("enc/mlp1", hidden, hidden);
    fc_[2].init("enc/mlp2", n_w, hidden);
  }

  void init_seeded(std::uint64_t seed) {
    auto rng = make_rng({seed, 0xE2CULL});
    for (int l = 0; l < 5; ++l)
      fill_normal(rng, banks_[l].v, 1.0 / std::sqrt(static_cast<double>(banks_[l].v.cols())));
    for (auto& d : fc_) d.he_init(rng);
  }

  int latent_dim() const { return n_w_; }

  struct Cache {
    std::array<MatX<S>, 5> feat_norm;  // F^l / sqrt(H_l W_l)
    std::array<MatX<S>, 5> proj;       // M^l * feat_norm
    VecX<S> q;                         // concatenated readouts (5 n_w)
    MatX<S> h0, h1;                    // post-activation hidden layers
  };

  Latent<S> encode(const FeatureStack<S>& stack, Cache* cache = nullptr) const {
    VecX<S> q(5 * n_w_);
    Cache local;
    Cache& c = cache ? *cache : local;
    for (int l = 0; l < 5; ++l) {
      const Grid<S>& f = stack.maps[l];
      // Spatial-size normalization keeps Q comparable across input resolutions.
      c.feat_norm[l] = f.chw / static_cast<S>(std::sqrt(static_cast<double>(f.pixels())));
      q.segment(static_cast<Eigen::Index>(l) * n_w_, n_w_) =
          quadratic_extract<S>(c.feat_norm[l], banks_[l].v, &c.proj[l]);
    }
    c.q = q;
    MatX<S> h = fc_[0].forward(q);
    leaky_relu_inplace(h, kSlope);
    c.h0 = h;
    h = fc_[1].forward(h);
    leaky_relu_inplace(h, kSlope);
    c.h1 = h;
    return fc_[2].forward(h).col(0);
  }

  // Accumulates gradients for the banks and the combiner MLP.
  void backward(const Cache& cache, const Latent<S>& dw) {
    MatX<S> d = fc_[2].backward(cache.h1, dw);
    d = leaky_relu_backward(cache.h1, d, kSlope);
    d = fc_[1].backward(cache.h0, d);
    d = leaky_relu_backward(cache.h0, d, kSlope);
    d = fc_[0].backward(cache.q, d);
    for (int l = 0; l < 5; ++l) {
      // dQ_i / dM_row_i = 2 (m_i^T F) F^T
      const auto dq = d.col(0).segment(static_cast<Eigen::Index>(l) * n_w_, n_w_);
      banks_[l].g.noalias() +=
          (S(2) * dq.asDiagonal() * cache.proj[l]) * cache.feat_norm[l].transpose();
    }
  }

  void params(std::vector<Parameter<S>*>& out) {
    for (auto& b : banks_) out.push_back(&b);
    for (auto& d : fc_) d.params(out);
  }

 private:
  static constexpr S kSlope = S(0.2);
  int n_w_;
  std::array<Parameter<S>, 5> banks_;
  std::array<Dense<S>, 3> fc_;
};

}  // namespace texsyn
