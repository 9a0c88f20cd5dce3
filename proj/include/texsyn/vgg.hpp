#pragma once

#include <array>
#include <string>
#include <vector>

#include "texsyn/nn.hpp"

namespace texsyn {

// Multi-depth feature maps of one image plus its pixel size.
template <class S>
struct FeatureStack {
  std::array<Grid<S>, 5> maps;
  int src_h = 0;
  int src_w = 0;
};

// VGG19 prefix through relu5_1 with taps at relu{1,2,3,4,5}_1, the classical
// style-statistics layer set. The network is frozen: backward propagates image
// gradients only.
//
// Weights come from a tensor file (see tools/export_vgg_weights.py) or, when no
// file is configured, from a seeded He initialization. Random features keep the
// full pipeline exercisable in environments without the pretrained file; swap in
// the exported weights for perceptually meaningful codes.
template <class S>
class VggFeatures {
 public:
  static constexpr int kMinInput = 32;
  static constexpr int kNumConvs = 13;
  static constexpr std::array<int, 5> kTapChannels = {64, 128, 256, 512, 512};

  VggFeatures() {
    static constexpr std::array<int, kNumConvs> in = {3,   64,  64,  128, 128, 256, 256,
                                                      256, 256, 512, 512, 512, 512};
    static constexpr std::array<int, kNumConvs> out = {64,  64,  128, 128, 256, 256, 256,
                                                       256, 512, 512, 512, 512, 512};
    for (int i = 0; i < kNumConvs; ++i)
      convs_[i].init("vgg/conv" + std::to_string(i), in[i], out[i], 3, 1);
    for (auto& c : convs_) {
      c.w.trainable = false;
      c.b.trainable = false;
    }
  }

  void init_seeded(std::uint64_t seed) {
    auto rng = make_rng({seed, 0x766767ULL});
    for (auto& c : convs_) {
      c.he_init(rng);
      // Small nonzero biases so an input equal to the dataset mean still
      // produces structured responses.
      for (Eigen::Index i = 0; i < c.b.v.rows(); ++i) c.b.v(i, 0) = uniform<S>(rng, S(-0.01), S(0.01));
    }
  }

  struct Cache {
    Grid<S> input_norm;
    std::array<Grid<S>, kNumConvs> relu_out;      // post-activation
    std::array<Grid<S>, 4> pool_out;              // post-pool
    std::array<std::vector<int>, 4> pool_argmax;  // for pool backward
  };

  // image: RGB in [0,1], (3, H*W).
  FeatureStack<S> forward(const Grid<S>& image, Cache* cache = nullptr) const {
    check_input(image);
    FeatureStack<S> stack;
    stack.src_h = image.h;
    stack.src_w = image.w;
    Grid<S> x = normalize(image);
    if (cache) cache->input_norm = x;
    int pool_idx = 0, tap_idx = 0;
    for (int i = 0; i < kNumConvs; ++i) {
      x = convs_[i].forward(x);
      leaky_relu_inplace(x.chw, S(0));  // plain relu
      if (cache) cache->relu_out[i] = x;
      if (is_tap(i)) stack.maps[tap_idx++] = x;
      if (pool_after(i)) {
        x = maxpool2(x, cache ? &cache->pool_argmax[pool_idx] : nullptr);
        if (cache) cache->pool_out[pool_idx] = x;
        ++pool_idx;
      }
    }
    return stack;
  }

  // Backward from per-depth tap gradients to the image gradient in [0,1] space.
  // Conv parameters stay frozen.
  Grid<S> backward(const Cache& cache, const std::array<Grid<S>, 5>& tap_grads) {
    Grid<S> dx;  // grad flowing backward; empty means zero so far
    int pool_idx = 3, tap_idx = 4;
    for (int i = kNumConvs - 1; i >= 0; --i) {
      if (pool_after(i)) {
        const Grid<S>& pre = cache.relu_out[i];
        if (dx.pixels() > 0)
          dx = maxpool2_backward(pre, dx, cache.pool_argmax[pool_idx]);
        else
          dx = Grid<S>(pre.channels(), pre.h, pre.w);
        --pool_idx;
      }
      if (is_tap(i)) {
        if (dx.pixels() == 0) {
          const Grid<S>& t = cache.relu_out[i];
          dx = Grid<S>(t.channels(), t.h, t.w);
        }
        dx.chw += tap_grads[tap_idx].chw;
        --tap_idx;
      }
      dx.chw = leaky_relu_backward(cache.relu_out[i].chw, dx.chw, S(0));
      const Grid<S>& input = (i == 0) ? cache.input_norm : layer_input(cache, i);
      MatX<S> col;
      convs_[i].im2col(input, col);
      dx = convs_[i].backward(input, col, dx, /*train_params=*/false, /*need_input_grad=*/true);
    }
    for (int c = 0; c < 3; ++c) dx.chw.row(c) /= kStd[c];
    return dx;
  }

  void params(std::vector<Parameter<S>*>& out) {
    for (auto& c : convs_) c.params(out);
  }

  static bool is_tap(int conv_idx) {
    return conv_idx == 0 || conv_idx == 2 || conv_idx == 4 || conv_idx == 8 || conv_idx == 12;
  }
  static bool pool_after(int conv_idx) {
    return conv_idx == 1 || conv_idx == 3 || conv_idx == 7 || conv_idx == 11;
  }

 private:
  static void check_input(const Grid<S>& image) {
    if (image.channels() != 3) throw ShapeError("feature extractor expects 3 channels");
    if (image.h < kMinInput || image.w < kMinInput)
      throw SizeError("feature extractor needs at least " + std::to_string(kMinInput) + "x" +
                      std::to_string(kMinInput) + " input, got " + std::to_string(image.h) + "x" +
                      std::to_string(image.w));
  }

  Grid<S> normalize(const Grid<S>& image) const {
    Grid<S> x = image;
    for (int c = 0; c < 3; ++c) x.chw.row(c) = (x.chw.row(c).array() - kMean[c]) / kStd[c];
    return x;
  }

  const Grid<S>& layer_input(const Cache& cache, int conv_idx) const {
    // Input of conv i for i > 0: pool output if a pool sits between, else relu.
    switch (conv_idx) {
      case 2:
        return cache.pool_out[0];
      case 4:
        return cache.pool_out[1];
      case 8:
        return cache.pool_out[2];
      case 12:
        return cache.pool_out[3];
      default:
        return cache.relu_out[conv_idx - 1];
    }
  }

  static constexpr std::array<S, 3> kMean = {S(0.485), S(0.456), S(0.406)};
  static constexpr std::array<S, 3> kStd = {S(0.229), S(0.224), S(0.225)};

  std::array<Conv2d<S>, kNumConvs> convs_;
};

}  // namespace texsyn
