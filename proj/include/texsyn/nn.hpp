#pragma once

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "texsyn/common.hpp"

namespace texsyn {

// A trainable tensor with its gradient and Adam moments.
template <class S>
struct Parameter {
  std::string name;
  MatX<S> v;   // value
  MatX<S> g;   // gradient accumulator
  MatX<S> m;   // Adam first moment
  MatX<S> vm;  // Adam second moment
  bool trainable = true;

  void init(std::string n, Eigen::Index rows, Eigen::Index cols, bool train = true) {
    name = std::move(n);
    v = MatX<S>::Zero(rows, cols);
    trainable = train;
    reset_state();
  }
  void reset_state() {
    g = MatX<S>::Zero(v.rows(), v.cols());
    m = MatX<S>::Zero(v.rows(), v.cols());
    vm = MatX<S>::Zero(v.rows(), v.cols());
  }
  void zero_grad() { g.setZero(); }
};

template <class S>
struct AdamOptimizer {
  S lr = S(1e-4);
  S beta1 = S(0.5);
  S beta2 = S(0.999);
  S eps = S(1e-8);
  long t = 0;

  void step(const std::vector<Parameter<S>*>& params) {
    ++t;
    const S c1 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta1), static_cast<double>(t)));
    const S c2 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta2), static_cast<double>(t)));
    for (Parameter<S>* p : params) {
      if (!p->trainable) continue;
      p->m = beta1 * p->m + (S(1) - beta1) * p->g;
      p->vm = beta2 * p->vm + (S(1) - beta2) * p->g.cwiseProduct(p->g);
      p->v.array() -= lr * (p->m.array() / c1) / ((p->vm.array() / c2).sqrt() + eps);
    }
  }
};

template <class S>
void zero_grads(const std::vector<Parameter<S>*>& params) {
  for (Parameter<S>* p : params) p->zero_grad();
}

// --- activations -------------------------------------------------------------

template <class S>
void leaky_relu_inplace(MatX<S>& x, S slope) {
  x = x.array().max(x.array() * slope).matrix();
}

// Backward through leaky relu given the layer *output* (valid for slope > 0).
template <class S>
MatX<S> leaky_relu_backward(const MatX<S>& y, const MatX<S>& dy, S slope) {
  return (y.array() > S(0)).select(dy, dy * slope);
}

// --- dense layer -------------------------------------------------------------

template <class S>
struct Dense {
  Parameter<S> w;  // (out, in)
  Parameter<S> b;  // (out, 1)

  void init(const std::string& name, int out, int in) {
    w.init(name + "/w", out, in);
    b.init(name + "/b", out, 1);
  }
  void he_init(std::mt19937_64& rng) {
    fill_normal(rng, w.v, std::sqrt(2.0 / static_cast<double>(w.v.cols())));
    b.v.setZero();
  }
  int in_dim() const { return static_cast<int>(w.v.cols()); }
  int out_dim() const { return static_cast<int>(w.v.rows()); }

  // x: (in, batch) -> (out, batch)
  MatX<S> forward(const MatX<S>& x) const {
    if (x.rows() != w.v.cols())
      throw ShapeError("dense: input has " + std::to_string(x.rows()) + " rows, expected " +
                       std::to_string(w.v.cols()));
    return (w.v * x).colwise() + b.v.col(0);
  }

  // Accumulates parameter grads, returns grad w.r.t. x.
  MatX<S> backward(const MatX<S>& x, const MatX<S>& dy) {
    w.g.noalias() += dy * x.transpose();
    b.g.col(0) += dy.rowwise().sum();
    return w.v.transpose() * dy;
  }

  void params(std::vector<Parameter<S>*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

// --- 2-D convolution (im2col + GEMM) ------------------------------------------
//
// Weight layout: (out_ch, kh*kw*in_ch) with column index (ky*kw + kx)*in_ch + c,
// i.e. patch channels are contiguous so im2col can copy whole pixel slabs.

template <class S>
struct Conv2d {
  Parameter<S> w;
  Parameter<S> b;
  int in_ch = 0, out_ch = 0, k = 3, pad = 0;

  void init(const std::string& name, int in_channels, int out_channels, int kernel, int padding) {
    in_ch = in_channels;
    out_ch = out_channels;
    k = kernel;
    pad = padding;
    w.init(name + "/w", out_channels, static_cast<Eigen::Index>(kernel) * kernel * in_channels);
    b.init(name + "/b", out_channels, 1);
  }
  void he_init(std::mt19937_64& rng) {
    fill_normal(rng, w.v, std::sqrt(2.0 / static_cast<double>(w.v.cols())));
    b.v.setZero();
  }

  int out_size(int in) const { return in + 2 * pad - k + 1; }

  void im2col(const Grid<S>& x, MatX<S>& col) const {
    const int oh = out_size(x.h), ow = out_size(x.w);
    col.resize(static_cast<Eigen::Index>(k) * k * in_ch, static_cast<Eigen::Index>(oh) * ow);
    const S* src = x.chw.data();
    S* dst = col.data();
    const Eigen::Index slab = in_ch;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        S* out_col = dst + (static_cast<Eigen::Index>(oy) * ow + ox) * (k * k * slab);
        for (int ky = 0; ky < k; ++ky) {
          const int sy = oy + ky - pad;
          for (int kx = 0; kx < k; ++kx) {
            const int sx = ox + kx - pad;
            S* cell = out_col + (static_cast<Eigen::Index>(ky) * k + kx) * slab;
            if (sy < 0 || sy >= x.h || sx < 0 || sx >= x.w) {
              std::memset(cell, 0, sizeof(S) * slab);
            } else {
              std::memcpy(cell, src + (static_cast<Eigen::Index>(sy) * x.w + sx) * slab,
                          sizeof(S) * slab);
            }
          }
        }
      }
    }
  }

  Grid<S> forward(const Grid<S>& x, MatX<S>* col_cache = nullptr) const {
    if (x.channels() != in_ch)
      throw ShapeError("conv: input has " + std::to_string(x.channels()) + " channels, expected " +
                       std::to_string(in_ch));
    const int oh = out_size(x.h), ow = out_size(x.w);
    if (oh <= 0 || ow <= 0)
      throw SizeError("conv: input " + std::to_string(x.h) + "x" + std::to_string(x.w) +
                      " too small for kernel " + std::to_string(k));
    MatX<S> local;
    MatX<S>& col = col_cache ? *col_cache : local;
    im2col(x, col);
    Grid<S> y;
    y.h = oh;
    y.w = ow;
    y.chw.noalias() = w.v * col;
    y.chw.colwise() += b.v.col(0);
    return y;
  }

  // dy: grad at output. Accumulates dW/db when train_params, returns dx when
  // need_input_grad. `col` must be the forward cache for this input.
  Grid<S> backward(const Grid<S>& x, const MatX<S>& col, const Grid<S>& dy, bool train_params,
                   bool need_input_grad) {
    if (train_params) {
      w.g.noalias() += dy.chw * col.transpose();
      b.g.col(0) += dy.chw.rowwise().sum();
    }
    Grid<S> dx;
    if (!need_input_grad) return dx;
    MatX<S> dcol = w.v.transpose() * dy.chw;
    dx = Grid<S>(in_ch, x.h, x.w);
    S* acc = dx.chw.data();
    const S* src = dcol.data();
    const Eigen::Index slab = in_ch;
    const int oh = dy.h, ow = dy.w;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const S* in_col = src + (static_cast<Eigen::Index>(oy) * ow + ox) * (k * k * slab);
        for (int ky = 0; ky < k; ++ky) {
          const int sy = oy + ky - pad;
          if (sy < 0 || sy >= x.h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int sx = ox + kx - pad;
            if (sx < 0 || sx >= x.w) continue;
            S* cell = acc + (static_cast<Eigen::Index>(sy) * x.w + sx) * slab;
            const S* val = in_col + (static_cast<Eigen::Index>(ky) * k + kx) * slab;
            for (Eigen::Index c = 0; c < slab; ++c) cell[c] += val[c];
          }
        }
      }
    }
    return dx;
  }

  void params(std::vector<Parameter<S>*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

// --- 2x2 max pooling, stride 2 -------------------------------------------------

template <class S>
Grid<S> maxpool2(const Grid<S>& x, std::vector<int>* argmax = nullptr) {
  const int oh = x.h / 2, ow = x.w / 2;
  Grid<S> y(x.channels(), oh, ow);
  if (argmax) argmax->assign(static_cast<size_t>(x.channels()) * oh * ow, 0);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const Eigen::Index po = static_cast<Eigen::Index>(oy) * ow + ox;
      const Eigen::Index p00 = static_cast<Eigen::Index>(2 * oy) * x.w + 2 * ox;
      const Eigen::Index cand[4] = {p00, p00 + 1, p00 + x.w, p00 + x.w + 1};
      for (int c = 0; c < x.channels(); ++c) {
        S best = x.chw(c, cand[0]);
        int arg = 0;
        for (int i = 1; i < 4; ++i) {
          const S v = x.chw(c, cand[i]);
          if (v > best) {
            best = v;
            arg = i;
          }
        }
        y.chw(c, po) = best;
        if (argmax) (*argmax)[static_cast<size_t>(po) * x.channels() + c] = static_cast<int>(cand[arg]);
      }
    }
  }
  return y;
}

template <class S>
Grid<S> maxpool2_backward(const Grid<S>& x, const Grid<S>& dy, const std::vector<int>& argmax) {
  Grid<S> dx(x.channels(), x.h, x.w);
  for (Eigen::Index po = 0; po < dy.pixels(); ++po)
    for (int c = 0; c < x.channels(); ++c)
      dx.chw(c, argmax[static_cast<size_t>(po) * x.channels() + c]) += dy.chw(c, po);
  return dx;
}

// --- nearest-neighbour x2 upsampling -------------------------------------------

template <class S>
Grid<S> upsample2(const Grid<S>& x) {
  Grid<S> y(x.channels(), 2 * x.h, 2 * x.w);
  for (int oy = 0; oy < y.h; ++oy) {
    const int sy = oy / 2;
    for (int ox = 0; ox < y.w; ++ox) {
      y.chw.col(static_cast<Eigen::Index>(oy) * y.w + ox) =
          x.chw.col(static_cast<Eigen::Index>(sy) * x.w + ox / 2);
    }
  }
  return y;
}

template <class S>
Grid<S> upsample2_backward(const Grid<S>& dy) {
  Grid<S> dx(dy.channels(), dy.h / 2, dy.w / 2);
  for (int oy = 0; oy < dy.h; ++oy) {
    const int sy = oy / 2;
    for (int ox = 0; ox < dy.w; ++ox) {
      dx.chw.col(static_cast<Eigen::Index>(sy) * dx.w + ox / 2) +=
          dy.chw.col(static_cast<Eigen::Index>(oy) * dy.w + ox);
    }
  }
  return dx;
}

// --- center crop ----------------------------------------------------------------

template <class S>
Grid<S> center_crop(const Grid<S>& x, int th, int tw) {
  if (th > x.h || tw > x.w) throw SizeError("center_crop: target exceeds source");
  const int oy = (x.h - th) / 2, ox = (x.w - tw) / 2;
  Grid<S> y(x.channels(), th, tw);
  for (int r = 0; r < th; ++r)
    y.chw.middleCols(static_cast<Eigen::Index>(r) * tw, tw) =
        x.chw.middleCols(static_cast<Eigen::Index>(r + oy) * x.w + ox, tw);
  return y;
}

template <class S>
Grid<S> center_crop_backward(const Grid<S>& dy, int src_h, int src_w) {
  Grid<S> dx(dy.channels(), src_h, src_w);
  const int oy = (src_h - dy.h) / 2, ox = (src_w - dy.w) / 2;
  for (int r = 0; r < dy.h; ++r)
    dx.chw.middleCols(static_cast<Eigen::Index>(r + oy) * src_w + ox, dy.w) =
        dy.chw.middleCols(static_cast<Eigen::Index>(r) * dy.w, dy.w);
  return dx;
}

}  // namespace texsyn
