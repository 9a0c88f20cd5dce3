#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>

namespace texsyn {

template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S>
using Vec2 = Eigen::Matrix<S, 2, 1>;

// Latent texture code w; length n_w (32 by default).
template <class S>
using Latent = VecX<S>;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct SizeError : Error {
  using Error::Error;
};
struct DomainError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};

// Channel-planar raster: chw(c, y * w + x). Pixels are contiguous in memory
// (column-major), channels form the short axis.
template <class S>
struct Grid {
  MatX<S> chw;
  int h = 0;
  int w = 0;

  Grid() = default;
  Grid(int channels, int height, int width)
      : chw(MatX<S>::Zero(channels, static_cast<Eigen::Index>(height) * width)),
        h(height),
        w(width) {}

  int channels() const { return static_cast<int>(chw.rows()); }
  Eigen::Index pixels() const { return chw.cols(); }
  S& at(int c, int y, int x) { return chw(c, static_cast<Eigen::Index>(y) * w + x); }
  S at(int c, int y, int x) const { return chw(c, static_cast<Eigen::Index>(y) * w + x); }

  template <class T>
  Grid<T> cast() const {
    Grid<T> g;
    g.chw = chw.template cast<T>();
    g.h = h;
    g.w = w;
    return g;
  }
};

// --- deterministic seeding -------------------------------------------------
//
// All randomness in the project fans out from a single master seed through
// splitmix64 so that any (step, lane, purpose) tuple maps to a reproducible
// stream regardless of evaluation order.

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t state = 0x243f6a8885a308d3ULL;  // arbitrary nonzero start
  std::uint64_t out = 0;
  for (std::uint64_t p : parts) {
    state ^= p + 0x9e3779b97f4a7c15ULL + (state << 6) + (state >> 2);
    out = splitmix64(state);
  }
  return out;
}

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

inline std::mt19937_64 make_rng(std::initializer_list<std::uint64_t> parts) {
  return std::mt19937_64(mix_seed(parts));
}

// Stateless coordinate-hashed Gaussian, used for translatable noise fields:
// the value at a lattice site depends only on (seed, lane, y, x).
template <class S>
S gauss_at(std::uint64_t seed, std::uint64_t lane, std::int64_t y, std::int64_t x) {
  std::uint64_t key = mix_seed({seed, lane, static_cast<std::uint64_t>(y) * 0x9e3779b97f4a7c15ULL ^
                                                static_cast<std::uint64_t>(x)});
  std::uint64_t a = splitmix64(key);
  std::uint64_t b = splitmix64(key);
  double u1 = (static_cast<double>(a >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
  double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;          // [0, 1)
  double r = std::sqrt(-2.0 * std::log(u1));
  return static_cast<S>(r * std::cos(6.283185307179586 * u2));
}

template <class S>
S uniform(std::mt19937_64& rng, S lo, S hi) {
  return static_cast<S>(std::uniform_real_distribution<double>(static_cast<double>(lo),
                                                               static_cast<double>(hi))(rng));
}

template <class S>
S normal(std::mt19937_64& rng) {
  return static_cast<S>(std::normal_distribution<double>(0.0, 1.0)(rng));
}

template <class Derived>
void fill_normal(std::mt19937_64& rng, Eigen::PlainObjectBase<Derived>& m, double stddev) {
  using S = typename Derived::Scalar;
  std::normal_distribution<double> d(0.0, stddev);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<S>(d(rng));
}

template <class S>
bool all_finite(const MatX<S>& m) {
  return m.allFinite();
}

constexpr double kPi = 3.141592653589793238462643383279502884;

}  // namespace texsyn
