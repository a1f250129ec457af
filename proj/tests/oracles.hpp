#pragma once

// Brute-force reference implementations. Nothing here calls the library's transforms,
// pooling or layers; only Tensor storage is shared.

#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <vector>

#include "flc/tensor.hpp"

namespace oracle {

using cd = std::complex<double>;
using Plane = std::vector<cd>;  // row-major H x W

inline Plane plane_of(const flc::Tensor<double>& x, std::size_t n, std::size_t c) {
  Plane p(x.h() * x.w());
  for (std::size_t h = 0; h < x.h(); ++h)
    for (std::size_t w = 0; w < x.w(); ++w) p[h * x.w() + w] = x(n, c, h, w);
  return p;
}

/// Unnormalized forward DFT (sign -1) or normalized inverse (sign +1, divided by HW).
inline Plane dft(const Plane& x, std::size_t H, std::size_t W, bool inverse) {
  Plane out(H * W);
  const double s = inverse ? 1.0 : -1.0;
  for (std::size_t k = 0; k < H; ++k) {
    for (std::size_t l = 0; l < W; ++l) {
      cd acc = 0.0;
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t w = 0; w < W; ++w) {
          const double ph = 2.0 * std::numbers::pi *
                            (static_cast<double>(k * h) / static_cast<double>(H) +
                             static_cast<double>(l * w) / static_cast<double>(W));
          acc += x[h * W + w] * std::polar(1.0, s * ph);
        }
      }
      out[k * W + l] = inverse ? acc / static_cast<double>(H * W) : acc;
    }
  }
  return out;
}

/// Signed frequency of bin k on an axis of extent E: k for k < ceil(E/2), else k - E.
inline long signed_freq(std::size_t k, std::size_t E) {
  return k < (E + 1) / 2 ? static_cast<long>(k) : static_cast<long>(k) - static_cast<long>(E);
}

/// Kept frequencies for an axis of extent E: L = floor(E/2) signed values in
/// [-floor(L/2), ceil(L/2)).
inline bool kept(long f, std::size_t E) {
  const long L = static_cast<long>(E / 2);
  return f >= -(L / 2) && f < (L + 1) / 2;
}

/// FLC pooling evaluated from its definition: keep the low band of the full-size
/// spectrum and synthesize it directly on the half-size grid, real part.
inline flc::Tensor<double> flc_pool(const flc::Tensor<double>& x) {
  const std::size_t H = x.h(), W = x.w(), h2 = H / 2, w2 = W / 2;
  flc::Tensor<double> y({x.n(), x.c(), h2, w2});
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      const Plane F = dft(plane_of(x, n, c), H, W, false);
      for (std::size_t i = 0; i < h2; ++i) {
        for (std::size_t j = 0; j < w2; ++j) {
          cd acc = 0.0;
          for (std::size_t k = 0; k < H; ++k) {
            const long fk = signed_freq(k, H);
            if (!kept(fk, H)) continue;
            for (std::size_t l = 0; l < W; ++l) {
              const long fl = signed_freq(l, W);
              if (!kept(fl, W)) continue;
              const double ph = 2.0 * std::numbers::pi *
                                (static_cast<double>(fk) * static_cast<double>(i) / static_cast<double>(h2) +
                                 static_cast<double>(fl) * static_cast<double>(j) / static_cast<double>(w2));
              acc += F[k * W + l] * std::polar(1.0, ph);
            }
          }
          y(n, c, i, j) = acc.real() / static_cast<double>(H * W);
        }
      }
    }
  }
  return y;
}

/// Energy of a zero-padded spectrum outside the kept window (absolute, not a ratio).
inline double above_window_energy(const Plane& F, std::size_t H, std::size_t W) {
  double e = 0.0;
  for (std::size_t k = 0; k < H; ++k)
    for (std::size_t l = 0; l < W; ++l)
      if (!kept(signed_freq(k, H), H) || !kept(signed_freq(l, W), W)) e += std::norm(F[k * W + l]);
  return e;
}

/// y(i,j) = sum_{a,b} k(a,b) x(2i-a, 2j-b), indices modulo the input extents.
inline flc::Tensor<double> circular_conv_stride2(const flc::Tensor<double>& x, const flc::Tensor<double>& k) {
  const std::size_t H = x.h(), W = x.w();
  flc::Tensor<double> y({x.n(), x.c(), H / 2, W / 2});
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c)
      for (std::size_t i = 0; i < H / 2; ++i)
        for (std::size_t j = 0; j < W / 2; ++j) {
          double s = 0.0;
          for (std::size_t a = 0; a < H; ++a)
            for (std::size_t b = 0; b < W; ++b) s += k(0, 0, a, b) * x(n, c, (2 * i + H - a) % H, (2 * j + W - b) % W);
          y(n, c, i, j) = s;
        }
  return y;
}

/// 3x3 cross-correlation, zero padding 1, stride 1.
inline flc::Tensor<double> conv3x3(const flc::Tensor<double>& x, const flc::Tensor<double>& w,
                                   const flc::Tensor<double>& b) {
  const std::size_t N = x.n(), C = x.c(), H = x.h(), W = x.w(), O = w.n();
  flc::Tensor<double> y({N, O, H, W});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          double s = b(0, o, 0, 0);
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < 3; ++ky)
              for (std::size_t kx = 0; kx < 3; ++kx) {
                const long r = static_cast<long>(i + ky) - 1, q = static_cast<long>(j + kx) - 1;
                if (r < 0 || q < 0 || r >= static_cast<long>(H) || q >= static_cast<long>(W)) continue;
                s += w(o, c, ky, kx) * x(n, c, static_cast<std::size_t>(r), static_cast<std::size_t>(q));
              }
          y(n, o, i, j) = s;
        }
  return y;
}

/// Central-difference gradient of a scalar function at every coordinate of x.
inline flc::Tensor<double> fd_gradient(const std::function<double(const flc::Tensor<double>&)>& f,
                                       flc::Tensor<double> x, double step = 1e-6) {
  flc::Tensor<double> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i];
    x[i] = v + step;
    const double p = f(x);
    x[i] = v - step;
    const double m = f(x);
    x[i] = v;
    g[i] = (p - m) / (2.0 * step);
  }
  return g;
}

inline double rel_err(const flc::Tensor<double>& a, const flc::Tensor<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(b[i]));
  }
  return den > 0.0 ? num / den : num;
}

}  // namespace oracle
