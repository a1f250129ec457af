#pragma once

// 2x downsampling operators with exact backward (adjoint) passes.
//
// All kinds map [N,C,H,W] to [N,C,floor(H/2),floor(W/2)]. MaxPool2, AvgPool2
// and BlurPool additionally require even extents.
//
// BlurPool uses circular boundary handling (not reflection padding) so that
// its spectral behaviour is exactly the product of the binomial filter's
// transfer function with the input spectrum.

#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <numbers>
#include <unordered_map>
#include <vector>

#include "flc/spectral.hpp"
#include "flc/tensor.hpp"

namespace flc {

enum class PoolingKind { Flc, FlcPlusHighpass, FlcPlusOriginal, MaxPool2, AvgPool2, StridedIdentity, BlurPool };

inline constexpr std::array<PoolingKind, 7> kAllPoolingKinds = {
    PoolingKind::Flc,      PoolingKind::FlcPlusHighpass, PoolingKind::FlcPlusOriginal, PoolingKind::MaxPool2,
    PoolingKind::AvgPool2, PoolingKind::StridedIdentity, PoolingKind::BlurPool};

inline std::string_view to_string(PoolingKind k) {
  switch (k) {
    case PoolingKind::Flc: return "flc";
    case PoolingKind::FlcPlusHighpass: return "flc+hp";
    case PoolingKind::FlcPlusOriginal: return "flc+orig";
    case PoolingKind::MaxPool2: return "max";
    case PoolingKind::AvgPool2: return "avg";
    case PoolingKind::StridedIdentity: return "strided";
    case PoolingKind::BlurPool: return "blur";
  }
  return "?";
}

inline std::optional<PoolingKind> parse_pooling_kind(std::string_view name) {
  for (PoolingKind k : kAllPoolingKinds) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

inline bool is_linear(PoolingKind k) { return k != PoolingKind::MaxPool2; }

enum class SecondPath { Highpass, Original };

namespace detail {

template <class T>
void require_min_extents(const Tensor<T>& x, const char* op) {
  if (x.h() < 2 || x.w() < 2) throw std::invalid_argument(std::string(op) + ": extents must be >= 2");
}

template <class T>
void require_even_extents(const Tensor<T>& x, const char* op) {
  require_min_extents(x, op);
  if (x.h() % 2 != 0 || x.w() % 2 != 0) throw std::invalid_argument(std::string(op) + ": extents must be even");
}

inline Shape pooled_shape(const Shape& s) { return {s[0], s[1], s[2] / 2, s[3] / 2}; }

template <class T>
void require_grad_shape(const Shape& input, const Tensor<T>& grad_out, const char* op) {
  if (grad_out.shape() != pooled_shape(input)) {
    throw std::invalid_argument(std::string(op) + ": gradient shape " + to_string(grad_out.shape()) +
                                " does not match pooled input " + to_string(input));
  }
}

/// Zero-filled map at the input extents with grad placed at even coordinates.
template <class T>
Tensor<T> zero_insert(const Tensor<T>& g, const Shape& input) {
  Tensor<T> out(input);
  for (std::size_t n = 0; n < g.n(); ++n) {
    for (std::size_t c = 0; c < g.c(); ++c) {
      for (std::size_t h = 0; h < g.h(); ++h) {
        for (std::size_t w = 0; w < g.w(); ++w) out(n, c, 2 * h, 2 * w) = g(n, c, h, w);
      }
    }
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// FrequencyLowCut

/// Complex-valued FLC output before the real part is taken:
/// fft2 -> fftshift -> crop_center -> ifftshift -> ifft2, scaled by out_area/in_area
/// so that a constant map stays the same constant.
template <class T>
ComplexTensor<T> flc_pool_complex(const Tensor<T>& x) {
  detail::require_min_extents(x, "flc_pool");
  auto low = ifft2(ifftshift(crop_center(fftshift(fft2(x)))));
  const T amplitude = static_cast<T>(static_cast<double>(low.h() * low.w()) / static_cast<double>(x.h() * x.w()));
  for (auto& v : low.data()) v *= amplitude;
  return low;
}

/// Reference path: real part of the spectral pipeline.
template <class T>
Tensor<T> flc_pool_spectral(const Tensor<T>& x) {
  return real_part(flc_pool_complex(x));
}

/// Reference adjoint: spectral zero-padding back to the input extents.
template <class T>
Tensor<T> flc_pool_backward_spectral(const Shape& input, const Tensor<T>& grad_out) {
  detail::require_grad_shape(input, grad_out, "flc_pool_backward");
  auto up = ifft2(ifftshift(zero_pad_center(fftshift(fft2(grad_out)), input[2], input[3])));
  return real_part(up);
}

namespace detail {

/// The crop is separable, so per axis the pipeline is a fixed complex L x E matrix
///   A[j, m] = (1/E) sum_{f in window} exp(2 pi i f (j/L - m/E))
/// and flc_pool(X) = Re(A_h X A_w^T) = Ar_h X Ar_w^T - Ai_h X Ai_w^T.
template <class T>
struct FlcAxisOperator {
  std::size_t in = 0, out = 0;
  std::vector<T> re, im;  ///< out x in, row-major
};

template <class T>
const FlcAxisOperator<T>& flc_axis_operator(std::size_t E) {
  thread_local std::unordered_map<std::size_t, FlcAxisOperator<T>> cache;
  auto it = cache.find(E);
  if (it != cache.end()) return it->second;
  FlcAxisOperator<T> op;
  op.in = E;
  op.out = E / 2;
  const std::size_t L = op.out;
  const auto lo = static_cast<std::ptrdiff_t>(CutoffSpec::window_start(E)) - static_cast<std::ptrdiff_t>(E / 2);
  const auto period = static_cast<std::ptrdiff_t>(L * E);
  op.re.resize(L * E);
  op.im.resize(L * E);
  for (std::size_t j = 0; j < L; ++j) {
    for (std::size_t m = 0; m < E; ++m) {
      double re = 0.0, im = 0.0;
      for (std::ptrdiff_t f = lo; f < lo + static_cast<std::ptrdiff_t>(L); ++f) {
        // phase f (j E - m L) / (L E), reduced exactly in integers
        std::ptrdiff_t num = (f * (static_cast<std::ptrdiff_t>(j * E) - static_cast<std::ptrdiff_t>(m * L))) % period;
        if (num < 0) num += period;
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(num) / static_cast<double>(period);
        re += std::cos(angle);
        im += std::sin(angle);
      }
      op.re[j * E + m] = static_cast<T>(re / static_cast<double>(E));
      op.im[j * E + m] = static_cast<T>(im / static_cast<double>(E));
    }
  }
  return cache.emplace(E, std::move(op)).first->second;
}

}  // namespace detail

/// FLC pooling: keep the centered floor(H/2) x floor(W/2) block of the spectrum and
/// transform back. Evaluated through the separable per-axis operators; agrees with
/// flc_pool_spectral to rounding.
template <class T>
Tensor<T> flc_pool(const Tensor<T>& x) {
  detail::require_min_extents(x, "flc_pool");
  const auto& ah = detail::flc_axis_operator<T>(x.h());
  const auto& aw = detail::flc_axis_operator<T>(x.w());
  const std::size_t H = x.h(), W = x.w(), h = ah.out, w = aw.out;
  Tensor<T> y(detail::pooled_shape(x.shape()));
  std::vector<T> tr(H * w), ti(H * w);
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      auto src = x.plane(n, c);
      auto dst = y.plane(n, c);
      // t = X A_w^T
      for (std::size_t m = 0; m < H; ++m) {
        const T* row = &src[m * W];
        for (std::size_t j = 0; j < w; ++j) {
          const T* ar = &aw.re[j * W];
          const T* ai = &aw.im[j * W];
          T sr = 0, si = 0;
          for (std::size_t q = 0; q < W; ++q) {
            sr += row[q] * ar[q];
            si += row[q] * ai[q];
          }
          tr[m * w + j] = sr;
          ti[m * w + j] = si;
        }
      }
      // y = Ar_h t_r - Ai_h t_i
      for (std::size_t i = 0; i < h; ++i) {
        T* out = &dst[i * w];
        for (std::size_t j = 0; j < w; ++j) out[j] = 0;
        for (std::size_t m = 0; m < H; ++m) {
          const T ar = ah.re[i * H + m], ai = ah.im[i * H + m];
          const T* r = &tr[m * w];
          const T* s = &ti[m * w];
          for (std::size_t j = 0; j < w; ++j) out[j] += ar * r[j] - ai * s[j];
        }
      }
    }
  }
  return y;
}

/// Adjoint of flc_pool: Ar_h^T G Ar_w - Ai_h^T G Ai_w.
template <class T>
Tensor<T> flc_pool_backward(const Shape& input, const Tensor<T>& grad_out) {
  detail::require_grad_shape(input, grad_out, "flc_pool_backward");
  const auto& ah = detail::flc_axis_operator<T>(input[2]);
  const auto& aw = detail::flc_axis_operator<T>(input[3]);
  const std::size_t H = input[2], W = input[3], h = ah.out, w = aw.out;
  Tensor<T> gx(input);
  std::vector<T> tr(h * W), ti(h * W);
  for (std::size_t n = 0; n < input[0]; ++n) {
    for (std::size_t c = 0; c < input[1]; ++c) {
      auto g = grad_out.plane(n, c);
      auto dst = gx.plane(n, c);
      // t = G A_w
      for (std::size_t i = 0; i < h; ++i) {
        T* r = &tr[i * W];
        T* s = &ti[i * W];
        for (std::size_t q = 0; q < W; ++q) r[q] = s[q] = 0;
        for (std::size_t j = 0; j < w; ++j) {
          const T gv = g[i * w + j];
          const T* ar = &aw.re[j * W];
          const T* ai = &aw.im[j * W];
          for (std::size_t q = 0; q < W; ++q) {
            r[q] += gv * ar[q];
            s[q] += gv * ai[q];
          }
        }
      }
      // dx = Ar_h^T t_r - Ai_h^T t_i
      for (std::size_t i = 0; i < h; ++i) {
        const T* r = &tr[i * W];
        const T* s = &ti[i * W];
        for (std::size_t m = 0; m < H; ++m) {
          const T ar = ah.re[i * H + m], ai = ah.im[i * H + m];
          T* out = &dst[m * W];
          for (std::size_t q = 0; q < W; ++q) out[q] += ar * r[q] - ai * s[q];
        }
      }
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Spatial pooling

template <class T>
Tensor<T> strided_identity(const Tensor<T>& x) {
  detail::require_min_extents(x, "strided_identity");
  Tensor<T> y(detail::pooled_shape(x.shape()));
  for (std::size_t n = 0; n < y.n(); ++n) {
    for (std::size_t c = 0; c < y.c(); ++c) {
      for (std::size_t h = 0; h < y.h(); ++h) {
        for (std::size_t w = 0; w < y.w(); ++w) y(n, c, h, w) = x(n, c, 2 * h, 2 * w);
      }
    }
  }
  return y;
}

template <class T>
Tensor<T> strided_identity_backward(const Shape& input, const Tensor<T>& grad_out) {
  detail::require_grad_shape(input, grad_out, "strided_identity_backward");
  return detail::zero_insert(grad_out, input);
}

template <class T>
Tensor<T> max_pool2(const Tensor<T>& x) {
  detail::require_even_extents(x, "max_pool2");
  Tensor<T> y(detail::pooled_shape(x.shape()));
  for (std::size_t n = 0; n < y.n(); ++n) {
    for (std::size_t c = 0; c < y.c(); ++c) {
      for (std::size_t h = 0; h < y.h(); ++h) {
        for (std::size_t w = 0; w < y.w(); ++w) {
          T m = x(n, c, 2 * h, 2 * w);
          m = std::max(m, x(n, c, 2 * h, 2 * w + 1));
          m = std::max(m, x(n, c, 2 * h + 1, 2 * w));
          m = std::max(m, x(n, c, 2 * h + 1, 2 * w + 1));
          y(n, c, h, w) = m;
        }
      }
    }
  }
  return y;
}

/// Routes each window's gradient to its maximum; ties go to the first element in row-major order.
template <class T>
Tensor<T> max_pool2_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
  detail::require_even_extents(input, "max_pool2_backward");
  detail::require_grad_shape(input.shape(), grad_out, "max_pool2_backward");
  Tensor<T> gx(input.shape());
  for (std::size_t n = 0; n < grad_out.n(); ++n) {
    for (std::size_t c = 0; c < grad_out.c(); ++c) {
      for (std::size_t h = 0; h < grad_out.h(); ++h) {
        for (std::size_t w = 0; w < grad_out.w(); ++w) {
          std::size_t bh = 2 * h, bw = 2 * w;
          T best = input(n, c, bh, bw);
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const T v = input(n, c, 2 * h + dy, 2 * w + dx);
              if (v > best) {
                best = v;
                bh = 2 * h + dy;
                bw = 2 * w + dx;
              }
            }
          }
          gx(n, c, bh, bw) += grad_out(n, c, h, w);
        }
      }
    }
  }
  return gx;
}

template <class T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  detail::require_even_extents(x, "avg_pool2");
  Tensor<T> y(detail::pooled_shape(x.shape()));
  for (std::size_t n = 0; n < y.n(); ++n) {
    for (std::size_t c = 0; c < y.c(); ++c) {
      for (std::size_t h = 0; h < y.h(); ++h) {
        for (std::size_t w = 0; w < y.w(); ++w) {
          y(n, c, h, w) = T(0.25) * (x(n, c, 2 * h, 2 * w) + x(n, c, 2 * h, 2 * w + 1) + x(n, c, 2 * h + 1, 2 * w) +
                                     x(n, c, 2 * h + 1, 2 * w + 1));
        }
      }
    }
  }
  return y;
}

template <class T>
Tensor<T> avg_pool2_backward(const Shape& input, const Tensor<T>& grad_out) {
  detail::require_grad_shape(input, grad_out, "avg_pool2_backward");
  if (input[2] % 2 != 0 || input[3] % 2 != 0) throw std::invalid_argument("avg_pool2_backward: extents must be even");
  Tensor<T> gx(input);
  for (std::size_t n = 0; n < grad_out.n(); ++n) {
    for (std::size_t c = 0; c < grad_out.c(); ++c) {
      for (std::size_t h = 0; h < grad_out.h(); ++h) {
        for (std::size_t w = 0; w < grad_out.w(); ++w) {
          const T g = T(0.25) * grad_out(n, c, h, w);
          gx(n, c, 2 * h, 2 * w) = g;
          gx(n, c, 2 * h, 2 * w + 1) = g;
          gx(n, c, 2 * h + 1, 2 * w) = g;
          gx(n, c, 2 * h + 1, 2 * w + 1) = g;
        }
      }
    }
  }
  return gx;
}

/// Separable binomial taps [1,2,1]/4.
inline constexpr std::array<double, 3> kBinomialTaps = {0.25, 0.5, 0.25};

template <class T>
Tensor<T> blur_pool(const Tensor<T>& x) {
  detail::require_even_extents(x, "blur_pool");
  Tensor<T> y(detail::pooled_shape(x.shape()));
  const std::size_t H = x.h(), W = x.w();
  for (std::size_t n = 0; n < y.n(); ++n) {
    for (std::size_t c = 0; c < y.c(); ++c) {
      auto src = x.plane(n, c);
      for (std::size_t h = 0; h < y.h(); ++h) {
        for (std::size_t w = 0; w < y.w(); ++w) {
          T acc = 0;
          for (std::size_t a = 0; a < 3; ++a) {
            const std::size_t r = wrap_index(static_cast<std::ptrdiff_t>(2 * h + a) - 1, H);
            for (std::size_t b = 0; b < 3; ++b) {
              const std::size_t q = wrap_index(static_cast<std::ptrdiff_t>(2 * w + b) - 1, W);
              acc += static_cast<T>(kBinomialTaps[a] * kBinomialTaps[b]) * src[r * W + q];
            }
          }
          y(n, c, h, w) = acc;
        }
      }
    }
  }
  return y;
}

template <class T>
Tensor<T> blur_pool_backward(const Shape& input, const Tensor<T>& grad_out) {
  detail::require_grad_shape(input, grad_out, "blur_pool_backward");
  if (input[2] % 2 != 0 || input[3] % 2 != 0) throw std::invalid_argument("blur_pool_backward: extents must be even");
  Tensor<T> gx(input);
  const std::size_t H = input[2], W = input[3];
  for (std::size_t n = 0; n < grad_out.n(); ++n) {
    for (std::size_t c = 0; c < grad_out.c(); ++c) {
      auto dst = gx.plane(n, c);
      for (std::size_t h = 0; h < grad_out.h(); ++h) {
        for (std::size_t w = 0; w < grad_out.w(); ++w) {
          const T g = grad_out(n, c, h, w);
          for (std::size_t a = 0; a < 3; ++a) {
            const std::size_t r = wrap_index(static_cast<std::ptrdiff_t>(2 * h + a) - 1, H);
            for (std::size_t b = 0; b < 3; ++b) {
              const std::size_t q = wrap_index(static_cast<std::ptrdiff_t>(2 * w + b) - 1, W);
              dst[r * W + q] += static_cast<T>(kBinomialTaps[a] * kBinomialTaps[b]) * g;
            }
          }
        }
      }
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------
// High-frequency second path and the combined variants

/// Complement-window spectral filter, back to the spatial domain, then stride-2 sampling.
template <class T>
Tensor<T> highpass_pool(const Tensor<T>& x) {
  detail::require_min_extents(x, "highpass_pool");
  return strided_identity(real_part(ifft2(ideal_highpass(fft2(x)))));
}

template <class T>
Tensor<T> highpass_pool_backward(const Shape& input, const Tensor<T>& grad_out) {
  detail::require_grad_shape(input, grad_out, "highpass_pool_backward");
  return real_part(ifft2(ideal_highpass(fft2(detail::zero_insert(grad_out, input)))));
}

template <class T>
Tensor<T> flc_plus(const Tensor<T>& x, SecondPath mode) {
  const Tensor<T> low = flc_pool(x);
  return add(low, mode == SecondPath::Highpass ? highpass_pool(x) : strided_identity(x));
}

template <class T>
Tensor<T> flc_plus_backward(const Shape& input, const Tensor<T>& grad_out, SecondPath mode) {
  const Tensor<T> low = flc_pool_backward(input, grad_out);
  return add(low, mode == SecondPath::Highpass ? highpass_pool_backward(input, grad_out)
                                               : strided_identity_backward(input, grad_out));
}

// ---------------------------------------------------------------------------
// Dispatch

template <class T>
Tensor<T> pool_forward(PoolingKind kind, const Tensor<T>& x) {
  switch (kind) {
    case PoolingKind::Flc: return flc_pool(x);
    case PoolingKind::FlcPlusHighpass: return flc_plus(x, SecondPath::Highpass);
    case PoolingKind::FlcPlusOriginal: return flc_plus(x, SecondPath::Original);
    case PoolingKind::MaxPool2: return max_pool2(x);
    case PoolingKind::AvgPool2: return avg_pool2(x);
    case PoolingKind::StridedIdentity: return strided_identity(x);
    case PoolingKind::BlurPool: return blur_pool(x);
  }
  throw std::logic_error("unknown pooling kind");
}

/// Gradient with respect to the pooling input. `input` is only read for MaxPool2.
template <class T>
Tensor<T> pool_backward(PoolingKind kind, const Tensor<T>& input, const Tensor<T>& grad_out) {
  const Shape& s = input.shape();
  switch (kind) {
    case PoolingKind::Flc: return flc_pool_backward(s, grad_out);
    case PoolingKind::FlcPlusHighpass: return flc_plus_backward(s, grad_out, SecondPath::Highpass);
    case PoolingKind::FlcPlusOriginal: return flc_plus_backward(s, grad_out, SecondPath::Original);
    case PoolingKind::MaxPool2: return max_pool2_backward(input, grad_out);
    case PoolingKind::AvgPool2: return avg_pool2_backward(s, grad_out);
    case PoolingKind::StridedIdentity: return strided_identity_backward(s, grad_out);
    case PoolingKind::BlurPool: return blur_pool_backward(s, grad_out);
  }
  throw std::logic_error("unknown pooling kind");
}

}  // namespace flc
