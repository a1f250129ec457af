#pragma once

// Per-slice 2D discrete Fourier analysis.
//
// Conventions used throughout the library:
//   forward  F(k,l) = sum_{m,n} f(m,n) exp(-2 pi j (km/M + ln/N))        (unnormalized)
//   inverse  f(m,n) = 1/(MN) sum_{k,l} F(k,l) exp(+2 pi j (km/M + ln/N))
//
// fftshift moves index k of an axis with extent E to (k + floor(E/2)) mod E,
// so shifted index s holds signed frequency s - floor(E/2).
//
// The kept (below-Nyquist) window for 2x downsampling of an axis with extent E
// has length L = floor(E/2) and covers the signed frequencies
// [-floor(L/2), ceil(L/2)). For E divisible by 4 this is the shifted slice
// [E/4, 3E/4). The window is not conjugate-symmetric for even L: it holds
// -L/2 but not +L/2.

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "flc/tensor.hpp"

namespace flc {

/// Geometry of the 2x low-pass cutoff for an H x W map.
struct CutoffSpec {
  std::size_t factor = 2;
  std::size_t in_h = 0, in_w = 0;
  std::size_t out_h = 0, out_w = 0;
  /// First kept row/column in DcCentered coordinates.
  std::size_t row_start = 0, col_start = 0;

  static std::size_t window_start(std::size_t extent) {
    const std::size_t kept = extent / 2;
    return extent / 2 - kept / 2;
  }

  static CutoffSpec for_extents(std::size_t h, std::size_t w) {
    CutoffSpec c;
    c.in_h = h;
    c.in_w = w;
    c.out_h = h / 2;
    c.out_w = w / 2;
    c.row_start = window_start(h);
    c.col_start = window_start(w);
    return c;
  }

  bool keeps_centered(std::size_t row, std::size_t col) const noexcept {
    return row >= row_start && row < row_start + out_h && col >= col_start && col < col_start + out_w;
  }

  /// Same test for a DcAtOrigin index.
  bool keeps_origin(std::size_t k, std::size_t l) const noexcept {
    return keeps_centered((k + in_h / 2) % in_h, (l + in_w / 2) % in_w);
  }

  std::size_t kept_bins() const noexcept { return out_h * out_w; }
};

/// Signed frequency of DcAtOrigin index k on an axis of extent E.
inline std::ptrdiff_t signed_frequency(std::size_t k, std::size_t extent) noexcept {
  const std::size_t half_up = (extent + 1) / 2;
  return k < half_up ? static_cast<std::ptrdiff_t>(k) : static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(extent);
}

namespace detail {

inline bool is_power_of_two(std::size_t n) noexcept { return n != 0 && (n & (n - 1)) == 0; }

/// exp(-2 pi j k / n) for k in [0, n), cached per thread.
inline const std::vector<std::complex<double>>& unit_roots(std::size_t n) {
  thread_local std::unordered_map<std::size_t, std::vector<std::complex<double>>> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<std::complex<double>> r(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    r[k] = {std::cos(angle), std::sin(angle)};
  }
  return cache.emplace(n, std::move(r)).first->second;
}

/// Unnormalized in-place 1D transform of a contiguous sequence.
/// Radix-2 for powers of two, direct O(n^2) evaluation otherwise.
template <class T>
void transform_1d(std::complex<T>* a, std::size_t n, bool inverse, std::vector<std::complex<T>>& scratch) {
  if (n <= 1) return;
  const auto& roots = unit_roots(n);
  if (is_power_of_two(n)) {
    for (std::size_t i = 1, j = 0; i < n; ++i) {
      std::size_t bit = n >> 1;
      for (; j & bit; bit >>= 1) j ^= bit;
      j ^= bit;
      if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
      const std::size_t step = n / len;
      const std::size_t half = len / 2;
      for (std::size_t i = 0; i < n; i += len) {
        for (std::size_t j = 0; j < half; ++j) {
          std::complex<double> wd = roots[j * step];
          if (inverse) wd = std::conj(wd);
          const std::complex<T> w(static_cast<T>(wd.real()), static_cast<T>(wd.imag()));
          const std::complex<T> u = a[i + j];
          const std::complex<T> v = a[i + j + half] * w;
          a[i + j] = u + v;
          a[i + j + half] = u - v;
        }
      }
    }
    return;
  }
  scratch.assign(n, std::complex<T>(0, 0));
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (std::size_t m = 0; m < n; ++m) {
      std::complex<double> wd = roots[(k * m) % n];
      if (inverse) wd = std::conj(wd);
      acc += std::complex<double>(a[m].real(), a[m].imag()) * wd;
    }
    scratch[k] = {static_cast<T>(acc.real()), static_cast<T>(acc.imag())};
  }
  std::copy(scratch.begin(), scratch.end(), a);
}

template <class T>
void transform_2d(ComplexTensor<T>& z, bool inverse) {
  const std::size_t H = z.h(), W = z.w();
  std::vector<std::complex<T>> column(H), scratch;
  for (std::size_t n = 0; n < z.n(); ++n) {
    for (std::size_t c = 0; c < z.c(); ++c) {
      auto p = z.plane(n, c);
      for (std::size_t r = 0; r < H; ++r) transform_1d(p.data() + r * W, W, inverse, scratch);
      if (H > 1) {
        for (std::size_t col = 0; col < W; ++col) {
          for (std::size_t r = 0; r < H; ++r) column[r] = p[r * W + col];
          transform_1d(column.data(), H, inverse, scratch);
          for (std::size_t r = 0; r < H; ++r) p[r * W + col] = column[r];
        }
      }
    }
  }
}

template <class T>
void require_layout(const ComplexTensor<T>& z, SpectrumLayout expected, const char* op) {
  if (z.layout() != expected) {
    throw std::invalid_argument(std::string(op) + ": spectrum layout mismatch");
  }
}

template <class T>
void require_nonempty_extents(const Shape& s, const char* op) {
  if (s[2] < 1 || s[3] < 1) throw std::invalid_argument(std::string(op) + ": extents must be >= 1");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Direct (definition-level) transforms. O((HW)^2) per slice.

template <class T>
ComplexTensor<T> dft2(const ComplexTensor<T>& x) {
  detail::require_nonempty_extents<T>(x.shape(), "dft2");
  const std::size_t H = x.h(), W = x.w();
  const auto& rh = detail::unit_roots(H);
  const auto& rw = detail::unit_roots(W);
  ComplexTensor<T> out(x.shape(), SpectrumLayout::DcAtOrigin);
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      auto src = x.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t k = 0; k < H; ++k) {
        for (std::size_t l = 0; l < W; ++l) {
          std::complex<double> acc(0.0, 0.0);
          for (std::size_t m = 0; m < H; ++m) {
            for (std::size_t q = 0; q < W; ++q) {
              const auto v = src[m * W + q];
              acc += std::complex<double>(v.real(), v.imag()) * rh[(k * m) % H] * rw[(l * q) % W];
            }
          }
          dst[k * W + l] = {static_cast<T>(acc.real()), static_cast<T>(acc.imag())};
        }
      }
    }
  }
  return out;
}

template <class T>
ComplexTensor<T> dft2(const Tensor<T>& x) {
  return dft2(to_complex(x));
}

template <class T>
ComplexTensor<T> idft2(const ComplexTensor<T>& F) {
  detail::require_layout(F, SpectrumLayout::DcAtOrigin, "idft2");
  detail::require_nonempty_extents<T>(F.shape(), "idft2");
  const std::size_t H = F.h(), W = F.w();
  const auto& rh = detail::unit_roots(H);
  const auto& rw = detail::unit_roots(W);
  const double norm = 1.0 / static_cast<double>(H * W);
  ComplexTensor<T> out(F.shape(), SpectrumLayout::DcAtOrigin);
  for (std::size_t n = 0; n < F.n(); ++n) {
    for (std::size_t c = 0; c < F.c(); ++c) {
      auto src = F.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t m = 0; m < H; ++m) {
        for (std::size_t q = 0; q < W; ++q) {
          std::complex<double> acc(0.0, 0.0);
          for (std::size_t k = 0; k < H; ++k) {
            for (std::size_t l = 0; l < W; ++l) {
              const auto v = src[k * W + l];
              acc += std::complex<double>(v.real(), v.imag()) * std::conj(rh[(k * m) % H] * rw[(l * q) % W]);
            }
          }
          acc *= norm;
          dst[m * W + q] = {static_cast<T>(acc.real()), static_cast<T>(acc.imag())};
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fast transforms: separable row/column passes.

template <class T>
ComplexTensor<T> fft2(ComplexTensor<T> x) {
  detail::require_nonempty_extents<T>(x.shape(), "fft2");
  detail::transform_2d(x, false);
  x.set_layout(SpectrumLayout::DcAtOrigin);
  return x;
}

template <class T>
ComplexTensor<T> fft2(const Tensor<T>& x) {
  return fft2(to_complex(x));
}

template <class T>
ComplexTensor<T> ifft2(ComplexTensor<T> F) {
  detail::require_layout(F, SpectrumLayout::DcAtOrigin, "ifft2");
  detail::require_nonempty_extents<T>(F.shape(), "ifft2");
  detail::transform_2d(F, true);
  const T norm = static_cast<T>(1.0 / static_cast<double>(F.h() * F.w()));
  for (auto& v : F.data()) v *= norm;
  return F;
}

// ---------------------------------------------------------------------------
// Layout changes, crop and pad

namespace detail {
template <class T>
ComplexTensor<T> rotate(const ComplexTensor<T>& F, bool forward, SpectrumLayout result) {
  const std::size_t H = F.h(), W = F.w();
  ComplexTensor<T> out(F.shape(), result);
  const std::size_t sh = H / 2, sw = W / 2;
  for (std::size_t n = 0; n < F.n(); ++n) {
    for (std::size_t c = 0; c < F.c(); ++c) {
      auto src = F.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t k = 0; k < H; ++k) {
        for (std::size_t l = 0; l < W; ++l) {
          const std::size_t tk = (k + sh) % H, tl = (l + sw) % W;
          if (forward) {
            dst[tk * W + tl] = src[k * W + l];
          } else {
            dst[k * W + l] = src[tk * W + tl];
          }
        }
      }
    }
  }
  return out;
}

/// Re-embed a centered spectrum at new extents: destination index d on an axis
/// holds source index d - floor(dst/2) + floor(src/2), zero where that falls outside.
template <class T>
ComplexTensor<T> recenter(const ComplexTensor<T>& Fs, std::size_t dst_h, std::size_t dst_w) {
  const std::size_t H = Fs.h(), W = Fs.w();
  ComplexTensor<T> out({Fs.n(), Fs.c(), dst_h, dst_w}, SpectrumLayout::DcCentered);
  const auto source_index = [](std::size_t d, std::size_t dst, std::size_t src) -> std::ptrdiff_t {
    return static_cast<std::ptrdiff_t>(d + src / 2) - static_cast<std::ptrdiff_t>(dst / 2);
  };
  for (std::size_t n = 0; n < Fs.n(); ++n) {
    for (std::size_t c = 0; c < Fs.c(); ++c) {
      auto src = Fs.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t r = 0; r < dst_h; ++r) {
        const auto sr = source_index(r, dst_h, H);
        if (sr < 0 || sr >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t q = 0; q < dst_w; ++q) {
          const auto sq = source_index(q, dst_w, W);
          if (sq < 0 || sq >= static_cast<std::ptrdiff_t>(W)) continue;
          dst[r * dst_w + q] = src[static_cast<std::size_t>(sr) * W + static_cast<std::size_t>(sq)];
        }
      }
    }
  }
  return out;
}
}  // namespace detail

template <class T>
ComplexTensor<T> fftshift(const ComplexTensor<T>& F) {
  detail::require_layout(F, SpectrumLayout::DcAtOrigin, "fftshift");
  return detail::rotate(F, true, SpectrumLayout::DcCentered);
}

template <class T>
ComplexTensor<T> ifftshift(const ComplexTensor<T>& F) {
  detail::require_layout(F, SpectrumLayout::DcCentered, "ifftshift");
  return detail::rotate(F, false, SpectrumLayout::DcAtOrigin);
}

/// Keep the centered floor(H/2) x floor(W/2) window of a DcCentered spectrum.
template <class T>
ComplexTensor<T> crop_center(const ComplexTensor<T>& Fs) {
  detail::require_layout(Fs, SpectrumLayout::DcCentered, "crop_center");
  if (Fs.h() < 2 || Fs.w() < 2) throw std::invalid_argument("crop_center: output extent would be 0");
  return detail::recenter(Fs, Fs.h() / 2, Fs.w() / 2);
}

/// Embed a DcCentered spectrum into a larger all-zero centered array.
template <class T>
ComplexTensor<T> zero_pad_center(const ComplexTensor<T>& Fs, std::size_t target_h, std::size_t target_w) {
  detail::require_layout(Fs, SpectrumLayout::DcCentered, "zero_pad_center");
  if (target_h < Fs.h() || target_w < Fs.w()) {
    throw std::invalid_argument("zero_pad_center: target smaller than input");
  }
  return detail::recenter(Fs, target_h, target_w);
}

/// Multiply by the rectangular indicator of the kept window (either layout).
template <class T>
ComplexTensor<T> ideal_lowpass(const ComplexTensor<T>& F, const CutoffSpec& cutoff) {
  if (cutoff.in_h != F.h() || cutoff.in_w != F.w()) {
    throw std::invalid_argument("ideal_lowpass: cutoff extents do not match spectrum");
  }
  ComplexTensor<T> out = F;
  const bool centered = F.layout() == SpectrumLayout::DcCentered;
  const std::size_t H = F.h(), W = F.w();
  for (std::size_t n = 0; n < F.n(); ++n) {
    for (std::size_t c = 0; c < F.c(); ++c) {
      auto p = out.plane(n, c);
      for (std::size_t k = 0; k < H; ++k) {
        for (std::size_t l = 0; l < W; ++l) {
          const bool keep = centered ? cutoff.keeps_centered(k, l) : cutoff.keeps_origin(k, l);
          if (!keep) p[k * W + l] = {T(0), T(0)};
        }
      }
    }
  }
  return out;
}

template <class T>
ComplexTensor<T> ideal_lowpass(const ComplexTensor<T>& F) {
  return ideal_lowpass(F, CutoffSpec::for_extents(F.h(), F.w()));
}

/// Complement filter (1 - H).
template <class T>
ComplexTensor<T> ideal_highpass(const ComplexTensor<T>& F) {
  const auto low = ideal_lowpass(F);
  ComplexTensor<T> out = F;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= low[i];
  return out;
}

// ---------------------------------------------------------------------------
// Energy measures

struct EnergyRatios {
  std::vector<double> per_slice;  ///< one ratio per (n, c), laid out n*C + c
  double aggregate = 0.0;         ///< pooled above-cutoff energy / pooled total energy
  double mean = 0.0;              ///< unweighted mean of per_slice
};

/// Fraction of spectral energy outside the kept window, from a spectrum in either layout.
template <class T>
EnergyRatios above_cutoff_energy(const ComplexTensor<T>& F, const CutoffSpec& cutoff) {
  EnergyRatios r;
  const bool centered = F.layout() == SpectrumLayout::DcCentered;
  double total_all = 0.0, above_all = 0.0;
  const std::size_t H = F.h(), W = F.w();
  for (std::size_t n = 0; n < F.n(); ++n) {
    for (std::size_t c = 0; c < F.c(); ++c) {
      auto p = F.plane(n, c);
      double total = 0.0, above = 0.0;
      for (std::size_t k = 0; k < H; ++k) {
        for (std::size_t l = 0; l < W; ++l) {
          const double e = std::norm(std::complex<double>(p[k * W + l].real(), p[k * W + l].imag()));
          total += e;
          const bool keep = centered ? cutoff.keeps_centered(k, l) : cutoff.keeps_origin(k, l);
          if (!keep) above += e;
        }
      }
      r.per_slice.push_back(total > 0.0 ? above / total : 0.0);
      total_all += total;
      above_all += above;
    }
  }
  r.aggregate = total_all > 0.0 ? above_all / total_all : 0.0;
  double s = 0.0;
  for (double v : r.per_slice) s += v;
  r.mean = r.per_slice.empty() ? 0.0 : s / static_cast<double>(r.per_slice.size());
  return r;
}

/// Above-Nyquist energy ratio of a spatial map for 2x downsampling.
template <class T>
EnergyRatios above_nyquist_energy(const Tensor<T>& x, std::size_t factor = 2) {
  if (factor != 2) throw std::invalid_argument("above_nyquist_energy: only factor 2 is supported");
  if (x.h() < 2 || x.w() < 2) throw std::invalid_argument("above_nyquist_energy: extents must be >= 2");
  return above_cutoff_energy(fft2(x), CutoffSpec::for_extents(x.h(), x.w()));
}

/// Spatial M x N kernel: real part of the inverse transform of the kept-window indicator.
/// Circular convolution with it followed by stride-2 sampling reproduces flc_pool.
template <class T>
Tensor<T> sinc_kernel(std::size_t M, std::size_t N, std::size_t factor = 2) {
  if (factor != 2) throw std::invalid_argument("sinc_kernel: only factor 2 is supported");
  if (M < 2 || N < 2) throw std::invalid_argument("sinc_kernel: extents must be >= 2");
  const CutoffSpec cut = CutoffSpec::for_extents(M, N);
  ComplexTensor<T> H({1, 1, M, N}, SpectrumLayout::DcAtOrigin);
  for (std::size_t k = 0; k < M; ++k) {
    for (std::size_t l = 0; l < N; ++l) {
      if (cut.keeps_origin(k, l)) H(0, 0, k, l) = {T(1), T(0)};
    }
  }
  return real_part(ifft2(std::move(H)));
}

}  // namespace flc
