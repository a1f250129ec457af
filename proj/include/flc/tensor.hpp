#pragma once

// Dense 4-axis real and complex arrays ([batch, channel, height, width],
// row-major) plus the small set of elementwise/reduction primitives the rest
// of the library is built on.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace flc {

using Shape = std::array<std::size_t, 4>;

inline std::string to_string(const Shape& s) {
  return "[" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) + "," +
         std::to_string(s[3]) + "]";
}

/// Product of the extents; throws std::overflow_error if it does not fit in size_t.
inline std::size_t element_count(const Shape& s) {
  std::size_t total = 1;
  for (std::size_t e : s) {
    if (e != 0 && total > std::numeric_limits<std::size_t>::max() / e) {
      throw std::overflow_error("element count overflows for shape " + to_string(s));
    }
    total *= e;
  }
  return total;
}

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : shape_{0, 0, 0, 0} {}
  explicit Tensor(const Shape& shape) : shape_(shape), data_(element_count(shape), T(0)) {}
  Tensor(const Shape& shape, T value) : shape_(shape), data_(element_count(shape), value) {}
  Tensor(const Shape& shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != element_count(shape_)) {
      throw std::invalid_argument("data length " + std::to_string(data_.size()) + " does not match shape " +
                                  to_string(shape_));
    }
  }

  static Tensor zeros(const Shape& shape) { return Tensor(shape); }
  static Tensor full(const Shape& shape, T value) { return Tensor(shape, value); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t n() const noexcept { return shape_[0]; }
  std::size_t c() const noexcept { return shape_[1]; }
  std::size_t h() const noexcept { return shape_[2]; }
  std::size_t w() const noexcept { return shape_[3]; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[index(n, c, h, w)];
  }
  const T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[index(n, c, h, w)];
  }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }

  /// Contiguous H*W plane of one (batch, channel) slice.
  std::span<T> plane(std::size_t n, std::size_t c) noexcept {
    return {data_.data() + index(n, c, 0, 0), shape_[2] * shape_[3]};
  }
  std::span<const T> plane(std::size_t n, std::size_t c) const noexcept {
    return {data_.data() + index(n, c, 0, 0), shape_[2] * shape_[3]};
  }

  /// Copy of examples [begin, end) along the batch axis.
  Tensor batch_slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > shape_[0]) throw std::out_of_range("batch_slice out of range");
    const std::size_t per = shape_[1] * shape_[2] * shape_[3];
    std::vector<T> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * per),
                       data_.begin() + static_cast<std::ptrdiff_t>(end * per));
    return Tensor({end - begin, shape_[1], shape_[2], shape_[3]}, std::move(out));
  }

  /// Copy of the listed examples, in order.
  Tensor gather(std::span<const std::size_t> rows) const {
    const std::size_t per = shape_[1] * shape_[2] * shape_[3];
    Tensor out({rows.size(), shape_[1], shape_[2], shape_[3]});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] >= shape_[0]) throw std::out_of_range("gather row out of range");
      std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(rows[i] * per), per,
                  out.data_.begin() + static_cast<std::ptrdiff_t>(i * per));
    }
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <class T>
Tensor<T> zeros(const Shape& shape) {
  return Tensor<T>(shape);
}

template <class T>
Tensor<T> full(const Shape& shape, T value) {
  return Tensor<T>(shape, value);
}

template <class To, class From>
Tensor<To> cast(const Tensor<From>& x) {
  std::vector<To> out(x.size());
  std::transform(x.data().begin(), x.data().end(), out.begin(), [](From v) { return static_cast<To>(v); });
  return Tensor<To>(x.shape(), std::move(out));
}

/// Spectrum storage convention: DC at index (0,0) or moved to the array center.
enum class SpectrumLayout { DcAtOrigin, DcCentered };

template <class T>
class ComplexTensor {
 public:
  using value_type = std::complex<T>;

  ComplexTensor() : shape_{0, 0, 0, 0} {}
  ComplexTensor(const Shape& shape, SpectrumLayout layout)
      : shape_(shape), layout_(layout), data_(element_count(shape)) {}

  const Shape& shape() const noexcept { return shape_; }
  std::size_t n() const noexcept { return shape_[0]; }
  std::size_t c() const noexcept { return shape_[1]; }
  std::size_t h() const noexcept { return shape_[2]; }
  std::size_t w() const noexcept { return shape_[3]; }
  std::size_t size() const noexcept { return data_.size(); }
  SpectrumLayout layout() const noexcept { return layout_; }
  void set_layout(SpectrumLayout layout) noexcept { layout_ = layout; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }
  std::complex<T>& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[index(n, c, h, w)];
  }
  const std::complex<T>& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[index(n, c, h, w)];
  }
  std::complex<T>& operator[](std::size_t i) noexcept { return data_[i]; }
  const std::complex<T>& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<std::complex<T>> data() noexcept { return data_; }
  std::span<const std::complex<T>> data() const noexcept { return data_; }
  std::span<std::complex<T>> plane(std::size_t n, std::size_t c) noexcept {
    return {data_.data() + index(n, c, 0, 0), shape_[2] * shape_[3]};
  }
  std::span<const std::complex<T>> plane(std::size_t n, std::size_t c) const noexcept {
    return {data_.data() + index(n, c, 0, 0), shape_[2] * shape_[3]};
  }

  friend bool operator==(const ComplexTensor& a, const ComplexTensor& b) {
    return a.shape_ == b.shape_ && a.layout_ == b.layout_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  SpectrumLayout layout_ = SpectrumLayout::DcAtOrigin;
  std::vector<std::complex<T>> data_;
};

template <class T>
ComplexTensor<T> to_complex(const Tensor<T>& x, SpectrumLayout layout = SpectrumLayout::DcAtOrigin) {
  ComplexTensor<T> out(x.shape(), layout);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = {x[i], T(0)};
  return out;
}

template <class T>
Tensor<T> real_part(const ComplexTensor<T>& z) {
  Tensor<T> out(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i].real();
  return out;
}

template <class T>
Tensor<T> imag_part(const ComplexTensor<T>& z) {
  Tensor<T> out(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i].imag();
  return out;
}

template <class T>
Tensor<T> magnitude(const ComplexTensor<T>& z) {
  Tensor<T> out(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = std::abs(z[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline std::size_t wrap_index(std::ptrdiff_t i, std::size_t extent) noexcept {
  const auto e = static_cast<std::ptrdiff_t>(extent);
  std::ptrdiff_t r = i % e;
  return static_cast<std::size_t>(r < 0 ? r + e : r);
}

/// y[n,c,h,w] = x[n,c,(h-dh) mod H,(w-dw) mod W].
template <class T>
Tensor<T> circular_shift(const Tensor<T>& x, std::ptrdiff_t dh, std::ptrdiff_t dw) {
  Tensor<T> y(x.shape());
  const std::size_t H = x.h(), W = x.w();
  if (H == 0 || W == 0) return y;
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      auto src = x.plane(n, c);
      auto dst = y.plane(n, c);
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t sh = wrap_index(static_cast<std::ptrdiff_t>(h) - dh, H);
        for (std::size_t w = 0; w < W; ++w) {
          dst[h * W + w] = src[sh * W + wrap_index(static_cast<std::ptrdiff_t>(w) - dw, W)];
        }
      }
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// Elementwise ops

namespace detail {
template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                                to_string(b.shape()));
  }
}
}  // namespace detail

template <class T, class F>
Tensor<T> map(const Tensor<T>& x, F&& f) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return y;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
  return y;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] - b[i];
  return y;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] * b[i];
  return y;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return map(a, [s](T v) { return v * s; });
}

/// a*x + b*y
template <class T>
Tensor<T> axpby(T a, const Tensor<T>& x, T b, const Tensor<T>& y) {
  detail::require_same_shape(x, y, "axpby");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + b * y[i];
  return out;
}

// ---------------------------------------------------------------------------
// Reductions (accumulated in double, fixed order)

template <class T>
double sum(const Tensor<T>& x) {
  double s = 0.0;
  for (T v : x.data()) s += static_cast<double>(v);
  return s;
}

template <class T>
double mean(const Tensor<T>& x) {
  if (x.empty()) throw std::invalid_argument("mean of empty tensor");
  return sum(x) / static_cast<double>(x.size());
}

template <class T>
T max(const Tensor<T>& x) {
  if (x.empty()) throw std::invalid_argument("max of empty tensor");
  return *std::max_element(x.data().begin(), x.data().end());
}

template <class T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

template <class T>
double max_abs(const Tensor<T>& a) {
  double m = 0.0;
  for (T v : a.data()) m = std::max(m, std::abs(static_cast<double>(v)));
  return m;
}

/// Argmax over the channel axis for every (n, h, w); ties go to the lowest channel.
/// Result is laid out as n*H*W + h*W + w.
template <class T>
std::vector<std::size_t> argmax_channels(const Tensor<T>& x) {
  const std::size_t HW = x.h() * x.w();
  std::vector<std::size_t> out(x.n() * HW, 0);
  if (x.c() == 0) throw std::invalid_argument("argmax over empty channel axis");
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t p = 0; p < HW; ++p) {
      std::size_t best = 0;
      T best_v = x[x.index(n, 0, 0, 0) + p];
      for (std::size_t c = 1; c < x.c(); ++c) {
        const T v = x[x.index(n, c, 0, 0) + p];
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      out[n * HW + p] = best;
    }
  }
  return out;
}

}  // namespace flc
