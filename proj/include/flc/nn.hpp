#pragma once

// Minimal differentiable CNN stack: layers with hand-written backward passes,
// cross-entropy loss, SGD with momentum and weight decay, the triangular
// learning-rate schedule and the MiniCNN builder.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "flc/pooling.hpp"
#include "flc/rng.hpp"
#include "flc/tensor.hpp"

namespace flc {

enum class Mode { Train, Eval };

// ---------------------------------------------------------------------------
// Convolution (3x3, stride 1, zero padding 1, cross-correlation)

template <class T>
struct ConvGrads {
  Tensor<T> input, weight, bias;
};

namespace detail {

struct Span1d {
  std::size_t lo, hi;
};

/// Output positions y for which y + d stays inside [0, extent).
inline Span1d valid_range(std::ptrdiff_t d, std::size_t extent) {
  const auto e = static_cast<std::ptrdiff_t>(extent);
  const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -d);
  const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(e, e - d);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, hi))};
}

}  // namespace detail

namespace detail {

/// im2col for one image: row (ic*9 + ky*3 + kx) holds the input shifted by (ky-1, kx-1),
/// zero outside the map. Shape (Cin*9) x (H*W).
template <class T>
void im2col3x3(const T* x, std::size_t in_ch, std::size_t H, std::size_t W, std::vector<T>& col) {
  const std::size_t P = H * W;
  col.assign(in_ch * 9 * P, T(0));
  for (std::size_t ic = 0; ic < in_ch; ++ic) {
    const T* in = x + ic * P;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - 1;
      const auto rows = valid_range(dy, H);
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - 1;
        const auto cols = valid_range(dx, W);
        T* dst = col.data() + (ic * 9 + ky * 3 + kx) * P;
        for (std::size_t r = rows.lo; r < rows.hi; ++r) {
          const T* src = in + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(r) + dy) * W;
          for (std::size_t q = cols.lo; q < cols.hi; ++q) dst[r * W + q] = src[q + dx];
        }
      }
    }
  }
}

/// Adjoint of im2col3x3: scatter-add the columns back onto the input map.
template <class T>
void col2im3x3(const std::vector<T>& col, std::size_t in_ch, std::size_t H, std::size_t W, T* x) {
  const std::size_t P = H * W;
  for (std::size_t ic = 0; ic < in_ch; ++ic) {
    T* out = x + ic * P;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - 1;
      const auto rows = valid_range(dy, H);
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - 1;
        const auto cols = valid_range(dx, W);
        const T* src = col.data() + (ic * 9 + ky * 3 + kx) * P;
        for (std::size_t r = rows.lo; r < rows.hi; ++r) {
          T* dst = out + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(r) + dy) * W;
          for (std::size_t q = cols.lo; q < cols.hi; ++q) dst[q + dx] += src[r * W + q];
        }
      }
    }
  }
}

}  // namespace detail

/// Same-padded 3x3 convolution (cross-correlation), stride 1.
template <class T>
Tensor<T> conv3x3_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  const std::size_t out_ch = weight.n(), in_ch = weight.c();
  if (weight.h() != 3 || weight.w() != 3) throw std::invalid_argument("conv3x3: weight must be [Cout,Cin,3,3]");
  if (x.c() != in_ch) {
    throw std::invalid_argument("conv3x3: input has " + std::to_string(x.c()) + " channels, weight expects " +
                                std::to_string(in_ch));
  }
  if (bias.size() != out_ch) throw std::invalid_argument("conv3x3: bias length mismatch");
  const std::size_t H = x.h(), W = x.w(), P = H * W, K = in_ch * 9;
  Tensor<T> y({x.n(), out_ch, H, W});
  if (P == 0) return y;
  std::vector<T> col;
  for (std::size_t n = 0; n < x.n(); ++n) {
    detail::im2col3x3(x.plane(n, 0).data(), in_ch, H, W, col);
    for (std::size_t oc = 0; oc < out_ch; ++oc) {
      T* out = y.plane(n, oc).data();
      std::fill(out, out + P, bias[oc]);
      const T* wrow = &weight.data()[oc * K];
      for (std::size_t k = 0; k < K; ++k) {
        const T wv = wrow[k];
        const T* c = col.data() + k * P;
        for (std::size_t p = 0; p < P; ++p) out[p] += wv * c[p];
      }
    }
  }
  return y;
}

/// Gradients of conv3x3_forward. Parameter gradients are skipped when `param_grads` is false.
template <class T>
ConvGrads<T> conv3x3_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_out,
                              bool param_grads = true) {
  const std::size_t out_ch = weight.n(), in_ch = weight.c();
  const std::size_t H = x.h(), W = x.w(), P = H * W, K = in_ch * 9;
  ConvGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(weight.shape()), Tensor<T>({1, out_ch, 1, 1})};
  if (P == 0) return g;
  std::vector<T> col, gcol(K * P);
  for (std::size_t n = 0; n < x.n(); ++n) {
    if (param_grads) detail::im2col3x3(x.plane(n, 0).data(), in_ch, H, W, col);
    std::fill(gcol.begin(), gcol.end(), T(0));
    for (std::size_t oc = 0; oc < out_ch; ++oc) {
      const T* go = grad_out.plane(n, oc).data();
      const T* wrow = &weight.data()[oc * K];
      if (param_grads) {
        double s = 0.0;
        for (std::size_t p = 0; p < P; ++p) s += go[p];
        g.bias[oc] += static_cast<T>(s);
        T* gw = &g.weight.data()[oc * K];
        for (std::size_t k = 0; k < K; ++k) {
          const T* c = col.data() + k * P;
          T acc = 0;
          for (std::size_t p = 0; p < P; ++p) acc += go[p] * c[p];
          gw[k] += acc;
        }
      }
      for (std::size_t k = 0; k < K; ++k) {
        const T wv = wrow[k];
        T* gc = gcol.data() + k * P;
        for (std::size_t p = 0; p < P; ++p) gc[p] += wv * go[p];
      }
    }
    detail::col2im3x3(gcol, in_ch, H, W, g.input.plane(n, 0).data());
  }
  return g;
}

// ---------------------------------------------------------------------------
// Layers

template <class T>
struct Conv3x3 {
  std::size_t in_channels = 0, out_channels = 0;
  Tensor<T> weight, bias, grad_weight, grad_bias;
  Tensor<T> input;

  Conv3x3(std::size_t in, std::size_t out)
      : in_channels(in),
        out_channels(out),
        weight({out, in, 3, 3}),
        bias({1, out, 1, 1}),
        grad_weight({out, in, 3, 3}),
        grad_bias({1, out, 1, 1}) {}

  Tensor<T> forward(const Tensor<T>& x, Mode) {
    input = x;
    return conv3x3_forward(x, weight, bias);
  }
  Tensor<T> backward(const Tensor<T>& g, bool param_grads) {
    auto grads = conv3x3_backward(input, weight, g, param_grads);
    if (param_grads) {
      grad_weight = std::move(grads.weight);
      grad_bias = std::move(grads.bias);
    }
    return std::move(grads.input);
  }
};

/// Per-channel batch normalization; eps 1e-5, running statistics with momentum 0.1.
template <class T>
struct BatchNorm {
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  std::size_t channels = 0;
  Tensor<T> gamma, beta, grad_gamma, grad_beta;
  Tensor<T> running_mean, running_var;
  Tensor<T> xhat;
  std::vector<double> inv_std;
  Mode last_mode = Mode::Eval;

  explicit BatchNorm(std::size_t c)
      : channels(c),
        gamma({1, c, 1, 1}, T(1)),
        beta({1, c, 1, 1}),
        grad_gamma({1, c, 1, 1}),
        grad_beta({1, c, 1, 1}),
        running_mean({1, c, 1, 1}),
        running_var({1, c, 1, 1}, T(1)) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    if (x.c() != channels) throw std::invalid_argument("batchnorm: channel mismatch");
    last_mode = mode;
    const std::size_t HW = x.h() * x.w();
    const std::size_t count = x.n() * HW;
    xhat = Tensor<T>(x.shape());
    Tensor<T> y(x.shape());
    inv_std.assign(channels, 0.0);
    if (mode == Mode::Train && x.n() < 2) throw std::invalid_argument("batchnorm: batch size 1 in Train mode");
    for (std::size_t c = 0; c < channels; ++c) {
      double mu, var;
      if (mode == Mode::Train) {
        double s = 0.0;
        for (std::size_t n = 0; n < x.n(); ++n)
          for (T v : x.plane(n, c)) s += v;
        mu = s / static_cast<double>(count);
        double ss = 0.0;
        for (std::size_t n = 0; n < x.n(); ++n)
          for (T v : x.plane(n, c)) ss += (v - mu) * (v - mu);
        var = ss / static_cast<double>(count);
        const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
        running_mean[c] = static_cast<T>((1.0 - kMomentum) * running_mean[c] + kMomentum * mu);
        running_var[c] = static_cast<T>((1.0 - kMomentum) * running_var[c] + kMomentum * unbiased);
      } else {
        mu = running_mean[c];
        var = running_var[c];
      }
      const double is = 1.0 / std::sqrt(var + kEps);
      inv_std[c] = is;
      const T g = gamma[c], b = beta[c];
      for (std::size_t n = 0; n < x.n(); ++n) {
        auto src = x.plane(n, c);
        auto xh = xhat.plane(n, c);
        auto dst = y.plane(n, c);
        for (std::size_t p = 0; p < HW; ++p) {
          xh[p] = static_cast<T>((src[p] - mu) * is);
          dst[p] = g * xh[p] + b;
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g, bool param_grads) {
    const std::size_t HW = g.h() * g.w();
    const double count = static_cast<double>(g.n() * HW);
    Tensor<T> gx(g.shape());
    for (std::size_t c = 0; c < channels; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t n = 0; n < g.n(); ++n) {
        auto gp = g.plane(n, c);
        auto xh = xhat.plane(n, c);
        for (std::size_t p = 0; p < HW; ++p) {
          sum_g += gp[p];
          sum_gx += static_cast<double>(gp[p]) * xh[p];
        }
      }
      if (param_grads) {
        grad_gamma[c] = static_cast<T>(sum_gx);
        grad_beta[c] = static_cast<T>(sum_g);
      }
      const double scale_c = gamma[c] * inv_std[c];
      for (std::size_t n = 0; n < g.n(); ++n) {
        auto gp = g.plane(n, c);
        auto xh = xhat.plane(n, c);
        auto dst = gx.plane(n, c);
        if (last_mode == Mode::Train) {
          for (std::size_t p = 0; p < HW; ++p) {
            dst[p] = static_cast<T>(scale_c * (gp[p] - sum_g / count - xh[p] * sum_gx / count));
          }
        } else {
          for (std::size_t p = 0; p < HW; ++p) dst[p] = static_cast<T>(scale_c * gp[p]);
        }
      }
    }
    return gx;
  }
};

template <class T>
struct ReLU {
  Tensor<T> input;

  Tensor<T> forward(const Tensor<T>& x, Mode) {
    input = x;
    return map(x, [](T v) { return v > T(0) ? v : T(0); });
  }
  Tensor<T> backward(const Tensor<T>& g, bool) {
    Tensor<T> gx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = input[i] > T(0) ? g[i] : T(0);
    return gx;
  }
};

template <class T>
struct Pool {
  PoolingKind kind;
  Tensor<T> input;

  explicit Pool(PoolingKind k) : kind(k) {}

  Tensor<T> forward(const Tensor<T>& x, Mode) {
    input = x;
    return pool_forward(kind, x);
  }
  Tensor<T> backward(const Tensor<T>& g, bool) { return pool_backward(kind, input, g); }
};

template <class T>
struct GlobalAvgPool {
  Shape input_shape{};

  Tensor<T> forward(const Tensor<T>& x, Mode) {
    input_shape = x.shape();
    Tensor<T> y({x.n(), x.c(), 1, 1});
    const double inv = 1.0 / static_cast<double>(x.h() * x.w());
    for (std::size_t n = 0; n < x.n(); ++n) {
      for (std::size_t c = 0; c < x.c(); ++c) {
        double s = 0.0;
        for (T v : x.plane(n, c)) s += v;
        y(n, c, 0, 0) = static_cast<T>(s * inv);
      }
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& g, bool) {
    Tensor<T> gx(input_shape);
    const T inv = static_cast<T>(1.0 / static_cast<double>(input_shape[2] * input_shape[3]));
    for (std::size_t n = 0; n < gx.n(); ++n) {
      for (std::size_t c = 0; c < gx.c(); ++c) {
        const T v = g(n, c, 0, 0) * inv;
        for (auto& e : gx.plane(n, c)) e = v;
      }
    }
    return gx;
  }
};

/// Fully connected layer on the flattened C*H*W features; output is [N, out, 1, 1].
template <class T>
struct Linear {
  std::size_t in_features = 0, out_features = 0;
  Tensor<T> weight, bias, grad_weight, grad_bias;
  Tensor<T> input;

  Linear(std::size_t in, std::size_t out)
      : in_features(in),
        out_features(out),
        weight({out, in, 1, 1}),
        bias({1, out, 1, 1}),
        grad_weight({out, in, 1, 1}),
        grad_bias({1, out, 1, 1}) {}

  Tensor<T> forward(const Tensor<T>& x, Mode) {
    if (x.c() * x.h() * x.w() != in_features) throw std::invalid_argument("linear: feature count mismatch");
    input = x;
    Tensor<T> y({x.n(), out_features, 1, 1});
    for (std::size_t n = 0; n < x.n(); ++n) {
      const T* xi = x.data().data() + n * in_features;
      for (std::size_t o = 0; o < out_features; ++o) {
        const T* wr = weight.data().data() + o * in_features;
        T acc = bias[o];
        for (std::size_t i = 0; i < in_features; ++i) acc += wr[i] * xi[i];
        y(n, o, 0, 0) = acc;
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g, bool param_grads) {
    Tensor<T> gx(input.shape());
    if (param_grads) {
      grad_weight = Tensor<T>(weight.shape());
      grad_bias = Tensor<T>(bias.shape());
    }
    for (std::size_t n = 0; n < g.n(); ++n) {
      const T* xi = input.data().data() + n * in_features;
      T* gi = gx.data().data() + n * in_features;
      for (std::size_t o = 0; o < out_features; ++o) {
        const T go = g(n, o, 0, 0);
        const T* wr = weight.data().data() + o * in_features;
        for (std::size_t i = 0; i < in_features; ++i) gi[i] += go * wr[i];
        if (param_grads) {
          T* gw = grad_weight.data().data() + o * in_features;
          for (std::size_t i = 0; i < in_features; ++i) gw[i] += go * xi[i];
          grad_bias[o] += go;
        }
      }
    }
    return gx;
  }
};

template <class T>
using Layer = std::variant<Conv3x3<T>, BatchNorm<T>, ReLU<T>, Pool<T>, GlobalAvgPool<T>, Linear<T>>;

template <class T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
};

template <class T>
struct BufferRef {
  std::string name;
  Tensor<T>* value;
};

// ---------------------------------------------------------------------------
// Model

template <class T>
class Model {
 public:
  Model() = default;
  explicit Model(std::size_t in_channels) : in_channels_(in_channels) {}

  std::size_t in_channels() const noexcept { return in_channels_; }
  Mode mode() const noexcept { return mode_; }
  void train() noexcept { mode_ = Mode::Train; }
  void eval() noexcept { mode_ = Mode::Eval; }

  std::vector<Layer<T>>& layers() noexcept { return layers_; }
  const std::vector<Layer<T>>& layers() const noexcept { return layers_; }

  /// Channel count produced by the current last layer.
  std::size_t output_channels() const {
    std::size_t ch = in_channels_;
    for (const auto& l : layers_) {
      if (auto* conv = std::get_if<Conv3x3<T>>(&l)) ch = conv->out_channels;
      if (auto* lin = std::get_if<Linear<T>>(&l)) ch = lin->out_features;
    }
    return ch;
  }

  Model& add_conv3x3(std::size_t out) {
    layers_.emplace_back(Conv3x3<T>(output_channels(), out));
    return *this;
  }
  Model& add_batchnorm() {
    layers_.emplace_back(BatchNorm<T>(output_channels()));
    return *this;
  }
  Model& add_relu() {
    layers_.emplace_back(ReLU<T>{});
    return *this;
  }
  Model& add_pool(PoolingKind k) {
    layers_.emplace_back(Pool<T>(k));
    return *this;
  }
  Model& add_global_avg_pool() {
    layers_.emplace_back(GlobalAvgPool<T>{});
    return *this;
  }
  Model& add_linear(std::size_t out) {
    layers_.emplace_back(Linear<T>(output_channels(), out));
    return *this;
  }

  /// Runs every layer; `observer(index, layer, input)` is called before each layer.
  template <class Observer>
  Tensor<T> forward(const Tensor<T>& x, Observer&& observer) {
    if (x.c() != in_channels_) throw std::invalid_argument("model: input channel mismatch");
    Tensor<T> a = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      observer(i, std::as_const(layers_[i]), std::as_const(a));
      a = std::visit([&](auto& layer) { return layer.forward(a, mode_); }, layers_[i]);
    }
    return a;
  }

  Tensor<T> forward(const Tensor<T>& x) {
    return forward(x, [](std::size_t, const Layer<T>&, const Tensor<T>&) {});
  }

  /// Backpropagates through the activations cached by the last forward call.
  Tensor<T> backward(const Tensor<T>& grad_out, bool param_grads = true) {
    Tensor<T> g = grad_out;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      g = std::visit([&](auto& layer) { return layer.backward(g, param_grads); }, layers_[i]);
    }
    return g;
  }

  std::vector<ParamRef<T>> parameters() {
    std::vector<ParamRef<T>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const std::string p = std::to_string(i) + ".";
      if (auto* conv = std::get_if<Conv3x3<T>>(&layers_[i])) {
        out.push_back({p + "weight", &conv->weight, &conv->grad_weight});
        out.push_back({p + "bias", &conv->bias, &conv->grad_bias});
      } else if (auto* bn = std::get_if<BatchNorm<T>>(&layers_[i])) {
        out.push_back({p + "gamma", &bn->gamma, &bn->grad_gamma});
        out.push_back({p + "beta", &bn->beta, &bn->grad_beta});
      } else if (auto* lin = std::get_if<Linear<T>>(&layers_[i])) {
        out.push_back({p + "weight", &lin->weight, &lin->grad_weight});
        out.push_back({p + "bias", &lin->bias, &lin->grad_bias});
      }
    }
    return out;
  }

  /// Non-trainable state (BatchNorm running statistics).
  std::vector<BufferRef<T>> buffers() {
    std::vector<BufferRef<T>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (auto* bn = std::get_if<BatchNorm<T>>(&layers_[i])) {
        out.push_back({std::to_string(i) + ".running_mean", &bn->running_mean});
        out.push_back({std::to_string(i) + ".running_var", &bn->running_var});
      }
    }
    return out;
  }

  std::size_t parameter_count() {
    std::size_t total = 0;
    for (auto& p : parameters()) total += p.value->size();
    return total;
  }

  /// Pooling kind of the first Pool layer, if any.
  std::optional<PoolingKind> pooling() const {
    for (const auto& l : layers_) {
      if (auto* p = std::get_if<Pool<T>>(&l)) return p->kind;
    }
    return std::nullopt;
  }

  /// Architecture string, e.g. "in=1;conv3x3:8;bn;relu;pool:flc;...;gap;linear:4".
  std::string descriptor() const {
    std::ostringstream os;
    os << "in=" << in_channels_;
    for (const auto& l : layers_) {
      os << ';';
      std::visit(
          [&](const auto& layer) {
            using L = std::decay_t<decltype(layer)>;
            if constexpr (std::is_same_v<L, Conv3x3<T>>) os << "conv3x3:" << layer.out_channels;
            if constexpr (std::is_same_v<L, BatchNorm<T>>) os << "bn";
            if constexpr (std::is_same_v<L, ReLU<T>>) os << "relu";
            if constexpr (std::is_same_v<L, Pool<T>>) os << "pool:" << to_string(layer.kind);
            if constexpr (std::is_same_v<L, GlobalAvgPool<T>>) os << "gap";
            if constexpr (std::is_same_v<L, Linear<T>>) os << "linear:" << layer.out_features;
          },
          l);
    }
    return os.str();
  }

  /// Rebuild a zero-initialized model from descriptor().
  static Model from_descriptor(const std::string& desc) {
    std::vector<std::string> tokens;
    std::string tok;
    std::istringstream is(desc);
    while (std::getline(is, tok, ';')) tokens.push_back(tok);
    if (tokens.empty() || tokens[0].rfind("in=", 0) != 0) {
      throw std::invalid_argument("descriptor must start with in=<channels>");
    }
    const auto parse_count = [&](const std::string& s) -> std::size_t {
      std::size_t pos = 0;
      const unsigned long v = std::stoul(s, &pos);
      if (pos != s.size() || v == 0) throw std::invalid_argument("bad count in descriptor: " + s);
      return v;
    };
    Model m(parse_count(tokens[0].substr(3)));
    for (std::size_t i = 1; i < tokens.size(); ++i) {
      const std::string& t = tokens[i];
      if (t.rfind("conv3x3:", 0) == 0) {
        m.add_conv3x3(parse_count(t.substr(8)));
      } else if (t == "bn") {
        m.add_batchnorm();
      } else if (t == "relu") {
        m.add_relu();
      } else if (t.rfind("pool:", 0) == 0) {
        const auto k = parse_pooling_kind(t.substr(5));
        if (!k) throw std::invalid_argument("unknown pooling kind in descriptor: " + t);
        m.add_pool(*k);
      } else if (t == "gap") {
        m.add_global_avg_pool();
      } else if (t.rfind("linear:", 0) == 0) {
        m.add_linear(parse_count(t.substr(7)));
      } else {
        throw std::invalid_argument("unknown layer in descriptor: " + t);
      }
    }
    return m;
  }

 private:
  std::size_t in_channels_ = 0;
  std::vector<Layer<T>> layers_;
  Mode mode_ = Mode::Train;
};

// ---------------------------------------------------------------------------
// Loss

template <class T>
struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> per_example;
  Tensor<T> grad;  ///< d(mean loss)/d(logits)
};

/// Mean softmax cross-entropy over the batch; logits are [N, K, 1, 1].
template <class T>
LossAndGrad<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  const std::size_t N = logits.n(), K = logits.c() * logits.h() * logits.w();
  if (labels.size() != N) throw std::invalid_argument("cross_entropy: label count mismatch");
  LossAndGrad<T> out{0.0, std::vector<double>(N), Tensor<T>(logits.shape())};
  if (N == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(N);
  std::vector<double> p(K);
  for (std::size_t n = 0; n < N; ++n) {
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= K) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[n]) + " out of range");
    }
    const T* z = logits.data().data() + n * K;
    double zmax = z[0];
    for (std::size_t k = 1; k < K; ++k) zmax = std::max(zmax, static_cast<double>(z[k]));
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      p[k] = std::exp(static_cast<double>(z[k]) - zmax);
      s += p[k];
    }
    const auto y = static_cast<std::size_t>(labels[n]);
    out.per_example[n] = std::log(s) - (static_cast<double>(z[y]) - zmax);
    out.loss += out.per_example[n] * inv_n;
    T* g = out.grad.data().data() + n * K;
    for (std::size_t k = 0; k < K; ++k) {
      g[k] = static_cast<T>((p[k] / s - (k == y ? 1.0 : 0.0)) * inv_n);
    }
  }
  return out;
}

/// Row-wise softmax of [N, K, 1, 1] logits, in double.
template <class T>
std::vector<std::vector<double>> softmax(const Tensor<T>& logits) {
  const std::size_t N = logits.n(), K = logits.c() * logits.h() * logits.w();
  std::vector<std::vector<double>> out(N, std::vector<double>(K));
  for (std::size_t n = 0; n < N; ++n) {
    const T* z = logits.data().data() + n * K;
    double zmax = z[0];
    for (std::size_t k = 1; k < K; ++k) zmax = std::max(zmax, static_cast<double>(z[k]));
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += out[n][k] = std::exp(static_cast<double>(z[k]) - zmax);
    for (auto& v : out[n]) v /= s;
  }
  return out;
}

/// Exact reverse-mode gradient of the mean cross-entropy with respect to the input pixels.
template <class T>
Tensor<T> input_gradient(Model<T>& model, const Tensor<T>& x, std::span<const int> labels) {
  const auto logits = model.forward(x);
  const auto ce = cross_entropy(logits, labels);
  return model.backward(ce.grad, false);
}

// ---------------------------------------------------------------------------
// Optimizer and schedule

/// v <- momentum*v + (grad + weight_decay*param);  param <- param - lr*v
template <class T>
void sgd_update(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& velocity, double lr, double momentum,
                double weight_decay) {
  if (param.shape() != grad.shape() || param.shape() != velocity.shape()) {
    throw std::invalid_argument("sgd_update: store shapes are not aligned");
  }
  const T m = static_cast<T>(momentum), wd = static_cast<T>(weight_decay), step = static_cast<T>(lr);
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = m * velocity[i] + (grad[i] + wd * param[i]);
    param[i] -= step * velocity[i];
  }
}

template <class T>
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(std::vector<ParamRef<T>> params, double lr) {
    if (velocity_.empty()) {
      for (auto& p : params) velocity_.emplace_back(p.value->shape());
    }
    if (velocity_.size() != params.size()) throw std::invalid_argument("sgd: parameter set changed");
    for (std::size_t i = 0; i < params.size(); ++i) {
      sgd_update(*params[i].value, *params[i].grad, velocity_[i], lr, momentum_, weight_decay_);
    }
  }

 private:
  double momentum_, weight_decay_;
  std::vector<Tensor<T>> velocity_;
};

/// One triangular cycle over the run: 0 -> lr_max at the midpoint -> 0.
inline double cyclic_lr(std::size_t epoch, std::size_t total_epochs, double lr_max) {
  if (total_epochs == 0 || epoch >= total_epochs) throw std::out_of_range("cyclic_lr: epoch out of range");
  const double t = 2.0 * static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return lr_max * (t <= 1.0 ? t : 2.0 - t);
}

// ---------------------------------------------------------------------------
// MiniCNN

struct MiniCnnSpec {
  PoolingKind pooling = PoolingKind::Flc;
  std::size_t in_channels = 1;
  std::size_t classes = 4;
  std::size_t width = 8;
  std::size_t input_h = 16, input_w = 16;
};

/// Closed-form trainable parameter count of build_minicnn.
inline std::size_t minicnn_parameter_count(const MiniCnnSpec& s) {
  const std::size_t w = s.width;
  const std::size_t conv1 = w * s.in_channels * 9 + w;
  const std::size_t conv2 = 2 * w * w * 9 + 2 * w;
  const std::size_t conv3 = 4 * w * 2 * w * 9 + 4 * w;
  const std::size_t bns = 2 * (w + 2 * w + 4 * w);
  const std::size_t linear = s.classes * 4 * w + s.classes;
  return conv1 + conv2 + conv3 + bns + linear;
}

/// Conv(w)-BN-ReLU-Pool-Conv(2w)-BN-ReLU-Pool-Conv(4w)-BN-ReLU-GAP-Linear(classes),
/// He-normal weights (std sqrt(2/fan_in)), zero biases.
template <class T>
Model<T> build_minicnn(const MiniCnnSpec& spec, std::uint64_t seed) {
  if (spec.width < 1) throw std::invalid_argument("build_minicnn: width must be >= 1");
  if (spec.classes < 2) throw std::invalid_argument("build_minicnn: need at least 2 classes");
  const bool needs_even = spec.pooling == PoolingKind::MaxPool2 || spec.pooling == PoolingKind::AvgPool2 ||
                          spec.pooling == PoolingKind::BlurPool;
  for (std::size_t e : {spec.input_h, spec.input_w}) {
    if (e < 4 || (needs_even && e % 4 != 0)) {
      throw std::invalid_argument("build_minicnn: input extent " + std::to_string(e) + " too small to pool twice with " +
                                  std::string(to_string(spec.pooling)));
    }
  }
  const std::size_t w = spec.width;
  Model<T> m(spec.in_channels);
  m.add_conv3x3(w).add_batchnorm().add_relu().add_pool(spec.pooling);
  m.add_conv3x3(2 * w).add_batchnorm().add_relu().add_pool(spec.pooling);
  m.add_conv3x3(4 * w).add_batchnorm().add_relu();
  m.add_global_avg_pool().add_linear(spec.classes);

  Rng rng(seed);
  for (auto& l : m.layers()) {
    if (auto* conv = std::get_if<Conv3x3<T>>(&l)) {
      conv->weight = normal<T>(rng, conv->weight.shape(), 0.0, std::sqrt(2.0 / (9.0 * conv->in_channels)));
    } else if (auto* lin = std::get_if<Linear<T>>(&l)) {
      lin->weight = normal<T>(rng, lin->weight.shape(), 0.0, std::sqrt(2.0 / lin->in_features));
    }
  }
  return m;
}

}  // namespace flc
