#pragma once

// Central finite-difference check of input_gradient through a MiniCNN.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "flc/nn.hpp"
#include "flc/pooling.hpp"
#include "flc/rng.hpp"

namespace flc {

struct GradCheckConfig {
  std::size_t coords = 32;
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor for the relative error; keeps FD round-off on near-zero
  /// gradients (about 1e-11 here) from reading as a large relative error.
  double scale_floor = 1e-6;
  std::size_t width = 2;
  std::size_t batch = 2;
  std::size_t size = 16;
  std::uint64_t seed = 1;
};

struct GradCheckResult {
  PoolingKind pooling = PoolingKind::Flc;
  std::size_t checked = 0;
  std::size_t skipped = 0;  ///< coordinates whose +-step straddles a ReLU or max-pool switch
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = false;
};

namespace detail {

/// Which side of every piecewise-linear switch the forward pass lands on: ReLU input
/// signs and the winning slot of every max-pool window.
template <class T>
std::vector<std::uint8_t> activation_pattern(Model<T>& model, const Tensor<T>& x) {
  std::vector<std::uint8_t> sig;
  model.forward(x, [&](std::size_t, const Layer<T>& layer, const Tensor<T>& in) {
    if (std::holds_alternative<ReLU<T>>(layer)) {
      for (T v : in.data()) sig.push_back(v > T(0));
    } else if (const auto* p = std::get_if<Pool<T>>(&layer); p && p->kind == PoolingKind::MaxPool2) {
      for (std::size_t n = 0; n < in.n(); ++n) {
        for (std::size_t c = 0; c < in.c(); ++c) {
          for (std::size_t h = 0; h + 1 < in.h(); h += 2) {
            for (std::size_t w = 0; w + 1 < in.w(); w += 2) {
              std::uint8_t best = 0;
              T v = in(n, c, h, w);
              for (std::uint8_t s = 1; s < 4; ++s) {
                const T u = in(n, c, h + s / 2, w + s % 2);
                if (u > v) {
                  v = u;
                  best = s;
                }
              }
              sig.push_back(best);
            }
          }
        }
      }
    }
  });
  return sig;
}

}  // namespace detail

/// Builds a double-precision MiniCNN with the given pooling, puts it in Eval mode with
/// randomized BatchNorm statistics, and compares input_gradient with central differences
/// of the mean cross-entropy on `coords` random pixels.
inline GradCheckResult gradcheck_minicnn(PoolingKind kind, const GradCheckConfig& cfg = {}) {
  MiniCnnSpec spec;
  spec.pooling = kind;
  spec.width = cfg.width;
  spec.input_h = spec.input_w = cfg.size;
  Model<double> model = build_minicnn<double>(spec, cfg.seed);
  Rng rng(cfg.seed ^ 0x5bd1e995ULL);
  for (auto& b : model.buffers()) {
    const bool is_var = b.name.find("running_var") != std::string::npos;
    for (auto& v : b.value->data()) v = is_var ? rng.uniform(0.5, 1.5) : rng.uniform(-0.2, 0.2);
  }
  for (auto& p : model.parameters()) {
    if (p.name.find("gamma") != std::string::npos) {
      for (auto& v : p.value->data()) v = rng.uniform(0.5, 1.5);
    } else if (p.name.find("beta") != std::string::npos || p.name.find("bias") != std::string::npos) {
      for (auto& v : p.value->data()) v = rng.uniform(-0.1, 0.1);
    }
  }
  model.eval();

  Tensor<double> x = uniform<double>(rng, {cfg.batch, spec.in_channels, cfg.size, cfg.size}, 0.0, 1.0);
  std::vector<int> y(cfg.batch);
  for (auto& l : y) l = static_cast<int>(rng.uniform_int(spec.classes));
  const auto loss = [&](const Tensor<double>& in) { return cross_entropy(model.forward(in), std::span<const int>(y)).loss; };

  const Tensor<double> grad = input_gradient(model, x, std::span<const int>(y));
  const auto base = detail::activation_pattern(model, x);

  GradCheckResult r;
  r.pooling = kind;
  const std::size_t max_attempts = cfg.coords * 20;
  for (std::size_t attempt = 0; attempt < max_attempts && r.checked < cfg.coords; ++attempt) {
    const std::size_t i = rng.uniform_int(x.size());
    const double orig = x[i];
    x[i] = orig + cfg.step;
    const double lp = loss(x);
    const bool same_p = detail::activation_pattern(model, x) == base;
    x[i] = orig - cfg.step;
    const double lm = loss(x);
    const bool same_m = detail::activation_pattern(model, x) == base;
    x[i] = orig;
    if (!same_p || !same_m) {
      ++r.skipped;
      continue;
    }
    const double fd = (lp - lm) / (2.0 * cfg.step);
    const double err = std::abs(fd - grad[i]);
    r.max_abs_error = std::max(r.max_abs_error, err);
    r.max_rel_error = std::max(r.max_rel_error, err / std::max({std::abs(fd), std::abs(grad[i]), cfg.scale_floor}));
    ++r.checked;
  }
  r.passed = r.checked == cfg.coords && r.max_rel_error <= cfg.tolerance;
  return r;
}

}  // namespace flc
