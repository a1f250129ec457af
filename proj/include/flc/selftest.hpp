#pragma once

// Property suite behind `flc selftest`: transforms, FLC identities, adjoints,
// gradients, persistence and attack identities, all in double precision.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "flc/analysis.hpp"
#include "flc/attacks.hpp"
#include "flc/checkpoint.hpp"
#include "flc/gradcheck.hpp"
#include "flc/pooling.hpp"
#include "flc/rng.hpp"
#include "flc/spectral.hpp"

namespace flc {

struct SelftestRow {
  std::string name;
  double error = 0.0;      ///< worst observed value of the checked quantity
  double tolerance = 0.0;
  bool lower_bound = false;  ///< check is error > tolerance instead of error <= tolerance
  bool passed = false;
};

namespace detail {

inline double rel_diff(const ComplexTensor<double>& a, const ComplexTensor<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(b[i]));
  }
  return den > 0.0 ? num / den : num;
}

inline double rel_diff(const Tensor<double>& a, const Tensor<double>& b) {
  const double den = max_abs(b);
  const double num = max_abs_diff(a, b);
  return den > 0.0 ? num / den : num;
}

/// Circular cross-correlation of every slice with a centered kernel, then stride 2.
inline Tensor<double> circular_filter_stride2(const Tensor<double>& x, const Tensor<double>& k) {
  const std::size_t H = x.h(), W = x.w();
  Tensor<double> y({x.n(), x.c(), H / 2, W / 2});
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      for (std::size_t i = 0; i < H / 2; ++i) {
        for (std::size_t j = 0; j < W / 2; ++j) {
          double s = 0.0;
          for (std::size_t a = 0; a < H; ++a) {
            for (std::size_t b = 0; b < W; ++b) {
              s += k(0, 0, a, b) * x(n, c, (2 * i + H - a) % H, (2 * j + W - b) % W);
            }
          }
          y(n, c, i, j) = s;
        }
      }
    }
  }
  return y;
}

}  // namespace detail

inline std::vector<SelftestRow> run_selftest(std::uint64_t seed = 7) {
  std::vector<SelftestRow> rows;
  const auto add = [&](std::string name, double err, double tol, bool lower = false) {
    rows.push_back({std::move(name), err, tol, lower, lower ? err > tol : err <= tol});
  };
  Rng rng(seed);

  {  // fast transforms against the direct sums, extents 1..16
    double fwd = 0.0, inv = 0.0, parseval = 0.0;
    for (std::size_t h = 1; h <= 16; ++h) {
      for (std::size_t w = 1; w <= 16; ++w) {
        const auto x = normal<double>(rng, {1, 2, h, w}, 0.0, 1.0);
        const auto F = fft2(x);
        fwd = std::max(fwd, detail::rel_diff(F, dft2(x)));
        inv = std::max(inv, detail::rel_diff(ifft2(F), idft2(F)));
        double ex = 0.0, ef = 0.0;
        for (double v : x.data()) ex += v * v;
        for (const auto& v : F.data()) ef += std::norm(v);
        parseval = std::max(parseval, std::abs(ex - ef / static_cast<double>(h * w)) / ex);
      }
    }
    add("fft2 vs direct DFT (1..16)", fwd, 1e-10);
    add("ifft2 vs direct inverse (1..16)", inv, 1e-10);
    add("Parseval", parseval, 1e-10);
  }
  {  // sinc equivalence
    double err = 0.0;
    for (std::size_t e : {8, 12, 16, 32}) {
      const auto x = normal<double>(rng, {1, 2, e, e}, 0.0, 1.0);
      err = std::max(err, detail::rel_diff(flc_pool(x), detail::circular_filter_stride2(x, sinc_kernel<double>(e, e))));
    }
    add("flc_pool == sinc filter + stride 2", err, 1e-10);
  }
  {  // separable evaluation against the spectral pipeline
    double err = 0.0;
    for (std::size_t e : {2, 5, 8, 13, 16}) {
      const auto x = normal<double>(rng, {2, 2, e, e + 3}, 0.0, 1.0);
      err = std::max(err, detail::rel_diff(flc_pool(x), flc_pool_spectral(x)));
    }
    add("flc_pool == spectral pipeline", err, 1e-12);
  }
  {  // alias-free output and persistent aliasing of the spatial poolers
    double flc_above = 0.0, flc_alias = 0.0;
    double others = 1.0;
    for (int t = 0; t < 100; ++t) {
      const auto x = normal<double>(rng, {1, 1, 16, 16}, 0.0, 1.0);
      const auto up = zero_pad_center(fftshift(fft2(flc_pool(x))), 16, 16);
      flc_above = std::max(flc_above, above_cutoff_energy(up, CutoffSpec::for_extents(16, 16)).aggregate);
      flc_alias = std::max(flc_alias, alias_energy(PoolingKind::Flc, x));
      for (auto k : {PoolingKind::BlurPool, PoolingKind::MaxPool2, PoolingKind::StridedIdentity}) {
        others = std::min(others, alias_energy(k, x));
      }
    }
    add("flc reconstruction above-cutoff energy", flc_above, 1e-14);
    add("flc alias energy", flc_alias, 1e-14);
    add("blur/max/strided alias energy (min)", others, 0.01, true);
  }
  {  // adjoints of the linear poolers
    double err = 0.0;
    for (auto k : kAllPoolingKinds) {
      if (!is_linear(k)) continue;
      const auto x = normal<double>(rng, {2, 3, 12, 16}, 0.0, 1.0);
      const auto y = normal<double>(rng, {2, 3, 6, 8}, 0.0, 1.0);
      const double lhs = dot(pool_forward(k, x), y);
      const double rhs = dot(x, pool_backward(k, x, y));
      err = std::max(err, std::abs(lhs - rhs) / std::max(std::abs(lhs), 1.0));
    }
    add("pooling adjoints <Px,y> = <x,P^T y>", err, 1e-10);
  }
  {  // even-shift equivariance
    double err = 0.0;
    for (int t = 0; t < 100; ++t) {
      const auto x = normal<double>(rng, {1, 2, 16, 16}, 0.0, 1.0);
      const auto a = static_cast<std::ptrdiff_t>(rng.uniform_int(8));
      const auto b = static_cast<std::ptrdiff_t>(rng.uniform_int(8));
      err = std::max(err, max_abs_diff(flc_pool(circular_shift(x, 2 * a, 2 * b)), circular_shift(flc_pool(x), a, b)));
    }
    add("flc even-shift equivariance", err, 1e-10);
  }
  {  // gradients through every pooling kind
    double err = 0.0;
    bool complete = true;
    for (auto k : kAllPoolingKinds) {
      const auto r = gradcheck_minicnn(k);
      err = std::max(err, r.max_rel_error);
      complete = complete && r.checked == 32;
    }
    add("MiniCNN input gradient vs finite differences", complete ? err : INFINITY, 1e-4);
  }
  {  // persistence
    MiniCnnSpec spec;
    spec.width = 2;
    auto m = build_minicnn<double>(spec, seed);
    m.eval();
    const auto x = uniform<double>(rng, {4, 1, 16, 16}, 0.0, 1.0);
    auto back = deserialize_checkpoint<double>(serialize_checkpoint(m));
    const bool same = back.forward(x) == m.forward(x) && serialize_checkpoint(back) == serialize_checkpoint(m);
    add("checkpoint round trip (logit mismatch)", same ? 0.0 : 1.0, 0.0);
  }
  {  // PGD degenerate schedule == FGSM
    MiniCnnSpec spec;
    spec.width = 2;
    auto m = build_minicnn<double>(spec, seed);
    m.eval();
    const auto x = uniform<double>(rng, {8, 1, 16, 16}, 0.0, 1.0);
    std::vector<int> y(8);
    for (auto& l : y) l = static_cast<int>(rng.uniform_int(4));
    AttackConfig cfg = AttackConfig::pgd(8.0 / 255.0, 8.0 / 255.0, 1, 1);
    cfg.random_start = false;
    Rng attack_rng(seed);
    const auto a = pgd(m, x, std::span<const int>(y), cfg, attack_rng);
    const auto b = fgsm(m, x, std::span<const int>(y), 8.0 / 255.0);
    add("PGD(1 step, no restart) == FGSM", max_abs_diff(a, b), 0.0);
  }
  return rows;
}

inline bool print_selftest(std::ostream& os, const std::vector<SelftestRow>& rows) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-46s %12s %12s  %s\n", "check", "value", "bound", "result");
  os << buf;
  bool ok = true;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-46s %12.3e %s%11.1e  %s\n", r.name.c_str(), r.error, r.lower_bound ? ">" : "<=",
                  r.tolerance, r.passed ? "PASS" : "FAIL");
    os << buf;
    ok = ok && r.passed;
  }
  return ok;
}

}  // namespace flc
