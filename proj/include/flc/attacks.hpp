#pragma once

// White-box gradient attacks (FGSM, fast FGSM, PGD under L-inf and L2),
// transfer evaluation and confidence statistics.
//
// sign(0) = 0, so a zero gradient leaves the input untouched. PGD clips to the
// epsilon ball first and to the pixel range second.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flc/dataset.hpp"
#include "flc/nn.hpp"
#include "flc/rng.hpp"
#include "flc/tensor.hpp"

namespace flc {

enum class Norm { Linf, L2 };
enum class AttackKind { Fgsm, FastFgsm, Pgd };

inline std::string_view to_string(Norm n) { return n == Norm::Linf ? "linf" : "l2"; }
inline std::string_view to_string(AttackKind k) {
  switch (k) {
    case AttackKind::Fgsm: return "fgsm";
    case AttackKind::FastFgsm: return "fast-fgsm";
    case AttackKind::Pgd: return "pgd";
  }
  return "?";
}

struct AttackConfig {
  AttackKind kind = AttackKind::Pgd;
  double epsilon = 8.0 / 255.0;
  double alpha = 2.0 / 255.0;
  int steps = 50;
  int restarts = 10;
  Norm norm = Norm::Linf;
  double clamp_lo = 0.0;
  double clamp_hi = 1.0;
  bool random_start = true;

  static AttackConfig fgsm(double eps) {
    AttackConfig c;
    c.kind = AttackKind::Fgsm;
    c.epsilon = eps;
    c.alpha = eps;
    c.steps = 1;
    c.restarts = 1;
    c.random_start = false;
    return c;
  }
  static AttackConfig fast_fgsm(double eps, double alpha) {
    AttackConfig c = fgsm(eps);
    c.kind = AttackKind::FastFgsm;
    c.alpha = alpha;
    return c;
  }
  static AttackConfig pgd(double eps, double alpha, int steps, int restarts) {
    AttackConfig c;
    c.epsilon = eps;
    c.alpha = alpha;
    c.steps = steps;
    c.restarts = restarts;
    return c;
  }

  /// A zero budget is accepted: it degenerates every attack to the identity.
  void validate() const {
    if (!(epsilon >= 0.0) || !(alpha >= 0.0)) throw std::invalid_argument("attack: epsilon and alpha must be >= 0");
    if (steps < 1 || restarts < 1) throw std::invalid_argument("attack: steps and restarts must be >= 1");
    if (!(clamp_lo < clamp_hi)) throw std::invalid_argument("attack: clamp.lo must be < clamp.hi");
  }
};

namespace detail {

template <class T>
T sign(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

template <class T>
void require_eval(const Model<T>& model) {
  if (model.mode() != Mode::Eval) throw std::logic_error("attacks require a model in Eval mode");
}

template <class T>
T clamp_pixel(T v, const AttackConfig& cfg) {
  return std::clamp(v, static_cast<T>(cfg.clamp_lo), static_cast<T>(cfg.clamp_hi));
}

/// Per-example L2 norms of an [N, ...] tensor.
template <class T>
std::vector<double> example_norms(const Tensor<T>& t) {
  const std::size_t per = t.n() == 0 ? 0 : t.size() / t.n();
  std::vector<double> out(t.n(), 0.0);
  for (std::size_t n = 0; n < t.n(); ++n) {
    double s = 0.0;
    for (std::size_t i = 0; i < per; ++i) s += static_cast<double>(t[n * per + i]) * t[n * per + i];
    out[n] = std::sqrt(s);
  }
  return out;
}

/// Project perturbation onto the epsilon ball of the configured norm.
template <class T>
void project(Tensor<T>& delta, const AttackConfig& cfg) {
  if (cfg.norm == Norm::Linf) {
    const T eps = static_cast<T>(cfg.epsilon);
    for (auto& d : delta.data()) d = std::clamp(d, -eps, eps);
    return;
  }
  const auto norms = example_norms(delta);
  const std::size_t per = delta.n() == 0 ? 0 : delta.size() / delta.n();
  for (std::size_t n = 0; n < delta.n(); ++n) {
    if (norms[n] > cfg.epsilon) {
      const T f = static_cast<T>(cfg.epsilon / norms[n]);
      for (std::size_t i = 0; i < per; ++i) delta[n * per + i] *= f;
    }
  }
}

/// Ascent direction: sign(g) for L-inf, g/||g||_2 per example for L2 (zero for zero gradients).
template <class T>
Tensor<T> ascent_direction(const Tensor<T>& g, Norm norm) {
  if (norm == Norm::Linf) return map(g, [](T v) { return sign(v); });
  Tensor<T> out(g.shape());
  const auto norms = example_norms(g);
  const std::size_t per = g.n() == 0 ? 0 : g.size() / g.n();
  for (std::size_t n = 0; n < g.n(); ++n) {
    if (norms[n] == 0.0) continue;
    for (std::size_t i = 0; i < per; ++i) out[n * per + i] = static_cast<T>(g[n * per + i] / norms[n]);
  }
  return out;
}

template <class T>
Tensor<T> random_start(Rng& rng, const Shape& shape, const AttackConfig& cfg) {
  if (cfg.norm == Norm::Linf) return uniform<T>(rng, shape, -cfg.epsilon, cfg.epsilon);
  // Uniform point in the L2 ball: Gaussian direction, radius eps * u^(1/d).
  Tensor<T> d = normal<T>(rng, shape, 0.0, 1.0);
  const auto norms = example_norms(d);
  const std::size_t per = d.n() == 0 ? 0 : d.size() / d.n();
  for (std::size_t n = 0; n < d.n(); ++n) {
    const double radius = cfg.epsilon * std::pow(rng.uniform01(), 1.0 / static_cast<double>(per));
    const double f = norms[n] > 0.0 ? radius / norms[n] : 0.0;
    for (std::size_t i = 0; i < per; ++i) d[n * per + i] = static_cast<T>(d[n * per + i] * f);
  }
  return d;
}

}  // namespace detail

/// Throws std::logic_error if x_adv leaves the epsilon ball around x or the pixel range.
template <class T>
void check_budget(const Tensor<T>& x, const Tensor<T>& x_adv, const AttackConfig& cfg) {
  const double slack = 8.0 * std::numeric_limits<T>::epsilon() * (1.0 + std::max(std::abs(cfg.clamp_lo), std::abs(cfg.clamp_hi)));
  for (T v : x_adv.data()) {
    if (v < cfg.clamp_lo || v > cfg.clamp_hi) throw std::logic_error("attack output outside the pixel range");
  }
  const Tensor<T> delta = sub(x_adv, x);
  if (cfg.norm == Norm::Linf) {
    if (max_abs(delta) > cfg.epsilon + slack) throw std::logic_error("attack output exceeds the L-inf budget");
  } else {
    for (double n : detail::example_norms(delta)) {
      if (n > cfg.epsilon * (1.0 + 1e-6) + slack) throw std::logic_error("attack output exceeds the L2 budget");
    }
  }
}

namespace detail {
template <class T>
void maybe_check_budget([[maybe_unused]] const Tensor<T>& x, [[maybe_unused]] const Tensor<T>& x_adv,
                        [[maybe_unused]] const AttackConfig& cfg) {
#ifdef FLC_CHECK_ATTACK_BUDGET
  check_budget(x, x_adv, cfg);
#endif
}
}  // namespace detail

/// x' = clamp(x + eps * sign(grad_x L)).
template <class T>
Tensor<T> fgsm(Model<T>& model, const Tensor<T>& x, std::span<const int> y, double epsilon, double clamp_lo = 0.0,
               double clamp_hi = 1.0) {
  detail::require_eval(model);
  AttackConfig cfg = AttackConfig::fgsm(epsilon);
  cfg.clamp_lo = clamp_lo;
  cfg.clamp_hi = clamp_hi;
  const Tensor<T> g = input_gradient(model, x, y);
  const T eps = static_cast<T>(epsilon);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = detail::clamp_pixel(x[i] + eps * detail::sign(g[i]), cfg);
  detail::maybe_check_budget(x, out, cfg);
  return out;
}

/// One alpha step along sign(grad), projected to the epsilon ball, then clamped.
template <class T>
Tensor<T> fast_fgsm(Model<T>& model, const Tensor<T>& x, std::span<const int> y, double epsilon, double alpha,
                    double clamp_lo = 0.0, double clamp_hi = 1.0) {
  detail::require_eval(model);
  AttackConfig cfg = AttackConfig::fast_fgsm(epsilon, alpha);
  cfg.clamp_lo = clamp_lo;
  cfg.clamp_hi = clamp_hi;
  const Tensor<T> g = input_gradient(model, x, y);
  const T eps = static_cast<T>(epsilon), a = static_cast<T>(alpha);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T step = std::clamp(a * detail::sign(g[i]), -eps, eps);
    out[i] = detail::clamp_pixel(x[i] + step, cfg);
  }
  detail::maybe_check_budget(x, out, cfg);
  return out;
}

/// Projected gradient descent with random restarts; per example, the restart with the
/// highest final loss is returned.
template <class T>
Tensor<T> pgd(Model<T>& model, const Tensor<T>& x, std::span<const int> y, const AttackConfig& cfg, Rng& rng) {
  detail::require_eval(model);
  cfg.validate();
  const std::size_t N = x.n();
  const std::size_t per = N == 0 ? 0 : x.size() / N;
  Tensor<T> best = x;
  std::vector<double> best_loss(N, -std::numeric_limits<double>::infinity());
  const T alpha = static_cast<T>(cfg.alpha);

  for (int r = 0; r < cfg.restarts; ++r) {
    Tensor<T> delta = cfg.random_start ? detail::random_start<T>(rng, x.shape(), cfg) : Tensor<T>(x.shape());
    Tensor<T> x_adv(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) x_adv[i] = detail::clamp_pixel(x[i] + delta[i], cfg);
    if (cfg.random_start) delta = sub(x_adv, x);

    for (int s = 0; s < cfg.steps; ++s) {
      const Tensor<T> dir = detail::ascent_direction(input_gradient(model, x_adv, y), cfg.norm);
      for (std::size_t i = 0; i < delta.size(); ++i) delta[i] += alpha * dir[i];
      detail::project(delta, cfg);
      for (std::size_t i = 0; i < x.size(); ++i) x_adv[i] = detail::clamp_pixel(x[i] + delta[i], cfg);
      delta = sub(x_adv, x);
    }

    const auto losses = cross_entropy(model.forward(x_adv), y).per_example;
    for (std::size_t n = 0; n < N; ++n) {
      if (losses[n] > best_loss[n]) {
        best_loss[n] = losses[n];
        std::copy_n(x_adv.data().begin() + static_cast<std::ptrdiff_t>(n * per), per,
                    best.data().begin() + static_cast<std::ptrdiff_t>(n * per));
      }
    }
  }
  detail::maybe_check_budget(x, best, cfg);
  return best;
}

/// Dispatch on cfg.kind. `rng` is only consumed by PGD.
template <class T>
Tensor<T> perturb(Model<T>& model, const Tensor<T>& x, std::span<const int> y, const AttackConfig& cfg, Rng& rng) {
  cfg.validate();
  switch (cfg.kind) {
    case AttackKind::Fgsm: return fgsm(model, x, y, cfg.epsilon, cfg.clamp_lo, cfg.clamp_hi);
    case AttackKind::FastFgsm: return fast_fgsm(model, x, y, cfg.epsilon, cfg.alpha, cfg.clamp_lo, cfg.clamp_hi);
    case AttackKind::Pgd: return pgd(model, x, y, cfg, rng);
  }
  throw std::logic_error("unknown attack kind");
}

inline constexpr std::size_t kAttackBatch = 256;

/// Perturb a whole dataset in fixed-size chunks (order preserved).
template <class T>
Tensor<T> perturb_dataset(Model<T>& model, const Dataset<T>& data, const AttackConfig& cfg, Rng& rng) {
  std::vector<T> out;
  out.reserve(data.images.size());
  for (std::size_t b = 0; b < data.size(); b += kAttackBatch) {
    const std::size_t e = std::min(data.size(), b + kAttackBatch);
    const Tensor<T> xb = data.images.batch_slice(b, e);
    const std::span<const int> yb(data.labels.data() + b, e - b);
    const Tensor<T> adv = perturb(model, xb, yb, cfg, rng);
    out.insert(out.end(), adv.data().begin(), adv.data().end());
  }
  return Tensor<T>(data.images.shape(), std::move(out));
}

/// Class predictions (argmax, ties to the lowest index) in chunks.
template <class T>
std::vector<std::size_t> predict(Model<T>& model, const Tensor<T>& images) {
  std::vector<std::size_t> out;
  for (std::size_t b = 0; b < images.n(); b += kAttackBatch) {
    const std::size_t e = std::min(images.n(), b + kAttackBatch);
    const auto pred = argmax_channels(model.forward(images.batch_slice(b, e)));
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

inline double accuracy(const std::vector<std::size_t>& pred, const std::vector<int>& labels) {
  if (labels.empty()) throw std::invalid_argument("accuracy of empty set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += pred[i] == static_cast<std::size_t>(labels[i]);
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

/// Accuracy of `target` on PGD examples crafted against `source`.
template <class T>
double transfer_eval(Model<T>& source, Model<T>& target, const Dataset<T>& data, const AttackConfig& cfg, Rng& rng) {
  if (data.empty()) throw std::invalid_argument("transfer_eval: empty dataset");
  if (source.in_channels() != target.in_channels()) throw std::invalid_argument("transfer_eval: input shape mismatch");
  detail::require_eval(target);
  const Tensor<T> adv = perturb_dataset(source, data, cfg, rng);
  return accuracy(predict(target, adv), data.labels);
}

struct ConfidenceStats {
  std::optional<double> clean_conf_correct;  ///< empty when no clean example is classified correctly
  std::optional<double> adv_conf_wrong;      ///< empty when no adversarial example is misclassified
};

template <class T>
ConfidenceStats confidence_stats(Model<T>& model, const Dataset<T>& data, const AttackConfig& cfg, Rng& rng) {
  if (data.empty()) throw std::invalid_argument("confidence_stats: empty dataset");
  detail::require_eval(model);
  const auto summarize = [&](const Tensor<T>& images, bool want_correct) -> std::optional<double> {
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t b = 0; b < images.n(); b += kAttackBatch) {
      const std::size_t e = std::min(images.n(), b + kAttackBatch);
      const auto logits = model.forward(images.batch_slice(b, e));
      const auto probs = softmax(logits);
      const auto pred = argmax_channels(logits);
      for (std::size_t i = 0; i < probs.size(); ++i) {
        const bool correct = pred[i] == static_cast<std::size_t>(data.labels[b + i]);
        if (correct == want_correct) {
          total += *std::max_element(probs[i].begin(), probs[i].end());
          ++count;
        }
      }
    }
    if (count == 0) return std::nullopt;
    return total / static_cast<double>(count);
  };
  ConfidenceStats s;
  s.clean_conf_correct = summarize(data.images, true);
  s.adv_conf_wrong = summarize(perturb_dataset(model, data, cfg, rng), false);
  return s;
}

}  // namespace flc
