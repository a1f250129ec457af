#pragma once

// Clean and fast-FGSM adversarial training loops, per-epoch robustness
// tracking, early stopping and catastrophic-overfitting detection.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flc/attacks.hpp"
#include "flc/dataset.hpp"
#include "flc/nn.hpp"
#include "flc/rng.hpp"

namespace flc {

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 128;
  double lr_max = 0.2;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;

  // Per-epoch robustness tracking.
  bool track_robustness = true;
  double eval_epsilon = 8.0 / 255.0;
  std::size_t pgd_val_size = 256;
  int pgd_val_steps = 10;
  int pgd_val_restarts = 1;
  double pgd_val_alpha = 2.0 / 255.0;

  /// When set, stop once pgd_val_acc < threshold * best so far and restore the best epoch.
  std::optional<double> early_stop_threshold;

  void validate() const {
    if (epochs == 0 || batch_size < 2) throw std::invalid_argument("train: epochs >= 1 and batch_size >= 2 required");
    if (!(lr_max >= 0.0) || !(momentum >= 0.0) || !(weight_decay >= 0.0)) {
      throw std::invalid_argument("train: lr_max, momentum and weight_decay must be non-negative");
    }
    if (early_stop_threshold && !(*early_stop_threshold > 0.0 && *early_stop_threshold <= 1.0)) {
      throw std::invalid_argument("train: early stop threshold must be in (0, 1]");
    }
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  ///< 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double fgsm_test_acc = std::numeric_limits<double>::quiet_NaN();
  double pgd_val_acc = std::numeric_limits<double>::quiet_NaN();
  double clean_test_acc = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;  ///< training-phase time only, evaluation excluded
  // Loss on one fixed probe batch at the epoch-end parameters, clean vs perturbed.
  double probe_clean_loss = 0.0;
  double probe_adv_loss = 0.0;
};

struct RunHistory {
  std::vector<EpochRecord> epochs;

  std::vector<double> pgd_curve() const {
    std::vector<double> v;
    for (const auto& e : epochs) v.push_back(e.pgd_val_acc);
    return v;
  }
  std::vector<double> fgsm_curve() const {
    std::vector<double> v;
    for (const auto& e : epochs) v.push_back(e.fgsm_test_acc);
    return v;
  }
  double mean_epoch_seconds() const {
    if (epochs.empty()) return 0.0;
    double s = 0.0;
    for (const auto& e : epochs) s += e.wall_seconds;
    return s / static_cast<double>(epochs.size());
  }
};

/// Equality of every recorded metric except wall time.
inline bool same_metrics(const RunHistory& a, const RunHistory& b) {
  if (a.epochs.size() != b.epochs.size()) return false;
  const auto eq = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    const auto& x = a.epochs[i];
    const auto& y = b.epochs[i];
    if (x.epoch != y.epoch || !eq(x.lr, y.lr) || !eq(x.train_loss, y.train_loss) || !eq(x.train_acc, y.train_acc) ||
        !eq(x.fgsm_test_acc, y.fgsm_test_acc) || !eq(x.pgd_val_acc, y.pgd_val_acc) ||
        !eq(x.clean_test_acc, y.clean_test_acc) || !eq(x.probe_clean_loss, y.probe_clean_loss) ||
        !eq(x.probe_adv_loss, y.probe_adv_loss)) {
      return false;
    }
  }
  return true;
}

inline constexpr const char* kMetricsCsvHeader =
    "epoch,lr,train_loss,train_acc,fgsm_test_acc,pgd_val_acc,clean_test_acc,wall_seconds";

/// Metrics CSV. Values use %.17g so they parse back to the same doubles. Wall time is
/// written only when `include_wall_time` is set (0 otherwise) so reruns stay byte-identical.
inline void write_metrics_csv(std::ostream& os, const RunHistory& h, bool include_wall_time = false) {
  os << kMetricsCsvHeader << '\n';
  char buf[64];
  const auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << buf;
  };
  for (const auto& e : h.epochs) {
    os << e.epoch;
    for (double v : {e.lr, e.train_loss, e.train_acc, e.fgsm_test_acc, e.pgd_val_acc, e.clean_test_acc}) {
      os << ',';
      put(v);
    }
    os << ',';
    put(include_wall_time ? e.wall_seconds : 0.0);
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalMetrics {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

/// Accuracy and mean cross-entropy on clean inputs, or on inputs perturbed by `attack`.
template <class T>
EvalMetrics evaluate(Model<T>& model, const Dataset<T>& data, const std::optional<AttackConfig>& attack, Rng& rng) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  detail::require_eval(model);
  const Tensor<T> images = attack ? perturb_dataset(model, data, *attack, rng) : data.images;
  EvalMetrics m;
  std::size_t hit = 0;
  for (std::size_t b = 0; b < data.size(); b += kAttackBatch) {
    const std::size_t e = std::min(data.size(), b + kAttackBatch);
    const auto logits = model.forward(images.batch_slice(b, e));
    const std::span<const int> yb(data.labels.data() + b, e - b);
    const auto ce = cross_entropy(logits, yb);
    for (double l : ce.per_example) m.mean_loss += l;
    const auto pred = argmax_channels(logits);
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == static_cast<std::size_t>(yb[i]);
  }
  m.accuracy = static_cast<double>(hit) / static_cast<double>(data.size());
  m.mean_loss /= static_cast<double>(data.size());
  return m;
}

// ---------------------------------------------------------------------------
// Early stopping and catastrophic-overfitting detection

struct EarlyStopDecision {
  bool stop = false;
  std::size_t best_epoch = 0;  ///< 1-based epoch with the highest PGD accuracy so far
};

/// Stop when the latest pgd_val_acc falls below threshold * (running max).
inline EarlyStopDecision early_stop_monitor(const RunHistory& h, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw std::invalid_argument("early_stop_monitor: threshold in (0,1]");
  EarlyStopDecision d;
  double best = -1.0;
  for (const auto& e : h.epochs) {
    if (e.pgd_val_acc > best) {
      best = e.pgd_val_acc;
      d.best_epoch = e.epoch;
    }
  }
  if (!h.epochs.empty()) d.stop = h.epochs.back().pgd_val_acc < threshold * best;
  return d;
}

/// Stop signal for a bare PGD-accuracy series (epochs numbered from 1).
inline EarlyStopDecision early_stop_monitor(const std::vector<double>& pgd_curve, double threshold) {
  RunHistory h;
  for (std::size_t i = 0; i < pgd_curve.size(); ++i) {
    EpochRecord r;
    r.epoch = i + 1;
    r.pgd_val_acc = pgd_curve[i];
    h.epochs.push_back(r);
  }
  return early_stop_monitor(h, threshold);
}

struct CoVerdict {
  bool occurred = false;
  std::optional<std::size_t> epoch;  ///< first detection epoch, 1-based
  double pgd_peak = 0.0;             ///< running max PGD accuracy (at detection, or over the run)
  std::optional<double> pgd_at_detection;
};

struct CoThresholds {
  double drop_ratio = 0.5;  ///< PGD accuracy must fall to at most this fraction of its peak
  double fgsm_floor = 0.8;  ///< while FGSM accuracy stays at least this fraction of its own peak
  /// The PGD peak must exceed this before a drop counts. An untrained model sits at
  /// chance, and falling from chance is not a collapse of learned robustness.
  double min_peak = 0.0;
};

/// Defaults plus a peak floor 10 points above chance for a `classes`-way task.
inline CoThresholds co_thresholds_for(std::size_t classes) {
  CoThresholds th;
  if (classes > 0) th.min_peak = 1.0 / static_cast<double>(classes) + 0.1;
  return th;
}

/// Catastrophic overfitting: PGD accuracy collapses while FGSM accuracy holds.
/// A run whose two curves decay together (robust overfitting) is not flagged.
inline CoVerdict detect_catastrophic_overfitting(std::span<const double> pgd, std::span<const double> fgsm,
                                                 CoThresholds th = {}) {
  if (pgd.size() != fgsm.size()) throw std::invalid_argument("detect_catastrophic_overfitting: curve lengths differ");
  if (pgd.size() < 3) throw std::invalid_argument("detect_catastrophic_overfitting: need >= 3 evaluated epochs");
  CoVerdict v;
  double pgd_peak = 0.0, fgsm_peak = 0.0;
  for (std::size_t i = 0; i < pgd.size(); ++i) {
    if (std::isnan(pgd[i]) || std::isnan(fgsm[i])) {
      throw std::invalid_argument("detect_catastrophic_overfitting: epoch without robustness metrics");
    }
    pgd_peak = std::max(pgd_peak, pgd[i]);
    fgsm_peak = std::max(fgsm_peak, fgsm[i]);
    if (!v.occurred && pgd_peak > th.min_peak && pgd_peak > 0.0 && pgd[i] <= th.drop_ratio * pgd_peak &&
        fgsm[i] >= th.fgsm_floor * fgsm_peak) {
      v.occurred = true;
      v.epoch = i + 1;
      v.pgd_peak = pgd_peak;
      v.pgd_at_detection = pgd[i];
    }
  }
  if (!v.occurred) v.pgd_peak = pgd_peak;
  return v;
}

inline CoVerdict detect_catastrophic_overfitting(const RunHistory& h, CoThresholds th = {}) {
  const auto p = h.pgd_curve();
  const auto f = h.fgsm_curve();
  return detect_catastrophic_overfitting(p, f, th);
}

// ---------------------------------------------------------------------------
// Training loops

template <class T>
struct TrainResult {
  Model<T> model;
  RunHistory history;
  std::optional<std::size_t> stopped_at;  ///< epoch at which early stopping fired
  std::size_t best_epoch = 0;             ///< epoch whose parameters were kept (last epoch unless stopped)
};

namespace detail {

template <class T>
TrainResult<T> run_training(Model<T> model, const Dataset<T>& data, const TrainConfig& cfg,
                            const std::optional<AttackConfig>& attack) {
  cfg.validate();
  if (attack) attack->validate();
  const Dataset<T> train = data.subset(Split::Train);
  if (train.empty()) throw std::invalid_argument("train: empty training split");
  const Dataset<T> val = data.subset(Split::Val).head(cfg.pgd_val_size);
  const Dataset<T> test = data.subset(Split::Test);

  Rng root(cfg.seed);
  Rng shuffle_rng = root.split();
  Rng eval_rng = root.split();
  Rng attack_rng = root.split();

  Sgd<T> opt(cfg.momentum, cfg.weight_decay);
  TrainResult<T> result{model, {}, std::nullopt, 0};
  std::optional<Model<T>> best_model;
  double best_pgd = -1.0;

  const std::size_t probe_n = std::min<std::size_t>(cfg.batch_size, train.size());
  const Tensor<T> probe_x = train.images.batch_slice(0, probe_n);
  const std::span<const int> probe_y(train.labels.data(), probe_n);

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = cyclic_lr(epoch, cfg.epochs, cfg.lr_max);
    const auto t0 = std::chrono::steady_clock::now();

    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t seen = 0, correct = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      if (e - b < 2) break;  // BatchNorm needs two examples in Train mode
      const std::span<const std::size_t> rows(order.data() + b, e - b);
      Tensor<T> xb = train.images.gather(rows);
      std::vector<int> yb;
      for (std::size_t r : rows) yb.push_back(train.labels[r]);

      if (attack) {
        model.eval();
        xb = perturb(model, xb, std::span<const int>(yb), *attack, attack_rng);
      }
      model.train();
      const auto logits = model.forward(xb);
      const auto ce = cross_entropy(logits, std::span<const int>(yb));
      model.backward(ce.grad, true);
      opt.step(model.parameters(), rec.lr);

      loss_sum += ce.loss * static_cast<double>(yb.size());
      const auto pred = argmax_channels(logits);
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == static_cast<std::size_t>(yb[i]);
      seen += yb.size();
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rec.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    rec.train_acc = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;

    model.eval();
    {
      const auto clean = cross_entropy(model.forward(probe_x), probe_y);
      rec.probe_clean_loss = clean.loss;
      rec.probe_adv_loss = clean.loss;
      if (attack) {
        const Tensor<T> adv = perturb(model, probe_x, probe_y, *attack, eval_rng);
        rec.probe_adv_loss = cross_entropy(model.forward(adv), probe_y).loss;
      }
    }
    if (!test.empty()) rec.clean_test_acc = evaluate(model, test, std::nullopt, eval_rng).accuracy;
    if (cfg.track_robustness) {
      if (!test.empty()) {
        rec.fgsm_test_acc = evaluate(model, test, AttackConfig::fgsm(cfg.eval_epsilon), eval_rng).accuracy;
      }
      if (!val.empty()) {
        AttackConfig p = AttackConfig::pgd(cfg.eval_epsilon, cfg.pgd_val_alpha, cfg.pgd_val_steps, cfg.pgd_val_restarts);
        rec.pgd_val_acc = evaluate(model, val, p, eval_rng).accuracy;
      }
    }
    result.history.epochs.push_back(rec);
    result.best_epoch = rec.epoch;

    if (cfg.early_stop_threshold && !std::isnan(rec.pgd_val_acc)) {
      if (rec.pgd_val_acc > best_pgd) {
        best_pgd = rec.pgd_val_acc;
        best_model = model;
      }
      const auto d = early_stop_monitor(result.history, *cfg.early_stop_threshold);
      if (d.stop) {
        result.stopped_at = rec.epoch;
        result.best_epoch = d.best_epoch;
        model = *best_model;
        break;
      }
    }
  }
  model.eval();
  result.model = std::move(model);
  return result;
}

}  // namespace detail

template <class T>
TrainResult<T> train_clean(Model<T> model, const Dataset<T>& data, const TrainConfig& cfg) {
  return detail::run_training(std::move(model), data, cfg, std::nullopt);
}

/// Every minibatch is replaced by its fast-FGSM perturbation (generated against the
/// Eval-mode snapshot of the current parameters) before the SGD step.
template <class T>
TrainResult<T> train_fgsm_at(Model<T> model, const Dataset<T>& data, const TrainConfig& cfg,
                             AttackConfig attack = AttackConfig::fast_fgsm(8.0 / 255.0, 10.0 / 255.0)) {
  return detail::run_training(std::move(model), data, cfg, attack);
}

}  // namespace flc
