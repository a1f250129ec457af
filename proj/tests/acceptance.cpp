// Acceptance suite: one PASS/FAIL line per criterion.
//   acceptance            run all criteria
//   acceptance 1 3 7      run a subset
// Exit status is nonzero when any selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "flc/analysis.hpp"
#include "flc/checkpoint.hpp"
#include "flc/gradcheck.hpp"
#include "flc/runspec.hpp"
#include "oracles.hpp"

using namespace flc;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double wall_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

Tensor<double> shift(const Tensor<double>& x, std::size_t a, std::size_t b) {
  Tensor<double> y(x.shape());
  const std::size_t H = x.h(), W = x.w();
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) y(n, c, (h + a) % H, (w + b) % W) = x(n, c, h, w);
  return y;
}

// Real part of the inverse DFT of the kept-window indicator.
Tensor<double> oracle_sinc(std::size_t E) {
  oracle::Plane ind(E * E);
  for (std::size_t k = 0; k < E; ++k)
    for (std::size_t l = 0; l < E; ++l)
      if (oracle::kept(oracle::signed_freq(k, E), E) && oracle::kept(oracle::signed_freq(l, E), E)) ind[k * E + l] = 1.0;
  const auto s = oracle::dft(ind, E, E, true);
  Tensor<double> k({1, 1, E, E});
  for (std::size_t i = 0; i < E * E; ++i) k[i] = s[i].real();
  return k;
}

// ---------------------------------------------------------------------------

Outcome c1_sinc() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  double err = 0.0, kernel_err = 0.0;
  for (std::size_t e : {8, 12, 16, 32}) {
    const auto k = oracle_sinc(e);
    kernel_err = std::max(kernel_err, oracle::rel_err(sinc_kernel<double>(e, e), k));
    for (int t = 0; t < 4; ++t) {
      const auto x = normal<double>(rng, {1, 2, e, e}, 0.0, 1.0);
      err = std::max(err, oracle::rel_err(flc_pool(x), oracle::circular_conv_stride2(x, k)));
    }
  }
  const double secs = wall_since(t0);
  return {err <= 1e-10 && kernel_err <= 1e-10 && secs < 10.0,
          fmt("flc_pool vs sinc filter + stride 2: rel err %.2e (<=1e-10), kernel rel err %.2e, %.2f s (<10 s)", err,
              kernel_err, secs)};
}

Outcome c2_alias_free() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(202);
  double flc_above = 0.0, flc_alias = 0.0, others_alias = INFINITY, others_recon = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const auto x = normal<double>(rng, {1, 1, 16, 16}, 0.0, 1.0);
    const auto recon = ifftshift(zero_pad_center(fftshift(fft2(flc_pool(x))), 16, 16));
    flc_above = std::max(flc_above,
                         oracle::above_window_energy(oracle::Plane(recon.data().begin(), recon.data().end()), 16, 16));
    flc_alias = std::max(flc_alias, alias_energy(PoolingKind::Flc, x));
    for (auto k : {PoolingKind::BlurPool, PoolingKind::MaxPool2, PoolingKind::StridedIdentity}) {
      others_alias = std::min(others_alias, alias_energy(k, x));
      const auto r = ifftshift(zero_pad_center(fftshift(fft2(pool_forward(k, x))), 16, 16));
      others_recon = std::max(others_recon, oracle::above_window_energy(oracle::Plane(r.data().begin(), r.data().end()), 16, 16));
    }
  }
  const double secs = wall_since(t0);
  return {flc_above <= 1e-14 && flc_alias <= 1e-14 && others_alias > 0.01 && secs < 30.0,
          fmt("flc reconstruction above-cutoff energy %.2e (<=1e-14), flc alias share %.2e (<=1e-14), "
              "blur/max/strided alias share min %.3f (>0.01) [their reconstruction energy max %.1e], %.1f s (<30 s)",
              flc_above, flc_alias, others_alias, others_recon, secs)};
}

Outcome c3_fft() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(303);
  double fwd = 0.0, inv = 0.0, parseval = 0.0;
  for (std::size_t h = 1; h <= 16; ++h) {
    for (std::size_t w = 1; w <= 16; ++w) {
      const auto x = normal<double>(rng, {1, 1, h, w}, 0.0, 1.0);
      const auto F = fft2(x);
      const auto want = oracle::dft(oracle::plane_of(x, 0, 0), h, w, false);
      const auto back = ifft2(F);
      const auto want_back = oracle::dft(oracle::Plane(F.data().begin(), F.data().end()), h, w, true);
      double num = 0, den = 0, inum = 0, iden = 0, ex = 0, ef = 0;
      for (std::size_t i = 0; i < h * w; ++i) {
        num = std::max(num, std::abs(F[i] - want[i]));
        den = std::max(den, std::abs(want[i]));
        inum = std::max(inum, std::abs(back[i] - want_back[i]));
        iden = std::max(iden, std::abs(want_back[i]));
        ex += x[i] * x[i];
        ef += std::norm(F[i]);
      }
      fwd = std::max(fwd, num / den);
      inv = std::max(inv, inum / iden);
      parseval = std::max(parseval, std::abs(ex - ef / static_cast<double>(h * w)) / ex);
    }
  }
  const double secs = wall_since(t0);
  return {fwd <= 1e-10 && inv <= 1e-10 && parseval <= 1e-10 && secs < 60.0,
          fmt("extents 1..16: fft2 rel err %.2e, ifft2 rel err %.2e (<=1e-10), Parseval %.2e (<=1e-10), %.1f s (<60 s)",
              fwd, inv, parseval, secs)};
}

Outcome c4_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0, adj = 0.0;
  std::size_t min_checked = SIZE_MAX;
  bool all = true;
  for (auto k : kAllPoolingKinds) {
    GradCheckConfig cfg;
    cfg.coords = 32;
    cfg.step = 1e-5;
    cfg.tolerance = 1e-4;
    const auto r = gradcheck_minicnn(k, cfg);
    worst = std::max(worst, r.max_rel_error);
    min_checked = std::min(min_checked, r.checked);
    all = all && r.passed;
  }
  Rng rng(404);
  for (auto k : kAllPoolingKinds) {
    const auto x = normal<double>(rng, {2, 3, 16, 12}, 0.0, 1.0);
    const auto y = normal<double>(rng, {2, 3, 8, 6}, 0.0, 1.0);
    const double lhs = dot(pool_forward(k, x), y), rhs = dot(x, pool_backward(k, x, y));
    adj = std::max(adj, std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)));
  }
  const double secs = wall_since(t0);
  return {all && min_checked >= 32 && worst <= 1e-4 && adj <= 1e-10 && secs < 120.0,
          fmt("MiniCNN input gradient, %zu kinds, >= %zu coords each: max rel err %.2e (<=1e-4); adjoint err %.2e "
              "(<=1e-10); %.1f s (<120 s)",
              kAllPoolingKinds.size(), min_checked, worst, adj, secs)};
}

// ---------------------------------------------------------------------------
// Desk catastrophic-overfitting experiment, shared by criteria 5, 9 and 11.

struct CoRun {
  bool occurred = false;
  double final_pgd = 0.0;
  double epoch_seconds = 0.0;
  std::string curve;
};

struct CoExperiment {
  std::map<std::pair<PoolingKind, std::uint64_t>, CoRun> runs;
  double cpu = 0.0;

  const CoRun& get(PoolingKind k, std::uint64_t seed) {
    const auto key = std::make_pair(k, seed);
    if (auto it = runs.find(key); it != runs.end()) return it->second;
    const double c0 = cpu_seconds();
    RunSpec s;  // defaults: synth 2000 train, fast-FGSM eps 8/255, alpha 10/255, 60 epochs
    s.pooling = k;
    s.seed = seed;
    s.synth_seed = seed;
    const auto raw = load_dataset(s);
    const auto r = train_from_spec<float>(s, raw);
    CoRun run;
    run.occurred = detect_catastrophic_overfitting(r.history, co_thresholds_for(raw.classes)).occurred;
    run.final_pgd = r.history.epochs.back().pgd_val_acc;
    run.epoch_seconds = r.history.mean_epoch_seconds();
    for (const auto& e : r.history.epochs) run.curve += fmt("%.0f ", 100.0 * e.pgd_val_acc);
    cpu += cpu_seconds() - c0;
    std::printf("    [%s seed %llu] CO=%s final PGD %.1f%%, %.2f s/epoch, PGD curve: %s\n", std::string(to_string(k)).c_str(),
                static_cast<unsigned long long>(seed), run.occurred ? "yes" : "no", 100.0 * run.final_pgd,
                run.epoch_seconds, run.curve.c_str());
    std::fflush(stdout);
    return runs.emplace(key, run).first->second;
  }

  struct Summary {
    int co = 0;
    double final_pgd = 0.0;
    double epoch_seconds = 0.0;
  };
  Summary summary(PoolingKind k, int seeds) {
    Summary s;
    std::vector<double> pgd, sec;
    for (int i = 1; i <= seeds; ++i) {
      const auto& r = get(k, static_cast<std::uint64_t>(i));
      s.co += r.occurred;
      pgd.push_back(r.final_pgd);
      sec.push_back(r.epoch_seconds);
    }
    s.final_pgd = mean(pgd);
    s.epoch_seconds = mean(sec);
    return s;
  }
};

CoExperiment& co_experiment() {
  static CoExperiment e;
  return e;
}

Outcome c5_catastrophic_overfitting() {
  auto& e = co_experiment();
  const auto flc = e.summary(PoolingKind::Flc, 5);
  const auto max = e.summary(PoolingKind::MaxPool2, 5);
  const auto strided = e.summary(PoolingKind::StridedIdentity, 5);
  const double cpu_min = e.cpu / 60.0;
  const auto variant_ok = [&](const CoExperiment::Summary& v) {
    return v.co >= 3 && flc.final_pgd - v.final_pgd >= 0.10;
  };
  const bool pass = flc.co <= 1 && (variant_ok(max) || variant_ok(strided)) && cpu_min < 40.0;
  return {pass, fmt("CO in 5 seeds: max %d, strided %d (need >=3 for one of them), flc %d (<=1); mean final PGD: "
                    "flc %.1f%%, max %.1f%%, strided %.1f%% (flc lead >=10 pts over the CO variant); %.1f CPU-min (<40)",
                    max.co, strided.co, flc.co, 100 * flc.final_pgd, 100 * max.final_pgd, 100 * strided.final_pgd, cpu_min)};
}

Outcome c9_training_cost() {
  auto& e = co_experiment();
  const auto flc = e.summary(PoolingKind::Flc, 5);
  const auto max = e.summary(PoolingKind::MaxPool2, 5);
  const double ratio = flc.epoch_seconds / max.epoch_seconds;
  return {ratio <= 2.0, fmt("FGSM-AT epoch time: flc %.3f s, max %.3f s, ratio %.2f (<=2.0)", flc.epoch_seconds,
                            max.epoch_seconds, ratio)};
}

Outcome c11_second_path() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(1111);
  double err = 0.0;
  for (auto [h, w] : std::vector<std::pair<std::size_t, std::size_t>>{{16, 16}, {12, 8}, {10, 14}}) {
    const auto x = normal<double>(rng, {2, 2, h, w}, 0.0, 1.0);
    // direct subsampling of the input; high-pass = input minus its ideal low-pass
    Tensor<double> sub2({2, 2, h / 2, w / 2}), hp_sub({2, 2, h / 2, w / 2});
    Tensor<double> low({2, 2, h, w});
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 2; ++c) {
        auto F = oracle::dft(oracle::plane_of(x, n, c), h, w, false);
        for (std::size_t k = 0; k < h; ++k)
          for (std::size_t l = 0; l < w; ++l)
            if (!oracle::kept(oracle::signed_freq(k, h), h) || !oracle::kept(oracle::signed_freq(l, w), w)) F[k * w + l] = 0.0;
        const auto lp = oracle::dft(F, h, w, true);
        for (std::size_t i = 0; i < h * w; ++i) low(n, c, i / w, i % w) = lp[i].real();
      }
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < h / 2; ++i)
          for (std::size_t j = 0; j < w / 2; ++j) {
            sub2(n, c, i, j) = x(n, c, 2 * i, 2 * j);
            hp_sub(n, c, i, j) = x(n, c, 2 * i, 2 * j) - low(n, c, 2 * i, 2 * j);
          }
    const auto base = oracle::flc_pool(x);
    err = std::max(err, oracle::rel_err(pool_forward(PoolingKind::FlcPlusOriginal, x), add(base, sub2)));
    err = std::max(err, oracle::rel_err(pool_forward(PoolingKind::FlcPlusHighpass, x), add(base, hp_sub)));
  }
  auto& e = co_experiment();
  const auto flc = e.summary(PoolingKind::Flc, 3);
  const auto orig = e.summary(PoolingKind::FlcPlusOriginal, 3);
  const auto hp = e.summary(PoolingKind::FlcPlusHighpass, 3);
  const double d_orig = orig.final_pgd - flc.final_pgd, d_hp = hp.final_pgd - flc.final_pgd;
  const double secs = wall_since(t0);
  return {err <= 1e-10 && d_orig <= 0.03 && d_hp <= 0.03 && secs < 1800.0,
          fmt("compositional oracles rel err %.2e (<=1e-10); final PGD over 3 seeds: flc %.1f%%, flc+orig %+.1f pts, "
              "flc+hp %+.1f pts (improvement <=3); %.0f s (<1800 s)",
              err, 100 * flc.final_pgd, 100 * d_orig, 100 * d_hp, secs)};
}

// ---------------------------------------------------------------------------

Outcome c6_shift_consistency() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> flc, max;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (auto k : {PoolingKind::Flc, PoolingKind::MaxPool2}) {
      RunSpec s;
      s.training = "clean";
      s.track_robustness = false;
      s.pooling = k;
      s.seed = seed;
      s.synth_seed = seed;
      const auto raw = load_dataset(s);
      auto r = train_from_spec<float>(s, raw);
      r.model.eval();
      Rng rng(seed);
      const auto test = cast_dataset<float>(raw).subset(Split::Test);
      const double c = shift_consistency(r.model, test, 4, 1000, rng).consistency;
      (k == PoolingKind::Flc ? flc : max).push_back(c);
      std::printf("    [%s seed %llu] clean acc %.1f%%, shift consistency %.1f%%\n", std::string(to_string(k)).c_str(),
                  static_cast<unsigned long long>(seed), 100 * r.history.epochs.back().clean_test_acc, 100 * c);
      std::fflush(stdout);
    }
  }
  const double secs = wall_since(t0);
  const double lead = mean(flc) - mean(max);
  return {lead >= 0.02 && secs < 900.0,
          fmt("circular-shift consistency over 5 seeds: flc %.1f%%, max %.1f%%, lead %.1f pts (>=2); %.0f s (<900 s)",
              100 * mean(flc), 100 * mean(max), 100 * lead, secs)};
}

Outcome c7_equivariance() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(707);
  double err = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t e = 8 + 4 * rng.uniform_int(4);
    const auto x = normal<double>(rng, {1, 2, e, e}, 0.0, 1.0);
    const std::size_t a = rng.uniform_int(e / 2), b = rng.uniform_int(e / 2);
    err = std::max(err, max_abs_diff(flc_pool(shift(x, 2 * a, 2 * b)), shift(flc_pool(x), a, b)));
  }
  const double secs = wall_since(t0);
  return {err <= 1e-10 && secs < 5.0,
          fmt("100 trials: max |flc(shift(x,2a,2b)) - shift(flc(x),a,b)| = %.2e (<=1e-10), %.2f s (<5 s)", err, secs)};
}

Outcome c8_degenerate_attacks() {
  const auto t0 = std::chrono::steady_clock::now();
  double diff = 0.0;
  Rng rng(808);
  for (auto k : kAllPoolingKinds) {
    MiniCnnSpec spec;
    spec.pooling = k;
    spec.width = 4;
    auto m = build_minicnn<double>(spec, 8);
    m.eval();
    const auto x = uniform<double>(rng, {16, 1, 16, 16}, 0.0, 1.0);
    std::vector<int> y(16);
    for (auto& l : y) l = static_cast<int>(rng.uniform_int(4));
    auto cfg = AttackConfig::pgd(8.0 / 255.0, 8.0 / 255.0, 1, 1);
    cfg.random_start = false;
    Rng arng(9);
    diff = std::max(diff, max_abs_diff(pgd(m, x, std::span<const int>(y), cfg, arng), fgsm(m, x, std::span<const int>(y), 8.0 / 255.0)));
  }
  bool same = true;
  for (auto k : {PoolingKind::MaxPool2, PoolingKind::Flc}) {
    RunSpec s;
    s.pooling = k;
    s.epochs = 4;
    s.width = 4;
    s.synth_train = 512;
    s.seed = 5;
    s.epsilon = 0.0;
    s.alpha = 0.0;
    const auto raw = load_dataset(s);
    auto at = train_from_spec<double>(s, raw);
    s.training = "clean";
    auto clean = train_from_spec<double>(s, raw);
    same = same && same_metrics(at.history, clean.history) &&
           serialize_checkpoint(at.model) == serialize_checkpoint(clean.model);
  }
  const double secs = wall_since(t0);
  return {diff == 0.0 && same && secs < 60.0,
          fmt("PGD(1 step, no random start, alpha=eps) vs FGSM max diff %.1e (==0); eps=0 AT vs clean trajectory and "
              "weights %s; %.1f s (<60 s)",
              diff, same ? "bit-identical" : "DIFFER", secs)};
}

Outcome c10_persistence() {
  const auto t0 = std::chrono::steady_clock::now();
  bool logits = true;
  Rng rng(1010);
  const auto probe = uniform<double>(rng, {8, 1, 16, 16}, 0.0, 1.0);
  for (auto k : kAllPoolingKinds) {
    RunSpec s;
    s.pooling = k;
    s.epochs = 2;
    s.width = 4;
    s.synth_train = 256;
    s.precision = Precision::Double;
    auto r = train_from_spec<double>(s, load_dataset(s));
    r.model.eval();
    auto back = deserialize_checkpoint<double>(serialize_checkpoint(r.model));
    logits = logits && back.forward(probe) == r.model.forward(probe);
    auto rf = train_from_spec<float>(s, load_dataset(s));
    rf.model.eval();
    const auto pf = cast<float>(probe);
    auto backf = deserialize_checkpoint<float>(serialize_checkpoint(rf.model));
    logits = logits && backf.forward(pf) == rf.model.forward(pf);
  }
  // rerun from the serialized spec
  RunSpec s;
  s.epochs = 3;
  s.width = 4;
  s.synth_train = 512;
  s.precision = Precision::Double;
  s.seed = 11;
  const auto csv_of = [](const RunSpec& spec) {
    std::ostringstream os;
    write_metrics_csv(os, train_from_spec<double>(spec, load_dataset(spec)).history);
    return os.str();
  };
  const std::string a = csv_of(s);
  const std::string b = csv_of(runspec_from_json(nlohmann::json::parse(to_json(s).dump())));
  const double secs = wall_since(t0);
  return {logits && a == b && secs < 60.0,
          fmt("checkpoint round trip logits %s (all kinds, float and double); rerun metrics CSV %s (%zu bytes); %.1f s (<60 s)",
              logits ? "bit-identical" : "DIFFER", a == b ? "byte-identical" : "DIFFERS", a.size(), secs)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria{
      {1, {"sinc equivalence", c1_sinc}},
      {2, {"alias-free guarantee", c2_alias_free}},
      {3, {"FFT oracle equivalence", c3_fft}},
      {4, {"gradient correctness", c4_gradients}},
      {5, {"catastrophic-overfitting reproduction", c5_catastrophic_overfitting}},
      {6, {"shift consistency", c6_shift_consistency}},
      {7, {"even-shift equivariance", c7_equivariance}},
      {8, {"degenerate-attack identities", c8_degenerate_attacks}},
      {9, {"relative training cost", c9_training_cost}},
      {10, {"persistence and determinism", c10_persistence}},
      {11, {"second-path ablation", c11_second_path}},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    const int id = std::atoi(argv[i]);
    if (!criteria.count(id)) {
      std::fprintf(stderr, "unknown criterion '%s'\n", argv[i]);
      return 2;
    }
    selected.insert(id);
  }
  if (selected.empty())
    for (const auto& [id, c] : criteria) selected.insert(id);

  int failed = 0;
  for (int id : selected) {
    const auto& [name, fn] = criteria.at(id);
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s  %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
