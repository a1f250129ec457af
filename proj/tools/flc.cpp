// flc: command-line front end.
//
//   flc train    --dataset synth --pooling flc --epochs 60 --seed 1 --out runs/a
//   flc attack   --ckpt runs/a/model.flck --attack pgd --epsilon 8/255 --steps 50 --restarts 10
//   flc eval     --ckpt runs/a/model.flck
//   flc analyze  --ckpt runs/a/model.flck --out runs/a/analysis
//   flc selftest
//   flc gradcheck --pooling all
//
// Exit codes: 0 success, 1 check failure, 2 usage error, 3 I/O or format error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "flc/analysis.hpp"
#include "flc/attacks.hpp"
#include "flc/checkpoint.hpp"
#include "flc/data.hpp"
#include "flc/errors.hpp"
#include "flc/gradcheck.hpp"
#include "flc/runspec.hpp"
#include "flc/selftest.hpp"
#include "flc/training.hpp"

namespace fs = std::filesystem;
using namespace flc;

namespace {

enum Exit { kOk = 0, kFailed = 1, kUsage = 2, kIo = 3 };

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Raw flag values; only flags given on the command line override the run spec file.
struct Flags {
  std::string spec_file;
  std::string pooling, dataset, out, norm, attack, training, precision;
  std::string epsilon, alpha, lr_max;
  std::size_t epochs = 0, width = 0;
  int steps = 0, restarts = 0;
  std::uint64_t seed = 0, synth_seed = 0;
  bool record_timing = false;
  std::string early_stop;
};

void add_spec_flags(CLI::App* cmd, Flags& f, bool training_flags) {
  cmd->add_option("--spec", f.spec_file, "flat JSON run spec; flags override its values");
  cmd->add_option("--dataset", f.dataset, "synth | idx:IMG,LAB[,TIMG,TLAB] | cifar:TRAIN[,TEST]");
  cmd->add_option("--synth-seed", f.synth_seed, "seed of the synthetic corpus");
  cmd->add_option("--seed", f.seed, "run seed");
  cmd->add_option("--epsilon", f.epsilon, "budget, e.g. 8/255");
  cmd->add_option("--alpha", f.alpha, "step size, e.g. 10/255");
  cmd->add_option("--steps", f.steps, "PGD iterations");
  cmd->add_option("--restarts", f.restarts, "PGD restarts");
  cmd->add_option("--norm", f.norm, "linf | l2")->check(CLI::IsMember({"linf", "l2"}));
  cmd->add_option("--attack", f.attack, "fgsm | fast-fgsm | pgd")->check(CLI::IsMember({"fgsm", "fast-fgsm", "pgd"}));
  cmd->add_option("--out", f.out, "output directory");
  if (training_flags) {
    cmd->add_option("--pooling", f.pooling, "flc | flc+hp | flc+orig | max | avg | strided | blur");
    cmd->add_option("--width", f.width, "MiniCNN base width");
    cmd->add_option("--epochs", f.epochs, "training epochs");
    cmd->add_option("--lr-max", f.lr_max, "peak of the cyclic learning rate");
    cmd->add_option("--training", f.training, "fgsm | clean")->check(CLI::IsMember({"fgsm", "clean"}));
    cmd->add_option("--precision", f.precision, "single | double")->check(CLI::IsMember({"single", "double"}));
    cmd->add_option("--early-stop", f.early_stop, "stop when PGD-val accuracy < threshold * best");
    cmd->add_flag("--record-timing", f.record_timing, "write measured wall seconds into metrics.csv");
  }
}

RunSpec resolve_spec(const CLI::App* cmd, const Flags& f) {
  RunSpec s;
  if (!f.spec_file.empty()) {
    std::ifstream is(f.spec_file);
    if (!is) throw IoError("cannot open " + f.spec_file);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(std::string("invalid JSON: ") + e.what(), e.byte);
    }
    apply_json(s, j);
  }
  const auto given = [&](const char* name) { return cmd->count(name) > 0; };
  nlohmann::json o = nlohmann::json::object();
  if (given("--dataset")) o["dataset"] = f.dataset;
  if (given("--synth-seed")) o["synth_seed"] = f.synth_seed;
  if (given("--seed")) o["seed"] = f.seed;
  if (given("--epsilon")) o["epsilon"] = f.epsilon;
  if (given("--alpha")) o["alpha"] = f.alpha;
  if (given("--steps")) o["steps"] = f.steps;
  if (given("--restarts")) o["restarts"] = f.restarts;
  if (given("--norm")) o["norm"] = f.norm;
  if (given("--attack")) o["attack"] = f.attack;
  if (given("--out")) o["out"] = f.out;
  if (cmd->get_option_no_throw("--pooling")) {
    if (given("--pooling")) o["pooling"] = f.pooling;
    if (given("--width")) o["width"] = f.width;
    if (given("--epochs")) o["epochs"] = f.epochs;
    if (given("--lr-max")) o["lr_max"] = f.lr_max;
    if (given("--training")) o["training"] = f.training;
    if (given("--precision")) o["precision"] = f.precision;
    if (given("--early-stop")) o["early_stop_threshold"] = f.early_stop;
    if (given("--record-timing")) o["record_timing"] = f.record_timing;
  }
  apply_json(s, o);
  s.validate();
  return s;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + p.string() + " for writing");
  os << text;
  if (!os) throw IoError("failed writing " + p.string());
}

void write_runspec(const RunSpec& s, const fs::path& dir) {
  fs::create_directories(dir);
  auto j = to_json(s);
  j["hash"] = runspec_hash(s);
  write_text(dir / "runspec.json", j.dump(2) + "\n");
}

const char* fmt(double v) {
  static char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// ---------------------------------------------------------------------------

template <class T>
int train_as(const RunSpec& s) {
  const auto raw = load_dataset(s);
  raw.validate();
  const auto cfg = s.train_config();
  auto result = train_from_spec<T>(s, raw);
  const fs::path out(s.out);
  save_checkpoint(result.model, out / "model.flck");
  std::ostringstream csv;
  write_metrics_csv(csv, result.history, s.record_timing);
  write_text(out / "metrics.csv", csv.str());

  const auto& last = result.history.epochs.back();
  std::cout << "runspec " << runspec_hash(s) << "\n";
  std::cout << "epochs " << result.history.epochs.size() << (result.stopped_at ? " (early stop)" : "") << "\n";
  std::cout << "clean_test_acc " << fmt(last.clean_test_acc) << "\n";
  if (cfg.track_robustness) {
    std::cout << "fgsm_test_acc " << fmt(last.fgsm_test_acc) << "\n";
    std::cout << "pgd_val_acc " << fmt(last.pgd_val_acc) << "\n";
    if (result.history.epochs.size() >= 3) {
      const auto v = detect_catastrophic_overfitting(result.history, co_thresholds_for(raw.classes));
      std::cout << "catastrophic_overfitting " << (v.occurred ? "yes" : "no");
      if (v.epoch) std::cout << " (epoch " << *v.epoch << ")";
      std::cout << "\n";
    }
  }
  std::cout << "mean_epoch_seconds " << fmt(result.history.mean_epoch_seconds()) << "\n";
  return kOk;
}

int cmd_train(const CLI::App* cmd, const Flags& f) {
  const RunSpec s = resolve_spec(cmd, f);
  if (s.out.empty()) throw UsageError("train: --out (or \"out\" in the spec) is required");
  write_runspec(s, s.out);
  return s.precision == Precision::Double ? train_as<double>(s) : train_as<float>(s);
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw UsageError("unknown split '" + s + "'");
}

struct EvalArgs {
  std::string ckpt, source, split = "test";
  std::size_t limit = 0;
};

template <class T>
Dataset<T> eval_data(const RunSpec& s, const EvalArgs& a) {
  auto d = cast_dataset<T>(load_dataset(s)).subset(parse_split(a.split));
  if (a.limit) d = d.head(a.limit);
  if (d.empty()) throw UsageError("selected split is empty");
  return d;
}

template <class T>
int attack_as(const RunSpec& s, const EvalArgs& a) {
  auto model = load_checkpoint<T>(a.ckpt);
  const auto data = eval_data<T>(s, a);
  const auto cfg = s.attack_config();
  Rng rng(s.seed);
  std::cout << "attack,norm,epsilon,alpha,steps,restarts,examples,accuracy,mean_loss\n";
  std::cout << to_string(cfg.kind) << ',' << to_string(cfg.norm) << ',' << format_double(cfg.epsilon) << ','
            << format_double(cfg.alpha) << ',' << cfg.steps << ',' << cfg.restarts << ',' << data.size() << ',';
  if (!a.source.empty()) {
    auto source = load_checkpoint<T>(a.source);
    std::cout << format_double(transfer_eval(source, model, data, cfg, rng)) << ",\n";
  } else {
    const auto m = evaluate(model, data, cfg, rng);
    std::cout << format_double(m.accuracy) << ',' << format_double(m.mean_loss) << "\n";
  }
  return kOk;
}

template <class T>
int eval_as(const RunSpec& s, const EvalArgs& a) {
  auto model = load_checkpoint<T>(a.ckpt);
  const auto data = eval_data<T>(s, a);
  Rng rng(s.seed);
  const auto m = evaluate(model, data, std::nullopt, rng);
  std::cout << "examples,accuracy,mean_loss\n"
            << data.size() << ',' << format_double(m.accuracy) << ',' << format_double(m.mean_loss) << "\n";
  return kOk;
}

struct AnalyzeArgs {
  std::size_t max_shift = 4, pairs = 1000, probe = 100;
};

template <class T>
int analyze_as(const RunSpec& s, const EvalArgs& a, const AnalyzeArgs& z) {
  auto model = load_checkpoint<T>(a.ckpt);
  const auto data = eval_data<T>(s, a);
  const fs::path out(s.out);
  Rng rng(s.seed);

  const auto sc = shift_consistency(model, data, z.max_shift, z.pairs, rng);
  emit_report(to_report(sc), out / "shift_consistency.csv", ReportFormat::Csv);
  emit_report(to_report(sc), out / "shift_consistency.json", ReportFormat::Json);

  const auto probe = data.head(z.probe);
  const auto trace = layer_aliasing_trace(model, probe.images);
  emit_report(to_report(trace), out / "aliasing.csv", ReportFormat::Csv);
  emit_report(to_report(trace), out / "aliasing.json", ReportFormat::Json);

  const auto cfg = s.attack_config();
  const auto adv = perturb_dataset(model, probe, cfg, rng);
  const auto diff = perturbation_spectrum_diff(probe.images, adv);
  Report pr{"perturbation_spectrum", {"attack", "epsilon", "images", "high_freq_share"}, {}};
  pr.rows.push_back({std::string(to_string(cfg.kind)), cfg.epsilon, static_cast<std::int64_t>(probe.size()),
                     diff.high_freq_share});
  emit_report(pr, out / "perturbation.csv", ReportFormat::Csv);
  emit_report(pr, out / "perturbation.json", ReportFormat::Json);
  const auto first_channel = [](const Tensor<double>& t) {
    Tensor<double> p({1, 1, t.h(), t.w()});
    std::copy_n(t.plane(0, 0).begin(), t.h() * t.w(), p.data().begin());
    return p;
  };
  emit_report(ImageReport{first_channel(diff.mean_spatial), false}, out / "mean_spatial_diff.pgm");
  emit_report(ImageReport{first_channel(diff.mean_spectrum), true}, out / "mean_spectrum_diff.pgm");

  std::cout << "shift_consistency " << fmt(sc.consistency) << "\n";
  for (const auto& l : trace.layers) {
    std::cout << "aliasing layer " << l.layer_index << " " << fmt(l.ratio) << "\n";
  }
  std::cout << "perturbation_high_freq_share " << fmt(diff.high_freq_share) << "\n";
  return kOk;
}

template <class Fn>
int with_checkpoint_precision(const std::string& ckpt, Fn&& fn) {
  const auto p = checkpoint_precision(ckpt);
  if (p == 8) return fn(double{});
  if (p == 4) return fn(float{});
  throw FormatError("unknown precision tag", 6);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FrequencyLowCut pooling: training, attacks and analysis"};
  app.require_subcommand(1);

  Flags train_flags;
  auto* train = app.add_subcommand("train", "clean or fast-FGSM adversarial training");
  add_spec_flags(train, train_flags, true);

  Flags attack_flags;
  EvalArgs attack_args;
  auto* attack = app.add_subcommand("attack", "accuracy under FGSM / PGD / transfer attack");
  add_spec_flags(attack, attack_flags, false);
  attack->add_option("--ckpt", attack_args.ckpt, "checkpoint to attack")->required();
  attack->add_option("--transfer-from", attack_args.source, "craft the attack on this checkpoint instead");
  attack->add_option("--split", attack_args.split, "train | val | test");
  attack->add_option("--limit", attack_args.limit, "use only the first N examples");

  Flags eval_flags;
  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "clean accuracy of a checkpoint");
  add_spec_flags(eval, eval_flags, false);
  eval->add_option("--ckpt", eval_args.ckpt, "checkpoint")->required();
  eval->add_option("--split", eval_args.split, "train | val | test");
  eval->add_option("--limit", eval_args.limit, "use only the first N examples");

  Flags analyze_flags;
  EvalArgs analyze_args;
  AnalyzeArgs analyze_opts;
  auto* analyze = app.add_subcommand("analyze", "shift consistency, aliasing trace, perturbation spectra");
  add_spec_flags(analyze, analyze_flags, false);
  analyze->add_option("--ckpt", analyze_args.ckpt, "checkpoint")->required();
  analyze->add_option("--split", analyze_args.split, "train | val | test");
  analyze->add_option("--limit", analyze_args.limit, "use only the first N examples");
  analyze->add_option("--max-shift", analyze_opts.max_shift, "shift offsets drawn from [0, max_shift)");
  analyze->add_option("--pairs", analyze_opts.pairs, "shift pairs sampled");
  analyze->add_option("--probe", analyze_opts.probe, "images used for the aliasing trace and spectra");

  std::uint64_t selftest_seed = 7;
  auto* selftest = app.add_subcommand("selftest", "run the numerical property suite");
  selftest->add_option("--seed", selftest_seed, "seed for the random instances");

  std::string gc_pooling = "all";
  GradCheckConfig gc;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of MiniCNN input gradients");
  gradcheck->add_option("--pooling", gc_pooling, "pooling kind or 'all'");
  gradcheck->add_option("--coords", gc.coords, "sampled input coordinates");
  gradcheck->add_option("--step", gc.step, "central-difference step");
  gradcheck->add_option("--tolerance", gc.tolerance, "relative error bound");
  gradcheck->add_option("--width", gc.width, "MiniCNN base width");
  gradcheck->add_option("--seed", gc.seed, "seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*train) return cmd_train(train, train_flags);
    if (*attack) {
      const auto s = resolve_spec(attack, attack_flags);
      return with_checkpoint_precision(attack_args.ckpt, [&](auto t) { return attack_as<decltype(t)>(s, attack_args); });
    }
    if (*eval) {
      const auto s = resolve_spec(eval, eval_flags);
      return with_checkpoint_precision(eval_args.ckpt, [&](auto t) { return eval_as<decltype(t)>(s, eval_args); });
    }
    if (*analyze) {
      const auto s = resolve_spec(analyze, analyze_flags);
      if (s.out.empty()) throw UsageError("analyze: --out is required");
      write_runspec(s, s.out);
      return with_checkpoint_precision(
          analyze_args.ckpt, [&](auto t) { return analyze_as<decltype(t)>(s, analyze_args, analyze_opts); });
    }
    if (*selftest) return print_selftest(std::cout, run_selftest(selftest_seed)) ? kOk : kFailed;
    if (*gradcheck) {
      std::vector<PoolingKind> kinds;
      if (gc_pooling == "all") {
        kinds.assign(kAllPoolingKinds.begin(), kAllPoolingKinds.end());
      } else {
        const auto k = parse_pooling_kind(gc_pooling);
        if (!k) throw UsageError("unknown pooling '" + gc_pooling + "'");
        kinds.push_back(*k);
      }
      bool ok = true;
      std::printf("%-10s %8s %8s %12s %12s  %s\n", "pooling", "checked", "skipped", "max_rel", "max_abs", "result");
      for (auto k : kinds) {
        const auto r = gradcheck_minicnn(k, gc);
        std::printf("%-10s %8zu %8zu %12.3e %12.3e  %s\n", std::string(to_string(k)).c_str(), r.checked, r.skipped,
                    r.max_rel_error, r.max_abs_error, r.passed ? "PASS" : "FAIL");
        ok = ok && r.passed;
      }
      return ok ? kOk : kFailed;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kIo;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kUsage;
}
