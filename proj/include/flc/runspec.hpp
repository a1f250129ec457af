#pragma once

// RunSpec: the flat JSON record that fully determines a run, its hash, and
// the dataset / attack / training configs derived from it.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "flc/attacks.hpp"
#include "flc/data.hpp"
#include "flc/nn.hpp"
#include "flc/pooling.hpp"
#include "flc/training.hpp"

namespace flc {

/// Parses "8/255", "0.5", "1e-3". A fraction is evaluated as one correctly rounded
/// division of its two parsed operands, so "8/255" == 8.0 / 255.0 exactly.
inline double parse_fraction(std::string_view s) {
  const auto parse = [&](std::string_view part) {
    double v = 0.0;
    const auto* end = part.data() + part.size();
    auto [ptr, ec] = std::from_chars(part.data(), end, v);
    if (ec != std::errc() || ptr != end || part.empty()) {
      throw std::invalid_argument("not a number: '" + std::string(s) + "'");
    }
    return v;
  };
  const auto slash = s.find('/');
  if (slash == std::string_view::npos) return parse(s);
  const double den = parse(s.substr(slash + 1));
  if (den == 0.0) throw std::invalid_argument("zero denominator in '" + std::string(s) + "'");
  return parse(s.substr(0, slash)) / den;
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

enum class Precision { Single, Double };

struct RunSpec {
  std::string dataset = "synth";
  std::uint64_t synth_seed = 0;
  std::size_t synth_train = 2000;
  std::size_t val_size = 256;
  std::size_t synth_test = 512;
  SynthConfig synth{};

  PoolingKind pooling = PoolingKind::Flc;
  std::size_t width = 8;

  std::string training = "fgsm";  ///< "fgsm" (fast-FGSM AT) or "clean"
  std::size_t epochs = 60;
  std::size_t batch_size = 128;
  double lr_max = 0.2;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 1;
  bool track_robustness = true;
  std::size_t pgd_val_size = 256;
  int pgd_val_steps = 10;
  int pgd_val_restarts = 1;
  std::optional<double> early_stop_threshold;

  std::string attack = "fast-fgsm";  ///< training attack for `train`, evaluated attack for `attack`
  double epsilon = 8.0 / 255.0;
  double alpha = 10.0 / 255.0;
  int steps = 50;
  int restarts = 10;
  Norm norm = Norm::Linf;

  Precision precision = Precision::Single;
  bool record_timing = false;
  std::string out;  ///< output directory; not part of the hash

  AttackConfig attack_config() const {
    AttackConfig c;
    if (attack == "fgsm") c = AttackConfig::fgsm(epsilon);
    else if (attack == "fast-fgsm") c = AttackConfig::fast_fgsm(epsilon, alpha);
    else if (attack == "pgd") c = AttackConfig::pgd(epsilon, alpha, steps, restarts);
    else throw std::invalid_argument("unknown attack '" + attack + "'");
    c.norm = norm;
    c.validate();
    return c;
  }

  TrainConfig train_config() const {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.lr_max = lr_max;
    c.momentum = momentum;
    c.weight_decay = weight_decay;
    c.seed = seed;
    c.track_robustness = track_robustness;
    c.eval_epsilon = epsilon;
    c.pgd_val_size = pgd_val_size;
    c.pgd_val_steps = pgd_val_steps;
    c.pgd_val_restarts = pgd_val_restarts;
    c.early_stop_threshold = early_stop_threshold;
    c.validate();
    return c;
  }

  MiniCnnSpec model_spec(const Dataset<double>& d) const {
    MiniCnnSpec m;
    m.pooling = pooling;
    m.width = width;
    m.in_channels = d.images.c();
    m.classes = d.classes;
    m.input_h = d.images.h();
    m.input_w = d.images.w();
    return m;
  }

  void validate() const {
    if (training != "fgsm" && training != "clean") throw std::invalid_argument("training must be 'fgsm' or 'clean'");
    attack_config();
    train_config();
    if (width < 1) throw std::invalid_argument("width must be >= 1");
  }
};

inline nlohmann::json to_json(const RunSpec& s, bool include_out = true) {
  nlohmann::json j;
  j["dataset"] = s.dataset;
  j["synth_seed"] = s.synth_seed;
  j["synth_train"] = s.synth_train;
  j["synth_test"] = s.synth_test;
  j["val_size"] = s.val_size;
  j["synth_classes"] = s.synth.classes;
  j["synth_size"] = s.synth.size;
  j["synth_signal_amp"] = s.synth.signal_amp;
  j["synth_texture_amp"] = s.synth.texture_amp;
  j["synth_noise_amp"] = s.synth.noise_amp;
  j["synth_hf_cue_amp"] = s.synth.hf_cue_amp;
  j["synth_signal_spread"] = s.synth.signal_spread;
  j["pooling"] = std::string(to_string(s.pooling));
  j["width"] = s.width;
  j["training"] = s.training;
  j["epochs"] = s.epochs;
  j["batch_size"] = s.batch_size;
  j["lr_max"] = s.lr_max;
  j["momentum"] = s.momentum;
  j["weight_decay"] = s.weight_decay;
  j["seed"] = s.seed;
  j["track_robustness"] = s.track_robustness;
  j["pgd_val_size"] = s.pgd_val_size;
  j["pgd_val_steps"] = s.pgd_val_steps;
  j["pgd_val_restarts"] = s.pgd_val_restarts;
  j["early_stop_threshold"] = s.early_stop_threshold ? nlohmann::json(*s.early_stop_threshold) : nlohmann::json();
  j["attack"] = s.attack;
  j["epsilon"] = s.epsilon;
  j["alpha"] = s.alpha;
  j["steps"] = s.steps;
  j["restarts"] = s.restarts;
  j["norm"] = std::string(to_string(s.norm));
  j["precision"] = s.precision == Precision::Single ? "single" : "double";
  j["record_timing"] = s.record_timing;
  if (include_out) j["out"] = s.out;
  return j;
}

/// Hash over every field except the output directory, as 16 hex digits.
inline std::string runspec_hash(const RunSpec& s) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(s, false).dump())));
  return buf;
}

namespace detail {

inline double json_fraction(const nlohmann::json& v) {
  if (v.is_string()) return parse_fraction(v.get<std::string>());
  if (v.is_number()) return v.get<double>();
  throw std::invalid_argument("expected a number or fraction string");
}

}  // namespace detail

/// Overlays the keys present in `j` onto `s`. Unknown keys are rejected; "hash", as
/// written next to a run's outputs, is ignored so that file can be fed back in.
inline void apply_json(RunSpec& s, const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("run spec must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "dataset") s.dataset = v.get<std::string>();
      else if (key == "synth_seed") s.synth_seed = v.get<std::uint64_t>();
      else if (key == "synth_train") s.synth_train = v.get<std::size_t>();
      else if (key == "synth_test") s.synth_test = v.get<std::size_t>();
      else if (key == "val_size") s.val_size = v.get<std::size_t>();
      else if (key == "synth_classes") s.synth.classes = v.get<std::size_t>();
      else if (key == "synth_size") s.synth.size = v.get<std::size_t>();
      else if (key == "synth_signal_amp") s.synth.signal_amp = detail::json_fraction(v);
      else if (key == "synth_texture_amp") s.synth.texture_amp = detail::json_fraction(v);
      else if (key == "synth_noise_amp") s.synth.noise_amp = detail::json_fraction(v);
      else if (key == "synth_hf_cue_amp") s.synth.hf_cue_amp = detail::json_fraction(v);
      else if (key == "synth_signal_spread") s.synth.signal_spread = detail::json_fraction(v);
      else if (key == "pooling") {
        auto k = parse_pooling_kind(v.get<std::string>());
        if (!k) throw std::invalid_argument("unknown pooling '" + v.get<std::string>() + "'");
        s.pooling = *k;
      } else if (key == "width") s.width = v.get<std::size_t>();
      else if (key == "training") s.training = v.get<std::string>();
      else if (key == "epochs") s.epochs = v.get<std::size_t>();
      else if (key == "batch_size") s.batch_size = v.get<std::size_t>();
      else if (key == "lr_max") s.lr_max = detail::json_fraction(v);
      else if (key == "momentum") s.momentum = detail::json_fraction(v);
      else if (key == "weight_decay") s.weight_decay = detail::json_fraction(v);
      else if (key == "seed") s.seed = v.get<std::uint64_t>();
      else if (key == "track_robustness") s.track_robustness = v.get<bool>();
      else if (key == "pgd_val_size") s.pgd_val_size = v.get<std::size_t>();
      else if (key == "pgd_val_steps") s.pgd_val_steps = v.get<int>();
      else if (key == "pgd_val_restarts") s.pgd_val_restarts = v.get<int>();
      else if (key == "early_stop_threshold") {
        s.early_stop_threshold = v.is_null() ? std::nullopt : std::optional<double>(detail::json_fraction(v));
      } else if (key == "attack") s.attack = v.get<std::string>();
      else if (key == "epsilon") s.epsilon = detail::json_fraction(v);
      else if (key == "alpha") s.alpha = detail::json_fraction(v);
      else if (key == "steps") s.steps = v.get<int>();
      else if (key == "restarts") s.restarts = v.get<int>();
      else if (key == "norm") {
        const auto n = v.get<std::string>();
        if (n != "linf" && n != "l2") throw std::invalid_argument("unknown norm '" + n + "'");
        s.norm = n == "linf" ? Norm::Linf : Norm::L2;
      } else if (key == "precision") {
        const auto p = v.get<std::string>();
        if (p != "single" && p != "double") throw std::invalid_argument("unknown precision '" + p + "'");
        s.precision = p == "single" ? Precision::Single : Precision::Double;
      } else if (key == "record_timing") s.record_timing = v.get<bool>();
      else if (key == "out") s.out = v.get<std::string>();
      else if (key == "hash") continue;
      else throw std::invalid_argument("unknown key");
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("run spec key '" + key + "': " + e.what());
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("run spec key '" + key + "': " + e.what());
    }
  }
}

inline RunSpec runspec_from_json(const nlohmann::json& j) {
  RunSpec s;
  apply_json(s, j);
  return s;
}

namespace detail {

inline std::vector<std::string> split_paths(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto end = comma == std::string_view::npos ? s.size() : comma;
    out.emplace_back(s.substr(start, end - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline void tag_tail(Dataset<double>& d, Split from, Split to, std::size_t count) {
  std::size_t marked = 0;
  for (std::size_t i = d.size(); i-- > 0 && marked < count;) {
    if (d.splits[i] == from) {
      d.splits[i] = to;
      ++marked;
    }
  }
}

}  // namespace detail

/// Loads the dataset named by the run spec, with train/val/test tags:
///   synth                        generated corpus
///   idx:IMG,LAB[,TEST_IMG,TEST_LAB]
///   cifar:TRAIN_BIN[,TEST_BIN]
/// Without a test file, the last fifth of the training examples becomes the test split.
/// Validation is taken from the tail of the training split.
inline Dataset<double> load_dataset(const RunSpec& s) {
  if (s.dataset == "synth") {
    return synth_corpus(s.synth_seed, s.synth, SynthSplits{s.synth_train, s.val_size, s.synth_test});
  }
  const auto colon = s.dataset.find(':');
  if (colon == std::string::npos) throw std::invalid_argument("unknown dataset '" + s.dataset + "'");
  const std::string kind = s.dataset.substr(0, colon);
  const auto paths = detail::split_paths(std::string_view(s.dataset).substr(colon + 1));
  Dataset<double> d;
  bool has_test = false;
  if (kind == "idx") {
    if (paths.size() != 2 && paths.size() != 4) throw std::invalid_argument("idx: expected 2 or 4 comma-separated paths");
    d = load_idx(paths[0], paths[1], Split::Train);
    if (paths.size() == 4) {
      d = concat(d, load_idx(paths[2], paths[3], Split::Test));
      has_test = true;
    }
  } else if (kind == "cifar") {
    if (paths.size() != 1 && paths.size() != 2) throw std::invalid_argument("cifar: expected 1 or 2 paths");
    d = load_cifar_binary(paths[0], Split::Train);
    if (paths.size() == 2) {
      d = concat(d, load_cifar_binary(paths[1], Split::Test));
      has_test = true;
    }
  } else {
    throw std::invalid_argument("unknown dataset kind '" + kind + "'");
  }
  const std::size_t n_train = d.subset(Split::Train).size();
  if (!has_test) detail::tag_tail(d, Split::Train, Split::Test, n_train / 5);
  detail::tag_tail(d, Split::Train, Split::Val, std::min(s.val_size, d.subset(Split::Train).size() / 2));
  d.provenance = s.dataset;
  return d;
}

/// The `train` pipeline: MiniCNN seeded by s.seed, clean or fast-FGSM training per the run spec.
template <class T>
TrainResult<T> train_from_spec(const RunSpec& s, const Dataset<double>& raw) {
  const auto data = cast_dataset<T>(raw);
  auto model = build_minicnn<T>(s.model_spec(raw), s.seed);
  const auto cfg = s.train_config();
  return s.training == "clean" ? train_clean(std::move(model), data, cfg)
                               : train_fgsm_at(std::move(model), data, cfg, s.attack_config());
}

}  // namespace flc
