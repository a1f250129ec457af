#pragma once

// Dataset ingestion (IDX / CIFAR binary) and the synthetic desk-scale corpus.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "flc/checkpoint.hpp"
#include "flc/dataset.hpp"
#include "flc/errors.hpp"
#include "flc/rng.hpp"
#include "flc/spectral.hpp"

namespace flc {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr std::size_t kCifarRecordBytes = 1 + 3 * 32 * 32;

namespace detail {

inline std::uint32_t read_be32(const std::vector<char>& b, std::size_t at, const char* what) {
  if (b.size() < at + 4) throw FormatError(std::string("truncated file while reading ") + what, b.size());
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(b[at + i]);
  return v;
}

inline void put_be32(std::vector<char>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<char>((v >> s) & 0xFF));
}

}  // namespace detail

/// Parse IDX image/label byte buffers (MNIST layout). Pixels are scaled by 1/255.
inline Dataset<double> parse_idx(const std::vector<char>& images, const std::vector<char>& labels,
                                 Split split = Split::Train) {
  if (detail::read_be32(images, 0, "image magic") != kIdxImageMagic) throw FormatError("bad IDX image magic", 0);
  if (detail::read_be32(labels, 0, "label magic") != kIdxLabelMagic) throw FormatError("bad IDX label magic", 0);
  const std::uint32_t n = detail::read_be32(images, 4, "image count");
  const std::uint32_t rows = detail::read_be32(images, 8, "row count");
  const std::uint32_t cols = detail::read_be32(images, 12, "column count");
  const std::uint32_t n_labels = detail::read_be32(labels, 4, "label count");
  if (n != n_labels) {
    throw FormatError("image count " + std::to_string(n) + " does not match label count " + std::to_string(n_labels), 4);
  }
  const std::size_t pixels = static_cast<std::size_t>(n) * rows * cols;
  if (images.size() != 16 + pixels) {
    throw FormatError("image payload has " + std::to_string(images.size() - 16) + " bytes, header promises " +
                          std::to_string(pixels),
                      std::min(images.size(), 16 + pixels));
  }
  if (labels.size() != 8 + static_cast<std::size_t>(n)) {
    throw FormatError("label payload has " + std::to_string(labels.size() - 8) + " bytes, header promises " +
                          std::to_string(n),
                      std::min(labels.size(), 8 + static_cast<std::size_t>(n)));
  }
  Dataset<double> d;
  d.images = Tensor<double>({n, 1, rows, cols});
  for (std::size_t i = 0; i < pixels; ++i) d.images[i] = static_cast<unsigned char>(images[16 + i]) / 255.0;
  int max_label = -1;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels.push_back(static_cast<unsigned char>(labels[8 + i]));
    max_label = std::max(max_label, d.labels.back());
  }
  d.splits.assign(n, split);
  d.classes = static_cast<std::size_t>(std::max(max_label + 1, 2));
  d.provenance = "idx";
  return d;
}

inline Dataset<double> load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                                Split split = Split::Train) {
  auto d = parse_idx(read_file_bytes(images_path), read_file_bytes(labels_path), split);
  d.provenance = "idx:" + images_path.string() + "," + labels_path.string();
  return d;
}

/// Serialize to IDX byte buffers; pixels are rounded to u8 after scaling by 255.
inline std::pair<std::vector<char>, std::vector<char>> encode_idx(const Dataset<double>& d) {
  std::vector<char> img, lab;
  detail::put_be32(img, kIdxImageMagic);
  detail::put_be32(img, static_cast<std::uint32_t>(d.size()));
  detail::put_be32(img, static_cast<std::uint32_t>(d.images.h()));
  detail::put_be32(img, static_cast<std::uint32_t>(d.images.w()));
  for (double v : d.images.data()) img.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  detail::put_be32(lab, kIdxLabelMagic);
  detail::put_be32(lab, static_cast<std::uint32_t>(d.size()));
  for (int l : d.labels) lab.push_back(static_cast<char>(l));
  return {img, lab};
}

/// CIFAR binary records: 1 label byte + 3072 channel-major pixel bytes.
inline Dataset<double> parse_cifar_binary(const std::vector<char>& bytes, Split split = Split::Train,
                                          std::size_t classes = 10) {
  if (bytes.size() % kCifarRecordBytes != 0) {
    throw FormatError("file size " + std::to_string(bytes.size()) + " is not a multiple of 3073",
                      bytes.size() - bytes.size() % kCifarRecordBytes);
  }
  const std::size_t n = bytes.size() / kCifarRecordBytes;
  Dataset<double> d;
  d.images = Tensor<double>({n, 3, 32, 32});
  d.classes = classes;
  d.provenance = "cifar";
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t at = i * kCifarRecordBytes;
    const int label = static_cast<unsigned char>(bytes[at]);
    if (static_cast<std::size_t>(label) >= classes) throw FormatError("label out of range", at);
    d.labels.push_back(label);
    for (std::size_t p = 0; p < 3072; ++p) {
      d.images[i * 3072 + p] = static_cast<unsigned char>(bytes[at + 1 + p]) / 255.0;
    }
  }
  d.splits.assign(n, split);
  return d;
}

inline Dataset<double> load_cifar_binary(const std::filesystem::path& path, Split split = Split::Train) {
  auto d = parse_cifar_binary(read_file_bytes(path), split);
  d.provenance = "cifar:" + path.string();
  return d;
}

inline std::vector<char> encode_cifar_binary(const Dataset<double>& d) {
  if (d.images.c() != 3 || d.images.h() != 32 || d.images.w() != 32) {
    throw std::invalid_argument("encode_cifar_binary: images must be [N,3,32,32]");
  }
  std::vector<char> out;
  out.reserve(d.size() * kCifarRecordBytes);
  for (std::size_t i = 0; i < d.size(); ++i) {
    out.push_back(static_cast<char>(d.labels[i]));
    for (std::size_t p = 0; p < 3072; ++p) {
      out.push_back(static_cast<char>(std::lround(std::clamp(d.images[i * 3072 + p], 0.0, 1.0) * 255.0)));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic corpus: class identity lives in low-frequency tones that FLC passes
// untouched, nuisance texture lives strictly above the cutoff.

struct SynthConfig {
  std::size_t classes = 4;
  std::size_t size = 16;
  std::size_t channels = 1;
  double signal_amp = 0.05;   ///< amplitude of the class tone
  double texture_amp = 0.3;   ///< max |texture| per image
  double noise_amp = 0.02;    ///< broadband uniform noise half-width
  double hf_cue_amp = 0.0;    ///< max |class-specific pattern| above the cutoff
  double signal_spread = 0.0; ///< per-image tone amplitude drawn from signal_amp * [1 - s, 1 + s]
  double background = 0.5;
};

/// Signed (row, column) frequencies of the class tones; all lie strictly inside the
/// symmetric part of the kept window, so flc_pool reproduces them as exact samples.
inline std::vector<std::pair<int, int>> synth_class_tones(std::size_t classes, std::size_t size) {
  const int limit = static_cast<int>(size / 4) - 1;  // |f| <= limit is inside the symmetric band
  std::vector<std::pair<int, int>> tones;
  for (int radius = 1; radius <= 2 * limit && tones.size() < classes; ++radius) {
    for (int k = 0; k <= limit && tones.size() < classes; ++k) {
      for (int l = -limit; l <= limit && tones.size() < classes; ++l) {
        if (std::abs(k) + std::abs(l) != radius) continue;
        if (k == 0 && l <= 0) continue;  // one of each conjugate pair
        tones.emplace_back(k, l);
      }
    }
  }
  if (tones.size() < classes) throw std::invalid_argument("synth: not enough low-frequency tones for class count");
  return tones;
}

/// Class pattern in [-1, 1]: cos(2 pi (k m + l n)/S + phase_c).
inline Tensor<double> synth_class_pattern(std::size_t cls, std::size_t classes, std::size_t size) {
  const auto tones = synth_class_tones(classes, size);
  const auto [k, l] = tones[cls];
  const double phase = 2.0 * std::numbers::pi * static_cast<double>(cls) / static_cast<double>(classes);
  Tensor<double> p({1, 1, size, size});
  for (std::size_t m = 0; m < size; ++m) {
    for (std::size_t n = 0; n < size; ++n) {
      p(0, 0, m, n) = std::cos(2.0 * std::numbers::pi * (k * static_cast<double>(m) + l * static_cast<double>(n)) /
                                   static_cast<double>(size) +
                               phase);
    }
  }
  return p;
}

/// White noise with every bin that flc_pool reads (and its conjugate partner) removed,
/// scaled so that max |value| = 1. flc_pool maps it to exactly zero.
inline Tensor<double> synth_texture(Rng& rng, std::size_t size) {
  Tensor<double> white = normal<double>(rng, {1, 1, size, size}, 0.0, 1.0);
  auto F = fft2(white);
  const CutoffSpec cut = CutoffSpec::for_extents(size, size);
  for (std::size_t k = 0; k < size; ++k) {
    for (std::size_t l = 0; l < size; ++l) {
      if (cut.keeps_origin(k, l) || cut.keeps_origin((size - k) % size, (size - l) % size)) F(0, 0, k, l) = 0.0;
    }
  }
  Tensor<double> t = real_part(ifft2(std::move(F)));
  const double m = max_abs(t);
  return m > 0.0 ? scale(t, 1.0 / m) : t;
}

/// Fixed high-frequency pattern of one class (same construction as the texture, drawn
/// from a class-keyed stream so it does not depend on the dataset seed).
inline Tensor<double> synth_hf_cue(std::size_t cls, std::size_t size) {
  Rng rng(0x9e3779b97f4a7c15ULL ^ (cls + 1));
  return synth_texture(rng, size);
}

/// `n` balanced examples (labels cycle through the classes, then shuffled), all tagged `split`.
inline Dataset<double> synth_dataset(Rng& rng, std::size_t n, const SynthConfig& cfg, Split split = Split::Train) {
  if (cfg.size < 8 || cfg.classes < 2 || cfg.channels < 1) {
    throw std::invalid_argument("synth: size >= 8, classes >= 2 and channels >= 1 required");
  }
  if (cfg.signal_amp < 0 || cfg.texture_amp < 0 || cfg.noise_amp < 0) {
    throw std::invalid_argument("synth: amplitudes must be non-negative");
  }
  if (cfg.hf_cue_amp < 0) throw std::invalid_argument("synth: amplitudes must be non-negative");
  if (cfg.signal_spread < 0 || cfg.signal_spread > 1) throw std::invalid_argument("synth: signal_spread must lie in [0, 1]");
  std::vector<Tensor<double>> patterns, cues;
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    patterns.push_back(synth_class_pattern(c, cfg.classes, cfg.size));
    cues.push_back(synth_hf_cue(c, cfg.size));
  }

  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % cfg.classes);
  rng.shuffle(std::span<int>(labels));

  const std::size_t S = cfg.size, plane = S * S;
  Dataset<double> d;
  d.images = Tensor<double>({n, cfg.channels, S, S});
  d.labels = labels;
  d.splits.assign(n, split);
  d.classes = cfg.classes;
  d.provenance = "synth";
  for (std::size_t i = 0; i < n; ++i) {
    const auto& pat = patterns[static_cast<std::size_t>(labels[i])];
    const auto& cue = cues[static_cast<std::size_t>(labels[i])];
    const double amp =
        cfg.signal_spread > 0 ? cfg.signal_amp * rng.uniform(1.0 - cfg.signal_spread, 1.0 + cfg.signal_spread) : cfg.signal_amp;
    for (std::size_t c = 0; c < cfg.channels; ++c) {
      const Tensor<double> tex = cfg.texture_amp > 0 ? synth_texture(rng, S) : Tensor<double>({1, 1, S, S});
      auto dst = d.images.plane(i, c);
      for (std::size_t p = 0; p < plane; ++p) {
        const double noise = cfg.noise_amp > 0 ? rng.uniform(-cfg.noise_amp, cfg.noise_amp) : 0.0;
        dst[p] = std::clamp(cfg.background + amp * pat[p] + cfg.hf_cue_amp * cue[p] +
                                cfg.texture_amp * tex[p] + noise, 0.0, 1.0);
      }
    }
  }
  return d;
}

struct SynthSplits {
  std::size_t train = 2000;
  std::size_t val = 256;
  std::size_t test = 512;
};

/// Disjoint train/val/test corpus drawn from one seeded stream.
inline Dataset<double> synth_corpus(std::uint64_t seed, const SynthConfig& cfg = {}, const SynthSplits& sizes = {}) {
  Rng rng(seed);
  auto train = synth_dataset(rng, sizes.train, cfg, Split::Train);
  auto val = synth_dataset(rng, sizes.val, cfg, Split::Val);
  auto test = synth_dataset(rng, sizes.test, cfg, Split::Test);
  auto all = concat(concat(train, val), test);
  all.provenance = "synth:seed=" + std::to_string(seed);
  return all;
}

}  // namespace flc
