#pragma once

// Post-hoc analyzers: shift consistency, per-layer aliasing, perturbation spectra,
// and report emission (CSV / JSON / PGM).

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "flc/attacks.hpp"
#include "flc/dataset.hpp"
#include "flc/errors.hpp"
#include "flc/nn.hpp"
#include "flc/pooling.hpp"
#include "flc/rng.hpp"
#include "flc/spectral.hpp"

namespace flc {

// ---------------------------------------------------------------------------
// Shift consistency

struct ClassConsistency {
  int label = 0;
  std::size_t pairs = 0;
  std::size_t consistent = 0;
  double consistency() const { return pairs ? static_cast<double>(consistent) / static_cast<double>(pairs) : 0.0; }
};

struct ShiftConsistencyReport {
  std::size_t max_shift = 0;
  std::size_t pairs_sampled = 0;
  double consistency = 0.0;
  std::vector<ClassConsistency> per_class;  ///< indexed by true label
};

/// Samples `pairs` images (uniformly, with replacement); each gets two independent circular
/// shifts with offsets uniform in [0, max_shift)^2. Consistency = fraction of pairs whose
/// argmax predictions agree.
template <class T>
ShiftConsistencyReport shift_consistency(Model<T>& model, const Dataset<T>& data, std::size_t max_shift,
                                         std::size_t pairs, Rng& rng) {
  if (data.empty()) throw std::invalid_argument("shift_consistency: empty dataset");
  if (max_shift < 1) throw std::invalid_argument("shift_consistency: max_shift must be >= 1");
  if (model.mode() != Mode::Eval) throw std::logic_error("shift_consistency: model must be in Eval mode");

  ShiftConsistencyReport r;
  r.max_shift = max_shift;
  r.pairs_sampled = pairs;
  r.per_class.resize(data.classes);
  for (std::size_t c = 0; c < data.classes; ++c) r.per_class[c].label = static_cast<int>(c);

  const auto& img = data.images;
  const std::size_t per_image = img.c() * img.h() * img.w();
  std::size_t agree = 0;
  for (std::size_t start = 0; start < pairs; start += kAttackBatch) {
    const std::size_t b = std::min(kAttackBatch, pairs - start);
    Tensor<T> a({b, img.c(), img.h(), img.w()}), c({b, img.c(), img.h(), img.w()});
    std::vector<int> labels(b);
    for (std::size_t i = 0; i < b; ++i) {
      const std::size_t idx = rng.uniform_int(data.size());
      labels[i] = data.labels[idx];
      const Tensor<T> one = img.batch_slice(idx, idx + 1);
      const auto s1h = static_cast<std::ptrdiff_t>(rng.uniform_int(max_shift));
      const auto s1w = static_cast<std::ptrdiff_t>(rng.uniform_int(max_shift));
      const auto s2h = static_cast<std::ptrdiff_t>(rng.uniform_int(max_shift));
      const auto s2w = static_cast<std::ptrdiff_t>(rng.uniform_int(max_shift));
      const auto x1 = circular_shift(one, s1h, s1w);
      const auto x2 = circular_shift(one, s2h, s2w);
      std::copy(x1.data().begin(), x1.data().end(), a.data().begin() + static_cast<std::ptrdiff_t>(i * per_image));
      std::copy(x2.data().begin(), x2.data().end(), c.data().begin() + static_cast<std::ptrdiff_t>(i * per_image));
    }
    const auto pa = predict(model, a);
    const auto pc = predict(model, c);
    for (std::size_t i = 0; i < b; ++i) {
      auto& cls = r.per_class[static_cast<std::size_t>(labels[i])];
      ++cls.pairs;
      if (pa[i] == pc[i]) {
        ++cls.consistent;
        ++agree;
      }
    }
  }
  r.consistency = pairs ? static_cast<double>(agree) / static_cast<double>(pairs) : 1.0;
  return r;
}

// ---------------------------------------------------------------------------
// Aliasing trace

struct LayerAliasing {
  std::size_t layer_index = 0;
  PoolingKind pooling = PoolingKind::Flc;
  Shape input_shape{};
  double ratio = 0.0;  ///< mean per-slice above-Nyquist energy ratio of the layer input
};

struct AliasingReport {
  std::vector<LayerAliasing> layers;
};

template <class T>
AliasingReport layer_aliasing_trace(Model<T>& model, const Tensor<T>& probe) {
  if (model.mode() != Mode::Eval) throw std::logic_error("layer_aliasing_trace: model must be in Eval mode");
  if (!model.pooling()) throw std::invalid_argument("layer_aliasing_trace: model has no pooling layers");
  AliasingReport r;
  model.forward(probe, [&](std::size_t i, const Layer<T>& layer, const Tensor<T>& input) {
    if (const auto* pool = std::get_if<Pool<T>>(&layer)) {
      r.layers.push_back({i, pool->kind, input.shape(), above_nyquist_energy(input).mean});
    }
  });
  return r;
}

// ---------------------------------------------------------------------------
// Alias contribution of a pooling operator

/// Keeps only the bins flc_pool reads plus their conjugate partners, so the result stays real.
template <class T>
Tensor<T> band_limit(const Tensor<T>& x) {
  auto F = fft2(x);
  const CutoffSpec cut = CutoffSpec::for_extents(x.h(), x.w());
  const std::size_t H = x.h(), W = x.w();
  for (std::size_t n = 0; n < F.n(); ++n) {
    for (std::size_t c = 0; c < F.c(); ++c) {
      auto p = F.plane(n, c);
      for (std::size_t k = 0; k < H; ++k) {
        for (std::size_t l = 0; l < W; ++l) {
          if (!cut.keeps_origin(k, l) && !cut.keeps_origin((H - k) % H, (W - l) % W)) p[k * W + l] = {T(0), T(0)};
        }
      }
    }
  }
  return real_part(ifft2(std::move(F)));
}

/// ||P(x) - P(band_limit(x))||^2 / ||P(x)||^2: share of the pooled output that is
/// produced by content above the cutoff (aliased into the output band).
template <class T>
double alias_energy(PoolingKind kind, const Tensor<T>& x) {
  const auto y = pool_forward(kind, x);
  const auto y_low = pool_forward(kind, band_limit(x));
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = static_cast<double>(y[i]) - static_cast<double>(y_low[i]);
    num += d * d;
    den += static_cast<double>(y[i]) * static_cast<double>(y[i]);
  }
  return den > 0.0 ? num / den : 0.0;
}

// ---------------------------------------------------------------------------
// Perturbation spectra

struct SpectrumDiff {
  Tensor<double> spatial;        ///< x_adv - x
  Tensor<double> spectrum;       ///< |fft2(x_adv)| - |fft2(x)|, DC centered
  Tensor<double> mean_spatial;   ///< [1, C, H, W] average over the batch
  Tensor<double> mean_spectrum;  ///< [1, C, H, W] average over the batch
  double high_freq_share = 0.0;  ///< energy of (x_adv - x) outside the kept window / total
};

template <class T>
SpectrumDiff perturbation_spectrum_diff(const Tensor<T>& x, const Tensor<T>& x_adv) {
  if (x.shape() != x_adv.shape()) {
    throw std::invalid_argument("perturbation_spectrum_diff: shape mismatch " + to_string(x.shape()) + " vs " +
                                to_string(x_adv.shape()));
  }
  const auto xd = cast<double>(x);
  const auto ad = cast<double>(x_adv);
  SpectrumDiff r;
  r.spatial = sub(ad, xd);
  r.spectrum = sub(magnitude(fftshift(fft2(ad))), magnitude(fftshift(fft2(xd))));
  const std::size_t N = x.n(), C = x.c(), H = x.h(), W = x.w();
  r.mean_spatial = Tensor<double>({N ? 1u : 0u, C, H, W});
  r.mean_spectrum = Tensor<double>({N ? 1u : 0u, C, H, W});
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t i = 0; i < C * H * W; ++i) {
      r.mean_spatial[i] += r.spatial[n * C * H * W + i] / static_cast<double>(N);
      r.mean_spectrum[i] += r.spectrum[n * C * H * W + i] / static_cast<double>(N);
    }
  }
  if (H >= 2 && W >= 2 && N > 0) r.high_freq_share = above_nyquist_energy(r.spatial).aggregate;
  return r;
}

// ---------------------------------------------------------------------------
// Reports

enum class ReportFormat { Csv, Json, Pgm };

inline std::optional<ReportFormat> parse_report_format(std::string_view s) {
  if (s == "csv") return ReportFormat::Csv;
  if (s == "json") return ReportFormat::Json;
  if (s == "pgm") return ReportFormat::Pgm;
  return std::nullopt;
}

/// A flat table: one header row, numeric or text cells.
struct Report {
  using Cell = std::variant<double, std::int64_t, std::string>;
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;
};

/// A single plane rendered as an 8-bit grayscale image.
struct ImageReport {
  Tensor<double> image;  ///< [1, 1, H, W]
  bool log_scale = false;
};

inline Report to_report(const ShiftConsistencyReport& s) {
  Report r{"shift_consistency", {"label", "pairs", "consistent", "consistency"}, {}};
  for (const auto& c : s.per_class) {
    r.rows.push_back({std::int64_t{c.label}, static_cast<std::int64_t>(c.pairs), static_cast<std::int64_t>(c.consistent),
                      c.consistency()});
  }
  r.rows.push_back({std::string("all"), static_cast<std::int64_t>(s.pairs_sampled),
                    static_cast<std::int64_t>(std::llround(s.consistency * static_cast<double>(s.pairs_sampled))),
                    s.consistency});
  return r;
}

inline Report to_report(const AliasingReport& a) {
  Report r{"aliasing_trace", {"layer", "pooling", "channels", "height", "width", "above_nyquist_ratio"}, {}};
  for (const auto& l : a.layers) {
    r.rows.push_back({static_cast<std::int64_t>(l.layer_index), std::string(to_string(l.pooling)),
                      static_cast<std::int64_t>(l.input_shape[1]), static_cast<std::int64_t>(l.input_shape[2]),
                      static_cast<std::int64_t>(l.input_shape[3]), l.ratio});
  }
  return r;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

inline std::ofstream open_for_write(const std::filesystem::path& path, bool binary) {
  std::ofstream os(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  return os;
}

}  // namespace detail

inline std::string render_csv(const Report& r) {
  std::string out;
  for (std::size_t i = 0; i < r.columns.size(); ++i) out += (i ? "," : "") + detail::csv_escape(r.columns[i]);
  out += '\n';
  for (const auto& row : r.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ',';
      std::visit(
          [&](const auto& v) {
            using V = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<V, double>) out += format_double(v);
            else if constexpr (std::is_same_v<V, std::int64_t>) out += std::to_string(v);
            else out += detail::csv_escape(v);
          },
          row[i]);
    }
    out += '\n';
  }
  return out;
}

/// {"name": ..., "columns": [...], "rows": [{column: value, ...}, ...]}; keys sorted.
inline nlohmann::json to_json(const Report& r) {
  nlohmann::json j;
  j["name"] = r.name;
  j["columns"] = r.columns;
  j["rows"] = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json o = nlohmann::json::object();
    for (std::size_t i = 0; i < row.size() && i < r.columns.size(); ++i) {
      std::visit([&](const auto& v) { o[r.columns[i]] = v; }, row[i]);
    }
    j["rows"].push_back(std::move(o));
  }
  return j;
}

/// 8-bit bytes of a plane: optional sign(v)*log1p(|v|), then min-max to [0, 255].
/// A constant plane maps to 0 everywhere.
inline std::vector<unsigned char> pgm_pixels(const ImageReport& img) {
  std::vector<double> v(img.image.data().begin(), img.image.data().end());
  if (img.log_scale) {
    for (double& x : v) x = std::copysign(std::log1p(std::abs(x)), x);
  }
  std::vector<unsigned char> px(v.size(), 0);
  if (v.empty()) return px;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return px;
  for (std::size_t i = 0; i < v.size(); ++i) {
    px[i] = static_cast<unsigned char>(std::lround((v[i] - *lo) / range * 255.0));
  }
  return px;
}

inline void emit_report(const Report& r, const std::filesystem::path& path, ReportFormat fmt) {
  if (fmt == ReportFormat::Pgm) throw std::invalid_argument("emit_report: tables cannot be written as PGM");
  auto os = detail::open_for_write(path, false);
  if (fmt == ReportFormat::Csv) os << render_csv(r);
  else os << to_json(r).dump(2) << '\n';
  if (!os) throw IoError("failed writing " + path.string());
}

inline void emit_report(const ImageReport& img, const std::filesystem::path& path, ReportFormat fmt = ReportFormat::Pgm) {
  if (fmt != ReportFormat::Pgm) throw std::invalid_argument("emit_report: images are written as PGM only");
  if (img.image.n() != 1 || img.image.c() != 1) throw std::invalid_argument("emit_report: image must be [1,1,H,W]");
  const auto px = pgm_pixels(img);
  auto os = detail::open_for_write(path, true);
  os << "P5\n" << img.image.w() << ' ' << img.image.h() << "\n255\n";
  os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!os) throw IoError("failed writing " + path.string());
}

}  // namespace flc
