#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "flc/analysis.hpp"
#include "flc/data.hpp"

using namespace flc;

namespace {

Model<double> pool_only(PoolingKind k) {
  Model<double> m(1);
  m.add_pool(k);
  m.eval();
  return m;
}

Dataset<double> tiny_data(std::size_t n) {
  Rng rng(1);
  return synth_dataset(rng, n, SynthConfig{});
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST(ShiftConsistency, DegenerateRangeAndConstantModel) {
  MiniCnnSpec s;
  s.width = 2;
  auto m = build_minicnn<double>(s, 1);
  m.eval();
  Rng rng(2);
  const auto d = tiny_data(20);
  const auto r = shift_consistency(m, d, 1, 50, rng);
  EXPECT_EQ(r.consistency, 1.0);
  std::size_t pairs = 0;
  for (const auto& c : r.per_class) pairs += c.pairs;
  EXPECT_EQ(pairs, 50u);

  Model<double> constant(1);
  constant.add_global_avg_pool().add_linear(4);  // zero weights: constant logits
  constant.eval();
  EXPECT_EQ(shift_consistency(constant, d, 8, 300, rng).consistency, 1.0);
}

TEST(ShiftConsistency, Preconditions) {
  MiniCnnSpec s;
  s.width = 2;
  auto m = build_minicnn<double>(s, 1);
  Rng rng(3);
  EXPECT_THROW(shift_consistency(m, tiny_data(4), 2, 10, rng), std::logic_error);  // Train mode
  m.eval();
  EXPECT_THROW(shift_consistency(m, Dataset<double>{}, 2, 10, rng), std::invalid_argument);
  EXPECT_THROW(shift_consistency(m, tiny_data(4), 0, 10, rng), std::invalid_argument);
}

TEST(AliasingTrace, BandLimitedProbeGivesZero) {
  // sum of random cosines with |f| <= 3 on a 16 x 16 grid: nothing above the cutoff
  Rng rng(4);
  Tensor<double> probe({4, 1, 16, 16});
  for (std::size_t n = 0; n < 4; ++n)
    for (int k = -3; k <= 3; ++k)
      for (int l = -3; l <= 3; ++l) {
        const double a = rng.normal01(), ph = rng.uniform(0.0, 6.0);
        for (std::size_t h = 0; h < 16; ++h)
          for (std::size_t w = 0; w < 16; ++w)
            probe(n, 0, h, w) += a * std::cos(2.0 * std::numbers::pi * (k * double(h) + l * double(w)) / 16.0 + ph);
      }
  auto m = pool_only(PoolingKind::MaxPool2);
  const auto r = layer_aliasing_trace(m, probe);
  ASSERT_EQ(r.layers.size(), 1u);
  EXPECT_EQ(r.layers[0].layer_index, 0u);
  EXPECT_LE(r.layers[0].ratio, 1e-20);
}

TEST(AliasingTrace, WhiteNoiseMatchesBinFraction) {
  // white noise spreads energy evenly: expected ratio = share of bins outside the window
  Rng rng(5);
  auto m = pool_only(PoolingKind::Flc);
  const auto r = layer_aliasing_trace(m, normal<double>(rng, {400, 1, 16, 16}, 0.0, 1.0));
  EXPECT_NEAR(r.layers[0].ratio, 1.0 - 64.0 / 256.0, 0.01);
}

TEST(AliasingTrace, MiniCnnHasTwoPoolLayersAndNeedsOne) {
  MiniCnnSpec s;
  s.width = 2;
  auto m = build_minicnn<double>(s, 1);
  m.eval();
  Rng rng(6);
  const auto r = layer_aliasing_trace(m, uniform<double>(rng, {3, 1, 16, 16}, 0.0, 1.0));
  ASSERT_EQ(r.layers.size(), 2u);
  EXPECT_EQ(r.layers[1].input_shape, (Shape{3, 4, 8, 8}));
  Model<double> none(1);
  none.add_relu();
  none.eval();
  EXPECT_THROW(layer_aliasing_trace(none, Tensor<double>({1, 1, 4, 4})), std::invalid_argument);
}

TEST(AliasEnergy, FlcZeroOthersPositive) {
  Rng rng(7);
  const auto x = normal<double>(rng, {1, 1, 16, 16}, 0.0, 1.0);
  EXPECT_LE(alias_energy(PoolingKind::Flc, x), 1e-20);
  for (auto k : {PoolingKind::BlurPool, PoolingKind::MaxPool2, PoolingKind::StridedIdentity, PoolingKind::AvgPool2})
    EXPECT_GT(alias_energy(k, x), 0.01);
  // band_limit is idempotent and real
  const auto b = band_limit(x);
  EXPECT_LE(max_abs_diff(band_limit(b), b), 1e-12);
}

TEST(PerturbationSpectrum, IdentityAndSingleTone) {
  const Tensor<double> x({2, 1, 8, 8}, 0.5);
  const auto same = perturbation_spectrum_diff(x, x);
  EXPECT_EQ(max_abs(same.spatial), 0.0);
  EXPECT_EQ(max_abs(same.spectrum), 0.0);
  EXPECT_EQ(same.high_freq_share, 0.0);

  Tensor<double> adv = x;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t h = 0; h < 8; ++h)
      for (std::size_t w = 0; w < 8; ++w) adv(n, 0, h, w) += 0.01 * std::cos(2.0 * std::numbers::pi * 3.0 * w / 8.0);
  const auto d = perturbation_spectrum_diff(x, adv);
  // centered layout: DC at (4,4); the tone sits at columns 4 +- 3
  for (std::size_t k = 0; k < 8; ++k)
    for (std::size_t l = 0; l < 8; ++l) {
      const bool tone = k == 4 && (l == 1 || l == 7);
      if (tone) EXPECT_NEAR(d.mean_spectrum(0, 0, k, l), 0.01 * 32.0, 1e-12);
      else EXPECT_NEAR(d.mean_spectrum(0, 0, k, l), 0.0, 1e-12);
    }
  EXPECT_NEAR(d.high_freq_share, 1.0, 1e-12);  // |f| = 3 lies above the cutoff for extent 8
  EXPECT_THROW(perturbation_spectrum_diff(x, Tensor<double>({2, 1, 8, 4})), std::invalid_argument);
}

TEST(Reports, CsvJsonAndFormats) {
  Report r{"t", {"a", "b", "c"}, {}};
  r.rows.push_back({0.1, std::int64_t{3}, std::string("x,y")});
  EXPECT_EQ(render_csv(r), "a,b,c\n0.10000000000000001,3,\"x,y\"\n");
  const auto j = to_json(r);
  EXPECT_EQ(j["name"], "t");
  EXPECT_EQ(j["rows"][0]["b"], 3);
  EXPECT_EQ(j["rows"][0]["a"].get<double>(), 0.1);
  EXPECT_EQ(parse_report_format("json"), ReportFormat::Json);
  EXPECT_FALSE(parse_report_format("xml"));

  ShiftConsistencyReport s;
  s.pairs_sampled = 4;
  s.consistency = 0.75;
  s.per_class = {{0, 2, 2}, {1, 2, 1}};
  const auto sr = to_report(s);
  ASSERT_EQ(sr.rows.size(), 3u);
  EXPECT_EQ(std::get<std::string>(sr.rows[2][0]), "all");
  EXPECT_EQ(std::get<std::int64_t>(sr.rows[2][2]), 3);
}

TEST(Reports, PgmNormalization) {
  ImageReport img{Tensor<double>({1, 1, 1, 3}, std::vector<double>{-1, 0, 3}), false};
  EXPECT_EQ(pgm_pixels(img), (std::vector<unsigned char>{0, 64, 255}));
  img.image = Tensor<double>({1, 1, 1, 2}, 4.0);
  EXPECT_EQ(pgm_pixels(img), (std::vector<unsigned char>{0, 0}));
  img = ImageReport{Tensor<double>({1, 1, 1, 3}, std::vector<double>{0, std::expm1(1.0), std::expm1(2.0)}), true};
  EXPECT_EQ(pgm_pixels(img), (std::vector<unsigned char>{0, 128, 255}));
}

TEST(Reports, EmitFiles) {
  const auto dir = std::filesystem::temp_directory_path();
  ImageReport img{Tensor<double>({1, 1, 2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5}), false};
  emit_report(img, dir / "flc_t.pgm");
  const auto bytes = slurp(dir / "flc_t.pgm");
  EXPECT_EQ(bytes.substr(0, 11), "P5\n3 2\n255\n");
  EXPECT_EQ(bytes.size(), 11u + 6u);
  EXPECT_EQ(static_cast<unsigned char>(bytes.back()), 255);
  Report r{"t", {"a"}, {{1.5}}};
  emit_report(r, dir / "flc_t.csv", ReportFormat::Csv);
  EXPECT_EQ(slurp(dir / "flc_t.csv"), "a\n1.5\n");
  emit_report(r, dir / "flc_t.json", ReportFormat::Json);
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "flc_t.json"))["rows"][0]["a"], 1.5);
  EXPECT_THROW(emit_report(r, dir / "flc_t.pgm", ReportFormat::Pgm), std::invalid_argument);
  EXPECT_THROW(emit_report(r, dir / "no_such_dir" / "x.csv", ReportFormat::Csv), IoError);
}
