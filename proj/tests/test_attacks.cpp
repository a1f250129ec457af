#include <gtest/gtest.h>

#include "flc/attacks.hpp"
#include "flc/nn.hpp"
#include "flc/rng.hpp"

using namespace flc;

namespace {

// logits = W x + b on [N, 4, 1, 1] inputs; the CE input gradient has a closed form
Model<double> linear_model(Rng& rng) {
  Model<double> m(4);
  m.add_linear(2);
  auto& lin = std::get<Linear<double>>(m.layers()[0]);
  lin.weight = normal<double>(rng, {2, 4, 1, 1}, 0.0, 1.0);
  m.eval();
  return m;
}

Model<double> small_cnn(std::uint64_t seed) {
  MiniCnnSpec spec;
  spec.width = 2;
  spec.input_h = spec.input_w = 8;
  auto m = build_minicnn<double>(spec, seed);
  m.eval();
  return m;
}

double loss(Model<double>& m, const Tensor<double>& x, const std::vector<int>& y) {
  return cross_entropy(m.forward(x), std::span<const int>(y)).loss;
}

}  // namespace

TEST(Fgsm, LinearModelClosedForm) {
  Rng rng(1);
  auto m = linear_model(rng);
  const auto& w = std::get<Linear<double>>(m.layers()[0]).weight;
  const auto x = uniform<double>(rng, {1, 4, 1, 1}, 0.3, 0.7);
  const std::vector<int> y{0};
  const double eps = 0.05;
  const auto adv = fgsm(m, x, std::span<const int>(y), eps);
  for (std::size_t i = 0; i < 4; ++i) {
    // d loss / d x_i has the sign of w[1][i] - w[0][i]
    const double s = w[4 + i] - w[i] > 0 ? 1.0 : -1.0;
    EXPECT_NEAR(adv[i] - x[i], s * eps, 1e-15);
  }
}

TEST(Fgsm, ZeroGradientLeavesInputUnchanged) {
  Model<double> m(4);
  m.add_linear(2);  // zero weights: logits constant, gradient zero
  m.eval();
  const Tensor<double> x({2, 4, 1, 1}, 0.5);
  const std::vector<int> y{0, 1};
  EXPECT_EQ(fgsm(m, x, std::span<const int>(y), 0.1), x);
  EXPECT_EQ(fast_fgsm(m, x, std::span<const int>(y), 0.1, 0.2), x);
}

TEST(Fgsm, IncreasesLossOnLocallyLinearModel) {
  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    auto m = linear_model(rng);
    const auto x = uniform<double>(rng, {4, 4, 1, 1}, 0.2, 0.8);
    const std::vector<int> y{0, 1, 1, 0};
    EXPECT_GE(loss(m, fgsm(m, x, std::span<const int>(y), 0.03), y), loss(m, x, y));
  }
}

TEST(Fgsm, ClampsToPixelRangeAndRequiresEval) {
  Rng rng(3);
  auto m = linear_model(rng);
  const Tensor<double> x({1, 4, 1, 1}, std::vector<double>{0.0, 1.0, 0.0, 1.0});
  const std::vector<int> y{1};
  const auto adv = fgsm(m, x, std::span<const int>(y), 0.5);
  for (double v : adv.data()) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
  m.train();
  EXPECT_THROW(fgsm(m, x, std::span<const int>(y), 0.1), std::logic_error);
}

TEST(FastFgsm, ProjectsLargeStepToBudget) {
  Rng rng(4);
  auto m = linear_model(rng);
  const auto x = uniform<double>(rng, {3, 4, 1, 1}, 0.3, 0.7);
  const std::vector<int> y{0, 1, 0};
  const double eps = 8.0 / 255.0, alpha = 10.0 / 255.0;
  const auto adv = fast_fgsm(m, x, std::span<const int>(y), eps, alpha);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(std::abs(adv[i] - x[i]), eps, 1e-15);
  // alpha <= eps: identical to FGSM with step alpha
  EXPECT_EQ(fast_fgsm(m, x, std::span<const int>(y), eps, 4.0 / 255.0), fgsm(m, x, std::span<const int>(y), 4.0 / 255.0));
}

TEST(Pgd, OneStepNoRestartEqualsFgsm) {
  auto m = small_cnn(5);
  Rng rng(5);
  const auto x = uniform<double>(rng, {4, 1, 8, 8}, 0.0, 1.0);
  const std::vector<int> y{0, 1, 2, 3};
  auto cfg = AttackConfig::pgd(0.03, 0.03, 1, 1);
  cfg.random_start = false;
  EXPECT_EQ(pgd(m, x, std::span<const int>(y), cfg, rng), fgsm(m, x, std::span<const int>(y), 0.03));
}

TEST(Pgd, StaysInBudgetBothNorms) {
  auto m = small_cnn(6);
  Rng rng(6);
  const auto x = uniform<double>(rng, {4, 1, 8, 8}, 0.0, 1.0);
  const std::vector<int> y{0, 1, 2, 3};
  for (Norm norm : {Norm::Linf, Norm::L2}) {
    auto cfg = AttackConfig::pgd(norm == Norm::Linf ? 8.0 / 255.0 : 0.5, norm == Norm::Linf ? 2.0 / 255.0 : 0.1, 10, 2);
    cfg.norm = norm;
    const auto adv = pgd(m, x, std::span<const int>(y), cfg, rng);
    EXPECT_NO_THROW(check_budget(x, adv, cfg));
    EXPECT_GE(loss(m, adv, y), loss(m, x, y));
  }
}

TEST(Pgd, AtLeastAsStrongAsFgsmOnAverage) {
  auto m = small_cnn(7);
  Rng rng(7);
  const auto x = uniform<double>(rng, {16, 1, 8, 8}, 0.0, 1.0);
  std::vector<int> y(16);
  for (auto& l : y) l = static_cast<int>(rng.uniform_int(4));
  const auto cfg = AttackConfig::pgd(8.0 / 255.0, 2.0 / 255.0, 20, 3);
  EXPECT_GE(loss(m, pgd(m, x, std::span<const int>(y), cfg, rng), y),
            loss(m, fgsm(m, x, std::span<const int>(y), 8.0 / 255.0), y) - 1e-12);
}

TEST(Pgd, DeterministicGivenRng) {
  auto m = small_cnn(8);
  Rng data_rng(8);
  const auto x = uniform<double>(data_rng, {3, 1, 8, 8}, 0.0, 1.0);
  const std::vector<int> y{0, 1, 2};
  const auto cfg = AttackConfig::pgd(8.0 / 255.0, 2.0 / 255.0, 5, 2);
  Rng a(1), b(1);
  EXPECT_EQ(pgd(m, x, std::span<const int>(y), cfg, a), pgd(m, x, std::span<const int>(y), cfg, b));
}

TEST(Attacks, ZeroBudgetIsIdentity) {
  auto m = small_cnn(9);
  Rng rng(9);
  const auto x = uniform<double>(rng, {2, 1, 8, 8}, 0.0, 1.0);
  const std::vector<int> y{0, 1};
  EXPECT_EQ(fgsm(m, x, std::span<const int>(y), 0.0), x);
  EXPECT_EQ(pgd(m, x, std::span<const int>(y), AttackConfig::pgd(0.0, 0.0, 3, 2), rng), x);
}

TEST(Attacks, ConfigValidation) {
  EXPECT_THROW(AttackConfig::pgd(-0.1, 0.01, 1, 1).validate(), std::invalid_argument);
  EXPECT_THROW(AttackConfig::pgd(0.1, 0.01, 0, 1).validate(), std::invalid_argument);
  auto c = AttackConfig::fgsm(0.1);
  c.clamp_lo = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Attacks, CheckBudgetDetectsViolations) {
  const Tensor<double> x({1, 1, 1, 2}, 0.5);
  const auto cfg = AttackConfig::fgsm(0.1);
  EXPECT_NO_THROW(check_budget(x, Tensor<double>({1, 1, 1, 2}, std::vector<double>{0.6, 0.4}), cfg));
  EXPECT_THROW(check_budget(x, Tensor<double>({1, 1, 1, 2}, std::vector<double>{0.7, 0.4}), cfg), std::logic_error);
  EXPECT_THROW(check_budget(Tensor<double>({1, 1, 1, 2}, 1.0), Tensor<double>({1, 1, 1, 2}, 1.05), cfg), std::logic_error);
}

TEST(Attacks, TransferAndConfidence) {
  auto src = small_cnn(10), dst = small_cnn(11);
  Rng rng(10);
  Dataset<double> d;
  d.images = uniform<double>(rng, {20, 1, 8, 8}, 0.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    d.labels.push_back(i % 4);
    d.splits.push_back(Split::Test);
  }
  d.classes = 4;
  const double acc = transfer_eval(src, dst, d, AttackConfig::pgd(8.0 / 255.0, 2.0 / 255.0, 3, 1), rng);
  EXPECT_GE(acc, 0.0);
  EXPECT_LE(acc, 1.0);
  const auto s = confidence_stats(dst, d, AttackConfig::fgsm(8.0 / 255.0), rng);
  if (s.clean_conf_correct) EXPECT_GE(*s.clean_conf_correct, 0.25);
  if (s.adv_conf_wrong) EXPECT_LE(*s.adv_conf_wrong, 1.0);
  EXPECT_THROW(transfer_eval(src, dst, Dataset<double>{}, AttackConfig::fgsm(0.1), rng), std::invalid_argument);
}

TEST(Attacks, PerturbDatasetMatchesPerBatchCalls) {
  auto m = small_cnn(12);
  Rng rng(12);
  Dataset<double> d;
  d.images = uniform<double>(rng, {300, 1, 8, 8}, 0.0, 1.0);
  for (int i = 0; i < 300; ++i) {
    d.labels.push_back(i % 4);
    d.splits.push_back(Split::Test);
  }
  d.classes = 4;
  const auto all = perturb_dataset(m, d, AttackConfig::fgsm(0.02), rng);
  const auto tail = d.select({299});
  EXPECT_EQ(all.batch_slice(299, 300), fgsm(m, tail.images, std::span<const int>(tail.labels), 0.02));
}
