#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "flc/analysis.hpp"
#include "flc/checkpoint.hpp"
#include "flc/runspec.hpp"

using namespace flc;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(FLC_CLI_PATH) + " " + args + " 2>/dev/null";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string f; std::getline(ss, f, sep);) out.push_back(f);
  return out;
}

// Tiny double-precision checkpoint shared by the tests below.
const fs::path& trained_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "flc_cli_test";
    fs::remove_all(d);
    const auto r = cli("train --pooling max --epochs 2 --width 4 --precision double --seed 4 --out " + d.string());
    EXPECT_EQ(r.code, 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST(Cli, TrainWritesSpecCheckpointAndMetrics) {
  const auto& d = trained_dir();
  ASSERT_TRUE(fs::exists(d / "model.flck"));
  ASSERT_TRUE(fs::exists(d / "metrics.csv"));
  std::ifstream is(d / "runspec.json");
  const auto j = nlohmann::json::parse(is);
  const auto s = runspec_from_json(j);
  EXPECT_EQ(j["hash"], runspec_hash(s));
  EXPECT_EQ(s.pooling, PoolingKind::MaxPool2);
  EXPECT_EQ(s.epochs, 2u);
}

TEST(Cli, AttackRowMatchesEvaluateApi) {
  const auto& d = trained_dir();
  const auto r = cli("attack --ckpt " + (d / "model.flck").string() +
                     " --attack pgd --epsilon 8/255 --alpha 2/255 --steps 5 --restarts 2 --limit 64 --seed 9");
  ASSERT_EQ(r.code, 0);
  const auto lines = split(r.out, '\n');
  ASSERT_GE(lines.size(), 2u);
  EXPECT_EQ(lines[0], "attack,norm,epsilon,alpha,steps,restarts,examples,accuracy,mean_loss");
  const auto row = split(lines[1], ',');
  ASSERT_EQ(row.size(), 9u);

  auto model = load_checkpoint<double>(d / "model.flck");
  RunSpec s;
  const auto data = load_dataset(s).subset(Split::Test).head(64);
  Rng rng(9);
  const auto m = evaluate(model, data, AttackConfig::pgd(8.0 / 255.0, 2.0 / 255.0, 5, 2), rng);
  EXPECT_EQ(row[0], "pgd");
  EXPECT_EQ(row[6], "64");
  EXPECT_EQ(row[7], format_double(m.accuracy));
  EXPECT_EQ(row[8], format_double(m.mean_loss));
}

TEST(Cli, EvalAndAnalyzeOutputs) {
  const auto& d = trained_dir();
  const auto ckpt = (d / "model.flck").string();
  const auto e = cli("eval --ckpt " + ckpt + " --limit 32");
  ASSERT_EQ(e.code, 0);
  EXPECT_EQ(split(e.out, '\n')[0], "examples,accuracy,mean_loss");
  const fs::path out = d / "analysis";
  const auto a = cli("analyze --ckpt " + ckpt + " --pairs 50 --probe 8 --out " + out.string());
  ASSERT_EQ(a.code, 0);
  for (const char* f : {"shift_consistency.csv", "shift_consistency.json", "aliasing.csv", "aliasing.json",
                        "perturbation.csv", "mean_spatial_diff.pgm", "mean_spectrum_diff.pgm"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("train --pooling median --out x").code, 2);
  EXPECT_EQ(cli("train --epsilon 1/0 --out x").code, 2);
  EXPECT_EQ(cli("eval --ckpt /nonexistent/model.flck").code, 3);
  const fs::path bad = fs::temp_directory_path() / "flc_cli_bad.flck";
  std::ofstream(bad, std::ios::binary) << "NOPE";
  EXPECT_EQ(cli("eval --ckpt " + bad.string()).code, 3);
  EXPECT_EQ(cli("gradcheck --pooling flc").code, 0);
}
