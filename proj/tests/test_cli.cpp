#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pnode.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = PNODE_CLI_PATH;
const std::string kData = PNODE_TEST_DATA;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pnode_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Runs the CLI with `args`; stdout and stderr go to files in `dir`. Returns the exit status.
int run(const std::string& args, const fs::path& dir) {
  const std::string cmd = kCli + " " + args + " > " + (dir / "stdout.txt").string() + " 2> " +
                          (dir / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(Cli, GenerateIsByteReproducible) {
  const fs::path dir = scratch("generate");
  ASSERT_EQ(run("generate --system mass_spring --n 16 --seed 7 --out-dir " + (dir / "a").string(), dir), 0);
  ASSERT_EQ(run("generate --system mass_spring --n 16 --seed 7 --out-dir " + (dir / "b").string(), dir), 0);
  const std::string a = slurp(dir / "a" / "dataset.csv");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir / "b" / "dataset.csv"));
  std::ifstream in(dir / "a" / "dataset.csv");
  const auto ds = pnode::read_dataset(in);
  EXPECT_EQ(ds.trajectories.size(), 16u);
  EXPECT_EQ(ds.seed, 7u);
}

TEST(Cli, EvaluateCommittedCheckpointIsByteStable) {
  const fs::path dir = scratch("evaluate");
  const std::string common = "evaluate --checkpoint " + kData + "/tiny_lv_checkpoint.txt --seed 5 --n 3 --horizon 5 "
                             "--no-timing --out-dir ";
  ASSERT_EQ(run(common + (dir / "a").string(), dir), 0) << slurp(dir / "stderr.txt");
  ASSERT_EQ(run(common + (dir / "b").string(), dir), 0);
  const std::string a = slurp(dir / "a" / "report.json");
  EXPECT_EQ(a, slurp(dir / "b" / "report.json"));
  EXPECT_EQ(slurp(dir / "a" / "trajectories.csv"), slurp(dir / "b" / "trajectories.csv"));
  std::ifstream in(dir / "a" / "report.json");
  const auto report = pnode::read_report(in);
  EXPECT_EQ(report.system, "lotka_volterra");
  EXPECT_EQ(report.mode, "pnode_fast");
  EXPECT_EQ(report.n_eval, 3u);
  EXPECT_EQ(report.horizon, 5.0);
  EXPECT_FALSE(report.inference_seconds_per_batch.has_value());
}

TEST(Cli, TrainIsByteReproducible) {
  const fs::path dir = scratch("train");
  const std::string common = "train --config " + kData + "/tiny_config.json --out-dir ";
  ASSERT_EQ(run(common + (dir / "a").string(), dir), 0) << slurp(dir / "stderr.txt");
  ASSERT_EQ(run(common + (dir / "b").string(), dir), 0);
  for (const char* f : {"checkpoint.txt", "loss_history.csv", "dataset.csv"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  std::ifstream in(dir / "a" / "loss_history.csv");
  EXPECT_EQ(pnode::read_history(in).size(), 4u);
}

TEST(Cli, TrainOnExistingDataset) {
  const fs::path dir = scratch("train_dataset");
  ASSERT_EQ(run("generate --config " + kData + "/tiny_config.json --out-dir " + dir.string(), dir), 0);
  ASSERT_EQ(run("train --config " + kData + "/tiny_config.json --mode snode --gamma 2 --dataset " +
                    (dir / "dataset.csv").string() + " --out-dir " + (dir / "m").string(),
                dir),
            0)
      << slurp(dir / "stderr.txt");
  std::ifstream in(dir / "m" / "checkpoint.txt");
  const auto ck = pnode::read_checkpoint(in);
  EXPECT_EQ(ck.mode, "snode");
  EXPECT_EQ(ck.gamma, 2.0);
}

TEST(Cli, CompareWritesOneRowPerMode) {
  const fs::path dir = scratch("compare");
  ASSERT_EQ(run("compare --system lotka_volterra --config " + kData + "/tiny_config.json --out-dir " + dir.string(),
                dir),
            0)
      << slurp(dir / "stderr.txt");
  std::ifstream in(dir / "compare.csv");
  const auto rows = pnode::read_compare(in);
  ASSERT_EQ(rows.size(), 5u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].report.mode, pnode::to_string(pnode::all_train_modes()[i]));
    EXPECT_EQ(rows[i].report.system, "lotka_volterra");
    EXPECT_EQ(rows[i].train_time_end, 1.0);
    EXPECT_TRUE(fs::exists(dir / rows[i].report.mode / "report.json"));
  }
  std::ifstream again(dir / "compare.csv");
  std::string header;
  std::getline(again, header);
  EXPECT_EQ(header, pnode::compare_header);
}

TEST(Cli, SweepGammaWritesThreeRows) {
  const fs::path dir = scratch("sweep");
  ASSERT_EQ(run("sweep-gamma --config " + kData + "/tiny_config.json --out-dir " + dir.string(), dir), 0)
      << slurp(dir / "stderr.txt");
  std::ifstream in(dir / "sweep_gamma.csv");
  const auto rows = pnode::read_compare(in);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].report.gamma, 0.5);
  EXPECT_EQ(rows[1].report.gamma, 2.0);
  EXPECT_EQ(rows[2].report.gamma, 10.0);
}

TEST(Cli, UnknownFlagPrintsUsageAndExitsTwo) {
  const fs::path dir = scratch("usage");
  EXPECT_EQ(run("generate --bogus 3", dir), 2);
  EXPECT_NE(slurp(dir / "stderr.txt").find("Usage"), std::string::npos);
  EXPECT_EQ(run("", dir), 2);
  EXPECT_EQ(run("frobnicate", dir), 2);
}

TEST(Cli, FailedRunReportsStructuredError) {
  const fs::path dir = scratch("failure");
  // checkpoint trained on Lotka-Volterra evaluated as the rigid body
  EXPECT_EQ(run("evaluate --checkpoint " + kData + "/tiny_lv_checkpoint.txt --system rigid_body --out-dir " +
                    dir.string(),
                dir),
            1);
  const auto err = nlohmann::json::parse(slurp(dir / "stderr.txt"));
  EXPECT_EQ(err.at("error").get<std::string>(), "Error");
  EXPECT_NE(err.at("message").get<std::string>().find("does not match"), std::string::npos);

  std::ofstream(dir / "bad.json") << "{\"mode\": \"hnn\"}";
  EXPECT_EQ(run("train --config " + (dir / "bad.json").string() + " --out-dir " + dir.string(), dir), 1);
  EXPECT_NO_THROW(nlohmann::json::parse(slurp(dir / "stderr.txt")));
}
