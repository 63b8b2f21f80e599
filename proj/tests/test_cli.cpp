#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mtvnet/checkpoint.hpp"
#include "mtvnet/config.hpp"
#include "mtvnet/io_util.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
};

Result run(const fs::path& cwd, const std::string& args) {
  const auto log = cwd / "cli_stdout.txt";
  const std::string cmd =
      "cd '" + cwd.string() + "' && '" MTVNET_CLI_PATH "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, mtvnet::read_text_file(log)};
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "mtvnet_cli_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }
  static fs::path dir_;
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run(dir_, "").code, 2);
  EXPECT_EQ(run(dir_, "make-data --edge 32").code, 2);  // --scale missing
  EXPECT_EQ(run(dir_, "make-data --edge 33 --scale 2").code, 2);
  EXPECT_EQ(run(dir_, "train --preset nope").code, 2);
  auto r = run(dir_, "train --preset desk --set model.windw=4");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("model.windw"), std::string::npos);
}

TEST_F(Cli, RuntimeErrorsExitWithOne) {
  EXPECT_EQ(run(dir_, "train --preset desk --data missing_store --steps 1").code, 1);
}

TEST_F(Cli, EndToEndPipeline) {
  auto r = run(dir_, "make-data --generator ellipsoid --count 1 --edge 40 --scale 2 --seed 3 --out store");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(dir_ / "store/hr/ellipsoid_0.mtvvol"));
  EXPECT_TRUE(fs::exists(dir_ / "store/lr_x2/ellipsoid_0.mtvvol"));

  r = run(dir_, "train --preset desk --steps 3 --data store --out runs/a --quiet --set train.batch_size=1");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("mtvnet train"), std::string::npos);
  auto ck = mtvnet::load_checkpoint(dir_ / "runs/a/last.mtvckpt");
  EXPECT_EQ(ck.iteration, 3);
  auto loss = mtvnet::read_text_file(dir_ / "runs/a/loss.csv");
  EXPECT_EQ(std::count(loss.begin(), loss.end(), '\n'), 4);
  EXPECT_TRUE(fs::exists(dir_ / "runs/a/config.cfg"));

  r = run(dir_, "train --preset desk --steps 5 --data store --out runs/a --resume --quiet --set train.batch_size=1");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(mtvnet::load_checkpoint(dir_ / "runs/a/last.mtvckpt").iteration, 5);

  r = run(dir_, "eval --ckpt last --run runs/a --data store --out ev --save-sr");
  ASSERT_EQ(r.code, 0) << r.out;
  auto csv = mtvnet::read_text_file(dir_ / "ev/metrics.csv");
  EXPECT_EQ(csv.rfind("volume,psnr,ssim,nrmse", 0), 0u);
  EXPECT_TRUE(fs::exists(dir_ / "ev/metrics.txt"));

  r = run(dir_, "eval --model trilinear --scale 2 --data store --out ev_tri");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("psnr="), std::string::npos);

  r = run(dir_, "lam --ckpt last --run runs/a --data store --steps 8 --out lam");
  ASSERT_EQ(r.code, 0) << r.out;
  for (const char* f : {"attribution.mtvvol", "slice_average.csv", "lam.png", "lam_summary.csv"}) {
    EXPECT_TRUE(fs::exists(dir_ / "lam" / f)) << f;
  }
  std::ifstream png(dir_ / "lam/lam.png", std::ios::binary);
  char sig[8] = {};
  png.read(sig, 8);
  EXPECT_EQ(std::string(sig + 1, 3), "PNG");
}

TEST_F(Cli, ProfileTable) {
  auto r = run(dir_, "profile --preset L1 --preset L3 --resolutions 16,64,128 --out prof");
  ASSERT_EQ(r.code, 0) << r.out;
  auto csv = mtvnet::read_text_file(dir_ / "prof/profile.csv");
  std::istringstream in(csv);
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 1 + 6);
  EXPECT_NE(csv.find("L3,128,1,3,4096;4096;4096,12288"), std::string::npos);
  EXPECT_NE(csv.find("L1,16,1,1,512,512"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "prof/profile.png"));
}

TEST_F(Cli, ConfigRoundTripsThroughAFile) {
  auto r = run(dir_, "config --preset desk2 --set train.total_iters=100");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out, mtvnet::to_text(mtvnet::apply_overrides(mtvnet::preset("desk2"), {"train.total_iters=100"})));
  {
    std::ofstream f(dir_ / "d2.cfg");
    f << r.out;
  }
  EXPECT_EQ(run(dir_, "config --config d2.cfg").out, r.out);
}
