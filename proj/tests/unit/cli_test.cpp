#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>

#include "repsim/npy.hpp"
#include "repsim/rng.hpp"
#include "repsim/linalg.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("repsim_cli_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  Outcome run(const std::string& args) const {
    const std::string cmd = std::string(REPSIM_CLI_PATH) + " " + args + " >" + path("stdout") + " 2>" +
                            path("stderr");
    const int status = std::system(cmd.c_str());
    Outcome o;
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    o.out = repsim::read_file(path("stdout"));
    o.err = repsim::read_file(path("stderr"));
    return o;
  }

  // Small task so each training command finishes in well under a second.
  std::string small_config(const std::string& extra = "") const {
    const std::string p = path("small.json");
    repsim::write_file(p, R"({"task": {"n0": 512, "n1": 64, "n_eval": 96},
      "pretrain": {"epochs": 60}, "epochs": 3, "batch_size": 32, "seeds": [4])" +
                              extra + "}");
    return p;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, CkaOfAFileWithItselfIsOne) {
  repsim::SeededRng rng(1);
  const auto m = repsim::random_gaussian(30, 5, rng);
  repsim::write_npy(m, repsim::NpyDtype::f64, path("a.npy"));
  // A float32 file stands in for features exported by the Python side.
  repsim::write_npy(m, repsim::NpyDtype::f32, path("a32.npy"));
  auto o = run("cka " + path("a.npy") + " " + path("a.npy"));
  EXPECT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(o.out, "1.000000\n");
  o = run("cka " + path("a32.npy") + " " + path("a.npy"));
  EXPECT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(o.out, "1.000000\n");
}

TEST_F(Cli, ExitCodesByCategory) {
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("finetune --no-such-flag").code, 2);
  EXPECT_EQ(run("").code, 2);
  auto o = run("cka " + path("missing.npy") + " " + path("missing.npy"));
  EXPECT_EQ(o.code, 2);  // rejected by the existing-file check at parse time

  repsim::write_file(path("bad.json"), R"({"learning_rate": 0.1})");
  o = run("finetune --config " + path("bad.json"));
  EXPECT_EQ(o.code, 3);
  EXPECT_EQ(o.err.rfind("error: config: ", 0), 0u) << o.err;
  EXPECT_EQ(std::count(o.err.begin(), o.err.end(), '\n'), 1);

  repsim::write_file(path("junk.npy"), "not an array");
  o = run("cka " + path("junk.npy") + " " + path("junk.npy"));
  EXPECT_EQ(o.code, 3);
  EXPECT_EQ(o.err.rfind("error: parse: ", 0), 0u) << o.err;

  o = run("finetune --config " + small_config() + " --method full --loss mse --lr 1e100");
  EXPECT_EQ(o.code, 4) << o.err;
  EXPECT_EQ(o.err.rfind("error: diverged: ", 0), 0u) << o.err;
}

TEST_F(Cli, AlignMatchesTheClosedFormExample) {
  repsim::write_npy(repsim::Matrix{{3.0, 0.0}, {0.0, 1.0}}, repsim::NpyDtype::f64, path("s0.npy"));
  repsim::write_npy(repsim::Matrix{{2.0, 0.0}, {0.0, 2.0}}, repsim::NpyDtype::f64, path("s1.npy"));
  const auto o = run("align " + path("s0.npy") + " " + path("s1.npy") + " --out " + path("align"));
  ASSERT_EQ(o.code, 0) << o.err;
  const std::string csv = repsim::read_file(path("align/align.csv"));
  const auto row = csv.substr(csv.find('\n') + 1);
  EXPECT_NEAR(std::stod(row), 2.0, 1e-3);
  const auto q = repsim::read_npy(path("align/q.npy")).values;
  EXPECT_EQ(q.rows(), 2u);
  EXPECT_TRUE(fs::exists(path("align/summary.json")));
}

TEST_F(Cli, FinetuneIsByteReproducible) {
  const std::string cfg = small_config();
  const auto a = run("finetune --config " + cfg + " --method repsim");
  ASSERT_EQ(a.code, 0) << a.err;
  const auto b = run("finetune --config " + cfg + " --method repsim");
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(a.out.substr(0, a.out.find('\n')), "seed,method,epoch,task_loss,reg_loss,eval_score,eval_cka");
  EXPECT_EQ(std::count(a.out.begin(), a.out.end(), '\n'), 4);
}

TEST_F(Cli, CheckpointAndSigmaCacheFlow) {
  const std::string cfg = small_config();
  auto o = run("pretrain --config " + cfg + " --save " + path("theta0.ckpt"));
  ASSERT_EQ(o.code, 0) << o.err;
  ASSERT_TRUE(fs::exists(path("theta0.ckpt")));
  o = run("finetune --config " + cfg + " --checkpoint " + path("theta0.ckpt") + " --out " + path("r1"));
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_TRUE(fs::exists(path("theta0.ckpt.sigma0")));
  EXPECT_NE(repsim::read_file(path("r1/summary.json")).find("sigma0 cache rebuilt"), std::string::npos);
  o = run("finetune --config " + cfg + " --checkpoint " + path("theta0.ckpt") + " --out " + path("r2"));
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_NE(repsim::read_file(path("r2/summary.json")).find("sigma0 cache hit"), std::string::npos);
  EXPECT_EQ(repsim::read_file(path("r1/finetune.csv")), repsim::read_file(path("r2/finetune.csv")));
  // The checkpointed θ₀ is the same model a fresh pretrain produces.
  o = run("finetune --config " + cfg + " --out " + path("r3"));
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(repsim::read_file(path("r1/finetune.csv")), repsim::read_file(path("r3/finetune.csv")));
}

TEST_F(Cli, StudySubcommandsProduceTheirTables) {
  const std::string cfg = small_config();
  auto o = run("sweep --config " + cfg + " --lambdas 1,0,0.5");
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(std::count(o.out.begin(), o.out.end(), '\n'), 4);
  EXPECT_NE(o.out.find("\n4,0,"), std::string::npos);
  o = run("sharpness --config " + cfg + " --methods full,repsim");
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(std::count(o.out.begin(), o.out.end(), '\n'), 3);
  o = run("interpolate --config " + cfg + " --steps 5");
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(std::count(o.out.begin(), o.out.end(), '\n'), 6);
  o = run("covstudy --config " + cfg + " --batch-sizes 8,96 --trials 4");
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_NE(o.out.find("4,96,0\n"), std::string::npos) << o.out;
  o = run("covstudy --config " + cfg + " --batch-sizes 8,x");
  EXPECT_EQ(o.code, 3);
}
