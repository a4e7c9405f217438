#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mazelab/store.hpp"

using namespace mazelab;
namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "mazelab_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(MAZELAB_CLI) + " " + args + " > " + (workdir() / "stdout.txt").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string dir(const std::string& name) { return (workdir() / name).string(); }

}  // namespace

TEST(Cli, GenDatasetIsByteIdentical) {
  ASSERT_EQ(run("gen-dataset --alg rdfs --n 6 --count 200 --seed 0 --out " + dir("g1")), 0);
  ASSERT_EQ(run("gen_dataset --alg rdfs --n 6 --count 200 --seed 0 --out " + dir("g2")), 0);
  EXPECT_EQ(slurp(dir("g1") + "/dataset.jsonl"), slurp(dir("g2") + "/dataset.jsonl"));
  auto m1 = nlohmann::json::parse(slurp(dir("g1") + "/manifest.json"));
  auto m2 = nlohmann::json::parse(slurp(dir("g2") + "/manifest.json"));
  m1["flags"].erase("out");
  m2["flags"].erase("out");
  EXPECT_EQ(m1, m2);
}

TEST(Cli, ManifestRecordsDefaults) {
  ASSERT_EQ(run("gen-dataset --alg forkless --n 4 --count 5 --min-path-len 3 --out " + dir("m")), 0);
  const auto m = nlohmann::json::parse(slurp(dir("m") + "/manifest.json"));
  EXPECT_EQ(m.at("subcommand"), "gen-dataset");
  EXPECT_EQ(m.at("flags").at("min_path_len"), "3");
  EXPECT_EQ(m.at("flags").at("seed"), "0");
  EXPECT_EQ(m.at("flags").at("p"), "0.1");
  EXPECT_EQ(m.at("checkpoint_version"), kCheckpointVersion);
}

TEST(Cli, DistinctExitCodes) {
  EXPECT_EQ(run("render --no-such-flag 1 --out " + dir("x")), 2);
  EXPECT_EQ(run("embed --checkpoint " + dir("missing.bin") + " --out " + dir("x")), 3);

  ModelConfig c;
  c.d_model = 16;
  c.d_head = 8;
  c.n_layers = 1;
  c.d_vocab = 27;
  c.n_ctx = 64;
  const fs::path ck = workdir() / "model.bin";
  save_checkpoint(ck, init_params<float>(c), 0);
  EXPECT_EQ(run("embed --checkpoint " + ck.string() + " --out " + dir("e")), 0);
  std::string bytes = slurp(ck);
  bytes[8] = static_cast<char>(kCheckpointVersion + 1);
  std::ofstream(ck, std::ios::binary) << bytes;
  EXPECT_EQ(run("embed --checkpoint " + ck.string() + " --out " + dir("e")), 4);
  EXPECT_EQ(run("render --alg nope --out " + dir("x")), 1);
}

TEST(Cli, TrainThenAnalyse) {
  ASSERT_EQ(run("train --alg rdfs --n 3 --count 32 --eval_size 8 --d_model 16 --d_head 8 --n_layers 1 --batch_size 8 "
                "--quiet --out " + dir("t")),
            0);
  ASSERT_EQ(run("gen-dataset --alg rdfs --n 3 --count 20 --seed 9 --out " + dir("d")), 0);
  const std::string ck = dir("t") + "/checkpoints/ckpt_00000004.bin";
  const std::string ds = dir("d") + "/dataset.jsonl";
  ASSERT_TRUE(fs::exists(ck));
  EXPECT_EQ(run("eval --checkpoint " + ck + " --dataset " + ds + " --rollouts 5 --out " + dir("ev")), 0);
  const std::string csv = slurp(dir("ev") + "/eval.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 8);
  EXPECT_EQ(run("rollout --checkpoint " + ck + " --dataset " + ds + " --maze-index 5 --out " + dir("ro")), 0);
  EXPECT_NE(slurp(dir("ro") + "/rollout.txt").find("<PATH_START>"), std::string::npos);
  EXPECT_EQ(run("dla --checkpoint " + ck + " --dataset " + ds + " --out " + dir("dla")), 0);
  EXPECT_EQ(run("sweep-checkpoints --checkpoints " + dir("t") + " --eval-dataset " + ds + " --probe-dataset " + ds +
                " --tasks path_end --out " + dir("sw")),
            0);
  EXPECT_EQ(run("eval --baseline --dataset " + ds + " --out " + dir("bl")), 0);
  EXPECT_TRUE(fs::exists(dir("bl") + "/rollouts_by_path_length.csv"));
}
