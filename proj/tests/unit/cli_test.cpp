#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "gv/run_config.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kData = GV_TEST_DATA;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

std::string golden_header(const std::string& name) {
  return first_line(kData / "golden" / (name + ".header"));
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("gvocab_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Runs gvocab with the given arguments, output captured to a log file.
  int run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " " + GVOCAB_BIN + " " + args + " > " +
                            (dir_ / "log.txt").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  std::string log() const { return slurp(dir_ / "log.txt"); }

  std::string corpus() const { return (kData / "tiny_corpus.txt").string(); }
  fs::path dir_;
};

}  // namespace

TEST_F(Cli, TokenizeTrainMatchesGoldenMergeTable) {
  ASSERT_EQ(run("tokenize-train --corpus " + corpus() + " --vocab 128 --out " +
                (dir_ / "tok").string()),
            0)
      << log();
  EXPECT_EQ(slurp(dir_ / "tok" / "tokenizer.txt"), slurp(kData / "golden" / "tiny_tokenizer.txt"));
  EXPECT_EQ(first_line(dir_ / "tok" / "ids.txt").rfind("ids-v1 ", 0), 0u);
  const auto cfg = gv::read_key_value_file(dir_ / "tok" / "config.txt");
  EXPECT_EQ(gv::require_value(cfg, "resolved_vocab"), "128");
}

TEST_F(Cli, TrainWritesTraceCheckpointAndResolvedConfig) {
  ASSERT_EQ(run("train --corpus " + corpus() +
                " --vocab 128 --d 16 --layers 1 --seq 16 --batch 2 --steps 5"
                " --group-size auto --eval-windows 2 --out " + (dir_ / "run").string()),
            0)
      << log();
  const auto run_dir = dir_ / "run";
  EXPECT_EQ(first_line(run_dir / "loss.csv"), golden_header("loss"));
  EXPECT_EQ(first_line(run_dir / "eval.csv"), golden_header("eval"));
  EXPECT_TRUE(fs::exists(run_dir / "checkpoint" / "manifest.txt"));
  EXPECT_TRUE(fs::exists(run_dir / "tokenizer.txt"));
  const auto cfg = gv::read_key_value_file(run_dir / "config.txt");
  // auto resolves to ceil(sqrt(128)) = 12 tokens per group, 11 groups.
  EXPECT_EQ(gv::require_value(cfg, "resolved_group_size"), "12");
  EXPECT_EQ(gv::require_value(cfg, "resolved_groups"), "11");
  EXPECT_EQ(gv::require_value(cfg, "id_order"), "bpe");
  EXPECT_EQ(gv::require_value(cfg, "steps"), "5");

  std::ifstream trace(run_dir / "loss.csv");
  std::string line;
  std::size_t rows = 0;
  std::getline(trace, line);
  while (std::getline(trace, line)) ++rows;
  EXPECT_EQ(rows, 5u);
}

TEST_F(Cli, EqualSeedsGiveIdenticalTraces) {
  const std::string common = "train --corpus " + corpus() +
                             " --vocab 128 --d 8 --layers 1 --seq 16 --batch 2 --steps 4"
                             " --val-fraction 0 --seed 3 --out ";
  ASSERT_EQ(run(common + (dir_ / "a").string()), 0) << log();
  ASSERT_EQ(run(common + (dir_ / "b").string()), 0) << log();
  EXPECT_EQ(slurp(dir_ / "a" / "loss.csv"), slurp(dir_ / "b" / "loss.csv"));
}

TEST_F(Cli, DenseTraceLeavesGroupColumnsEmpty) {
  ASSERT_EQ(run("train --corpus " + corpus() +
                " --vocab 128 --d 8 --layers 1 --seq 16 --batch 2 --steps 2 --head dense"
                " --val-fraction 0 --out " + (dir_ / "run").string()),
            0)
      << log();
  std::ifstream trace(dir_ / "run" / "loss.csv");
  std::string header, row;
  std::getline(trace, header);
  std::getline(trace, row);
  EXPECT_EQ(row.substr(row.size() - 2), ",,");
}

TEST_F(Cli, ConfigFileValuesAreOverriddenByFlags) {
  std::ofstream(dir_ / "run.cfg") << "# desk\nd = 8\nlayers = 1\nseq = 16\nbatch = 2\nsteps = 9\n";
  ASSERT_EQ(run("train --config " + (dir_ / "run.cfg").string() + " --corpus " + corpus() +
                " --vocab 128 --steps 3 --val-fraction 0 --out " + (dir_ / "run").string()),
            0)
      << log();
  const auto cfg = gv::read_key_value_file(dir_ / "run" / "config.txt");
  EXPECT_EQ(gv::require_value(cfg, "steps"), "3");
  EXPECT_EQ(gv::require_value(cfg, "d"), "8");
}

TEST_F(Cli, UnknownConfigKeyIsExit2) {
  std::ofstream(dir_ / "bad.cfg") << "depth = 3\n";
  EXPECT_EQ(run("train --config " + (dir_ / "bad.cfg").string() + " --corpus " + corpus()), 2);
}

TEST_F(Cli, MissingFileIsExit2WithPath) {
  EXPECT_EQ(run("train --corpus " + (dir_ / "nope.txt").string() + " --out " +
                (dir_ / "run").string()),
            2);
  EXPECT_NE(log().find("nope.txt"), std::string::npos);
}

TEST_F(Cli, BadFlagValuesAreExit2) {
  EXPECT_EQ(run("train --corpus " + corpus() + " --head softmax --out " + (dir_ / "r").string()),
            2);
  EXPECT_EQ(run("train --corpus " + corpus() + " --group-size zero --out " +
                (dir_ / "r").string()),
            2);
  EXPECT_EQ(run("frobnicate"), 2);
}

TEST_F(Cli, DivergenceIsExit3WithStep) {
  EXPECT_EQ(run("train --corpus " + corpus() +
                " --vocab 128 --d 8 --layers 1 --seq 16 --batch 2 --steps 10 --lr 1e38"
                " --val-fraction 0 --out " + (dir_ / "run").string()),
            3);
  EXPECT_NE(log().find("step"), std::string::npos);
}

TEST_F(Cli, EvalAndGenerateReadTheCheckpoint) {
  ASSERT_EQ(run("tokenize-train --corpus " + corpus() + " --vocab 128 --out " +
                (dir_ / "tok").string()),
            0);
  ASSERT_EQ(run("train --ids " + (dir_ / "tok" / "ids.txt").string() +
                " --d 8 --layers 1 --seq 16 --batch 2 --steps 3 --eval-windows 2 --out " +
                (dir_ / "run").string()),
            0)
      << log();
  const auto ckpt = (dir_ / "run" / "checkpoint").string();
  ASSERT_EQ(run("eval --checkpoint " + ckpt + " --ids " + (dir_ / "tok" / "ids.txt").string() +
                " --windows 4 --out " + (dir_ / "eval").string()),
            0)
      << log();
  const auto ev = gv::read_key_value_file(dir_ / "eval" / "eval.txt");
  const double nll = std::stod(gv::require_value(ev, "val_nll"));
  EXPECT_GT(nll, 0.0);
  EXPECT_LT(nll, 10.0);

  ASSERT_EQ(run("generate --checkpoint " + ckpt + " --tokenizer " +
                (dir_ / "tok" / "tokenizer.txt").string() +
                " --prompt Once --max-new 5 --temperature 0 --out " + (dir_ / "gen").string()),
            0)
      << log();
  const auto first = slurp(dir_ / "gen" / "generation.txt");
  ASSERT_EQ(run("generate --checkpoint " + ckpt + " --tokenizer " +
                (dir_ / "tok" / "tokenizer.txt").string() +
                " --prompt Once --max-new 5 --top-k 1 --out " + (dir_ / "gen").string()),
            0);
  EXPECT_EQ(slurp(dir_ / "gen" / "generation.txt"), first);
}

TEST_F(Cli, EvalRejectsVocabularyMismatch) {
  ASSERT_EQ(run("train --corpus " + corpus() +
                " --vocab 128 --d 8 --layers 1 --seq 16 --batch 2 --steps 1 --val-fraction 0"
                " --out " + (dir_ / "run").string()),
            0);
  EXPECT_EQ(run("eval --checkpoint " + (dir_ / "run" / "checkpoint").string() + " --corpus " +
                corpus() + " --vocab 100 --out " + (dir_ / "eval").string()),
            2);
}

TEST_F(Cli, BenchMemRatioAtDeskConfig) {
  ASSERT_EQ(run("bench-mem --batch 8 --seq 64 --vocab 4096 --out " + (dir_ / "mem").string()), 0)
      << log();
  std::ifstream csv(dir_ / "mem" / "cost.csv");
  std::string header, row;
  std::getline(csv, header);
  std::getline(csv, row);
  EXPECT_EQ(header, golden_header("cost"));
  std::vector<std::string> cells;
  std::stringstream ss(row);
  for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
  ASSERT_GE(cells.size(), 13u);
  EXPECT_EQ(cells[4], "64");  // auto group size
  EXPECT_EQ(cells[5], "64");
  const double dense = std::stod(cells[11]), grouped = std::stod(cells[12]);
  EXPECT_GE(dense / grouped, 10.0);
}

TEST_F(Cli, OutputRootFromEnvironment) {
  ASSERT_EQ(run("bench-mem --vocab 64 --seq 4 --batch 1", "GV_OUT=" + (dir_ / "root").string()),
            0)
      << log();
  EXPECT_TRUE(fs::exists(dir_ / "root" / "bench-mem" / "cost.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "root" / "bench-mem" / "config.txt"));
}

TEST_F(Cli, AblateCsvShape) {
  ASSERT_EQ(run("ablate --corpus " + corpus() +
                " --vocab 128 --d 8 --layers 1 --seq 16 --batch 2 --steps 2 --eval-windows 2"
                " --group-sizes 4,12,32 --out " + (dir_ / "abl").string()),
            0)
      << log();
  std::ifstream csv(dir_ / "abl" / "ablation.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, golden_header("ablation"));
  std::vector<long long> peaks;
  while (std::getline(csv, line)) peaks.push_back(std::stoll(line.substr(line.rfind(',') + 1)));
  ASSERT_EQ(peaks.size(), 3u);
  // 12 is ceil(sqrt(128)); both neighbours use more memory.
  EXPECT_LT(peaks[1], peaks[0]);
  EXPECT_LT(peaks[1], peaks[2]);
}

TEST_F(Cli, ThroughputAndClassifyCsvHeaders) {
  ASSERT_EQ(run("bench-throughput --d-list 8 --vocab 64 --layers 1 --seq 8 --trials 1 --out " +
                (dir_ / "thr").string()),
            0)
      << log();
  EXPECT_EQ(first_line(dir_ / "thr" / "throughput.csv"), golden_header("throughput"));
  ASSERT_EQ(run("classify --labels 16 --per-label 3 --hidden 8 --epochs 1 --out " +
                (dir_ / "cls").string()),
            0)
      << log();
  EXPECT_EQ(first_line(dir_ / "cls" / "classify.csv"), golden_header("classify"));
}

TEST_F(Cli, NegativeSigmaIsExit2) {
  EXPECT_EQ(run("classify --labels 4 --sigma -1 --out " + (dir_ / "cls").string()), 2);
}
