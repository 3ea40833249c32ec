#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dln/dln.hpp"

namespace fs = std::filesystem;
using namespace dln;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Runs the CLI and returns its exit status. stdout/stderr go to `log`.
int run(const std::string& args, const fs::path& log, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + std::string(DLN_CLI_PATH) + " " + args + " > " +
                          log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("dln_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    std::ofstream(root_ / "small.cfg") << "source_train=200\nstyle_train=200\ntest_images=12\n";
    ASSERT_EQ(run("synth --config " + (root_ / "small.cfg").string() + " --out " + (root_ / "data").string(),
                  root_ / "synth.log"),
              0);
    ASSERT_EQ(run(train_args("base", 2), root_ / "base.log"), 0);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static std::string manifest() { return (root_ / "data" / "dataset.manifest").string(); }
  static std::string dir(const std::string& name) { return (root_ / name).string(); }
  static std::string train_args(const std::string& out, int epochs, const std::string& extra = "") {
    return "train --dataset " + manifest() + " --styles romance --hidden 16 --embed 8 --epochs " +
           std::to_string(epochs) + " --seed 5 --out " + dir(out) + " " + extra;
  }

  static fs::path root_;
};

fs::path CliTest::root_;

}  // namespace

TEST_F(CliTest, SynthWritesManifestAndSplits) {
  const auto d = root_ / "data";
  for (const char* f : {"dataset.manifest", "source.train.txt", "source.train.features", "test.txt", "test.features",
                        "test.nouns", "romance.train.txt", "lyrics.train.txt", "nouns.txt", "synonyms.txt",
                        "run.config"})
    EXPECT_TRUE(fs::exists(d / f)) << f;
  const auto kv = KeyValueFile::load((d / "dataset.manifest").string());
  EXPECT_EQ(kv.get("feature_dim"), "64");
  EXPECT_EQ(kv.get("styles"), "romance,lyrics");
  EXPECT_EQ(load_features((d / "test.features").string()).size(), 12u);
}

TEST_F(CliTest, SynthIsReproducibleAndRejectsBadSpecs) {
  ASSERT_EQ(run("synth --config " + (root_ / "small.cfg").string() + " --out " + dir("data2"), root_ / "s2.log"), 0);
  for (const char* f : {"dataset.manifest", "source.train.txt", "source.train.features", "romance.train.txt"})
    EXPECT_EQ(slurp(root_ / "data" / f), slurp(root_ / "data2" / f)) << f;

  std::ofstream(root_ / "bad.cfg") << "style.romance.templates=my {mood} {objects} .\n";
  EXPECT_EQ(run("synth --config " + (root_ / "bad.cfg").string() + " --out " + dir("bad"), root_ / "bad.log"), 2);
  EXPECT_NE(slurp(root_ / "bad.log").find("{mood}"), std::string::npos);
}

TEST_F(CliTest, TrainLogAndReproducibility) {
  const auto log = slurp(root_ / "base" / "train.log");
  std::istringstream is(log);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "epoch\tL_S\tL_T\tL");
  int rows = 0;
  while (std::getline(is, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 3);
  }
  EXPECT_EQ(rows, 2);

  ASSERT_EQ(run(train_args("base_again", 2), root_ / "again.log"), 0);
  EXPECT_EQ(slurp(root_ / "base" / "model.ckpt"), slurp(root_ / "base_again" / "model.ckpt"));
  EXPECT_EQ(slurp(root_ / "base" / "model.manifest"), slurp(root_ / "base_again" / "model.manifest"));
}

TEST_F(CliTest, ZeroEpochsSavesInitialization) {
  ASSERT_EQ(run(train_args("init", 0), root_ / "init.log"), 0);
  ModelConfig mc;
  mc.hidden = 16;
  mc.embed = 8;
  mc.image_dim = 64;
  mc.seed = 5;
  DLNModel<float> fresh(mc, Vocabulary::load((root_ / "init" / "vocab.txt").string()), {"romance"});
  std::ostringstream os;
  write_checkpoint(os, fresh.params());
  EXPECT_EQ(slurp(root_ / "init" / "model.ckpt"), os.str());
}

TEST_F(CliTest, FlagsOverrideConfigAndResolvedConfigIsWritten) {
  std::ofstream(root_ / "run.cfg") << "epochs=7\nlearning_rate=0.002\nhidden=16\nembed=8\n";
  ASSERT_EQ(run("train --config " + (root_ / "run.cfg").string() + " --dataset " + manifest() +
                    " --styles romance --epochs 1 --out " + dir("override"),
                root_ / "override.log"),
            0);
  const auto kv = KeyValueFile::load((root_ / "override" / "run.config").string());
  EXPECT_EQ(kv.get("epochs"), "1");
  EXPECT_EQ(kv.get("learning_rate"), "0.002");
  EXPECT_EQ(kv.get("lambda"), "0.5");
}

TEST_F(CliTest, ResumeWithOtherDimensionsExits3) {
  EXPECT_EQ(run("train --dataset " + manifest() + " --styles romance --hidden 12 --embed 8 --epochs 1 --resume " +
                    dir("base") + " --out " + dir("resumed"),
                root_ / "resume.log"),
            3);
  EXPECT_EQ(run(train_args("resumed_ok", 1, "--resume " + dir("base")), root_ / "resume_ok.log"), 0);
}

TEST_F(CliTest, GenerateBeamOneMatchesGreedy) {
  const std::string feats = (root_ / "data" / "test.features").string();
  ASSERT_EQ(run("generate --checkpoint " + dir("base") + " --features " + feats + " --style romance --beam 1 --out " +
                    dir("gen1"),
                root_ / "gen1.log"),
            0);
  const auto lines = read_lines((root_ / "gen1" / "generated.txt").string());
  const auto f = load_features(feats);
  ASSERT_EQ(lines.size(), f.size());
  auto model = DLNModel<float>::load(dir("base"));
  for (std::size_t i = 0; i < f.size(); ++i) {
    LatentStepModel<float> step(model.view("romance"), model.encode_image(f[i]));
    EXPECT_EQ(lines[i], join_tokens(model.vocab().decode(greedy_decode(step, model.config().max_len).tokens)));
  }
  ASSERT_EQ(run("generate --checkpoint " + dir("base") + " --features " + feats + " --style romance --out " +
                    dir("gen5"),
                root_ / "gen5.log"),
            0);
  EXPECT_EQ(read_lines((root_ / "gen5" / "generated.txt").string()).size(), f.size());
}

TEST_F(CliTest, UnknownStyleExits4AndListsStyles) {
  EXPECT_EQ(run("generate --checkpoint " + dir("base") + " --features " + (root_ / "data" / "test.features").string() +
                    " --style gothic --out " + dir("gen_bad"),
                root_ / "gen_bad.log"),
            4);
  EXPECT_NE(slurp(root_ / "gen_bad.log").find("registered styles: source romance"), std::string::npos);
}

TEST_F(CliTest, ExtendRegistersStyleAndRegularizerOrdersRuns) {
  const std::string common = "extend --checkpoint " + dir("base") + " --dataset " + manifest() + " --corpus " +
                             (root_ / "data" / "lyrics.train.txt").string() + " --style lyrics --seed 2 ";
  ASSERT_EQ(run(common + "--epochs 0 --out " + dir("ext0"), root_ / "ext0.log"), 0);
  ASSERT_EQ(run(common + "--epochs 2 --lambda2 0.1 --out " + dir("ext_reg"), root_ / "ext_reg.log"), 0);
  ASSERT_EQ(run(common + "--epochs 2 --lambda2 0 --out " + dir("ext_free"), root_ / "ext_free.log"), 0);
  EXPECT_EQ(KeyValueFile::load((root_ / "ext0" / "model.manifest").string()).get("styles"), "source,romance,lyrics");

  // No training: the old style decodes exactly as before.
  auto base = DLNModel<float>::load(dir("base"));
  auto ext0 = DLNModel<float>::load(dir("ext0"));
  for (const auto& f : load_features((root_ / "data" / "test.features").string())) {
    EXPECT_EQ(generate(base, f, "romance", 5).tokens, generate(ext0, f, "romance", 5).tokens);
    EXPECT_EQ(generate(base, f, "romance", 5).log_prob, generate(ext0, f, "romance", 5).log_prob);
  }
  EXPECT_EQ(regularizer_R(ext0), 0.0);

  auto reg = DLNModel<float>::load(dir("ext_reg"));
  auto free = DLNModel<float>::load(dir("ext_free"));
  EXPECT_LT(regularizer_R(reg), regularizer_R(free));
}

TEST_F(CliTest, EvalReportsScoresAndIsByteStable) {
  const std::string args = "eval --generated " + (root_ / "data" / "test.txt").string() + " --dataset " + manifest() +
                           " --style romance --out ";
  ASSERT_EQ(run(args + dir("eval1"), root_ / "eval1.log", "DLN_THREADS=1"), 0);
  ASSERT_EQ(run(args + dir("eval2"), root_ / "eval2.log", "DLN_THREADS=3"), 0);
  const auto report = slurp(root_ / "eval1" / "eval.report");
  EXPECT_EQ(report, slurp(root_ / "eval2" / "eval.report"));
  const auto kv = KeyValueFile::load((root_ / "eval1" / "eval.report").string());
  EXPECT_EQ(kv.get_double("content.f"), 1.0);  // the unstylish ground truth itself
  EXPECT_EQ(kv.get_double("bleu4"), 1.0);
  for (const char* k : {"random.content.f", "random.content.p", "random.content.r", "random.transfer_accuracy",
                        "transfer_accuracy", "classifier.train_accuracy"})
    EXPECT_TRUE(kv.has(k)) << k;
  EXPECT_LT(kv.get_double("random.content.f"), 1.0);
}

TEST_F(CliTest, GradcheckExitCodeMirrorsResult) {
  EXPECT_EQ(run("gradcheck --dims small", root_ / "gc.log"), 0);
  EXPECT_NE(slurp(root_ / "gc.log").find("result=PASS"), std::string::npos);
  EXPECT_EQ(run("gradcheck --dims small --inject-bug", root_ / "gc_bug.log"), 1);
  EXPECT_NE(slurp(root_ / "gc_bug.log").find("result=FAIL"), std::string::npos);
  EXPECT_EQ(run("gradcheck --dims tiny", root_ / "gc_bad.log"), 1);
}

TEST_F(CliTest, CommandsDoNotTouchInputs) {
  const auto before = slurp(root_ / "base" / "model.ckpt");
  const auto data_before = slurp(root_ / "data" / "dataset.manifest");
  EXPECT_EQ(run("generate --checkpoint " + dir("base") + " --features " + (root_ / "data" / "test.features").string() +
                    " --style romance --out " + dir("base"),
                root_ / "same_dir.log"),
            1);
  EXPECT_EQ(slurp(root_ / "base" / "model.ckpt"), before);
  EXPECT_EQ(slurp(root_ / "data" / "dataset.manifest"), data_before);
}

TEST_F(CliTest, MissingInputsFailCleanly) {
  EXPECT_EQ(run("train --dataset " + dir("nowhere/dataset.manifest") + " --out " + dir("t_missing"),
                root_ / "missing.log"),
            1);
  EXPECT_FALSE(fs::exists(root_ / "t_missing"));
  EXPECT_EQ(run("train --out " + dir("t_noargs"), root_ / "noargs.log"), 1);
  EXPECT_EQ(run("frobnicate", root_ / "unknown.log"), 1);
}
