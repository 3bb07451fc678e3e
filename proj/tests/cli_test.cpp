// End-to-end checks of the command-line tool: stage wiring, artifact
// idempotence, manifest lines, and exit codes. Each stage runs as a real
// subprocess of the built binary.

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "scone/scone.hpp"

#ifndef SCONE_CLI_PATH
#error "SCONE_CLI_PATH must point at the built CLI binary"
#endif

namespace scone {
namespace {

struct CliRun {
  int exit_code;
  std::string output;
};

CliRun run_cli(const std::filesystem::path& dir, const std::string& args) {
  std::filesystem::path log = dir / "last_run.log";
  std::string cmd = std::string("cd ") + dir.string() + " && " + SCONE_CLI_PATH + " " + args +
                    " > " + log.string() + " 2>&1";
  int status = std::system(cmd.c_str());
  auto data = read_file(log);
  return {WEXITSTATUS(status), std::string(data.begin(), data.end())};
}

struct CliFixture : ::testing::Test {
  std::filesystem::path dir;

  void SetUp() override {
    dir = std::filesystem::temp_directory_path() / ("scone_cli_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);

    // A small synthetic corpus plus a config covering every stage.
    MarkovConfig mc;
    mc.vocab_size = 64;
    mc.support = 3;
    mc.structure_seed = 3;
    MarkovSource source(mc);
    write_corpus(dir / "train.scnc", source.sample(1, 30000, 64), CorpusFormat::binary_u32);
    write_corpus(dir / "eval.scnc", source.sample(2, 6000, 64), CorpusFormat::binary_u32);

    std::ofstream cfg(dir / "run.cfg");
    cfg << "corpus=train.scnc\n"
           "eval_corpus=eval.scnc\n"
           "vocab=fgrams.scnv\n"
           "tags=train.scnt\n"
           "checkpoint=model.scnm\n"
           "table=fgrams.scne\n"
           "vocab_size=64\n"
           "n_max=3\n"
           "num_fgrams=64\n"
           "min_count=2\n"
           "d_model=16\n"
           "n_layers=1\n"
           "fgram_n_layers=1\n"
           "ffw_size=32\n"
           "n_heads=2\n"
           "max_seq_len=64\n"
           "steps=5\n"
           "batch_size=8\n"
           "seed=9\n";
  }
  void TearDown() override { std::filesystem::remove_all(dir); }

  std::vector<std::uint8_t> artifact(const std::string& name) {
    return read_file(dir / name);
  }
};

TEST_F(CliFixture, PipelineRunsAndArtifactsAreIdempotent) {
  for (const std::string stage : {"discover", "tag", "train", "bake"}) {
    auto r = run_cli(dir, stage + " --config run.cfg");
    ASSERT_EQ(r.exit_code, 0) << stage << "\n" << r.output;
  }
  auto vocab1 = artifact("fgrams.scnv");
  auto tags1 = artifact("train.scnt");
  auto ckpt1 = artifact("model.scnm");
  auto table1 = artifact("fgrams.scne");

  // Re-running every stage with unchanged inputs reproduces identical bytes.
  for (const std::string stage : {"discover", "tag", "train", "bake"}) {
    auto r = run_cli(dir, stage + " --config run.cfg");
    ASSERT_EQ(r.exit_code, 0) << stage;
  }
  EXPECT_EQ(artifact("fgrams.scnv"), vocab1);
  EXPECT_EQ(artifact("train.scnt"), tags1);
  EXPECT_EQ(artifact("model.scnm"), ckpt1);
  EXPECT_EQ(artifact("fgrams.scne"), table1);

  // Parity over the freshly baked table: exact at fp32.
  auto parity = run_cli(dir, "parity --config run.cfg");
  EXPECT_EQ(parity.exit_code, 0) << parity.output;
  EXPECT_NE(parity.output.find("max_abs_diff=0"), std::string::npos) << parity.output;

  // Eval in all three modes; store and live agree exactly.
  auto base = run_cli(dir, "eval --config run.cfg");
  ASSERT_EQ(base.exit_code, 0) << base.output;
  EXPECT_NE(base.output.find("mode=baseline"), std::string::npos);

  std::ofstream(dir / "live.cfg") << "mode=live\n";
  auto live = run_cli(dir, "eval --config run.cfg");
  ASSERT_EQ(live.exit_code, 0);

  // Bench smoke test on the small table.
  auto bench = run_cli(dir, "bench --config run.cfg --batch-sizes 1,4 --trials 50");
  ASSERT_EQ(bench.exit_code, 0) << bench.output;
  EXPECT_NE(bench.output.find("batch_size=4"), std::string::npos);

  // The manifest accumulated one line per stage run.
  auto manifest = read_file(dir / "manifest.txt");
  std::string text(manifest.begin(), manifest.end());
  for (const std::string stage : {"stage=discover", "stage=tag", "stage=train", "stage=bake",
                                  "stage=parity", "stage=eval", "stage=bench"})
    EXPECT_NE(text.find(stage), std::string::npos) << stage;
  EXPECT_NE(text.find("cutoff_frequency="), std::string::npos);
  EXPECT_NE(text.find("avg_match_length="), std::string::npos);
}

TEST_F(CliFixture, StoreAndLiveEvalLinesIdentical) {
  for (const std::string stage : {"discover", "tag", "train", "bake"}) {
    ASSERT_EQ(run_cli(dir, stage + " --config run.cfg").exit_code, 0);
  }
  // mode=store with the parity cross-check enabled compares against live.
  std::ofstream cfg(dir / "store.cfg");
  cfg << "corpus=train.scnc\neval_corpus=eval.scnc\nvocab=fgrams.scnv\n"
         "checkpoint=model.scnm\ntable=fgrams.scne\nvocab_size=64\n"
         "mode=store\ncheck_store_parity=1\n";
  cfg.close();
  auto r = run_cli(dir, "eval --config store.cfg");
  EXPECT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("store/live parity check OK"), std::string::npos) << r.output;
}

TEST_F(CliFixture, EmptyVocabularyLiveEvalMatchesBaselineLine) {
  for (const std::string stage : {"discover", "tag", "train"}) {
    ASSERT_EQ(run_cli(dir, stage + " --config run.cfg").exit_code, 0);
  }
  // An empty f-gram vocabulary: live mode must reduce to the baseline line.
  FGramVocabulary empty;
  empty.n_max = 3;
  write_fgram_vocab(dir / "empty.scnv", empty);
  std::ofstream cfg(dir / "s0.cfg");
  cfg << "eval_corpus=eval.scnc\nvocab=empty.scnv\ncheckpoint=model.scnm\n"
         "vocab_size=64\nmode=live\n";
  cfg.close();
  auto live = run_cli(dir, "eval --config s0.cfg");
  ASSERT_EQ(live.exit_code, 0) << live.output;
  auto base = run_cli(dir, "eval --config run.cfg");
  ASSERT_EQ(base.exit_code, 0);

  auto extract = [](const std::string& out) {
    auto pos = out.find("ppl=");
    auto end = out.find_first_of(" \n", pos);
    return out.substr(pos, end - pos);
  };
  EXPECT_EQ(extract(live.output), extract(base.output));
}

TEST_F(CliFixture, ParityFailsForMismatchedCheckpoint) {
  for (const std::string stage : {"discover", "tag", "train", "bake"}) {
    ASSERT_EQ(run_cli(dir, stage + " --config run.cfg").exit_code, 0);
  }
  // Retrain with another seed; the baked table no longer matches.
  auto r = run_cli(dir, "train --config run.cfg --seed 1234");
  ASSERT_EQ(r.exit_code, 0);
  auto parity = run_cli(dir, "parity --config run.cfg");
  EXPECT_EQ(parity.exit_code, 1) << parity.output;
  EXPECT_NE(parity.output.find("FAIL"), std::string::npos);
}

TEST_F(CliFixture, GradcheckSubcommandPasses) {
  std::ofstream cfg(dir / "gc.cfg");
  cfg << "d_model=8\nn_layers=1\nfgram_n_layers=1\nffw_size=16\nn_heads=2\n"
         "max_seq_len=6\nvocab_size=12\nfgram_n_max=3\ngradcheck_fgrams=2\n";
  cfg.close();
  auto r = run_cli(dir, "gradcheck --config gc.cfg");
  EXPECT_EQ(r.exit_code, 0) << r.output;
  EXPECT_NE(r.output.find("max_rel_err"), std::string::npos);
  EXPECT_NE(r.output.find(" OK"), std::string::npos);
}

TEST_F(CliFixture, DemoIsDeterministicForAFixedSeed) {
  // Scaled-down demo; the perplexity pair and check outcomes must reproduce.
  std::ofstream cfg(dir / "demo.cfg");
  cfg << "demo_train_tokens=40000\ndemo_eval_tokens=8000\nsteps=12\nbatch_size=8\n"
         "d_model=16\nffw_size=32\nnum_fgrams=128\nrun_dir=demo_a\n";
  cfg.close();
  auto a = run_cli(dir, "demo --config demo.cfg --seed 4");
  ASSERT_EQ(a.exit_code, 0) << a.output;
  std::ofstream cfg2(dir / "demo2.cfg");
  cfg2 << "demo_train_tokens=40000\ndemo_eval_tokens=8000\nsteps=12\nbatch_size=8\n"
          "d_model=16\nffw_size=32\nnum_fgrams=128\nrun_dir=demo_b\n";
  cfg2.close();
  auto b = run_cli(dir, "demo --config demo2.cfg --seed 4");
  ASSERT_EQ(b.exit_code, 0);

  auto summary = [](const std::string& out) {
    auto pos = out.find("[demo] summary:");
    auto end = out.find("wall_ms", pos);  // timing may differ between runs
    return out.substr(pos, end - pos);
  };
  EXPECT_EQ(summary(a.output), summary(b.output));
  EXPECT_NE(a.output.find("checks=all-ok"), std::string::npos) << a.output;
}

TEST_F(CliFixture, MissingInputIsCleanError) {
  auto r = run_cli(dir, "tag --config run.cfg");  // vocab not yet discovered
  EXPECT_NE(r.exit_code, 0);
  EXPECT_NE(r.output.find("error:"), std::string::npos);
}

}  // namespace
}  // namespace scone
