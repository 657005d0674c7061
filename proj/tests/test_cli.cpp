#include <doctest.h>

#include <set>
#include <sstream>

#include "pseudolabel/cli.hpp"
#include "pseudolabel/config.hpp"
#include "pseudolabel/dataset.hpp"
#include "test_util.hpp"

using namespace pseudolabel;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// The value printed after `prefix` on its own line.
std::string field(const std::string& text, const std::string& prefix) {
  const auto at = text.find(prefix);
  REQUIRE(at != std::string::npos);
  const auto start = at + prefix.size();
  return text.substr(start, text.find('\n', start) - start);
}

const std::vector<std::string> kFast = {"--set", "pretrain_epochs=3",  "--set", "pretrain_milestones=2",
                                        "--set", "first_epochs=3",     "--set", "first_milestones=2",
                                        "--set", "later_epochs=2",     "--set", "later_milestones=1",
                                        "--set", "hidden1=16",         "--set", "hidden2=8"};

std::vector<std::string> with_fast(std::vector<std::string> args) {
  args.insert(args.end(), kFast.begin(), kFast.end());
  return args;
}

}  // namespace

TEST_CASE("usage errors exit 2, runtime failures exit 1") {
  testing_util::TempDir dir;
  Outcome o = run({"adapt"});
  CHECK(o.code == kExitUsage);
  CHECK(o.err.find("--data") != std::string::npos);

  o = run({"adapt", "--data", "x", "--bogus"});
  CHECK(o.code == kExitUsage);

  o = run({"adapt", "--data", (dir / "nothing").string()});
  CHECK(o.code == kExitUsage);
  CHECK(o.err.find("needs --checkpoint or --source") != std::string::npos);

  o = run({"eval", "--checkpoint", (dir / "none").string(), "--data", (dir / "none").string()});
  CHECK(o.code == kExitFailure);
  CHECK(o.err.rfind("error: ", 0) == 0);

  o = run({"synth", "--out", (dir / "d").string(), "--regime", "sideways"});
  CHECK(o.code == kExitUsage);

  o = run({"--help"});
  CHECK(o.code == kExitOk);
  CHECK(o.out.find("adapt") != std::string::npos);
}

TEST_CASE("bad configuration values exit 2") {
  testing_util::TempDir dir;
  REQUIRE(run({"synth", "--out", (dir / "src").string(), "--counts", "20", "20"}).code == kExitOk);
  Outcome o = run({"pretrain", "--source", (dir / "src").string(), "--out", dir.path().string(), "--set",
                   "gama=0.5"});
  CHECK(o.code == kExitUsage);
  CHECK(o.err.find("configuration error") != std::string::npos);
  o = run({"pretrain", "--source", (dir / "src").string(), "--out", dir.path().string(), "--gamma", "1.5"});
  CHECK(o.code == kExitUsage);
  CHECK(o.err.find("invalid parameter") != std::string::npos);
}

TEST_CASE("synth, pretrain, adapt, eval end to end") {
  testing_util::TempDir dir;
  const std::string src = (dir / "src").string(), tgt = (dir / "tgt").string(), runs = (dir / "runs").string();
  REQUIRE(run({"synth", "--regime", "source", "--counts", "40", "40", "--seed", "1", "--out", src}).code == 0);
  REQUIRE(run({"synth", "--regime", "target", "--counts", "150", "50", "--seed", "2", "--out", tgt}).code == 0);
  CHECK(load_dataset(tgt).size() == 200);

  Outcome pre = run(with_fast({"pretrain", "--source", src, "--out", runs, "--seed", "5"}));
  REQUIRE(pre.code == 0);
  const std::string checkpoint = field(pre.out, "checkpoint ");
  CHECK(fs::exists(fs::path(checkpoint) / "weights.bin"));
  CHECK(fs::exists(fs::path(checkpoint).parent_path() / "pretrain_loss.csv"));

  Outcome ad = run(with_fast({"adapt", "--data", tgt, "--checkpoint", checkpoint, "--out", runs, "--models", "2",
                              "--mc-passes", "2", "--repetitions", "2", "--fraction", "0.1", "--seed", "5"}));
  REQUIRE(ad.code == 0);
  const fs::path run_dir = field(ad.out, "run directory ");
  CHECK(run_dir.filename().string().find("-seed5") != std::string::npos);
  for (const char* f : {"config.txt", "runlog.csv", "summary.json", "selection/rep_1.csv", "selection/rep_2.csv",
                        "models/member_0/weights.bin", "models/member_1/weights.bin"}) {
    CHECK_MESSAGE(fs::exists(run_dir / f), std::string(f));
  }

  // Flags override --set, and the stamp records the resolved values.
  RunConfig stamped;
  apply_config_file(stamped, run_dir / "config.txt");
  CHECK(stamped.models == 2);
  CHECK(stamped.later.epochs == 2);
  CHECK(stamped.label_fraction == 0.1);

  // Re-running from the stamp alone reproduces the run log.
  Outcome again = run({"adapt", "--data", tgt, "--checkpoint", checkpoint, "--out", runs, "--config",
                       (run_dir / "config.txt").string()});
  REQUIRE(again.code == 0);
  const fs::path again_dir = field(again.out, "run directory ");
  CHECK(again_dir != run_dir);
  CHECK(testing_util::slurp(again_dir / "runlog.csv") == testing_util::slurp(run_dir / "runlog.csv"));
  CHECK(testing_util::slurp(again_dir / "models/member_1/weights.bin") ==
        testing_util::slurp(run_dir / "models/member_1/weights.bin"));

  Outcome ev = run({"eval", "--checkpoint", (run_dir / "models/member_0").string(), "--checkpoint",
                    (run_dir / "models/member_1").string(), "--data", tgt});
  CHECK(ev.code == 0);
  CHECK(ev.out.rfind("accuracy ", 0) == 0);
  CHECK(ev.out.find("samples 200") != std::string::npos);

  // A geometry mismatch between checkpoint and data is a runtime failure.
  SynthConfig small;
  small.freq_bins = small.time_bins = 16;
  save_dataset(synth_generate(small), dir / "odd");
  CHECK(run({"eval", "--checkpoint", checkpoint, "--data", (dir / "odd").string()}).code == kExitFailure);
}

TEST_CASE("adapt on a partially labeled dataset with a separate test set") {
  testing_util::TempDir dir;
  const std::string src = (dir / "src").string(), runs = (dir / "runs").string();
  REQUIRE(run({"synth", "--regime", "source", "--counts", "30", "30", "--out", src}).code == 0);
  SynthConfig sc = target_regime(4);
  sc.counts = {60, 30};
  SnapshotSet mixed = synth_generate(sc).storage();
  for (std::size_t i = 10; i < mixed.size(); ++i) mixed.labels[i] = i % 3 == 0 ? mixed.labels[i] : -1;
  save_dataset(mixed, dir / "mixed");
  sc.seed = 5;
  save_dataset(synth_generate(sc), dir / "test");

  Outcome o = run(with_fast({"adapt", "--data", (dir / "mixed").string(), "--source", src, "--test",
                             (dir / "test").string(), "--out", runs, "--models", "2", "--repetitions", "1"}));
  REQUIRE(o.code == 0);
  const fs::path run_dir = field(o.out, "run directory ");
  const std::string rep = testing_util::slurp(run_dir / "selection/rep_1.csv");
  std::size_t lines = 0;
  for (char c : rep) lines += c == '\n';
  std::size_t unlabeled = 0;
  for (int l : mixed.labels) unlabeled += l < 0;
  CHECK(lines == unlabeled + 1);
  CHECK(o.out.find("final accuracy") != std::string::npos);
  CHECK(o.out.find("final accuracy nan") == std::string::npos);
}

TEST_CASE("sweep dry run plans the full grid") {
  testing_util::TempDir dir;
  Outcome o = run({"sweep", "--data", (dir / "unused").string(), "--dry-run", "--out", dir.path().string()});
  REQUIRE(o.code == 0);
  const std::string plan = testing_util::slurp(field(o.out, "cells planned in "));
  std::istringstream in(plan);
  std::string line;
  std::getline(in, line);
  CHECK(line.rfind("cell,gamma,models,fraction,mc_dropout,negative_learning,seed", 0) == 0);
  std::set<std::string> cells, seeds, gammas;
  while (std::getline(in, line)) {
    std::vector<std::string> cols;
    std::istringstream row(line);
    for (std::string c; std::getline(row, c, ',');) cols.push_back(c);
    REQUIRE(cols.size() >= 7);
    cells.insert(cols[1] + cols[2] + cols[3] + cols[4] + cols[5]);
    gammas.insert(cols[1]);
    seeds.insert(cols[6]);
  }
  CHECK(cells.size() == 108);
  CHECK(seeds.size() == 108);
  CHECK(gammas == std::set<std::string>{"0.7", "0.9", "0.99"});
}

TEST_CASE("selftest subcommand") {
  const Outcome o = run({"selftest"});
  CHECK(o.code == 0);
  CHECK(o.out.find("FAIL") == std::string::npos);
}
