#include <doctest.h>

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "pseudolabel/error.hpp"
#include "pseudolabel/loop.hpp"
#include "test_util.hpp"

using namespace pseudolabel;

namespace {

struct Fixture {
  DatasetSplit split;
  RunConfig cfg;
  ClassifierState pretrained;
};

Fixture small(std::uint64_t seed = 3) {
  SynthConfig s;
  s.counts = {60, 40};
  s.freq_bins = 8;
  s.time_bins = 8;
  s.bandwidth = {3.0, 6.0};
  s.snr_db = {6.0, 12.0};
  s.seed = seed;
  Fixture f;
  f.cfg.models = 2;
  f.cfg.passes = 2;
  f.cfg.repetitions = 3;
  f.cfg.hidden1 = 16;
  f.cfg.hidden2 = 8;
  f.cfg.pretrain.epochs = 5;
  f.cfg.pretrain.milestones = {3};
  f.cfg.first.epochs = 4;
  f.cfg.first.milestones = {2};
  f.cfg.later.epochs = 3;
  f.cfg.later.milestones = {2};
  f.cfg.label_fraction = 0.1;
  f.cfg.selection.gamma = 0.6f;
  f.cfg.seed = seed;
  f.split = split(synth_generate(s), SplitSpec{0.1, seed, 5, 0.2});
  f.pretrained = pretrain(f.split.labeled, f.cfg);
  return f;
}

}  // namespace

TEST_CASE("run config validation") {
  RunConfig c;
  CHECK_NOTHROW(c.validate());
  c.models = 0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = RunConfig{};
  c.label_fraction = 0.0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = RunConfig{};
  c.probe_gammas = {1.0f};
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = RunConfig{};
  c.dropout_rate = 0.0f;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.mc_dropout = false;
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("adapt is bit-reproducible, including across thread counts") {
  Fixture f = small();
  const EvaluationChannel ch{&f.split.pool_truth, &f.split.test};
  const AdaptResult a = adapt(f.pretrained, f.split.labeled, f.split.pool, f.cfg, ch);
  const AdaptResult b = adapt(f.pretrained, f.split.labeled, f.split.pool, f.cfg, ch);
  CHECK(bitwise_equal(a.log, b.log));
  CHECK(a.models == b.models);
  f.cfg.threads = 2;
  const AdaptResult c = adapt(f.pretrained, f.split.labeled, f.split.pool, f.cfg, ch);
  CHECK(bitwise_equal(a.log, c.log));
  CHECK(a.models == c.models);

  testing_util::TempDir dir;
  save_checkpoint(a.models[0], dir / "m0");
  save_checkpoint(c.models[0], dir / "m1");
  CHECK(testing_util::slurp(dir / "m0" / "weights.bin") == testing_util::slurp(dir / "m1" / "weights.bin"));

  f.cfg.seed = 4;
  const AdaptResult d = adapt(f.pretrained, f.split.labeled, f.split.pool, f.cfg, ch);
  CHECK_FALSE(d.models == a.models);
}

TEST_CASE("ground truth only affects the log, never the weights") {
  const Fixture f = small();
  const AdaptResult blind = adapt(f.pretrained, f.split.labeled, f.split.pool, f.cfg);
  const AdaptResult seen = adapt(f.pretrained, f.split.labeled, f.split.pool, f.cfg,
                                 EvaluationChannel{&f.split.pool_truth, &f.split.test});
  CHECK(blind.models == seen.models);
  CHECK(std::isnan(blind.log.final_accuracy));
  CHECK_FALSE(std::isnan(seen.log.final_accuracy));
}

TEST_CASE("each repetition trains on the labeled rows plus unanimous pseudo-labels") {
  Fixture f = small();
  f.cfg.models = 3;
  std::vector<std::size_t> seen;
  const auto observer = [&](std::size_t rep, const UncertaintySummary& s, const SelectionMask& mask) {
    seen.push_back(rep);
    const std::vector<int> agreed = unanimous_class(s);
    for (std::size_t n = 0; n < mask.rows; ++n) {
      if (mask.pseudo_label[n] >= 0) CHECK(agreed[n] == mask.pseudo_label[n]);
    }
  };
  const AdaptResult r = adapt(f.pretrained, f.split.labeled, f.split.pool, f.cfg, {}, observer);
  CHECK(seen == std::vector<std::size_t>{1, 2, 3});
  REQUIRE(r.log.repetitions.size() == 3);
  CHECK(r.log.repetitions.back().selected > 0);
  for (const auto& rec : r.log.repetitions) {
    CHECK(rec.train_rows == f.split.labeled.size() + rec.selected);
    CHECK(rec.selected_at_probe.size() == 3);
    CHECK(rec.selected_at_probe[2] <= rec.selected_at_probe[1]);
    CHECK(rec.selected_at_probe[1] <= rec.selected_at_probe[0]);
    CHECK(rec.loss_curve.size() == f.cfg.later.epochs);
    CHECK(rec.selection_fraction == doctest::Approx(static_cast<double>(rec.selected) / f.split.pool.size()));
  }
}

TEST_CASE("selection that accepts nothing matches the labeled-only baseline") {
  Fixture f = small();
  f.cfg.selection.gamma = 0.999999f;
  f.cfg.probe_gammas = {};
  const AdaptResult gated = adapt(f.pretrained, f.split.labeled, f.split.pool, f.cfg);
  for (const auto& rec : gated.log.repetitions) REQUIRE(rec.selected == 0);
  f.cfg.selection_enabled = false;
  const AdaptResult base = adapt(f.pretrained, f.split.labeled, f.split.pool, f.cfg);
  CHECK(gated.models == base.models);
  for (const auto& rec : base.log.repetitions) CHECK(rec.train_rows == f.split.labeled.size());
}

TEST_CASE("evaluate recounts argmax hits on the member mean") {
  ClassifierState a = init_classifier(ModelShape{64, 3, 3, 2}, 0.0f, 1);
  for (auto& p : a.params) std::fill(p.values().begin(), p.values().end(), 0.0f);
  // Head bias alone decides: a leans to class 1, b to class 0 by the same margin.
  ClassifierState b = a;
  a.params[5] = DenseTensor({2}, {0.0f, 1.0f});
  b.params[5] = DenseTensor({2}, {1.0f, 0.0f});
  const LabeledSet t(GridGeometry{8, 8, 2}, DenseTensor({3, 64}), {0, 1, 1});
  // A tie between the two members goes to class 0.
  const Evaluation tie = evaluate(std::vector<ClassifierState>{a, b}, t);
  CHECK(tie.accuracy == doctest::Approx(100.0 / 3.0));
  const Evaluation one = evaluate(std::vector<ClassifierState>{a}, t);
  CHECK(one.accuracy == doctest::Approx(200.0 / 3.0));
}

TEST_CASE("run log exports") {
  RunLog log;
  log.probe_gammas = {0.7f, 0.9f};
  RepetitionRecord r;
  r.repetition = 1;
  r.test_accuracy = 97.5;
  r.test_ece = 0.25;
  r.selected = 10;
  r.negatives = 2;
  r.unanimous = 12;
  r.selection_fraction = 0.5;
  r.pseudo_correct_fraction = std::nan("");
  r.train_rows = 15;
  r.selected_at_probe = {11, 10};
  r.loss_curve = {0.75, 0.5};
  log.repetitions.push_back(r);
  log.final_accuracy = 97.5;
  log.final_ece = 0.25;

  testing_util::TempDir dir;
  write_runlog_csv(log, dir / "runlog.csv");
  const std::string csv = testing_util::slurp(dir / "runlog.csv");
  CHECK(csv.rfind("repetition,test_accuracy,test_ece,selected,negatives,unanimous,selection_fraction,"
                  "pseudo_correct_fraction,train_rows,final_loss,selected_gamma_0.7,selected_gamma_0.9\n",
                  0) == 0);
  CHECK(csv.find("\n1,97.5,0.25,10,2,12,0.5,") != std::string::npos);
  CHECK(csv.find(",15,0.5,11,10\n") != std::string::npos);

  const auto j = nlohmann::json::parse(runlog_summary_json(log));
  CHECK(j["repetitions"] == 1);
  CHECK(j["final_accuracy"] == 97.5);
  CHECK(j["pseudo_correct_by_repetition"][0].is_null());
  CHECK(j["selection_fraction_by_repetition"][0] == 0.5);

  RunLog other = log;
  CHECK(bitwise_equal(log, other));
  other.repetitions[0].loss_curve[1] = std::nextafter(0.5, 1.0);
  CHECK_FALSE(bitwise_equal(log, other));
}
