// Acceptance run: one verdict line per criterion, exit status 0 only when all
// requested criteria pass. `--only 1,2,9` restricts the run.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "model_oracle.hpp"
#include "oracles.hpp"
#include "pseudolabel/dataset.hpp"
#include "pseudolabel/loop.hpp"
#include "pseudolabel/model.hpp"
#include "pseudolabel/selection.hpp"
#include "pseudolabel/uncertainty.hpp"
#include "test_util.hpp"

using namespace pseudolabel;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  int id;
  std::string name;
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Random thresholds; a fifth of the time a threshold is set to a value that
// occurs in the data so the >= / <= edges are exercised.
SelectionConfig random_config(SeededRng& rng, const std::vector<float>& values) {
  auto pick = [&](float fallback) {
    return rng.uniform_double() < 0.2 ? values[rng.index(values.size())] : fallback;
  };
  SelectionConfig c;
  c.gamma = std::clamp(pick(0.5f + 0.49f * rng.uniform_float()), 0.01f, 0.99f);
  c.tau_n = std::min(pick(0.2f * rng.uniform_float()), 0.3f);
  c.tau_p = std::max(pick(0.4f + 0.6f * rng.uniform_float()), c.tau_n + 0.01f);
  c.kappa_p = 0.2f * rng.uniform_float();
  c.kappa_n = 0.05f * rng.uniform_float();
  c.negative_learning = rng.uniform_double() < 0.5;
  return c;
}

std::size_t mismatches(const SelectionMask& a, const SelectionMask& b) {
  if (a.rows != b.rows || a.classes != b.classes) return a.g.size() + b.g.size() + 1;
  std::size_t bad = 0;
  for (std::size_t i = 0; i < a.g.size(); ++i) bad += a.g[i] != b.g[i] || a.polarity[i] != b.polarity[i];
  for (std::size_t r = 0; r < a.rows; ++r) bad += a.pseudo_label[r] != b.pseudo_label[r];
  return bad;
}

Verdict criterion1() {
  const auto t0 = Clock::now();
  SeededRng rng(0xC1);
  std::size_t bad = 0, cases = 0;
  for (; cases < 10000; ++cases) {
    const std::size_t k = cases % 2 ? 2 : 4, m = 1 + rng.index(4), c = 1 + rng.index(5);
    const DenseTensor p = oracle::random_probs(rng, 200, k);
    const PredictionCube cube = oracle::random_cube(rng, m, c, 200, k);
    const UncertaintySummary s = summarize(cube);
    const oracle::Pooled pooled = oracle::pool(cube);

    std::vector<float> values(p.values().begin(), p.values().end());
    values.insert(values.end(), pooled.mean.begin(), pooled.mean.end());
    const SelectionConfig cfg = random_config(rng, values);
    bad += mismatches(select_confidence(p, cfg), oracle::confidence(p, cfg));
    bad += mismatches(select_uncertainty(s, cfg), oracle::uncertainty(pooled, 200, k, cfg));
    bad += mismatches(vote(s, cfg), oracle::vote(cube, cfg));
  }
  const double t = seconds_since(t0);
  return {1, "selection oracle equivalence", bad == 0 && t < 30.0,
          std::to_string(bad) + " mismatches over " + std::to_string(cases) + " cases in " + fmt("%.1f s", t)};
}

Verdict criterion2() {
  SeededRng rng(0xC2);
  std::size_t differing = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t k = i % 2 ? 2 : 4;
    const PredictionCube cube = oracle::random_cube(rng, 1 + rng.index(4), 1 + rng.index(5), 200, k);
    const UncertaintySummary s = summarize(cube);
    SelectionConfig cfg = random_config(rng, std::vector<float>(s.mean.values().begin(), s.mean.values().end()));
    cfg.kappa_p = cfg.kappa_n = 0.5f;
    differing += !(select_uncertainty(s, cfg) == select_confidence(s.mean, cfg));
  }
  return {2, "gate reduction identity", differing == 0,
          std::to_string(differing) + " of 1000 summaries differ"};
}

// ---- end-to-end setup shared by criteria 3, 5, 6, 8, 10 ----------------------

struct Seeded {
  LabeledSet source;
  LabeledSet target;
  std::optional<ClassifierState> pretrained;
};

RunConfig e2e_config(std::uint64_t seed, double fraction) {
  RunConfig c;  // M=4, C=5, gamma=0.9, 7 repetitions by default
  c.seed = seed;
  c.label_fraction = fraction;
  c.threads = std::max(1u, std::thread::hardware_concurrency());
  return c;
}

class EndToEnd {
 public:
  const ClassifierState& pretrained(std::uint64_t seed) {
    Seeded& s = data(seed);
    if (!s.pretrained) s.pretrained = pretrain(s.source, e2e_config(seed, 0.01));
    return *s.pretrained;
  }

  DatasetSplit split_for(std::uint64_t seed, double fraction) {
    const RunConfig c = e2e_config(seed, fraction);
    return split(data(seed).target, SplitSpec{fraction, seed, c.per_class_minimum, c.test_fraction});
  }

  // Cached by (seed, fraction, mc, selection).
  const AdaptResult& run(std::uint64_t seed, double fraction, bool mc_dropout, bool selection) {
    const auto key = std::make_tuple(seed, fraction, mc_dropout, selection);
    if (auto it = results_.find(key); it != results_.end()) return it->second;
    return results_.emplace(key, fresh(seed, fraction, mc_dropout, selection)).first->second;
  }

  AdaptResult fresh(std::uint64_t seed, double fraction, bool mc_dropout, bool selection) {
    RunConfig c = e2e_config(seed, fraction);
    c.mc_dropout = mc_dropout;
    c.selection_enabled = selection;
    const DatasetSplit sp = split_for(seed, fraction);
    const auto t0 = Clock::now();
    AdaptResult r = adapt(pretrained(seed), sp.labeled, sp.pool, c, EvaluationChannel{&sp.pool_truth, &sp.test});
    std::printf("  seed %llu fraction %g mc %d selection %d: final %.2f%% (%.0f s)\n",
                static_cast<unsigned long long>(seed), fraction, mc_dropout, selection, r.log.final_accuracy,
                seconds_since(t0));
    std::fflush(stdout);
    return r;
  }

 private:
  Seeded& data(std::uint64_t seed) {
    auto it = data_.find(seed);
    if (it == data_.end()) {
      it = data_.emplace(seed, Seeded{synth_generate(source_regime(1000 + seed)),
                                      synth_generate(target_regime(2000 + seed)), std::nullopt})
               .first;
    }
    return it->second;
  }

  std::map<std::uint64_t, Seeded> data_;
  std::map<std::tuple<std::uint64_t, double, bool, bool>, AdaptResult> results_;
};

constexpr std::uint64_t kSeeds = 5;

Verdict criterion3(EndToEnd& e2e) {
  SeededRng rng(0xC3);
  std::size_t cube_violations = 0;
  SelectionConfig cfg;
  for (int i = 0; i < 1000; ++i) {
    const UncertaintySummary s = summarize(oracle::random_cube(rng, 1 + rng.index(4), 1 + rng.index(5), 200,
                                                               i % 2 ? 2 : 4));
    std::size_t prev = 0;
    for (float g : {0.99f, 0.9f, 0.7f}) {
      cfg.gamma = g;
      const std::size_t n = vote(s, cfg).positive_count();
      cube_violations += n < prev;
      prev = n;
    }
  }
  std::size_t reps = 0, strict = 0, violations = 0;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    for (const auto& r : e2e.run(seed, 0.01, true, true).log.repetitions) {
      const auto& n = r.selected_at_probe;  // probes 0.7, 0.9, 0.99
      ++reps;
      violations += !(n[2] <= n[1] && n[1] <= n[0]);
      strict += n[2] < n[1] && n[1] < n[0];
    }
  }
  const bool pass = cube_violations == 0 && violations == 0 && strict * 10 >= reps * 9;
  return {3, "gamma monotonicity", pass,
          std::to_string(cube_violations) + " violations on 1000 random cubes; end to end " +
              std::to_string(violations) + " violations, strict in " + std::to_string(strict) + "/" +
              std::to_string(reps) + " repetitions"};
}

Verdict criterion4() {
  // A draw counts for a layer when finite differences are defined there, i.e.
  // few enough coordinates sit within eps of a ReLU corner.
  const std::size_t draws = 6;
  std::vector<double> worst(kParamCount, 0.0);
  std::vector<std::size_t> valid(kParamCount, 0);
  for (std::uint64_t draw = 0; draw < draws; ++draw) {
    const std::size_t k = 2 + draw % 3;
    const ModelShape shape{12, 16, 12, k};
    SeededRng rng(0xC4 + draw);
    ClassifierState s = init_classifier(shape, 0.25f, 50 + draw);
    for (std::size_t p : {1u, 3u, 5u}) s.params[p] = rng_gaussian(rng, s.params[p].shape(), 0.0, 0.2);
    const DenseTensor x = rng_gaussian(rng, {6, 12}, 0.0, 1.0);
    TargetMatrix t(6, k);
    for (std::size_t i = 0; i < 6; ++i) {
      t.set(i, rng.index(k), 1);
      const std::size_t other = rng.index(k);
      if (t(i, other) == 0 && rng.uniform_double() < 0.5) t.set(i, other, -1);
    }
    ForwardCache cache;
    const ForwardResult f = forward(s, x, ForwardMode::train, rng, &cache);
    const Gradients g = backward(s, x, cache, bce_loss(f.probs, t).grad_logits);
    const auto numeric = model_oracle::central_differences(s, x, cache.mask, t, 1e-3);
    for (std::size_t p = 0; p < kParamCount; ++p) {
      const double e = model_oracle::relative_error(g.params[p], numeric.grads[p], numeric.kinked[p]);
      if (!std::isfinite(e)) continue;
      ++valid[p];
      worst[p] = std::max(worst[p], e);
    }
  }
  std::string detail = "worst relative error (draws)";
  bool pass = true;
  for (std::size_t p = 0; p < kParamCount; ++p) {
    detail += std::string(" ") + kParamNames[p] + "=" + fmt("%.1e", worst[p]) + "(" + std::to_string(valid[p]) + ")";
    pass = pass && valid[p] >= 3 && worst[p] < 1e-4;
  }
  return {4, "gradient correctness", pass, detail};
}

Verdict criterion5(EndToEnd& e2e) {
  const auto t0 = Clock::now();
  std::size_t good = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    const double pl = e2e.run(seed, 0.01, true, true).log.final_accuracy;
    const double base = e2e.run(seed, 0.01, true, false).log.final_accuracy;
    const bool ok = pl >= 95.0 && pl - base >= 2.0;
    good += ok;
    per_seed += fmt(" %.2f", pl) + fmt("/%.2f", base) + (ok ? "" : "*");
  }
  const double t = seconds_since(t0);
  return {5, "end-to-end trend", good >= 4 && t < 600.0,
          std::to_string(good) + "/5 seeds reach >= 95% and baseline + 2 pp (PL/baseline:" + per_seed + ") in " +
              fmt("%.0f s", t)};
}

Verdict criterion6(EndToEnd& e2e) {
  std::vector<double> means;
  std::string detail;
  for (double fraction : {0.005, 0.01, 0.05}) {
    double sum = 0.0;
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) sum += e2e.run(seed, fraction, true, true).log.final_accuracy;
    means.push_back(sum / static_cast<double>(kSeeds));
    detail += fmt(" %g", fraction * 100.0) + "%:" + fmt("%.3f", means.back());
  }
  const bool pass = means[0] <= means[1] && means[1] <= means[2];
  return {6, "fraction ordering", pass, "mean final accuracy" + detail};
}

Verdict criterion7() {
  SeededRng rng(0xC7);
  std::size_t unequal = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t k = 2 + rng.index(4), n = 1 + rng.index(400), bins = 1 + rng.index(20);
    const DenseTensor p = oracle::random_probs(rng, n, k);
    std::vector<int> y(n);
    for (int& v : y) v = static_cast<int>(rng.index(k));
    unequal += ece(p, y, bins) != oracle::ece(p, y, bins);
  }
  // Calibrated by construction: groups at binary-exact confidences whose hit
  // rate equals the confidence.
  struct Level {
    float conf;
    std::size_t hits, group;
  };
  const Level levels[] = {{0.5f, 1, 2}, {0.625f, 5, 8}, {0.75f, 3, 4}, {0.875f, 7, 8}, {1.0f, 1, 1}};
  std::size_t nonzero = 0;
  for (int i = 0; i < 100; ++i) {
    std::vector<float> rows;
    std::vector<int> y;
    for (const Level& l : levels) {
      const std::size_t groups = rng.index(5);
      for (std::size_t g = 0; g < groups * l.group; ++g) {
        rows.insert(rows.end(), {l.conf, 1.0f - l.conf});
        y.push_back(g % l.group < l.hits ? 0 : 1);
      }
    }
    if (y.empty()) continue;
    nonzero += ece(DenseTensor({y.size(), 2}, std::move(rows)), y, 10) != 0.0;
  }
  return {7, "ECE exactness", unequal == 0 && nonzero == 0,
          std::to_string(unequal) + "/1000 recount mismatches, " + std::to_string(nonzero) +
              "/100 calibrated cases with nonzero ECE"};
}

Verdict criterion8(EndToEnd& e2e) {
  const AdaptResult& first = e2e.run(0, 0.01, true, true);
  const AdaptResult second = e2e.fresh(0, 0.01, true, true);
  bool same_bytes = first.models.size() == second.models.size();
  testing_util::TempDir dir;
  for (std::size_t m = 0; same_bytes && m < first.models.size(); ++m) {
    const auto a = dir / ("a" + std::to_string(m)), b = dir / ("b" + std::to_string(m));
    save_checkpoint(first.models[m], a);
    save_checkpoint(second.models[m], b);
    same_bytes = testing_util::slurp(a / "weights.bin") == testing_util::slurp(b / "weights.bin") &&
                 testing_util::slurp(a / "manifest.json") == testing_util::slurp(b / "manifest.json");
  }
  const bool logs = bitwise_equal(first.log, second.log);
  return {8, "determinism", logs && same_bytes && first.models == second.models,
          std::string("run logs ") + (logs ? "identical" : "differ") + ", checkpoints " +
              (same_bytes ? "identical" : "differ")};
}

Verdict criterion9() {
  SynthConfig sc;
  sc.counts = {12200, 1000};
  sc.freq_bins = sc.time_bins = 8;
  sc.bandwidth = {2.0, 6.0};
  sc.seed = 9;
  const LabeledSet data = synth_generate(sc);
  const LabeledPoolSplit s = split_labeled(data, SplitSpec{0.005, 9, 5, 0.0});
  const auto counts = s.labeled.class_counts();

  std::vector<std::size_t> all = s.labeled_index;
  all.insert(all.end(), s.pool_index.begin(), s.pool_index.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expect(data.size());
  std::iota(expect.begin(), expect.end(), 0);
  bool partition = all == expect && s.pool.size() == s.pool_index.size();
  for (std::size_t i = 0; partition && i < s.labeled_index.size(); ++i) {
    partition = s.labeled.labels()[i] == data.labels()[s.labeled_index[i]];
  }
  for (std::size_t i = 0; partition && i < s.pool_index.size(); ++i) {
    partition = s.pool_truth.labels[i] == data.labels()[s.pool_index[i]];
  }
  const bool pass = counts.size() == 2 && counts[0] == 61 && counts[1] == 5 && partition;
  return {9, "split fidelity", pass,
          std::to_string(counts[0]) + "/" + std::to_string(counts.size() > 1 ? counts[1] : 0) +
              " labeled, partition " + (partition ? "verified" : "broken")};
}

Verdict criterion10(EndToEnd& e2e) {
  std::size_t good = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    const double combined = e2e.run(seed, 0.01, true, true).log.final_accuracy;
    const double ensemble = e2e.run(seed, 0.01, false, true).log.final_accuracy;
    const bool ok = ensemble >= combined - 1.0;
    good += ok;
    per_seed += fmt(" %.2f", ensemble) + fmt("/%.2f", combined) + (ok ? "" : "*");
  }
  return {10, "ensemble-only vs combined", good >= 3,
          std::to_string(good) + "/5 seeds within 1 pp or above (ensemble/combined:" + per_seed + ")"};
}

std::set<int> parse_only(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::strcmp(argv[i], "--only") != 0) continue;
    std::stringstream in(argv[i + 1]);
    for (std::string item; std::getline(in, item, ',');) only.insert(std::stoi(item));
  }
  if (only.empty()) {
    for (int c = 1; c <= 10; ++c) only.insert(c);
  }
  return only;
}

}  // namespace

int main(int argc, char** argv) {
  const std::set<int> only = parse_only(argc, argv);
  EndToEnd e2e;
  std::vector<Verdict> verdicts;
  auto check = [&](int id, auto&& fn) {
    if (!only.count(id)) return;
    verdicts.push_back(fn());
    const Verdict& v = verdicts.back();
    std::printf("criterion %d %s: %s (%s)\n", v.id, v.pass ? "PASS" : "FAIL", v.name.c_str(), v.detail.c_str());
    std::fflush(stdout);
  };
  check(1, criterion1);
  check(2, criterion2);
  check(4, criterion4);
  check(7, criterion7);
  check(9, criterion9);
  check(5, [&] { return criterion5(e2e); });
  check(3, [&] { return criterion3(e2e); });
  check(8, [&] { return criterion8(e2e); });
  check(10, [&] { return criterion10(e2e); });
  check(6, [&] { return criterion6(e2e); });

  std::sort(verdicts.begin(), verdicts.end(), [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
  std::printf("\nsummary\n");
  std::size_t passed = 0;
  for (const Verdict& v : verdicts) {
    std::printf("criterion %d %s: %s\n", v.id, v.pass ? "PASS" : "FAIL", v.name.c_str());
    passed += v.pass;
  }
  std::printf("%zu/%zu criteria passed\n", passed, verdicts.size());
  return passed == verdicts.size() ? 0 : 1;
}
