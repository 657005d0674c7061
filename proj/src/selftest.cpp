#include "pseudolabel/selftest.hpp"

#include <cmath>
#include <exception>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "pseudolabel/dataset.hpp"
#include "pseudolabel/model.hpp"
#include "pseudolabel/rng.hpp"
#include "pseudolabel/selection.hpp"
#include "pseudolabel/tensor.hpp"
#include "pseudolabel/uncertainty.hpp"

namespace pseudolabel {
namespace {

DenseTensor random_probs(SeededRng& rng, std::size_t rows, std::size_t classes) {
  DenseTensor logits({rows, classes});
  for (float& v : logits.values()) v = static_cast<float>(rng.gaussian(0.0, 3.0));
  return softmax(logits, 1);
}

PredictionCube random_cube(SeededRng& rng, std::size_t m, std::size_t c, std::size_t n, std::size_t k) {
  DenseTensor flat = random_probs(rng, m * c * n, k);
  return PredictionCube{flat.reshaped({m, c, n, k})};
}

bool matmul_matches_naive() {
  SeededRng rng(1);
  DenseTensor a({7, 13}), b({13, 5});
  for (float& v : a.values()) v = rng.uniform_float() - 0.5f;
  for (float& v : b.values()) v = rng.uniform_float() - 0.5f;
  const DenseTensor c = matmul(a, b);
  for (std::size_t i = 0; i < 7; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 13; ++k) s += static_cast<double>(a(i, k)) * b(k, j);
      if (c(i, j) != static_cast<float>(s)) return false;
    }
  }
  return true;
}

bool softmax_rows_are_distributions() {
  SeededRng rng(2);
  const DenseTensor p = random_probs(rng, 50, 4);
  for (std::size_t i = 0; i < 50; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      if (p(i, k) < 0.0f || p(i, k) > 1.0f) return false;
      s += p(i, k);
    }
    if (std::abs(s - 1.0) > 1e-6) return false;
  }
  return true;
}

bool open_gates_reduce_to_confidence() {
  SeededRng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const UncertaintySummary s = summarize(random_cube(rng, 2, 3, 40, 3));
    SelectionConfig cfg;
    cfg.negative_learning = true;
    cfg.kappa_p = cfg.kappa_n = 0.5f;
    if (!(select_uncertainty(s, cfg) == select_confidence(s.mean, cfg))) return false;
  }
  return true;
}

bool vote_accepts_only_unanimous_rows() {
  SeededRng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const UncertaintySummary s = summarize(random_cube(rng, 4, 2, 60, 2));
    SelectionConfig cfg;
    cfg.gamma = 0.7f;
    const SelectionMask mask = vote(s, cfg);
    const std::vector<int> agree = unanimous_class(s);
    for (std::size_t i = 0; i < mask.rows; ++i) {
      if (mask.pseudo_label[i] >= 0 && mask.pseudo_label[i] != agree[i]) return false;
    }
  }
  return true;
}

bool ece_is_zero_when_calibrated() {
  // Ten rows at confidence 0.8 with eight correct.
  DenseTensor p({10, 2});
  std::vector<int> labels;
  for (std::size_t i = 0; i < 10; ++i) {
    p(i, 0) = 0.8f;
    p(i, 1) = 0.2f;
    labels.push_back(i < 8 ? 0 : 1);
  }
  return std::abs(ece(p, labels, 10)) < 1e-6;
}

bool split_is_a_partition() {
  SynthConfig sc;
  sc.counts = {300, 40};
  sc.freq_bins = sc.time_bins = 8;
  const LabeledSet data = synth_generate(sc);
  const DatasetSplit s = split(data, SplitSpec{0.05, 5, 2, 0.2});
  std::vector<int> seen(data.size(), 0);
  for (auto i : s.labeled_index) ++seen[i];
  for (auto i : s.pool_index) ++seen[i];
  for (auto i : s.test_index) ++seen[i];
  for (int v : seen) {
    if (v != 1) return false;
  }
  return s.labeled.size() + s.pool.size() + s.test.size() == data.size();
}

bool gradients_match_finite_differences() {
  const ModelShape shape{12, 6, 5, 3};
  ClassifierState st = init_classifier(shape, 0.0f, 6);
  SeededRng rng(7);
  DenseTensor x({4, 12});
  for (float& v : x.values()) v = static_cast<float>(rng.gaussian(0.0, 1.0));
  const TargetMatrix t = TargetMatrix::from_labels({0, 2, 1, 2}, 3);
  ForwardCache cache;
  const ForwardResult f = forward(st, x, ForwardMode::eval, rng, &cache);
  const Gradients g = backward(st, x, cache, bce_loss(f.probs, t).grad_logits);
  auto loss_at = [&](const ClassifierState& s) {
    return bce_loss(forward(s, x, ForwardMode::eval, rng).probs, t).loss;
  };
  for (std::size_t p = 0; p < st.params.size(); ++p) {
    ClassifierState probe = st;
    const float eps = 1e-2f;
    probe.params[p].values()[0] += eps;
    const double up = loss_at(probe);
    probe.params[p].values()[0] -= 2 * eps;
    const double down = loss_at(probe);
    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = g.params[p].values()[0];
    if (std::abs(numeric - analytic) > 1e-3 + 1e-2 * std::abs(analytic)) return false;
  }
  return true;
}

bool training_is_deterministic() {
  const ModelShape shape{16, 8, 4, 2};
  SeededRng data_rng(8);
  DenseTensor x({30, 16});
  for (float& v : x.values()) v = static_cast<float>(data_rng.gaussian(0.0, 1.0));
  std::vector<int> y;
  for (std::size_t i = 0; i < 30; ++i) y.push_back(static_cast<int>(i % 2));
  const TargetMatrix t = TargetMatrix::from_labels(y, 2);
  OptimizerConfig opt;
  opt.epochs = 3;
  opt.batch_size = 8;
  auto run = [&] {
    SeededRng rng(9);
    return train(init_classifier(shape, 0.3f, 10), x, t, opt, rng);
  };
  return run() == run();
}

}  // namespace

bool run_selftest(std::ostream& out) {
  const std::vector<std::pair<std::string, std::function<bool()>>> checks{
      {"matmul matches naive loop", matmul_matches_naive},
      {"softmax rows are distributions", softmax_rows_are_distributions},
      {"open uncertainty gates reduce to confidence", open_gates_reduce_to_confidence},
      {"vote accepts only unanimous rows", vote_accepts_only_unanimous_rows},
      {"ece is zero when calibrated", ece_is_zero_when_calibrated},
      {"split is a partition", split_is_a_partition},
      {"gradients match finite differences", gradients_match_finite_differences},
      {"training is deterministic", training_is_deterministic},
  };
  bool all = true;
  for (const auto& [name, fn] : checks) {
    bool ok = false;
    try {
      ok = fn();
    } catch (const std::exception& e) {
      out << "  exception: " << e.what() << "\n";
    }
    out << (ok ? "PASS " : "FAIL ") << name << "\n";
    all = all && ok;
  }
  return all;
}

}  // namespace pseudolabel
