#include "pseudolabel/loop.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "binary_io.hpp"
#include "parallel.hpp"
#include "pseudolabel/error.hpp"

namespace pseudolabel {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

ModelShape model_shape(const GridGeometry& g, const RunConfig& c) {
  return ModelShape{g.features(), c.hidden1, c.hidden2, g.classes};
}

ClassifierState fresh_member(const ClassifierState& pretrained, const RunConfig& config, std::size_t m) {
  ClassifierState member = pretrained;
  member.seed = config.seed + m;
  member.epoch = 0;
  reset_momentum(member);
  if (config.reinit_head) reinit_head(member, member.seed);
  return member;
}

std::string num(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

void RunConfig::validate() const {
  if (models < 1) throw ParameterError("run: models must be >= 1");
  if (passes < 1) throw ParameterError("run: passes must be >= 1");
  if (repetitions < 1) throw ParameterError("run: repetitions must be >= 1");
  if (!(label_fraction > 0.0 && label_fraction <= 1.0)) {
    throw ParameterError("run: label fraction must lie in (0, 1]");
  }
  if (per_class_minimum < 1) throw ParameterError("run: per_class_minimum must be >= 1");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw ParameterError("run: test fraction must lie in [0, 1)");
  }
  if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f)) {
    throw ParameterError("run: dropout must lie in [0, 1)");
  }
  if (hidden1 == 0 || hidden2 == 0) throw ParameterError("run: hidden widths must be > 0");
  if (ece_bins == 0) throw ParameterError("run: ece_bins must be >= 1");
  selection.validate();
  pretrain.validate();
  first.validate();
  later.validate();
  for (float g : probe_gammas) {
    if (!(g > 0.0f && g < 1.0f)) throw ParameterError("run: probe gammas must lie in (0, 1)");
  }
  if (mc_dropout && selection_enabled && dropout_rate <= 0.0f) {
    throw ConfigError("run: MC dropout needs a dropout rate > 0");
  }
}

ClassifierState pretrain(const LabeledSet& source, const RunConfig& config,
                         std::vector<EpochStats>* history) {
  config.validate();
  if (source.empty()) throw ParameterError("pretrain: empty source set");
  ClassifierState state =
      init_classifier(model_shape(source.geometry(), config), config.dropout_rate, config.seed);
  if (config.pretrain.epochs == 0) return state;
  SeededRng rng = SeededRng(config.seed).fork(11);
  return train(std::move(state), source.grids(), TargetMatrix::from_labels(source.labels(), source.geometry().classes),
               config.pretrain, rng, history);
}

DenseTensor ensemble_probs(std::span<const ClassifierState> models, const DenseTensor& inputs) {
  if (models.empty()) throw ParameterError("evaluate: need at least one model");
  const std::size_t n = inputs.dim(0), k = models.front().shape.classes;
  std::vector<double> acc(n * k, 0.0);
  for (const auto& m : models) {
    const DenseTensor p = predict_probs(m, inputs);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += p[i];
  }
  DenseTensor out({n, k});
  for (std::size_t i = 0; i < acc.size(); ++i) {
    out[i] = static_cast<float>(acc[i] / static_cast<double>(models.size()));
  }
  return out;
}

Evaluation evaluate(std::span<const ClassifierState> models, const LabeledSet& test, std::size_t ece_bins) {
  if (test.empty()) throw ParameterError("evaluate: empty test set");
  const DenseTensor probs = ensemble_probs(models, test.grids());
  const std::vector<int> predicted = argmax_rows(probs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == test.labels()[i];
  return Evaluation{100.0 * static_cast<double>(correct) / static_cast<double>(test.size()),
                    ece(probs, test.labels(), ece_bins)};
}

AdaptResult adapt(const ClassifierState& pretrained, const LabeledSet& labeled, const UnlabeledPool& pool,
                  const RunConfig& config, const EvaluationChannel& channel,
                  const SelectionObserver& observer) {
  config.validate();
  pretrained.validate();
  if (labeled.empty()) throw ParameterError("adapt: empty labeled set");
  if (labeled.geometry().features() != pretrained.shape.inputs ||
      labeled.geometry().classes != pretrained.shape.classes ||
      (!pool.empty() && pool.geometry().features() != pretrained.shape.inputs)) {
    throw DimensionError("adapt: data geometry does not match the pretrained model");
  }
  if (channel.pool_truth && channel.pool_truth->labels.size() != pool.size()) {
    throw DimensionError("adapt: pool truth length differs from pool size");
  }
  const std::size_t M = config.models, K = pretrained.shape.classes, width = pretrained.shape.inputs;
  const TargetMatrix labeled_targets = TargetMatrix::from_labels(labeled.labels(), K);

  std::vector<ClassifierState> members;
  std::vector<SeededRng> rngs;
  for (std::size_t m = 0; m < M; ++m) {
    members.push_back(fresh_member(pretrained, config, m));
    rngs.push_back(SeededRng(members.back().seed).fork(17));
  }

  auto train_all = [&](const DenseTensor& inputs, const TargetMatrix& targets, const OptimizerConfig& opt,
                       std::vector<double>* curve) {
    std::vector<std::vector<EpochStats>> histories(M);
    detail::parallel_for(M, config.threads, [&](std::size_t m) {
      members[m] = train(std::move(members[m]), inputs, targets, opt, rngs[m], &histories[m]);
    });
    if (!curve) return;
    curve->assign(opt.epochs, 0.0);
    for (const auto& h : histories)
      for (const auto& e : h) (*curve)[e.epoch] += e.loss / static_cast<double>(M);
  };

  RunLog log;
  log.probe_gammas = config.probe_gammas;
  const SeededRng cube_root = SeededRng(config.seed).fork(101);
  for (std::size_t rep = 1; rep <= config.repetitions; ++rep) {
    RepetitionRecord rec;
    rec.repetition = rep;
    if (rep == 1) train_all(labeled.grids(), labeled_targets, config.first, nullptr);

    DenseTensor inputs = labeled.grids();
    TargetMatrix targets = labeled_targets;
    rec.pseudo_correct_fraction = kNaN;
    if (config.selection_enabled && !pool.empty()) {
      const PredictionCube cube =
          predict_cube(members, pool, config.passes, config.mc_dropout, cube_root.fork(rep).seed(), config.threads);
      const UncertaintySummary summary = summarize(cube);
      const SelectionMask mask = config.strategy == SelectionStrategy::voting
                                     ? vote(summary, config.selection)
                                     : select_gated(summary, config.selection);
      if (observer) observer(rep, summary, mask);

      for (float g : config.probe_gammas) {
        SelectionConfig probe = config.selection;
        probe.gamma = g;
        rec.selected_at_probe.push_back(vote(summary, probe).positive_count());
      }
      for (int c : unanimous_class(summary)) rec.unanimous += c >= 0;
      rec.selected = mask.positive_count();
      rec.negatives = mask.negative_count();
      rec.selection_fraction = static_cast<double>(rec.selected) / static_cast<double>(pool.size());
      if (channel.pool_truth && rec.selected > 0) {
        std::size_t right = 0;
        for (std::size_t n = 0; n < mask.rows; ++n) {
          right += mask.pseudo_label[n] >= 0 && mask.pseudo_label[n] == channel.pool_truth->labels[n];
        }
        rec.pseudo_correct_fraction = static_cast<double>(right) / static_cast<double>(rec.selected);
      }

      const PseudoLabeledRows rows = selected_rows(mask);
      if (!rows.pool_index.empty()) {
        inputs = DenseTensor({labeled.size() + rows.pool_index.size(), width});
        std::copy(labeled.grids().values().begin(), labeled.grids().values().end(), inputs.values().begin());
        for (std::size_t i = 0; i < rows.pool_index.size(); ++i) {
          const auto src = pool.grids().row(rows.pool_index[i]);
          std::copy(src.begin(), src.end(), inputs.row(labeled.size() + i).begin());
        }
        targets.append_rows(rows.targets);
      }
    }
    rec.train_rows = targets.rows();

    if (!config.warm_start && rep > 1) {
      for (std::size_t m = 0; m < M; ++m) members[m] = fresh_member(pretrained, config, m);
      train_all(inputs, targets, config.first, &rec.loss_curve);
    } else {
      train_all(inputs, targets, config.later, &rec.loss_curve);
    }

    if (channel.test && !channel.test->empty()) {
      const Evaluation e = evaluate(members, *channel.test, config.ece_bins);
      rec.test_accuracy = e.accuracy;
      rec.test_ece = e.ece;
    } else {
      rec.test_accuracy = kNaN;
      rec.test_ece = kNaN;
    }
    log.repetitions.push_back(std::move(rec));
  }
  log.final_accuracy = log.repetitions.back().test_accuracy;
  log.final_ece = log.repetitions.back().test_ece;
  return AdaptResult{std::move(members), std::move(log)};
}

bool bitwise_equal(const RunLog& a, const RunLog& b) {
  auto same = [](double x, double y) { return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y); };
  auto same_vec = [&](const std::vector<double>& x, const std::vector<double>& y) {
    return x.size() == y.size() && std::equal(x.begin(), x.end(), y.begin(), same);
  };
  if (a.probe_gammas != b.probe_gammas || a.repetitions.size() != b.repetitions.size() ||
      !same(a.final_accuracy, b.final_accuracy) || !same(a.final_ece, b.final_ece)) {
    return false;
  }
  for (std::size_t i = 0; i < a.repetitions.size(); ++i) {
    const auto& x = a.repetitions[i];
    const auto& y = b.repetitions[i];
    if (x.repetition != y.repetition || x.selected != y.selected || x.negatives != y.negatives ||
        x.unanimous != y.unanimous || x.train_rows != y.train_rows ||
        x.selected_at_probe != y.selected_at_probe || !same(x.test_accuracy, y.test_accuracy) ||
        !same(x.test_ece, y.test_ece) || !same(x.selection_fraction, y.selection_fraction) ||
        !same(x.pseudo_correct_fraction, y.pseudo_correct_fraction) || !same_vec(x.loss_curve, y.loss_curve)) {
      return false;
    }
  }
  return true;
}

void write_runlog_csv(const RunLog& log, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "repetition,test_accuracy,test_ece,selected,negatives,unanimous,selection_fraction,"
         "pseudo_correct_fraction,train_rows,final_loss";
  for (float g : log.probe_gammas) {
    char buf[32];
    const auto end = std::to_chars(buf, buf + sizeof buf, g).ptr;
    out << ",selected_gamma_" << std::string_view(buf, static_cast<std::size_t>(end - buf));
  }
  out << '\n';
  for (const auto& r : log.repetitions) {
    out << r.repetition << ',' << num(r.test_accuracy) << ',' << num(r.test_ece) << ',' << r.selected << ','
        << r.negatives << ',' << r.unanimous << ',' << num(r.selection_fraction) << ','
        << num(r.pseudo_correct_fraction) << ',' << r.train_rows << ','
        << (r.loss_curve.empty() ? std::string() : num(r.loss_curve.back()));
    for (std::size_t i = 0; i < log.probe_gammas.size(); ++i) {
      out << ',';
      if (i < r.selected_at_probe.size()) out << r.selected_at_probe[i];
    }
    out << '\n';
  }
  detail::write_text(path, out.str());
}

std::string runlog_summary_json(const RunLog& log) {
  auto value = [](double v) { return std::isnan(v) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(v); };
  nlohmann::ordered_json j;
  j["repetitions"] = log.repetitions.size();
  j["final_accuracy"] = value(log.final_accuracy);
  j["final_ece"] = value(log.final_ece);
  auto acc = nlohmann::ordered_json::array();
  auto sel = nlohmann::ordered_json::array();
  auto correct = nlohmann::ordered_json::array();
  for (const auto& r : log.repetitions) {
    acc.push_back(value(r.test_accuracy));
    sel.push_back(r.selection_fraction);
    correct.push_back(value(r.pseudo_correct_fraction));
  }
  j["accuracy_by_repetition"] = acc;
  j["selection_fraction_by_repetition"] = sel;
  j["pseudo_correct_by_repetition"] = correct;
  return j.dump(2) + "\n";
}

}  // namespace pseudolabel
