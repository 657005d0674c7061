#include "pseudolabel/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "binary_io.hpp"
#include "parallel.hpp"
#include "pseudolabel/config.hpp"
#include "pseudolabel/dataset.hpp"
#include "pseudolabel/error.hpp"
#include "pseudolabel/loop.hpp"
#include "pseudolabel/model.hpp"
#include "pseudolabel/rng.hpp"
#include "pseudolabel/selftest.hpp"

namespace pseudolabel {
namespace {

namespace fs = std::filesystem;

// Flags shared by every subcommand that runs the loop. Precedence:
// defaults < --config file < --set entries < dedicated flags.
struct RunOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<double> gamma;
  std::optional<std::size_t> models;
  std::optional<std::size_t> passes;
  std::optional<double> fraction;
  std::optional<std::size_t> repetitions;
  std::optional<bool> negative_learning;
  std::optional<bool> mc_dropout;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

void add_run_options(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("--config", o.config_path, "key=value configuration file");
  cmd->add_option("--set", o.sets, "override one key, key=value (repeatable)");
  cmd->add_option("--gamma", o.gamma, "voting threshold on the pooled mean softmax");
  cmd->add_option("--models", o.models, "ensemble size M");
  cmd->add_option("--mc-passes", o.passes, "MC dropout passes per member C");
  cmd->add_option("--fraction", o.fraction, "labeled fraction of the target training portion");
  cmd->add_option("--repetitions", o.repetitions, "pseudo-label/retrain rounds");
  cmd->add_option("--negative-learning", o.negative_learning, "harvest -1 targets (on/off)")
      ->expected(0, 1)
      ->default_str("true");
  cmd->add_option("--mc-dropout", o.mc_dropout, "MC dropout in the prediction cube (on/off)")
      ->expected(0, 1)
      ->default_str("true");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--threads", o.threads, "worker threads");
}

RunConfig resolve(const RunOptions& o) {
  RunConfig c;
  if (!o.config_path.empty()) apply_config_file(c, o.config_path);
  for (const std::string& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    std::string text = kv.substr(0, eq) + " = " + kv.substr(eq + 1);
    apply_config_text(c, text);
  }
  if (o.gamma) c.selection.gamma = static_cast<float>(*o.gamma);
  if (o.models) c.models = *o.models;
  if (o.passes) c.passes = *o.passes;
  if (o.fraction) c.label_fraction = *o.fraction;
  if (o.repetitions) c.repetitions = *o.repetitions;
  if (o.negative_learning) c.selection.negative_learning = *o.negative_learning;
  if (o.mc_dropout) c.mc_dropout = *o.mc_dropout;
  if (o.seed) c.seed = *o.seed;
  if (o.threads) c.threads = *o.threads;
  c.validate();
  return c;
}

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return os.str();
}

// One directory per run: run-<UTC timestamp>-seed<seed>, suffixed on collision.
fs::path make_run_dir(const fs::path& root, std::uint64_t seed) {
  const std::string base = "run-" + timestamp() + "-seed" + std::to_string(seed);
  fs::path dir = root / base;
  for (int n = 2; fs::exists(dir); ++n) dir = root / (base + "-" + std::to_string(n));
  detail::ensure_directory(dir);
  return dir;
}

void stamp(const fs::path& dir, const RunConfig& config) {
  detail::write_text(dir / "config.txt", format_config(config));
}

std::string percent(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

template <typename T>
std::string shortest(T v) {
  char buf[32];
  const auto end = std::to_chars(buf, buf + sizeof buf, v).ptr;
  return std::string(buf, end);
}

bool has_unlabeled(const SnapshotSet& set) {
  return std::any_of(set.labels.begin(), set.labels.end(), [](int y) { return y < 0; });
}

LabeledSet load_labeled(const fs::path& dir) {
  SnapshotSet set = load_dataset(dir);
  if (has_unlabeled(set)) throw ParameterError(dir.string() + ": dataset contains unlabeled rows");
  return LabeledSet(std::move(set));
}

void check_fit(const ClassifierState& model, const GridGeometry& g, const std::string& what) {
  if (model.shape.inputs != g.freq_bins * g.time_bins || model.shape.classes != g.classes) {
    throw DimensionError(what + ": checkpoint shape does not match the dataset geometry");
  }
}

// Pretrained weights come from --checkpoint or are trained from --source.
ClassifierState obtain_pretrained(const std::string& checkpoint, const std::string& source,
                                  const RunConfig& config, std::ostream& out) {
  if (!checkpoint.empty()) return load_checkpoint(checkpoint);
  LabeledSet src = load_labeled(source);
  out << "pretraining on " << src.size() << " source snapshots\n";
  return pretrain(src, config);
}

struct TargetData {
  LabeledSet labeled;
  UnlabeledPool pool;
  std::optional<PoolTruth> truth;
  std::optional<LabeledSet> test;
};

// A fully labeled dataset is split (test holdout, labeled sliver, pool) with
// the run's fraction and seed; a dataset carrying -1 labels is used as is.
TargetData prepare_target(const fs::path& data_dir, const std::string& test_dir, const RunConfig& c) {
  SnapshotSet set = load_dataset(data_dir);
  TargetData t;
  if (!test_dir.empty()) t.test = load_labeled(test_dir);
  if (has_unlabeled(set)) {
    std::vector<std::size_t> labeled, pool;
    for (std::size_t i = 0; i < set.size(); ++i) (set.labels[i] < 0 ? pool : labeled).push_back(i);
    const std::size_t d = set.geometry.freq_bins * set.geometry.time_bins;
    DenseTensor lg({labeled.size(), d}), pg({pool.size(), d});
    std::vector<int> ly;
    for (std::size_t r = 0; r < labeled.size(); ++r) {
      std::copy_n(set.grids.row(labeled[r]).begin(), d, lg.row(r).begin());
      ly.push_back(set.labels[labeled[r]]);
    }
    for (std::size_t r = 0; r < pool.size(); ++r) {
      std::copy_n(set.grids.row(pool[r]).begin(), d, pg.row(r).begin());
    }
    t.labeled = LabeledSet(set.geometry, std::move(lg), std::move(ly));
    t.pool = UnlabeledPool{set.geometry, std::move(pg)};
    return t;
  }
  LabeledSet all(std::move(set));
  SplitSpec spec{c.label_fraction, c.seed, c.per_class_minimum, c.test_fraction};
  if (t.test) {
    LabeledPoolSplit s = split_labeled(all, spec);
    t.labeled = std::move(s.labeled);
    t.pool = std::move(s.pool);
    t.truth = std::move(s.pool_truth);
  } else {
    DatasetSplit s = split(all, spec);
    t.labeled = std::move(s.labeled);
    t.pool = std::move(s.pool);
    t.truth = std::move(s.pool_truth);
    t.test = std::move(s.test);
  }
  return t;
}

void save_members(const std::vector<ClassifierState>& models, const fs::path& dir) {
  for (std::size_t m = 0; m < models.size(); ++m) {
    save_checkpoint(models[m], dir / "models" / ("member_" + std::to_string(m)));
  }
}

double mean_selection_fraction(const RunLog& log) {
  if (log.repetitions.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : log.repetitions) s += r.selection_fraction;
  return s / static_cast<double>(log.repetitions.size());
}

int cmd_synth(const std::string& regime, std::uint64_t seed, const std::vector<std::size_t>& counts,
              const std::string& out_dir, std::ostream& out) {
  SynthConfig sc = regime == "source" ? source_regime(seed) : target_regime(seed);
  if (!counts.empty()) sc.counts = counts;
  LabeledSet set = synth_generate(sc);
  save_dataset(set, out_dir);
  out << "wrote " << set.size() << " snapshots to " << out_dir << "\n";
  return kExitOk;
}

int cmd_pretrain(const std::string& source, const std::string& out_root, const RunOptions& opts,
                 std::ostream& out) {
  RunConfig config = resolve(opts);
  LabeledSet src = load_labeled(source);
  std::vector<EpochStats> history;
  ClassifierState model = pretrain(src, config, &history);
  const fs::path dir = make_run_dir(out_root, config.seed);
  stamp(dir, config);
  std::ostringstream csv;
  csv << "epoch,loss,accuracy\n";
  for (const auto& h : history) csv << h.epoch << ',' << h.loss << ',' << h.accuracy << '\n';
  detail::write_text(dir / "pretrain_loss.csv", csv.str());
  save_checkpoint(model, dir / "pretrained");
  const Evaluation e = evaluate(std::span(&model, 1), src, config.ece_bins);
  out << "source accuracy " << percent(e.accuracy) << "% ece " << e.ece << "\n";
  out << "checkpoint " << (dir / "pretrained").string() << "\n";
  return kExitOk;
}

int cmd_adapt(const std::string& data, const std::string& checkpoint, const std::string& source,
              const std::string& test, const std::string& out_root, const RunOptions& opts,
              std::ostream& out) {
  RunConfig config = resolve(opts);
  TargetData target = prepare_target(data, test, config);
  ClassifierState pretrained = obtain_pretrained(checkpoint, source, config, out);
  check_fit(pretrained, target.labeled.geometry(), data);

  const fs::path dir = make_run_dir(out_root, config.seed);
  stamp(dir, config);
  detail::ensure_directory(dir / "selection");
  const PoolTruth* truth = target.truth ? &*target.truth : nullptr;
  EvaluationChannel channel{truth, target.test ? &*target.test : nullptr};
  auto observer = [&](std::size_t rep, const UncertaintySummary& summary, const SelectionMask& mask) {
    write_selection_report(dir / "selection" / ("rep_" + std::to_string(rep) + ".csv"), summary, mask, truth);
  };
  AdaptResult result = adapt(pretrained, target.labeled, target.pool, config, channel, observer);

  write_runlog_csv(result.log, dir / "runlog.csv");
  detail::write_text(dir / "summary.json", runlog_summary_json(result.log));
  save_members(result.models, dir);
  for (const auto& r : result.log.repetitions) {
    out << "repetition " << r.repetition << " accuracy " << percent(r.test_accuracy) << "% selected "
        << r.selected << " (" << percent(100.0 * r.selection_fraction) << "%)\n";
  }
  out << "final accuracy " << percent(result.log.final_accuracy) << "% ece " << result.log.final_ece << "\n";
  out << "run directory " << dir.string() << "\n";
  return kExitOk;
}

struct SweepCell {
  float gamma;
  std::size_t models;
  double fraction;
  bool mc_dropout;
  bool negative_learning;
};

std::vector<SweepCell> sweep_grid() {
  std::vector<SweepCell> cells;
  for (float g : {0.7f, 0.9f, 0.99f})
    for (std::size_t m : {1u, 2u, 4u})
      for (double f : {0.005, 0.01, 0.05})
        for (bool mc : {true, false})
          for (bool nl : {false, true}) cells.push_back({g, m, f, mc, nl});
  return cells;
}

int cmd_sweep(const std::string& data, const std::string& checkpoint, const std::string& source,
              const std::string& out_root, const RunOptions& opts, bool dry_run, std::size_t limit,
              std::size_t jobs, std::ostream& out) {
  const RunConfig base = resolve(opts);
  std::vector<SweepCell> cells = sweep_grid();
  if (limit > 0 && limit < cells.size()) cells.resize(limit);
  const SeededRng seeds(base.seed);

  std::vector<RunConfig> configs;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    RunConfig c = base;
    c.selection.gamma = cells[i].gamma;
    c.models = cells[i].models;
    c.label_fraction = cells[i].fraction;
    c.mc_dropout = cells[i].mc_dropout;
    c.selection.negative_learning = cells[i].negative_learning;
    c.seed = seeds.fork(i).seed();
    if (jobs > 1) c.threads = 1;
    c.validate();
    configs.push_back(c);
  }

  const fs::path dir = make_run_dir(out_root, base.seed);
  stamp(dir, base);
  std::ostringstream table;
  table << std::setprecision(std::numeric_limits<double>::max_digits10);
  const char* header = "cell,gamma,models,fraction,mc_dropout,negative_learning,seed";
  if (dry_run) {
    table << header << '\n';
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const SweepCell& s = cells[i];
      table << i << ',' << shortest(s.gamma) << ',' << s.models << ',' << shortest(s.fraction) << ',' << s.mc_dropout << ','
            << s.negative_learning << ',' << configs[i].seed << '\n';
    }
    detail::write_text(dir / "plan.csv", table.str());
    out << cells.size() << " cells planned in " << (dir / "plan.csv").string() << "\n";
    return kExitOk;
  }

  ClassifierState pretrained = obtain_pretrained(checkpoint, source, base, out);
  std::vector<RunLog> logs(cells.size());
  // Every cell splits the target with its own seed; cells share nothing mutable.
  const SnapshotSet raw = load_dataset(data);
  detail::parallel_for(cells.size(), std::max<std::size_t>(1, jobs), [&](std::size_t i) {
    const fs::path cell_dir = dir / ("cell_" + std::to_string(i));
    detail::ensure_directory(cell_dir);
    stamp(cell_dir, configs[i]);
    SnapshotSet copy = raw;
    TargetData t;
    {
      LabeledSet all(std::move(copy));
      DatasetSplit s = split(all, SplitSpec{configs[i].label_fraction, configs[i].seed,
                                            configs[i].per_class_minimum, configs[i].test_fraction});
      t.labeled = std::move(s.labeled);
      t.pool = std::move(s.pool);
      t.truth = std::move(s.pool_truth);
      t.test = std::move(s.test);
    }
    check_fit(pretrained, t.labeled.geometry(), data);
    EvaluationChannel channel{&*t.truth, &*t.test};
    AdaptResult r = adapt(pretrained, t.labeled, t.pool, configs[i], channel);
    write_runlog_csv(r.log, cell_dir / "runlog.csv");
    logs[i] = std::move(r.log);
  });

  table << header << ",final_accuracy,final_ece,mean_selection_fraction,final_pseudo_correct\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const SweepCell& s = cells[i];
    const RunLog& log = logs[i];
    const double correct = log.repetitions.empty() ? std::nan("") : log.repetitions.back().pseudo_correct_fraction;
    table << i << ',' << shortest(s.gamma) << ',' << s.models << ',' << shortest(s.fraction) << ',' << s.mc_dropout << ','
          << s.negative_learning << ',' << configs[i].seed << ',' << log.final_accuracy << ','
          << log.final_ece << ',' << mean_selection_fraction(log) << ',' << correct << '\n';
  }
  detail::write_text(dir / "results.csv", table.str());
  out << cells.size() << " cells written to " << (dir / "results.csv").string() << "\n";
  return kExitOk;
}

int cmd_eval(const std::vector<std::string>& checkpoints, const std::string& data, std::size_t bins,
             std::ostream& out) {
  LabeledSet set = load_labeled(data);
  std::vector<ClassifierState> models;
  for (const auto& c : checkpoints) {
    models.push_back(load_checkpoint(c));
    check_fit(models.back(), set.geometry(), c);
  }
  const Evaluation e = evaluate(models, set, bins);
  out << "accuracy " << percent(e.accuracy) << "% ece " << e.ece << " samples " << set.size() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Uncertainty-gated pseudo-labeling for sparsely labeled spectrogram classifiers", "pseudolabel"};
  app.require_subcommand(1);

  std::string out_dir = "runs";
  std::string data, source, checkpoint, test, regime = "target";
  std::vector<std::string> checkpoints;
  std::vector<std::size_t> counts;
  std::uint64_t synth_seed = 0;
  std::size_t bins = kDefaultEceBins, limit = 0, jobs = 1;
  bool dry_run = false;
  RunOptions opts;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic chirp-vs-noise dataset");
  synth->add_option("--regime", regime, "source or target preset")
      ->check(CLI::IsMember({"source", "target"}));
  synth->add_option("--counts", counts, "per-class sample counts");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", out_dir, "dataset directory")->required();

  CLI::App* pre = app.add_subcommand("pretrain", "train the source model");
  pre->add_option("--source", source, "labeled source dataset")->required();
  pre->add_option("--out", out_dir, "root for run directories");
  add_run_options(pre, opts);

  CLI::App* ad = app.add_subcommand("adapt", "pseudo-label and retrain on a target dataset");
  ad->add_option("--data", data, "target dataset")->required();
  auto* ad_ck = ad->add_option("--checkpoint", checkpoint, "pretrained checkpoint directory");
  auto* ad_src = ad->add_option("--source", source, "source dataset to pretrain on");
  ad_ck->excludes(ad_src);
  ad->add_option("--test", test, "separate labeled test dataset");
  ad->add_option("--out", out_dir, "root for run directories");
  add_run_options(ad, opts);

  CLI::App* sw = app.add_subcommand("sweep", "grid over gamma, M, fraction, MC dropout and NL");
  sw->add_option("--data", data, "fully labeled target dataset")->required();
  auto* sw_ck = sw->add_option("--checkpoint", checkpoint, "pretrained checkpoint directory");
  auto* sw_src = sw->add_option("--source", source, "source dataset to pretrain on");
  sw_ck->excludes(sw_src);
  sw->add_option("--out", out_dir, "root for run directories");
  sw->add_flag("--dry-run", dry_run, "write the cell plan without training");
  sw->add_option("--limit", limit, "run only the first N cells");
  sw->add_option("--jobs", jobs, "cells run concurrently");
  add_run_options(sw, opts);

  CLI::App* ev = app.add_subcommand("eval", "score checkpoints on a labeled dataset");
  ev->add_option("--checkpoint", checkpoints, "checkpoint directory (repeat for an ensemble)")->required();
  ev->add_option("--data", data, "labeled dataset")->required();
  ev->add_option("--bins", bins, "ECE bins")->check(CLI::PositiveNumber);

  CLI::App* st = app.add_subcommand("selftest", "run quick invariant checks");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  auto need_weights = [&](CLI::App* cmd) {
    if (checkpoint.empty() && source.empty() && !(cmd == sw && dry_run)) {
      err << "error: " << cmd->get_name() << " needs --checkpoint or --source\n" << cmd->help();
      return false;
    }
    return true;
  };

  try {
    if (synth->parsed()) return cmd_synth(regime, synth_seed, counts, out_dir, out);
    if (pre->parsed()) return cmd_pretrain(source, out_dir, opts, out);
    if (ad->parsed()) {
      if (!need_weights(ad)) return kExitUsage;
      return cmd_adapt(data, checkpoint, source, test, out_dir, opts, out);
    }
    if (sw->parsed()) {
      if (!need_weights(sw)) return kExitUsage;
      return cmd_sweep(data, checkpoint, source, out_dir, opts, dry_run, limit, jobs, out);
    }
    if (ev->parsed()) return cmd_eval(checkpoints, data, bins, out);
    if (st->parsed()) return run_selftest(out) ? kExitOk : kExitFailure;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParameterError& e) {
    err << "invalid parameter: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, out, err);
}

}  // namespace pseudolabel
