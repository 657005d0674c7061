#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "pseudolabel/dataset.hpp"
#include "pseudolabel/model.hpp"
#include "pseudolabel/selection.hpp"
#include "pseudolabel/uncertainty.hpp"

namespace pseudolabel {

enum class SelectionStrategy {
  voting,  // unanimous vote + pooled-mean gamma (default)
  gated,   // per-entry confidence/uncertainty gates, see SelectionConfig::mode
};

struct RunConfig {
  std::size_t models = 4;       // M
  std::size_t passes = 5;       // C
  std::size_t repetitions = 7;
  double label_fraction = 0.01;
  std::size_t per_class_minimum = 5;
  double test_fraction = 0.2;
  SelectionConfig selection;
  SelectionStrategy strategy = SelectionStrategy::voting;
  bool selection_enabled = true;  // false = labeled-only baseline, same epochs
  bool mc_dropout = true;         // false = Deep-Ensembles-only voting
  bool warm_start = true;         // false = members restart from the pretrained state each round
  bool reinit_head = true;        // members redraw the output layer from their own seed
  std::size_t hidden1 = 128;
  std::size_t hidden2 = 64;
  float dropout_rate = 0.3f;
  OptimizerConfig pretrain = OptimizerConfig::pretraining();
  OptimizerConfig first = OptimizerConfig::first_adaptation();
  OptimizerConfig later = OptimizerConfig::later_adaptation();
  std::vector<float> probe_gammas{0.7f, 0.9f, 0.99f};
  std::size_t ece_bins = kDefaultEceBins;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

struct RepetitionRecord {
  std::size_t repetition = 0;            // 1-based
  double test_accuracy = 0.0;            // percent; NaN without a test set
  double test_ece = 0.0;
  std::size_t selected = 0;              // pool rows with a pseudo-label
  std::size_t negatives = 0;             // -1 targets harvested
  std::size_t unanimous = 0;             // pool rows all members agree on
  double selection_fraction = 0.0;       // selected / pool size
  double pseudo_correct_fraction = 0.0;  // NaN without truth or selections
  std::size_t train_rows = 0;
  std::vector<std::size_t> selected_at_probe;  // per probe gamma, voting rule
  std::vector<double> loss_curve;        // member-mean loss per retraining epoch
};

struct RunLog {
  std::vector<float> probe_gammas;
  std::vector<RepetitionRecord> repetitions;
  double final_accuracy = 0.0;
  double final_ece = 0.0;
};

// Field-by-field bit equality (NaN entries compare equal to themselves).
bool bitwise_equal(const RunLog& a, const RunLog& b);

// Test labels and pool truth enter here only to be scored.
struct EvaluationChannel {
  const PoolTruth* pool_truth = nullptr;
  const LabeledSet* test = nullptr;
};

struct Evaluation {
  double accuracy = 0.0;  // percent
  double ece = 0.0;
};

// Called after voting in each repetition, before retraining.
using SelectionObserver =
    std::function<void(std::size_t repetition, const UncertaintySummary&, const SelectionMask&)>;

struct AdaptResult {
  std::vector<ClassifierState> models;
  RunLog log;
};

ClassifierState pretrain(const LabeledSet& source, const RunConfig& config,
                         std::vector<EpochStats>* history = nullptr);

// Members start from `pretrained` with seeds config.seed + m. Repetition 1
// first trains on the labeled sliver with config.first; every repetition then
// predicts the pool, selects, merges with the labeled rows and retrains with
// config.later. The pseudo-labeled set is rebuilt each repetition.
AdaptResult adapt(const ClassifierState& pretrained, const LabeledSet& labeled, const UnlabeledPool& pool,
                  const RunConfig& config, const EvaluationChannel& channel = {},
                  const SelectionObserver& observer = {});

// Argmax of the member-mean eval probabilities, ties to the lowest class.
Evaluation evaluate(std::span<const ClassifierState> models, const LabeledSet& test,
                    std::size_t ece_bins = kDefaultEceBins);
DenseTensor ensemble_probs(std::span<const ClassifierState> models, const DenseTensor& inputs);

void write_runlog_csv(const RunLog& log, const std::filesystem::path& path);
std::string runlog_summary_json(const RunLog& log);

}  // namespace pseudolabel
