#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "pseudolabel/dataset.hpp"
#include "pseudolabel/model.hpp"
#include "pseudolabel/uncertainty.hpp"

namespace pseudolabel {

enum class SelectionMode { confidence_only, uncertainty_gated };

struct SelectionConfig {
  float gamma = 0.9f;     // mean-softmax acceptance threshold for voting
  float tau_p = 0.70f;    // positive confidence threshold
  float tau_n = 0.05f;    // negative confidence threshold
  float kappa_p = 0.05f;  // positive uncertainty threshold
  float kappa_n = 0.005f; // negative uncertainty threshold
  bool negative_learning = false;
  SelectionMode mode = SelectionMode::uncertainty_gated;

  void validate() const;
  friend bool operator==(const SelectionConfig&, const SelectionConfig&) = default;
};

struct BinaryMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bits;

  std::uint8_t operator()(std::size_t r, std::size_t c) const { return bits[r * cols + c]; }
  friend bool operator==(const BinaryMatrix&, const BinaryMatrix&) = default;
};

// Per-sample, per-class selection. polarity is +1 / -1 where g is 1 and 0
// elsewhere; pseudo_label is the class holding the row's +1, or -1.
struct SelectionMask {
  std::size_t rows = 0;
  std::size_t classes = 0;
  std::vector<std::uint8_t> g;
  std::vector<std::int8_t> polarity;
  std::vector<int> pseudo_label;

  SelectionMask() = default;
  SelectionMask(std::size_t rows, std::size_t classes);

  std::int8_t at(std::size_t r, std::size_t c) const { return polarity[r * classes + c]; }
  void mark(std::size_t r, std::size_t c, std::int8_t sign);
  bool row_selected(std::size_t r) const;  // any entry selected
  std::size_t positive_count() const;      // rows with a pseudo-label
  std::size_t negative_count() const;      // -1 entries
  void validate() const;

  friend bool operator==(const SelectionMask&, const SelectionMask&) = default;
};

// y_hat[i][c] = 1 iff p[i][c] >= gamma.
BinaryMatrix hard_labels(const DenseTensor& probs, float gamma);

// Positive at the row argmax when p >= tau_p; with negative learning, -1 on
// every other class with p <= tau_n.
SelectionMask select_confidence(const DenseTensor& probs, const SelectionConfig& config);

// As select_confidence on the pooled mean, with the extra gates
// u <= kappa_p (positives) and u <= kappa_n (negatives), u = pooled std.
SelectionMask select_uncertainty(const UncertaintySummary& summary, const SelectionConfig& config);

// Dispatches on config.mode over a summary.
SelectionMask select_gated(const UncertaintySummary& summary, const SelectionConfig& config);

// Per sample, the class every model's C-pass mean argmax agrees on, or -1.
std::vector<int> unanimous_class(const UncertaintySummary& summary);

// Unanimous argmax across the M models, accepted when the pooled mean of
// that class is >= gamma. With negative learning, accepted rows also get -1
// where pooled mean <= tau_n and pooled std <= kappa_n.
SelectionMask vote(const UncertaintySummary& summary, const SelectionConfig& config);
SelectionMask vote(const PredictionCube& cube, const SelectionConfig& config);

// Training rows for the selected samples: indices into the pool plus their
// polarity rows as targets.
struct PseudoLabeledRows {
  std::vector<std::size_t> pool_index;
  TargetMatrix targets;
};
PseudoLabeledRows selected_rows(const SelectionMask& mask);

// CSV: sample_id,unanimous,pooled_mean_max,pooled_std_max,pseudo_label,truth.
// pooled_std_max is the pooled std of the max-mean class; truth is empty
// when unknown.
void write_selection_report(const std::filesystem::path& path, const UncertaintySummary& summary,
                            const SelectionMask& mask, const PoolTruth* truth = nullptr);

}  // namespace pseudolabel
