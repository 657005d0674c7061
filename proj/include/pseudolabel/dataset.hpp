#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "pseudolabel/tensor.hpp"

namespace pseudolabel {

inline constexpr std::size_t kMaxClasses = 9;
inline constexpr std::size_t kMinGridSide = 8;

// One time-frequency capture.
struct Snapshot {
  DenseTensor grid;  // [F, T]
  std::optional<int> label;
};

struct GridGeometry {
  std::size_t freq_bins = 32;
  std::size_t time_bins = 32;
  std::size_t classes = 2;

  std::size_t features() const noexcept { return freq_bins * time_bins; }
  void validate() const;
  friend bool operator==(const GridGeometry&, const GridGeometry&) = default;
};

// Storage shared by all set types: grids flattened into a [N, F*T] matrix,
// labels in {-1, 0..K-1}. This is also the on-disk model.
struct SnapshotSet {
  GridGeometry geometry;
  DenseTensor grids;        // [N, F*T]
  std::vector<int> labels;  // -1 = unlabeled

  std::size_t size() const noexcept { return labels.size(); }
  Snapshot snapshot(std::size_t i) const;
  void validate() const;
  friend bool operator==(const SnapshotSet&, const SnapshotSet&) = default;
};

// Every sample carries a label in [0, K).
class LabeledSet {
 public:
  LabeledSet() = default;
  LabeledSet(GridGeometry geometry, DenseTensor grids, std::vector<int> labels);
  explicit LabeledSet(SnapshotSet set);

  const GridGeometry& geometry() const noexcept { return set_.geometry; }
  const DenseTensor& grids() const noexcept { return set_.grids; }
  const std::vector<int>& labels() const noexcept { return set_.labels; }
  std::size_t size() const noexcept { return set_.size(); }
  bool empty() const noexcept { return set_.size() == 0; }
  std::vector<std::size_t> class_counts() const;
  Snapshot snapshot(std::size_t i) const { return set_.snapshot(i); }
  const SnapshotSet& storage() const noexcept { return set_; }

  // Subset by source index, in the given order.
  LabeledSet subset(const std::vector<std::size_t>& indices) const;

 private:
  SnapshotSet set_;
};

// Samples without labels. Ground truth for evaluation lives in PoolTruth,
// which no training entry point accepts.
class UnlabeledPool {
 public:
  UnlabeledPool() = default;
  UnlabeledPool(GridGeometry geometry, DenseTensor grids);

  const GridGeometry& geometry() const noexcept { return geometry_; }
  const DenseTensor& grids() const noexcept { return grids_; }
  std::size_t size() const noexcept { return grids_.rank() ? grids_.dim(0) : 0; }
  bool empty() const noexcept { return size() == 0; }
  SnapshotSet storage() const;

 private:
  GridGeometry geometry_;
  DenseTensor grids_;
};

// Hidden labels of an UnlabeledPool, same order.
struct PoolTruth {
  std::vector<int> labels;
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

// Recipe for the synthetic chirp-vs-noise generator. Class 0 is Gaussian
// background noise; class c >= 1 adds c parallel sawtooth chirp ridges
// f(t) = f_lo + ((f0 + slope * t) mod bandwidth) with a Gaussian profile
// across frequency. Ridge peak amplitude is noise_sigma * 10^(snr_db / 20),
// or 10^(snr_db / 20) when noise_sigma is 0.
struct SynthConfig {
  std::vector<std::size_t> counts{100, 100};  // per class, K = counts.size()
  Range snr_db{0.0, 10.0};
  Range slope{0.3, 1.5};                      // frequency bins per time bin
  Range bandwidth{12.0, 28.0};                // sweep width in frequency bins
  Range band{0.0, 1.0};                       // occupied sub-band, fraction of the axis
  double ridge_width = 1.5;                   // Gaussian sigma, frequency bins
  double noise_sigma = 1.0;
  // Per-class probability that a grid also carries a stationary narrowband
  // tone (horizontal ridge) with amplitude drawn from tone_snr_db. Missing
  // entries mean 0.
  std::vector<double> tone_probability;
  Range tone_snr_db{0.0, 6.0};
  std::size_t freq_bins = 32;
  std::size_t time_bins = 32;
  std::uint64_t seed = 0;
};

LabeledSet synth_generate(const SynthConfig& config);

// Two-class presets for the adaptation experiments. Source chirps occupy the
// lower half of the band, target chirps the upper half, so a fully connected
// classifier pretrained on the source does not detect target chirps. Target
// chirps also vary more in slope and sweep width, and the target is 12.5:1
// imbalanced.
SynthConfig source_regime(std::uint64_t seed);
SynthConfig target_regime(std::uint64_t seed);

struct SplitSpec {
  double label_fraction = 0.01;
  std::uint64_t seed = 0;
  std::size_t per_class_minimum = 1;
  double test_fraction = 0.2;
};

// Round half up: floor(x + 0.5).
std::size_t round_half_up(double x);

struct LabeledPoolSplit {
  LabeledSet labeled;
  UnlabeledPool pool;
  PoolTruth pool_truth;
  std::vector<std::size_t> labeled_index;  // positions in the input set
  std::vector<std::size_t> pool_index;
};

struct DatasetSplit {
  LabeledSet labeled;
  UnlabeledPool pool;
  PoolTruth pool_truth;
  LabeledSet test;
  std::vector<std::size_t> labeled_index;  // positions in the source set
  std::vector<std::size_t> pool_index;
  std::vector<std::size_t> test_index;
};

// Stratified split of a training portion into labeled sliver and pool:
// per class, max(round_half_up(fraction * n_c), per_class_minimum) labeled.
LabeledPoolSplit split_labeled(const LabeledSet& train, const SplitSpec& spec);

// Carves a stratified test holdout (round_half_up(test_fraction * n_c) per
// class) first, then applies split_labeled to the remainder.
DatasetSplit split(const LabeledSet& data, const SplitSpec& spec);

// Directory layout: manifest.json + grids.bin (little-endian float32).
void save_dataset(const SnapshotSet& set, const std::filesystem::path& dir);
void save_dataset(const LabeledSet& set, const std::filesystem::path& dir);
void save_dataset(const UnlabeledPool& pool, const std::filesystem::path& dir);
SnapshotSet load_dataset(const std::filesystem::path& dir);

}  // namespace pseudolabel
