#include "pseudolabel/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <json.hpp>

#include "binary_io.hpp"
#include "pseudolabel/error.hpp"
#include "pseudolabel/rng.hpp"

namespace pseudolabel {

namespace {

constexpr int kFormatVersion = 1;

void shuffle_indices(std::vector<std::size_t>& v, SeededRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.index(i)]);
  }
}

std::vector<std::vector<std::size_t>> indices_by_class(const LabeledSet& set) {
  std::vector<std::vector<std::size_t>> by_class(set.geometry().classes);
  for (std::size_t i = 0; i < set.size(); ++i) {
    by_class[static_cast<std::size_t>(set.labels()[i])].push_back(i);
  }
  return by_class;
}

DenseTensor gather_rows(const DenseTensor& grids, const std::vector<std::size_t>& rows) {
  const std::size_t width = grids.dim(1);
  DenseTensor out({rows.size(), width});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = grids.row(rows[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

}  // namespace

void GridGeometry::validate() const {
  if (freq_bins < kMinGridSide || time_bins < kMinGridSide) {
    throw ParameterError("grid must be at least 8x8, got " + std::to_string(freq_bins) + "x" +
                         std::to_string(time_bins));
  }
  if (classes < 1 || classes > kMaxClasses) {
    throw ParameterError("class count must lie in [1, 9], got " + std::to_string(classes));
  }
}

Snapshot SnapshotSet::snapshot(std::size_t i) const {
  const auto src = grids.row(i);
  Snapshot s{DenseTensor({geometry.freq_bins, geometry.time_bins},
                         std::vector<float>(src.begin(), src.end())),
             std::nullopt};
  if (labels[i] >= 0) s.label = labels[i];
  return s;
}

void SnapshotSet::validate() const {
  geometry.validate();
  if (grids.rank() != 2 || grids.dim(0) != labels.size() || grids.dim(1) != geometry.features()) {
    throw DimensionError("snapshot set: grids must be [count, F*T] matching the label count");
  }
  for (int l : labels) {
    if (l < -1 || l >= static_cast<int>(geometry.classes)) {
      throw ParameterError("snapshot set: label " + std::to_string(l) + " outside [-1, K)");
    }
  }
  if (!grids.all_finite()) throw ParameterError("snapshot set: non-finite intensity");
}

LabeledSet::LabeledSet(GridGeometry geometry, DenseTensor grids, std::vector<int> labels)
    : LabeledSet(SnapshotSet{geometry, std::move(grids), std::move(labels)}) {}

LabeledSet::LabeledSet(SnapshotSet set) : set_(std::move(set)) {
  if (set_.grids.rank() == 0) set_.grids = DenseTensor({0, set_.geometry.features()});
  set_.validate();
  for (int l : set_.labels) {
    if (l < 0) throw ParameterError("labeled set: sample without a label");
  }
}

std::vector<std::size_t> LabeledSet::class_counts() const {
  std::vector<std::size_t> counts(geometry().classes, 0);
  for (int l : labels()) ++counts[static_cast<std::size_t>(l)];
  return counts;
}

LabeledSet LabeledSet::subset(const std::vector<std::size_t>& indices) const {
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (std::size_t i : indices) labels.push_back(set_.labels[i]);
  return LabeledSet(set_.geometry, gather_rows(set_.grids, indices), std::move(labels));
}

UnlabeledPool::UnlabeledPool(GridGeometry geometry, DenseTensor grids)
    : geometry_(geometry), grids_(std::move(grids)) {
  geometry_.validate();
  if (grids_.rank() == 0) grids_ = DenseTensor({0, geometry_.features()});
  if (grids_.rank() != 2 || grids_.dim(1) != geometry_.features()) {
    throw DimensionError("unlabeled pool: grids must be [count, F*T]");
  }
}

SnapshotSet UnlabeledPool::storage() const {
  return SnapshotSet{geometry_, grids_, std::vector<int>(size(), -1)};
}

LabeledSet synth_generate(const SynthConfig& config) {
  const std::size_t classes = config.counts.size();
  GridGeometry geometry{config.freq_bins, config.time_bins, classes};
  geometry.validate();
  std::size_t total = 0;
  for (std::size_t c : config.counts) total += c;
  if (total == 0) throw ParameterError("synth_generate: all class counts are zero");
  if (config.snr_db.lo > config.snr_db.hi || config.slope.lo > config.slope.hi ||
      config.bandwidth.lo > config.bandwidth.hi || config.tone_snr_db.lo > config.tone_snr_db.hi ||
      config.band.lo > config.band.hi) {
    throw ParameterError("synth_generate: range with lo > hi");
  }
  if (!(config.band.lo >= 0.0 && config.band.hi <= 1.0)) {
    throw ParameterError("synth_generate: band must lie within [0, 1]");
  }
  if (!(config.noise_sigma >= 0.0) || !(config.ridge_width > 0.0)) {
    throw ParameterError("synth_generate: noise_sigma must be >= 0 and ridge_width > 0");
  }
  if (config.tone_probability.size() > classes) {
    throw ParameterError("synth_generate: more tone probabilities than classes");
  }
  for (double p : config.tone_probability) {
    if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("synth_generate: tone probability must lie in [0, 1]");
  }

  const std::size_t F = config.freq_bins, T = config.time_bins;
  const double band_lo = config.band.lo * static_cast<double>(F - 1);
  const double max_bw = std::max(1.0, (config.band.hi - config.band.lo) * static_cast<double>(F - 1));
  const double amplitude_unit = config.noise_sigma > 0.0 ? config.noise_sigma : 1.0;
  const double inv_two_w2 = 1.0 / (2.0 * config.ridge_width * config.ridge_width);
  const SeededRng base(config.seed);

  DenseTensor grids({total, F * T});
  std::vector<int> labels;
  labels.reserve(total);
  std::size_t sample = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t n = 0; n < config.counts[c]; ++n, ++sample) {
      SeededRng rng = base.fork(sample);
      auto grid = grids.row(sample);  // [f * T + t]
      if (config.noise_sigma > 0.0) {
        for (float& v : grid) v = static_cast<float>(rng.gaussian(0.0, config.noise_sigma));
      }
      auto draw = [&rng](const Range& r) { return r.lo + (r.hi - r.lo) * rng.uniform_double(); };

      if (c >= 1) {
        const double snr = draw(config.snr_db);
        const double slope = draw(config.slope);
        const double bw = std::clamp(draw(config.bandwidth), 1.0, max_bw);
        const double f_lo = band_lo + (max_bw - bw) * rng.uniform_double();
        const double phase = bw * rng.uniform_double();
        const double amp = amplitude_unit * std::pow(10.0, snr / 20.0);
        for (std::size_t ridge = 0; ridge < c; ++ridge) {
          const double offset = phase + bw * static_cast<double>(ridge) / static_cast<double>(c);
          for (std::size_t t = 0; t < T; ++t) {
            double pos = std::fmod(offset + slope * static_cast<double>(t), bw);
            if (pos < 0.0) pos += bw;
            const double center = f_lo + pos;
            for (std::size_t f = 0; f < F; ++f) {
              const double d = static_cast<double>(f) - center;
              grid[f * T + t] += static_cast<float>(amp * std::exp(-d * d * inv_two_w2));
            }
          }
        }
      }
      const double tone_p = c < config.tone_probability.size() ? config.tone_probability[c] : 0.0;
      if (tone_p > 0.0 && rng.uniform_double() < tone_p) {
        const double amp = amplitude_unit * std::pow(10.0, draw(config.tone_snr_db) / 20.0);
        const double center = max_bw * rng.uniform_double();
        for (std::size_t f = 0; f < F; ++f) {
          const double d = static_cast<double>(f) - center;
          const auto v = static_cast<float>(amp * std::exp(-d * d * inv_two_w2));
          for (std::size_t t = 0; t < T; ++t) grid[f * T + t] += v;
        }
      }
      labels.push_back(static_cast<int>(c));
    }
  }
  return LabeledSet(geometry, std::move(grids), std::move(labels));
}

SynthConfig source_regime(std::uint64_t seed) {
  SynthConfig c;
  c.counts = {2000, 2000};
  c.snr_db = {3.0, 12.0};
  c.slope = {0.3, 1.5};
  c.bandwidth = {6.0, 14.0};
  c.band = {0.0, 0.5};
  c.seed = seed;
  return c;
}

SynthConfig target_regime(std::uint64_t seed) {
  SynthConfig c = source_regime(seed);
  c.counts = {10000, 800};
  c.snr_db = {4.0, 14.0};
  c.slope = {0.3, 3.0};
  c.bandwidth = {3.0, 15.0};
  c.band = {0.5, 1.0};
  return c;
}

std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); }

LabeledPoolSplit split_labeled(const LabeledSet& train, const SplitSpec& spec) {
  if (!(spec.label_fraction > 0.0 && spec.label_fraction <= 1.0)) {
    throw ParameterError("split: label fraction must lie in (0, 1]");
  }
  if (spec.per_class_minimum < 1) throw ParameterError("split: per_class_minimum must be >= 1");
  SeededRng rng = SeededRng(spec.seed).fork(1);
  auto by_class = indices_by_class(train);

  std::vector<std::size_t> labeled, pooled;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    if (idx.size() < spec.per_class_minimum) {
      throw ParameterError("split: class " + std::to_string(c) + " has " +
                           std::to_string(idx.size()) + " samples, fewer than per_class_minimum " +
                           std::to_string(spec.per_class_minimum));
    }
    const std::size_t want = std::max(round_half_up(spec.label_fraction * static_cast<double>(idx.size())),
                                      spec.per_class_minimum);
    shuffle_indices(idx, rng);
    labeled.insert(labeled.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(want));
    pooled.insert(pooled.end(), idx.begin() + static_cast<std::ptrdiff_t>(want), idx.end());
  }
  std::sort(labeled.begin(), labeled.end());
  std::sort(pooled.begin(), pooled.end());

  LabeledPoolSplit out;
  out.labeled = train.subset(labeled);
  const LabeledSet pool_with_truth = train.subset(pooled);
  out.pool = UnlabeledPool(train.geometry(), pool_with_truth.grids());
  out.pool_truth.labels = pool_with_truth.labels();
  out.labeled_index = std::move(labeled);
  out.pool_index = std::move(pooled);
  return out;
}

DatasetSplit split(const LabeledSet& data, const SplitSpec& spec) {
  if (data.empty()) throw ParameterError("split: empty dataset");
  if (!(spec.test_fraction >= 0.0 && spec.test_fraction < 1.0)) {
    throw ParameterError("split: test fraction must lie in [0, 1)");
  }
  SeededRng rng = SeededRng(spec.seed).fork(0);
  auto by_class = indices_by_class(data);
  std::vector<std::size_t> test, rest;
  for (auto& idx : by_class) {
    const std::size_t n_test = round_half_up(spec.test_fraction * static_cast<double>(idx.size()));
    shuffle_indices(idx, rng);
    test.insert(test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    rest.insert(rest.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  }
  std::sort(test.begin(), test.end());
  std::sort(rest.begin(), rest.end());

  LabeledPoolSplit inner = split_labeled(data.subset(rest), spec);
  DatasetSplit out;
  out.labeled = std::move(inner.labeled);
  out.pool = std::move(inner.pool);
  out.pool_truth = std::move(inner.pool_truth);
  out.test = data.subset(test);
  for (std::size_t i : inner.labeled_index) out.labeled_index.push_back(rest[i]);
  for (std::size_t i : inner.pool_index) out.pool_index.push_back(rest[i]);
  out.test_index = std::move(test);
  return out;
}

void save_dataset(const SnapshotSet& set, const std::filesystem::path& dir) {
  set.validate();
  detail::ensure_directory(dir);
  nlohmann::ordered_json manifest;
  manifest["version"] = kFormatVersion;
  manifest["count"] = set.size();
  manifest["F"] = set.geometry.freq_bins;
  manifest["T"] = set.geometry.time_bins;
  manifest["K"] = set.geometry.classes;
  manifest["labels"] = set.labels;
  detail::write_text(dir / "manifest.json", manifest.dump() + "\n");

  std::vector<char> blob;
  blob.reserve(set.grids.size() * 4);
  detail::append_f32_le(blob, set.grids.values());
  detail::write_file(dir / "grids.bin", blob.data(), blob.size());
}

void save_dataset(const LabeledSet& set, const std::filesystem::path& dir) {
  save_dataset(set.storage(), dir);
}

void save_dataset(const UnlabeledPool& pool, const std::filesystem::path& dir) {
  save_dataset(pool.storage(), dir);
}

SnapshotSet load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  const auto grids_path = dir / "grids.bin";
  const std::vector<char> raw = detail::read_file(manifest_path);
  const std::string text(raw.begin(), raw.end());
  const std::string mname = manifest_path.string();

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(mname, e.byte, std::string("malformed manifest: ") + e.what());
  }
  auto field = [&](const char* key) -> std::uint64_t {
    if (!manifest.is_object() || !manifest.contains(key) || !manifest[key].is_number_unsigned()) {
      throw FormatError(mname, detail::key_offset(text, key),
                        std::string("missing or non-integer field '") + key + "'");
    }
    return manifest[key].get<std::uint64_t>();
  };
  const std::uint64_t version = field("version");
  if (version != kFormatVersion) {
    throw FormatError(mname, detail::key_offset(text, "version"),
                      "unsupported version " + std::to_string(version));
  }
  SnapshotSet set;
  const std::uint64_t count = field("count");
  set.geometry = GridGeometry{field("F"), field("T"), field("K")};
  try {
    set.geometry.validate();
  } catch (const ParameterError& e) {
    throw FormatError(mname, detail::key_offset(text, "F"), e.what());
  }
  if (!manifest.contains("labels") || !manifest["labels"].is_array()) {
    throw FormatError(mname, detail::key_offset(text, "labels"), "missing 'labels' array");
  }
  const auto& labels = manifest["labels"];
  if (labels.size() != count) {
    throw FormatError(mname, detail::key_offset(text, "labels"),
                      "labels has " + std::to_string(labels.size()) + " entries, count is " +
                          std::to_string(count));
  }
  for (const auto& l : labels) {
    if (!l.is_number_integer() || l.get<int>() < -1 || l.get<int>() >= static_cast<int>(set.geometry.classes)) {
      throw FormatError(mname, detail::key_offset(text, "labels"), "label outside [-1, K)");
    }
    set.labels.push_back(l.get<int>());
  }

  const std::vector<char> blob = detail::read_file(grids_path);
  const std::uint64_t expected = count * set.geometry.features() * 4;
  if (blob.size() != expected) {
    const std::uint64_t at = std::min<std::uint64_t>(blob.size(), expected);
    throw FormatError(grids_path.string(), at,
                      "expected " + std::to_string(expected) + " bytes (" + std::to_string(count) +
                          " grids), found " + std::to_string(blob.size()));
  }
  set.grids = DenseTensor({count, set.geometry.features()});
  detail::decode_f32_le(blob.data(), set.grids.values());
  const auto values = set.grids.values();
  const auto bad = std::find_if(values.begin(), values.end(), [](float v) { return !std::isfinite(v); });
  if (bad != values.end()) {
    throw FormatError(grids_path.string(), static_cast<std::uint64_t>(bad - values.begin()) * 4, "non-finite intensity");
  }
  return set;
}

}  // namespace pseudolabel
