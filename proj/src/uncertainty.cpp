#include "pseudolabel/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>

#include <json.hpp>

#include "binary_io.hpp"
#include "parallel.hpp"
#include "pseudolabel/error.hpp"

namespace pseudolabel {

namespace {
constexpr int kCubeVersion = 1;
constexpr std::size_t kChunk = 512;
constexpr float kMaxStd = 0.5f;  // std of any [0, 1]-valued variable
}  // namespace

void PredictionCube::validate() const {
  if (probs.rank() != 4) throw DimensionError("cube: probs must be [M, C, N, K]");
  if (models() < 1 || passes() < 1) throw DimensionError("cube: needs M >= 1 and C >= 1");
}

PredictionCube predict_cube(std::span<const ClassifierState> models, const DenseTensor& inputs,
                            std::size_t passes, bool mc_dropout, std::uint64_t seed,
                            std::size_t threads) {
  if (models.empty()) throw ParameterError("predict_cube: need at least one model");
  if (passes == 0) throw ParameterError("predict_cube: need at least one pass");
  const std::size_t classes = models.front().shape.classes;
  for (const auto& m : models) {
    if (m.shape != models.front().shape) throw DimensionError("predict_cube: models differ in shape");
    if (mc_dropout && m.dropout_rate <= 0.0f) {
      throw ConfigError("predict_cube: MC dropout requested for a model with dropout rate 0");
    }
  }
  if (inputs.rank() != 2) throw DimensionError("predict_cube: inputs must be [N, features]");
  const std::size_t n = inputs.dim(0), width = inputs.dim(1);
  const std::size_t slice = n * classes;

  PredictionCube cube{DenseTensor({models.size(), passes, n, classes})};
  const SeededRng root(seed);
  detail::parallel_for(models.size(), threads, [&](std::size_t m) {
    const std::size_t runs = mc_dropout ? passes : 1;
    for (std::size_t c = 0; c < runs; ++c) {
      SeededRng rng = root.fork(m * passes + c);
      float* dst = cube.probs.data() + (m * passes + c) * slice;
      for (std::size_t start = 0; start < n; start += kChunk) {
        const std::size_t rows = std::min(kChunk, n - start);
        const auto src = inputs.values().subspan(start * width, rows * width);
        const DenseTensor chunk({rows, width}, std::vector<float>(src.begin(), src.end()));
        const ForwardResult r =
            forward(models[m], chunk, mc_dropout ? ForwardMode::mc_dropout : ForwardMode::eval, rng);
        std::copy(r.probs.values().begin(), r.probs.values().end(), dst + start * classes);
      }
    }
    if (!mc_dropout) {
      const float* first = cube.probs.data() + m * passes * slice;
      for (std::size_t c = 1; c < passes; ++c) {
        std::copy(first, first + slice, cube.probs.data() + (m * passes + c) * slice);
      }
    }
  });
  return cube;
}

PredictionCube predict_cube(std::span<const ClassifierState> models, const UnlabeledPool& pool,
                            std::size_t passes, bool mc_dropout, std::uint64_t seed,
                            std::size_t threads) {
  return predict_cube(models, pool.grids(), passes, mc_dropout, seed, threads);
}

UncertaintySummary summarize(const PredictionCube& cube) {
  cube.validate();
  const std::size_t M = cube.models(), C = cube.passes(), N = cube.samples(), K = cube.classes();
  UncertaintySummary s;
  std::tie(s.mean, s.std) = mean_std(cube.probs.reshaped({M * C, N, K}), 0);
  std::tie(s.per_model_mean, s.per_model_std) = mean_std(cube.probs, 1);
  for (auto* t : {&s.mean, &s.per_model_mean}) {
    for (float& v : t->values()) v = std::clamp(v, 0.0f, 1.0f);
  }
  for (auto* t : {&s.std, &s.per_model_std}) {
    for (float& v : t->values()) v = std::min(v, kMaxStd);
  }
  return s;
}

std::size_t ece_bin(double confidence, std::size_t bins) {
  const double b = static_cast<double>(bins);
  auto idx = static_cast<std::size_t>(std::max(0.0, std::ceil(confidence * b) - 1.0));
  idx = std::min(idx, bins - 1);
  // Snap to the defining comparison so confidences on a bin edge fall in the lower bin.
  while (idx > 0 && confidence <= static_cast<double>(idx) / b) --idx;
  while (idx + 1 < bins && confidence > static_cast<double>(idx + 1) / b) ++idx;
  return idx;
}

double ece(const DenseTensor& probs, const std::vector<int>& labels, std::size_t bins) {
  if (bins == 0) throw ParameterError("ece: bins must be >= 1");
  if (probs.rank() != 2 || probs.dim(0) != labels.size()) {
    throw DimensionError("ece: probs must be [N, K] with N labels");
  }
  const std::size_t n = labels.size(), k = probs.dim(1);
  if (n == 0) return 0.0;
  std::vector<double> conf_sum(bins, 0.0), correct(bins, 0.0);
  std::vector<std::size_t> count(bins, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw ParameterError("ece: label outside [0, K)");
    }
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (probs(i, j) > probs(i, best)) best = j;
    }
    const double confidence = probs(i, best);
    const std::size_t b = ece_bin(confidence, bins);
    conf_sum[b] += confidence;
    correct[b] += static_cast<int>(best) == labels[i] ? 1.0 : 0.0;
    ++count[b];
  }
  double total = 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    const double nb = static_cast<double>(count[b]);
    total += (nb / static_cast<double>(n)) * std::abs(correct[b] / nb - conf_sum[b] / nb);
  }
  return total;
}

void save_cube(const PredictionCube& cube, const std::filesystem::path& dir) {
  cube.validate();
  detail::ensure_directory(dir);
  nlohmann::ordered_json manifest;
  manifest["version"] = kCubeVersion;
  manifest["M"] = cube.models();
  manifest["C"] = cube.passes();
  manifest["N"] = cube.samples();
  manifest["K"] = cube.classes();
  detail::write_text(dir / "manifest.json", manifest.dump() + "\n");
  std::vector<char> blob;
  detail::append_f32_le(blob, cube.probs.values());
  detail::write_file(dir / "cube.bin", blob.data(), blob.size());
}

PredictionCube load_cube(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  const std::vector<char> raw = detail::read_file(manifest_path);
  const std::string text(raw.begin(), raw.end());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(manifest_path.string(), e.byte, std::string("malformed manifest: ") + e.what());
  }
  Shape shape;
  for (const char* key : {"version", "M", "C", "N", "K"}) {
    if (!m.is_object() || !m.contains(key) || !m[key].is_number_unsigned()) {
      throw FormatError(manifest_path.string(), detail::key_offset(text, key),
                        std::string("missing or non-integer field '") + key + "'");
    }
    if (std::string(key) != "version") shape.push_back(m[key].get<std::size_t>());
  }
  if (m["version"].get<int>() != kCubeVersion) {
    throw FormatError(manifest_path.string(), detail::key_offset(text, "version"), "unsupported cube version");
  }
  const auto blob_path = dir / "cube.bin";
  const std::vector<char> blob = detail::read_file(blob_path);
  const std::uint64_t expected = shape_size(shape) * 4;
  if (blob.size() != expected) {
    throw FormatError(blob_path.string(), std::min<std::uint64_t>(blob.size(), expected),
                      "expected " + std::to_string(expected) + " bytes, found " + std::to_string(blob.size()));
  }
  PredictionCube cube{DenseTensor(shape)};
  detail::decode_f32_le(blob.data(), cube.probs.values());
  cube.validate();
  return cube;
}

}  // namespace pseudolabel
