#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "pseudolabel/dataset.hpp"
#include "pseudolabel/model.hpp"
#include "pseudolabel/tensor.hpp"

namespace pseudolabel {

// Class probabilities for M models x C stochastic passes x N samples x K classes.
struct PredictionCube {
  DenseTensor probs;  // [M, C, N, K]

  std::size_t models() const { return probs.dim(0); }
  std::size_t passes() const { return probs.dim(1); }
  std::size_t samples() const { return probs.dim(2); }
  std::size_t classes() const { return probs.dim(3); }
  float operator()(std::size_t m, std::size_t c, std::size_t n, std::size_t k) const {
    return probs[((m * passes() + c) * samples() + n) * classes() + k];
  }
  void validate() const;
};

struct UncertaintySummary {
  DenseTensor mean;            // [N, K] over the pooled M*C axis
  DenseTensor std;             // [N, K] population std, pooled; this is u(p)
  DenseTensor per_model_mean;  // [M, N, K] over the C axis
  DenseTensor per_model_std;   // [M, N, K]
};

// With mc_dropout each model runs `passes` independent dropout forward passes
// (pass (m, c) draws from SeededRng(seed).fork(m * passes + c)). Without it
// each model runs one eval pass, replicated along the pass axis.
PredictionCube predict_cube(std::span<const ClassifierState> models, const DenseTensor& inputs,
                            std::size_t passes, bool mc_dropout, std::uint64_t seed,
                            std::size_t threads = 1);
PredictionCube predict_cube(std::span<const ClassifierState> models, const UnlabeledPool& pool,
                            std::size_t passes, bool mc_dropout, std::uint64_t seed,
                            std::size_t threads = 1);

UncertaintySummary summarize(const PredictionCube& cube);

inline constexpr std::size_t kDefaultEceBins = 10;

// Index of the equal-width bin on (0, 1] holding `confidence`: the smallest b
// with confidence <= (b + 1) / bins, evaluated in double.
std::size_t ece_bin(double confidence, std::size_t bins);

// Expected calibration error with max-probability confidence and argmax
// prediction (lowest index on ties).
double ece(const DenseTensor& probs, const std::vector<int>& labels, std::size_t bins = kDefaultEceBins);

void save_cube(const PredictionCube& cube, const std::filesystem::path& dir);
PredictionCube load_cube(const std::filesystem::path& dir);

}  // namespace pseudolabel
