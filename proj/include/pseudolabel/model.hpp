#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "pseudolabel/rng.hpp"
#include "pseudolabel/tensor.hpp"

namespace pseudolabel {

// flatten -> hidden1 (ReLU) -> hidden2 (ReLU, dropout site) -> classes
struct ModelShape {
  std::size_t inputs = 1024;
  std::size_t hidden1 = 128;
  std::size_t hidden2 = 64;
  std::size_t classes = 2;

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

// Parameter order everywhere: w1 [in,h1], b1 [h1], w2 [h1,h2], b2 [h2], w3 [h2,K], b3 [K].
inline constexpr std::size_t kParamCount = 6;
inline constexpr const char* kParamNames[kParamCount] = {"w1", "b1", "w2", "b2", "w3", "b3"};

struct ClassifierState {
  ModelShape shape;
  std::vector<DenseTensor> params;
  std::vector<DenseTensor> velocity;  // momentum buffers, same shapes as params
  float dropout_rate = 0.3f;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;  // epochs trained so far, across all train() calls

  void validate() const;
  bool finite() const;
  friend bool operator==(const ClassifierState&, const ClassifierState&) = default;
};

// Gaussian weights with sigma = 1/sqrt(fan_in), zero biases and buffers.
ClassifierState init_classifier(const ModelShape& shape, float dropout_rate, std::uint64_t seed);

// Redraws the output layer from `seed` and clears its momentum.
void reinit_head(ClassifierState& state, std::uint64_t seed);
void reset_momentum(ClassifierState& state);

enum class ForwardMode {
  train,       // dropout mask drawn from rng
  eval,        // deterministic, no mask
  mc_dropout,  // inference with the train-time mask forced on
};

struct ForwardResult {
  DenseTensor logits;  // [B, K]
  DenseTensor probs;   // [B, K]
};

// Activations kept for backprop. `mask` is empty when no dropout was applied;
// otherwise it holds 0 or 1/(1-rate) per penultimate unit.
struct ForwardCache {
  DenseTensor h1;
  DenseTensor h2;
  DenseTensor mask;
};

ForwardResult forward(const ClassifierState& state, const DenseTensor& batch, ForwardMode mode,
                      SeededRng& rng, ForwardCache* cache = nullptr);

// Eval-mode probabilities for any number of rows, processed in chunks.
DenseTensor predict_probs(const ClassifierState& state, const DenseTensor& inputs);

// +1 positive target, -1 negative target, 0 ignored.
class TargetMatrix {
 public:
  TargetMatrix() = default;
  TargetMatrix(std::size_t rows, std::size_t classes);
  static TargetMatrix from_labels(const std::vector<int>& labels, std::size_t classes);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t classes() const noexcept { return classes_; }
  std::int8_t operator()(std::size_t r, std::size_t c) const { return entries_[r * classes_ + c]; }
  void set(std::size_t r, std::size_t c, std::int8_t value);
  // Class with the +1 entry in row r, or -1.
  int positive_class(std::size_t r) const;

  void append_rows(const TargetMatrix& other);
  TargetMatrix gather(const std::vector<std::size_t>& rows) const;
  void validate() const;

  friend bool operator==(const TargetMatrix&, const TargetMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t classes_ = 0;
  std::vector<std::int8_t> entries_;
};

inline constexpr float kProbClamp = 1e-7f;

struct LossResult {
  double loss = 0.0;
  DenseTensor grad_logits;  // [B, K]
};

// Mean over non-ignored entries of -[t=+1] log p - [t=-1] log(1-p), with p
// clamped to [1e-7, 1-1e-7]; the gradient is taken through the softmax.
LossResult bce_loss(const DenseTensor& probs, const TargetMatrix& targets);

struct Gradients {
  std::vector<DenseTensor> params;
};

Gradients backward(const ClassifierState& state, const DenseTensor& batch, const ForwardCache& cache,
                   const DenseTensor& grad_logits);

struct OptimizerConfig {
  float lr = 0.01f;
  float momentum = 0.9f;
  float weight_decay = 5e-4f;
  std::size_t batch_size = 64;
  std::size_t epochs = 0;
  std::vector<std::size_t> milestones;
  float gamma = 0.1f;

  void validate() const;

  static OptimizerConfig pretraining();        // 200 epochs, milestones {120, 160}
  static OptimizerConfig first_adaptation();   // 100 epochs, milestones {60, 80}
  static OptimizerConfig later_adaptation();   // 20 epochs, milestones {12, 16}

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

// lr * gamma^(number of milestones <= epoch)
float effective_lr(const OptimizerConfig& config, std::size_t epoch);

// v <- momentum * v + (g + weight_decay * w);  w <- w - lr_eff * v
void sgd_step(ClassifierState& state, const Gradients& grads, const OptimizerConfig& config,
              std::size_t epoch);

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;  // over rows carrying a +1 target
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Shuffled minibatch training. `inputs` is [N, features]; the shuffle order
// and dropout masks come from rng.
ClassifierState train(ClassifierState state, const DenseTensor& inputs, const TargetMatrix& targets,
                      const OptimizerConfig& config, SeededRng& rng,
                      std::vector<EpochStats>* history = nullptr, const EpochCallback& on_epoch = {});

// Directory layout: manifest.json + weights.bin (params, then momentum buffers).
void save_checkpoint(const ClassifierState& state, const std::filesystem::path& dir);
ClassifierState load_checkpoint(const std::filesystem::path& dir);

}  // namespace pseudolabel
