#include "pseudolabel/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

#include "binary_io.hpp"
#include "pseudolabel/error.hpp"

namespace pseudolabel {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::RowVectorXf>;

constexpr int kCheckpointVersion = 1;
constexpr std::size_t kPredictChunk = 512;

MatMap as_matrix(DenseTensor& t, std::size_t rows, std::size_t cols) {
  return MatMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

ConstMatMap as_matrix(const DenseTensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

ConstVecMap as_row(const DenseTensor& t) {
  return ConstVecMap(t.data(), static_cast<Eigen::Index>(t.size()));
}

std::vector<Shape> param_shapes(const ModelShape& s) {
  return {{s.inputs, s.hidden1}, {s.hidden1}, {s.hidden1, s.hidden2},
          {s.hidden2},           {s.hidden2, s.classes}, {s.classes}};
}

DenseTensor gaussian_weights(SeededRng& rng, std::size_t fan_in, std::size_t fan_out) {
  return rng_gaussian(rng, {fan_in, fan_out}, 0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

// Row-wise softmax in double, written back as float.
void softmax_rows(const DenseTensor& logits, DenseTensor& probs) {
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  std::vector<double> e(k);
  for (std::size_t i = 0; i < rows; ++i) {
    float top = logits(i, 0);
    for (std::size_t j = 1; j < k; ++j) top = std::max(top, logits(i, j));
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      e[j] = std::exp(static_cast<double>(logits(i, j)) - top);
      total += e[j];
    }
    for (std::size_t j = 0; j < k; ++j) probs(i, j) = static_cast<float>(e[j] / total);
  }
}

}  // namespace

void ClassifierState::validate() const {
  const auto shapes = param_shapes(shape);
  if (params.size() != kParamCount || velocity.size() != kParamCount) {
    throw DimensionError("classifier: expected 6 parameter tensors and 6 momentum buffers");
  }
  for (std::size_t i = 0; i < kParamCount; ++i) {
    if (params[i].shape() != shapes[i] || velocity[i].shape() != shapes[i]) {
      throw DimensionError(std::string("classifier: tensor ") + kParamNames[i] + " has wrong shape");
    }
  }
  if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f)) {
    throw ParameterError("classifier: dropout rate must lie in [0, 1)");
  }
}

bool ClassifierState::finite() const {
  return std::all_of(params.begin(), params.end(), [](const DenseTensor& t) { return t.all_finite(); }) &&
         std::all_of(velocity.begin(), velocity.end(), [](const DenseTensor& t) { return t.all_finite(); });
}

ClassifierState init_classifier(const ModelShape& shape, float dropout_rate, std::uint64_t seed) {
  if (shape.inputs == 0 || shape.hidden1 == 0 || shape.hidden2 == 0 || shape.classes < 2) {
    throw ParameterError("classifier: all layer widths must be positive and classes >= 2");
  }
  ClassifierState s;
  s.shape = shape;
  s.dropout_rate = dropout_rate;
  s.seed = seed;
  SeededRng rng(seed);
  s.params.push_back(gaussian_weights(rng, shape.inputs, shape.hidden1));
  s.params.emplace_back(Shape{shape.hidden1});
  s.params.push_back(gaussian_weights(rng, shape.hidden1, shape.hidden2));
  s.params.emplace_back(Shape{shape.hidden2});
  s.params.push_back(gaussian_weights(rng, shape.hidden2, shape.classes));
  s.params.emplace_back(Shape{shape.classes});
  reset_momentum(s);
  s.validate();
  return s;
}

void reinit_head(ClassifierState& state, std::uint64_t seed) {
  SeededRng rng = SeededRng(seed).fork(3);
  state.params[4] = gaussian_weights(rng, state.shape.hidden2, state.shape.classes);
  state.params[5] = DenseTensor({state.shape.classes});
  state.velocity[4] = DenseTensor(state.params[4].shape());
  state.velocity[5] = DenseTensor(state.params[5].shape());
}

void reset_momentum(ClassifierState& state) {
  state.velocity.clear();
  for (const auto& p : state.params) state.velocity.emplace_back(p.shape());
}

ForwardResult forward(const ClassifierState& state, const DenseTensor& batch, ForwardMode mode,
                      SeededRng& rng, ForwardCache* cache) {
  const ModelShape& s = state.shape;
  if (batch.rank() != 2 || batch.dim(1) != s.inputs) {
    throw DimensionError("forward: batch must be [B, " + std::to_string(s.inputs) + "]");
  }
  const std::size_t B = batch.dim(0);
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;

  c.h1 = DenseTensor({B, s.hidden1});
  auto h1 = as_matrix(c.h1, B, s.hidden1);
  h1.noalias() = as_matrix(batch, B, s.inputs) * as_matrix(state.params[0], s.inputs, s.hidden1);
  h1.rowwise() += as_row(state.params[1]);
  h1 = h1.cwiseMax(0.0f);

  c.h2 = DenseTensor({B, s.hidden2});
  auto h2 = as_matrix(c.h2, B, s.hidden2);
  h2.noalias() = h1 * as_matrix(state.params[2], s.hidden1, s.hidden2);
  h2.rowwise() += as_row(state.params[3]);
  h2 = h2.cwiseMax(0.0f);

  const bool dropout = mode != ForwardMode::eval && state.dropout_rate > 0.0f;
  DenseTensor dropped_storage;
  const DenseTensor* penultimate = &c.h2;
  c.mask = DenseTensor();
  if (dropout) {
    c.mask = DenseTensor({B, s.hidden2});
    const float keep_scale = 1.0f / (1.0f - state.dropout_rate);
    for (float& m : c.mask.values()) m = rng.uniform_float() < state.dropout_rate ? 0.0f : keep_scale;
    dropped_storage = multiply(c.h2, c.mask);
    penultimate = &dropped_storage;
  }

  ForwardResult out{DenseTensor({B, s.classes}), DenseTensor({B, s.classes})};
  auto z = as_matrix(out.logits, B, s.classes);
  z.noalias() = as_matrix(*penultimate, B, s.hidden2) * as_matrix(state.params[4], s.hidden2, s.classes);
  z.rowwise() += as_row(state.params[5]);
  softmax_rows(out.logits, out.probs);
  return out;
}

DenseTensor predict_probs(const ClassifierState& state, const DenseTensor& inputs) {
  const std::size_t n = inputs.rank() == 2 ? inputs.dim(0) : 0;
  DenseTensor probs({n, state.shape.classes});
  SeededRng unused(0);
  for (std::size_t start = 0; start < n; start += kPredictChunk) {
    const std::size_t rows = std::min(kPredictChunk, n - start);
    const auto src = inputs.values().subspan(start * inputs.dim(1), rows * inputs.dim(1));
    DenseTensor chunk({rows, inputs.dim(1)}, std::vector<float>(src.begin(), src.end()));
    const ForwardResult r = forward(state, chunk, ForwardMode::eval, unused);
    std::copy(r.probs.values().begin(), r.probs.values().end(),
              probs.values().begin() + static_cast<std::ptrdiff_t>(start * state.shape.classes));
  }
  return probs;
}

TargetMatrix::TargetMatrix(std::size_t rows, std::size_t classes)
    : rows_(rows), classes_(classes), entries_(rows * classes, 0) {}

TargetMatrix TargetMatrix::from_labels(const std::vector<int>& labels, std::size_t classes) {
  TargetMatrix t(labels.size(), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ParameterError("targets: label " + std::to_string(labels[i]) + " outside [0, K)");
    }
    t.entries_[i * classes + static_cast<std::size_t>(labels[i])] = 1;
  }
  return t;
}

void TargetMatrix::set(std::size_t r, std::size_t c, std::int8_t value) {
  if (value < -1 || value > 1) throw ParameterError("targets: entries must be -1, 0 or +1");
  entries_[r * classes_ + c] = value;
}

int TargetMatrix::positive_class(std::size_t r) const {
  for (std::size_t c = 0; c < classes_; ++c) {
    if (entries_[r * classes_ + c] == 1) return static_cast<int>(c);
  }
  return -1;
}

void TargetMatrix::append_rows(const TargetMatrix& other) {
  if (rows_ == 0 && classes_ == 0) classes_ = other.classes_;
  if (other.classes_ != classes_) throw DimensionError("targets: class count mismatch");
  entries_.insert(entries_.end(), other.entries_.begin(), other.entries_.end());
  rows_ += other.rows_;
}

TargetMatrix TargetMatrix::gather(const std::vector<std::size_t>& rows) const {
  TargetMatrix out(rows.size(), classes_);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(entries_.begin() + static_cast<std::ptrdiff_t>(rows[i] * classes_), classes_,
                out.entries_.begin() + static_cast<std::ptrdiff_t>(i * classes_));
  }
  return out;
}

void TargetMatrix::validate() const {
  for (std::size_t r = 0; r < rows_; ++r) {
    int positives = 0;
    for (std::size_t c = 0; c < classes_; ++c) positives += (*this)(r, c) == 1;
    if (positives > 1) throw ParameterError("targets: row " + std::to_string(r) + " has several +1 entries");
  }
}

LossResult bce_loss(const DenseTensor& probs, const TargetMatrix& targets) {
  if (probs.rank() != 2 || probs.dim(0) != targets.rows() || probs.dim(1) != targets.classes()) {
    throw DimensionError("bce_loss: probs and targets disagree in shape");
  }
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  LossResult out{0.0, DenseTensor({n, k})};
  std::size_t active = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c) active += targets(i, c) != 0;
  if (active == 0) return out;

  const double inv = 1.0 / static_cast<double>(active);
  std::vector<double> g(k);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double p = std::clamp(static_cast<double>(probs(i, c)), double{kProbClamp}, 1.0 - kProbClamp);
      switch (targets(i, c)) {
        case 1:
          loss -= std::log(p);
          g[c] = -inv / p;
          break;
        case -1:
          loss -= std::log1p(-p);
          g[c] = inv / (1.0 - p);
          break;
        default:
          g[c] = 0.0;
      }
      dot += g[c] * probs(i, c);
    }
    // d/dz_j of sum_c g_c p_c  =  p_j (g_j - sum_c g_c p_c)
    for (std::size_t j = 0; j < k; ++j) {
      out.grad_logits(i, j) = static_cast<float>(probs(i, j) * (g[j] - dot));
    }
  }
  out.loss = loss * inv;
  return out;
}

Gradients backward(const ClassifierState& state, const DenseTensor& batch, const ForwardCache& cache,
                   const DenseTensor& grad_logits) {
  const ModelShape& s = state.shape;
  const std::size_t B = batch.dim(0);
  if (grad_logits.rank() != 2 || grad_logits.dim(0) != B || grad_logits.dim(1) != s.classes) {
    throw DimensionError("backward: gradient must be [B, K]");
  }
  Gradients g;
  for (const auto& p : state.params) g.params.emplace_back(p.shape());

  const auto dz = as_matrix(grad_logits, B, s.classes);
  const auto h1 = as_matrix(cache.h1, B, s.hidden1);
  const auto h2 = as_matrix(cache.h2, B, s.hidden2);
  const bool masked = !cache.mask.empty();

  RowMat penultimate = h2;
  if (masked) penultimate = penultimate.cwiseProduct(as_matrix(cache.mask, B, s.hidden2));

  as_matrix(g.params[4], s.hidden2, s.classes).noalias() = penultimate.transpose() * dz;
  as_matrix(g.params[5], 1, s.classes).noalias() = dz.colwise().sum();

  RowMat dh2 = dz * as_matrix(state.params[4], s.hidden2, s.classes).transpose();
  if (masked) dh2 = dh2.cwiseProduct(as_matrix(cache.mask, B, s.hidden2));
  dh2 = (h2.array() > 0.0f).select(dh2, 0.0f);

  as_matrix(g.params[2], s.hidden1, s.hidden2).noalias() = h1.transpose() * dh2;
  as_matrix(g.params[3], 1, s.hidden2).noalias() = dh2.colwise().sum();

  RowMat dh1 = dh2 * as_matrix(state.params[2], s.hidden1, s.hidden2).transpose();
  dh1 = (h1.array() > 0.0f).select(dh1, 0.0f);

  as_matrix(g.params[0], s.inputs, s.hidden1).noalias() = as_matrix(batch, B, s.inputs).transpose() * dh1;
  as_matrix(g.params[1], 1, s.hidden1).noalias() = dh1.colwise().sum();
  return g;
}

void OptimizerConfig::validate() const {
  if (!(lr > 0.0f)) throw ParameterError("optimizer: lr must be > 0");
  if (!(gamma > 0.0f && gamma <= 1.0f)) throw ParameterError("optimizer: gamma must lie in (0, 1]");
  if (!(momentum >= 0.0f) || !(weight_decay >= 0.0f)) {
    throw ParameterError("optimizer: momentum and weight decay must be >= 0");
  }
  if (batch_size == 0) throw ParameterError("optimizer: batch size must be > 0");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if ((i > 0 && milestones[i] <= milestones[i - 1]) || milestones[i] >= epochs) {
      throw ParameterError("optimizer: milestones must be strictly increasing and < epochs");
    }
  }
}

OptimizerConfig OptimizerConfig::pretraining() {
  OptimizerConfig c;
  c.epochs = 200;
  c.milestones = {120, 160};
  return c;
}

OptimizerConfig OptimizerConfig::first_adaptation() {
  OptimizerConfig c;
  c.epochs = 100;
  c.milestones = {60, 80};
  return c;
}

OptimizerConfig OptimizerConfig::later_adaptation() {
  OptimizerConfig c;
  c.epochs = 20;
  c.milestones = {12, 16};
  return c;
}

float effective_lr(const OptimizerConfig& config, std::size_t epoch) {
  const auto passed = std::count_if(config.milestones.begin(), config.milestones.end(),
                                    [epoch](std::size_t m) { return m <= epoch; });
  float lr = config.lr;
  for (std::ptrdiff_t i = 0; i < passed; ++i) lr *= config.gamma;
  return lr;
}

void sgd_step(ClassifierState& state, const Gradients& grads, const OptimizerConfig& config,
              std::size_t epoch) {
  const float lr = effective_lr(config, epoch);
  const float mu = config.momentum;
  const float wd = config.weight_decay;
  for (std::size_t p = 0; p < kParamCount; ++p) {
    auto w = state.params[p].values();
    auto v = state.velocity[p].values();
    const auto g = grads.params[p].values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = mu * v[i] + (g[i] + wd * w[i]);
      w[i] -= lr * v[i];
    }
  }
}

ClassifierState train(ClassifierState state, const DenseTensor& inputs, const TargetMatrix& targets,
                      const OptimizerConfig& config, SeededRng& rng, std::vector<EpochStats>* history,
                      const EpochCallback& on_epoch) {
  config.validate();
  state.validate();
  if (config.epochs == 0) return state;
  const std::size_t n = targets.rows();
  if (n == 0) throw ParameterError("train: empty training set");
  if (inputs.rank() != 2 || inputs.dim(0) != n || inputs.dim(1) != state.shape.inputs ||
      targets.classes() != state.shape.classes) {
    throw DimensionError("train: inputs/targets do not match the model");
  }

  const std::size_t width = state.shape.inputs;
  std::vector<std::size_t> order(n);
  ForwardCache cache;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

    double loss_sum = 0.0;
    std::size_t scored = 0, correct = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t rows = std::min(config.batch_size, n - start);
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(start + rows));
      DenseTensor batch({rows, width});
      for (std::size_t r = 0; r < rows; ++r) {
        const auto src = inputs.row(idx[r]);
        std::copy(src.begin(), src.end(), batch.row(r).begin());
      }
      const TargetMatrix batch_targets = targets.gather(idx);

      const ForwardResult fwd = forward(state, batch, ForwardMode::train, rng, &cache);
      const LossResult loss = bce_loss(fwd.probs, batch_targets);
      const Gradients grads = backward(state, batch, cache, loss.grad_logits);
      sgd_step(state, grads, config, epoch);

      loss_sum += loss.loss * static_cast<double>(rows);
      const auto predicted = argmax_rows(fwd.probs);
      for (std::size_t r = 0; r < rows; ++r) {
        const int want = batch_targets.positive_class(r);
        if (want < 0) continue;
        ++scored;
        correct += predicted[r] == want;
      }
    }
    ++state.epoch;
    const EpochStats stats{epoch, loss_sum / static_cast<double>(n),
                           scored ? static_cast<double>(correct) / static_cast<double>(scored) : 0.0};
    if (history) history->push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return state;
}

void save_checkpoint(const ClassifierState& state, const std::filesystem::path& dir) {
  state.validate();
  detail::ensure_directory(dir);
  nlohmann::ordered_json manifest;
  manifest["version"] = kCheckpointVersion;
  manifest["inputs"] = state.shape.inputs;
  manifest["hidden1"] = state.shape.hidden1;
  manifest["hidden2"] = state.shape.hidden2;
  manifest["classes"] = state.shape.classes;
  manifest["dropout_rate"] = state.dropout_rate;
  manifest["seed"] = state.seed;
  manifest["epoch"] = state.epoch;
  auto tensors = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < kParamCount; ++i) {
    tensors.push_back({{"name", kParamNames[i]}, {"shape", state.params[i].shape()}});
  }
  manifest["tensors"] = tensors;
  manifest["blob"] = "weights.bin: params in tensor order, then momentum buffers";
  detail::write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  std::vector<char> blob;
  for (const auto& p : state.params) detail::append_f32_le(blob, p.values());
  for (const auto& v : state.velocity) detail::append_f32_le(blob, v.values());
  detail::write_file(dir / "weights.bin", blob.data(), blob.size());
}

ClassifierState load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  const auto weights_path = dir / "weights.bin";
  const std::vector<char> raw = detail::read_file(manifest_path);
  const std::string text(raw.begin(), raw.end());
  const std::string mname = manifest_path.string();
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(mname, e.byte, std::string("malformed manifest: ") + e.what());
  }
  auto uint_field = [&](const char* key) -> std::uint64_t {
    if (!m.is_object() || !m.contains(key) || !m[key].is_number_unsigned()) {
      throw FormatError(mname, detail::key_offset(text, key),
                        std::string("missing or non-integer field '") + key + "'");
    }
    return m[key].get<std::uint64_t>();
  };
  if (uint_field("version") != kCheckpointVersion) {
    throw FormatError(mname, detail::key_offset(text, "version"), "unsupported checkpoint version");
  }
  ClassifierState s;
  s.shape = ModelShape{uint_field("inputs"), uint_field("hidden1"), uint_field("hidden2"),
                       uint_field("classes")};
  s.seed = uint_field("seed");
  s.epoch = uint_field("epoch");
  if (!m.contains("dropout_rate") || !m["dropout_rate"].is_number()) {
    throw FormatError(mname, detail::key_offset(text, "dropout_rate"), "missing 'dropout_rate'");
  }
  s.dropout_rate = m["dropout_rate"].get<float>();

  const std::vector<char> blob = detail::read_file(weights_path);
  const auto shapes = param_shapes(s.shape);
  std::size_t floats = 0;
  for (const auto& sh : shapes) floats += shape_size(sh);
  const std::uint64_t expected = 2 * floats * 4;
  if (blob.size() != expected) {
    throw FormatError(weights_path.string(), std::min<std::uint64_t>(blob.size(), expected),
                      "expected " + std::to_string(expected) + " bytes, found " +
                          std::to_string(blob.size()));
  }
  const char* p = blob.data();
  for (auto* group : {&s.params, &s.velocity}) {
    for (const auto& sh : shapes) {
      DenseTensor t(sh);
      detail::decode_f32_le(p, t.values());
      p += t.size() * 4;
      group->push_back(std::move(t));
    }
  }
  try {
    s.validate();
  } catch (const std::exception& e) {
    throw FormatError(mname, 0, e.what());
  }
  return s;
}

}  // namespace pseudolabel
