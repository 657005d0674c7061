#include "pseudolabel/selection.hpp"

#include <algorithm>
#include <sstream>
#include <string>

#include "binary_io.hpp"
#include "pseudolabel/error.hpp"

namespace pseudolabel {

namespace {

void require_probs(const DenseTensor& probs, const char* op) {
  if (probs.rank() != 2) throw DimensionError(std::string(op) + ": probs must be [N, K]");
}

std::size_t row_argmax(const DenseTensor& m, std::size_t row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < m.dim(1); ++c) {
    if (m(row, c) > m(row, best)) best = c;
  }
  return best;
}

// Shared by the confidence and uncertainty gates; a zero-filled `std_dev`
// with gates at 0.5 reduces to the plain confidence rule.
SelectionMask gate(const DenseTensor& mean, const DenseTensor* std_dev, const SelectionConfig& cfg) {
  const std::size_t n = mean.dim(0), k = mean.dim(1);
  SelectionMask mask(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t top = row_argmax(mean, i);
    const bool positive = mean(i, top) >= cfg.tau_p && (!std_dev || (*std_dev)(i, top) <= cfg.kappa_p);
    if (positive) mask.mark(i, top, 1);
    if (!cfg.negative_learning) continue;
    for (std::size_t c = 0; c < k; ++c) {
      if (positive && c == top) continue;
      if (mean(i, c) <= cfg.tau_n && (!std_dev || (*std_dev)(i, c) <= cfg.kappa_n)) mask.mark(i, c, -1);
    }
  }
  return mask;
}

std::string fmt(float v) {
  std::ostringstream out;
  out.precision(9);
  out << v;
  return out.str();
}

}  // namespace

void SelectionConfig::validate() const {
  if (!(gamma > 0.0f && gamma < 1.0f)) throw ParameterError("selection: gamma must lie in (0, 1)");
  if (!(tau_n >= 0.0f && tau_n < tau_p && tau_p <= 1.0f)) {
    throw ParameterError("selection: need 0 <= tau_n < tau_p <= 1");
  }
  if (!(kappa_p >= 0.0f && kappa_n >= 0.0f)) throw ParameterError("selection: kappas must be >= 0");
}

SelectionMask::SelectionMask(std::size_t r, std::size_t k)
    : rows(r), classes(k), g(r * k, 0), polarity(r * k, 0), pseudo_label(r, -1) {}

void SelectionMask::mark(std::size_t r, std::size_t c, std::int8_t sign) {
  g[r * classes + c] = 1;
  polarity[r * classes + c] = sign;
  if (sign > 0) pseudo_label[r] = static_cast<int>(c);
}

bool SelectionMask::row_selected(std::size_t r) const {
  return std::any_of(g.begin() + static_cast<std::ptrdiff_t>(r * classes),
                     g.begin() + static_cast<std::ptrdiff_t>((r + 1) * classes),
                     [](std::uint8_t v) { return v != 0; });
}

std::size_t SelectionMask::positive_count() const {
  return static_cast<std::size_t>(
      std::count_if(pseudo_label.begin(), pseudo_label.end(), [](int l) { return l >= 0; }));
}

std::size_t SelectionMask::negative_count() const {
  return static_cast<std::size_t>(std::count(polarity.begin(), polarity.end(), std::int8_t{-1}));
}

void SelectionMask::validate() const {
  for (std::size_t r = 0; r < rows; ++r) {
    int positives = 0, positive_at = -1;
    for (std::size_t c = 0; c < classes; ++c) {
      const auto p = polarity[r * classes + c];
      if ((p != 0) != (g[r * classes + c] != 0)) throw ParameterError("mask: polarity/g disagree");
      if (p == 1) {
        ++positives;
        positive_at = static_cast<int>(c);
      }
    }
    if (positives > 1 || pseudo_label[r] != positive_at) {
      throw ParameterError("mask: row " + std::to_string(r) + " has an inconsistent pseudo-label");
    }
  }
}

BinaryMatrix hard_labels(const DenseTensor& probs, float gamma) {
  require_probs(probs, "hard_labels");
  BinaryMatrix out{probs.dim(0), probs.dim(1), std::vector<std::uint8_t>(probs.size(), 0)};
  for (std::size_t i = 0; i < probs.size(); ++i) out.bits[i] = probs[i] >= gamma ? 1 : 0;
  return out;
}

SelectionMask select_confidence(const DenseTensor& probs, const SelectionConfig& config) {
  require_probs(probs, "select_confidence");
  return gate(probs, nullptr, config);
}

SelectionMask select_uncertainty(const UncertaintySummary& summary, const SelectionConfig& config) {
  require_probs(summary.mean, "select_uncertainty");
  if (summary.std.shape() != summary.mean.shape()) {
    throw DimensionError("select_uncertainty: mean and std shapes differ");
  }
  return gate(summary.mean, &summary.std, config);
}

SelectionMask select_gated(const UncertaintySummary& summary, const SelectionConfig& config) {
  return config.mode == SelectionMode::confidence_only ? select_confidence(summary.mean, config)
                                                       : select_uncertainty(summary, config);
}

std::vector<int> unanimous_class(const UncertaintySummary& summary) {
  const DenseTensor& pm = summary.per_model_mean;
  if (pm.rank() != 3) throw DimensionError("vote: per-model means must be [M, N, K]");
  const std::size_t M = pm.dim(0), N = pm.dim(1), K = pm.dim(2);
  std::vector<int> out(N, -1);
  for (std::size_t n = 0; n < N; ++n) {
    int agreed = -1;
    for (std::size_t m = 0; m < M; ++m) {
      const float* row = pm.data() + (m * N + n) * K;
      const int choice = static_cast<int>(std::max_element(row, row + K) - row);
      if (m == 0) {
        agreed = choice;
      } else if (choice != agreed) {
        agreed = -1;
        break;
      }
    }
    out[n] = agreed;
  }
  return out;
}

SelectionMask vote(const UncertaintySummary& summary, const SelectionConfig& config) {
  const std::vector<int> agreed = unanimous_class(summary);
  const std::size_t N = summary.mean.dim(0), K = summary.mean.dim(1);
  SelectionMask mask(N, K);
  for (std::size_t n = 0; n < N; ++n) {
    if (agreed[n] < 0) continue;
    const auto top = static_cast<std::size_t>(agreed[n]);
    if (!(summary.mean(n, top) >= config.gamma)) continue;
    mask.mark(n, top, 1);
    if (!config.negative_learning) continue;
    for (std::size_t c = 0; c < K; ++c) {
      if (c != top && summary.mean(n, c) <= config.tau_n && summary.std(n, c) <= config.kappa_n) {
        mask.mark(n, c, -1);
      }
    }
  }
  return mask;
}

SelectionMask vote(const PredictionCube& cube, const SelectionConfig& config) {
  return vote(summarize(cube), config);
}

PseudoLabeledRows selected_rows(const SelectionMask& mask) {
  PseudoLabeledRows out;
  for (std::size_t r = 0; r < mask.rows; ++r) {
    if (mask.row_selected(r)) out.pool_index.push_back(r);
  }
  out.targets = TargetMatrix(out.pool_index.size(), mask.classes);
  for (std::size_t i = 0; i < out.pool_index.size(); ++i) {
    for (std::size_t c = 0; c < mask.classes; ++c) {
      out.targets.set(i, c, mask.at(out.pool_index[i], c));
    }
  }
  return out;
}

void write_selection_report(const std::filesystem::path& path, const UncertaintySummary& summary,
                            const SelectionMask& mask, const PoolTruth* truth) {
  const std::vector<int> agreed = unanimous_class(summary);
  std::ostringstream out;
  out << "sample_id,unanimous,pooled_mean_max,pooled_std_max,pseudo_label,truth\n";
  for (std::size_t n = 0; n < mask.rows; ++n) {
    const std::size_t top = row_argmax(summary.mean, n);
    out << n << ',' << (agreed[n] >= 0 ? 1 : 0) << ',' << fmt(summary.mean(n, top)) << ','
        << fmt(summary.std(n, top)) << ',';
    if (mask.pseudo_label[n] >= 0) out << mask.pseudo_label[n];
    out << ',';
    if (truth && n < truth->labels.size()) out << truth->labels[n];
    out << '\n';
  }
  detail::write_text(path, out.str());
}

}  // namespace pseudolabel
