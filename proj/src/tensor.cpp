#include "pseudolabel/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "pseudolabel/error.hpp"

namespace pseudolabel {

namespace {

std::string shape_str(const Shape& s) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < s.size(); ++i) out << (i ? "," : "") << s[i];
  out << ']';
  return out.str();
}

void require_same_shape(const DenseTensor& a, const DenseTensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const DenseTensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(a.shape()));
  }
}

// Splits a shape around `axis` into (outer, length, inner) strides.
struct AxisLayout {
  std::size_t outer = 1;
  std::size_t length = 1;
  std::size_t inner = 1;
  Shape reduced;
};

AxisLayout layout_for(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(shape));
  }
  AxisLayout l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  l.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) l.reduced.push_back(shape[i]);
  }
  return l;
}

template <typename Op>
DenseTensor elementwise(const DenseTensor& a, const DenseTensor& b, const char* name, Op op) {
  require_same_shape(a, b, name);
  DenseTensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = op(a[i], b[i]);
  return out;
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

DenseTensor::DenseTensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

DenseTensor::DenseTensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape_) + " needs " +
                         std::to_string(shape_size(shape_)) + " values, got " +
                         std::to_string(data_.size()));
  }
}

DenseTensor DenseTensor::from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  const std::size_t n = rows.size();
  const std::size_t m = n ? rows.begin()->size() : 0;
  std::vector<float> data;
  data.reserve(n * m);
  for (const auto& r : rows) {
    if (r.size() != m) throw DimensionError("from_rows: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return DenseTensor({n, m}, std::move(data));
}

DenseTensor DenseTensor::from_values(std::initializer_list<float> values) {
  return DenseTensor({values.size()}, std::vector<float>(values));
}

std::size_t DenseTensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("dim: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape_));
  }
  return shape_[axis];
}

std::size_t DenseTensor::flat_index(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw DimensionError("at: " + std::to_string(index.size()) + " indices for shape " +
                         shape_str(shape_));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) throw DimensionError("at: index out of range");
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

float& DenseTensor::at(std::initializer_list<std::size_t> index) { return data_[flat_index(index)]; }
float DenseTensor::at(std::initializer_list<std::size_t> index) const {
  return data_[flat_index(index)];
}

std::span<float> DenseTensor::row(std::size_t i) {
  const std::size_t stride = shape_.empty() ? 0 : data_.size() / shape_[0];
  return std::span<float>(data_).subspan(i * stride, stride);
}

std::span<const float> DenseTensor::row(std::size_t i) const {
  const std::size_t stride = shape_.empty() ? 0 : data_.size() / shape_[0];
  return std::span<const float>(data_).subspan(i * stride, stride);
}

DenseTensor DenseTensor::reshaped(Shape shape) const& {
  DenseTensor out = *this;
  return std::move(out).reshaped(std::move(shape));
}

DenseTensor DenseTensor::reshaped(Shape shape) && {
  if (shape_size(shape) != data_.size()) {
    throw DimensionError("reshape: " + std::to_string(shape_size(shape)) + " elements requested, tensor has " +
                         std::to_string(data_.size()));
  }
  DenseTensor out;
  out.shape_ = std::move(shape);
  out.data_ = std::move(data_);
  return out;
}

bool DenseTensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

DenseTensor matmul(const DenseTensor& a, const DenseTensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  DenseTensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        acc += static_cast<double>(a(i, p)) * static_cast<double>(b(p, j));
      }
      out(i, j) = static_cast<float>(acc);
    }
  }
  return out;
}

DenseTensor transpose(const DenseTensor& a) {
  require_rank(a, 2, "transpose");
  DenseTensor out({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) out(j, i) = a(i, j);
  return out;
}

DenseTensor add(const DenseTensor& a, const DenseTensor& b) {
  return elementwise(a, b, "add", std::plus<float>());
}

DenseTensor subtract(const DenseTensor& a, const DenseTensor& b) {
  return elementwise(a, b, "subtract", std::minus<float>());
}

DenseTensor multiply(const DenseTensor& a, const DenseTensor& b) {
  return elementwise(a, b, "multiply", std::multiplies<float>());
}

DenseTensor scale(const DenseTensor& a, float factor) {
  DenseTensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * factor;
  return out;
}

DenseTensor softmax(const DenseTensor& logits, std::size_t axis) {
  const AxisLayout l = layout_for(logits.shape(), axis, "softmax");
  DenseTensor out(logits.shape());
  std::vector<double> e(l.length);
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.length * l.inner + in;
      float top = logits[base];
      for (std::size_t j = 1; j < l.length; ++j) top = std::max(top, logits[base + j * l.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < l.length; ++j) {
        e[j] = std::exp(static_cast<double>(logits[base + j * l.inner]) - top);
        total += e[j];
      }
      for (std::size_t j = 0; j < l.length; ++j) {
        out[base + j * l.inner] = static_cast<float>(e[j] / total);
      }
    }
  }
  return out;
}

std::pair<DenseTensor, DenseTensor> mean_std(const DenseTensor& x, std::size_t axis) {
  const AxisLayout l = layout_for(x.shape(), axis, "mean_std");
  if (l.length == 0) throw DimensionError("mean_std: empty axis");
  DenseTensor mean(l.reduced), std_dev(l.reduced);
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.length * l.inner + in;
      double total = 0.0;
      for (std::size_t j = 0; j < l.length; ++j) total += x[base + j * l.inner];
      const double mu = total / static_cast<double>(l.length);
      double sq = 0.0;
      for (std::size_t j = 0; j < l.length; ++j) {
        const double d = x[base + j * l.inner] - mu;
        sq += d * d;
      }
      mean[o * l.inner + in] = static_cast<float>(mu);
      std_dev[o * l.inner + in] = static_cast<float>(std::sqrt(sq / static_cast<double>(l.length)));
    }
  }
  return {std::move(mean), std::move(std_dev)};
}

DenseTensor sum(const DenseTensor& x, std::size_t axis) {
  const AxisLayout l = layout_for(x.shape(), axis, "sum");
  DenseTensor out(l.reduced);
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.length * l.inner + in;
      double total = 0.0;
      for (std::size_t j = 0; j < l.length; ++j) total += x[base + j * l.inner];
      out[o * l.inner + in] = static_cast<float>(total);
    }
  }
  return out;
}

std::vector<int> argmax_rows(const DenseTensor& x) {
  require_rank(x, 2, "argmax_rows");
  std::vector<int> out(x.dim(0), 0);
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < x.dim(1); ++j) {
      if (x(i, j) > x(i, best)) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

}  // namespace pseudolabel
