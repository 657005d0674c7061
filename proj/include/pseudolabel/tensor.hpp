#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <utility>
#include <vector>

namespace pseudolabel {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);

// Storage is 64-byte aligned so vectorised kernels split every buffer the
// same way; with malloc's 16-byte guarantee the split (and thus the float
// summation order) could change from one allocation to the next.
template <typename T, std::size_t Align>
struct AlignedAllocator {
  using value_type = T;
  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U, Align>;
  };
  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U, Align>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{Align})); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{Align}); }
  template <typename U>
  bool operator==(const AlignedAllocator<U, Align>&) const noexcept {
    return true;
  }
};

using FloatStorage = std::vector<float, AlignedAllocator<float, 64>>;

// Dense row-major float32 array. There is no broadcasting anywhere: every
// binary op requires identical shapes and throws DimensionError otherwise.
class DenseTensor {
 public:
  DenseTensor() = default;
  explicit DenseTensor(Shape shape, float fill = 0.0f);
  DenseTensor(Shape shape, std::vector<float> data);

  static DenseTensor from_rows(std::initializer_list<std::initializer_list<float>> rows);
  static DenseTensor from_values(std::initializer_list<float> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }
  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }

  float& operator[](std::size_t flat) { return data_[flat]; }
  float operator[](std::size_t flat) const { return data_[flat]; }

  // Multi-index access; the number of indices must equal rank().
  float& at(std::initializer_list<std::size_t> index);
  float at(std::initializer_list<std::size_t> index) const;

  // Rank-2 shorthand.
  float& operator()(std::size_t row, std::size_t col) { return data_[row * shape_[1] + col]; }
  float operator()(std::size_t row, std::size_t col) const { return data_[row * shape_[1] + col]; }

  // Contiguous view of row `i` along the leading axis.
  std::span<float> row(std::size_t i);
  std::span<const float> row(std::size_t i) const;

  // Same data, new shape with equal element count.
  DenseTensor reshaped(Shape shape) const&;
  DenseTensor reshaped(Shape shape) &&;

  bool all_finite() const;

  friend bool operator==(const DenseTensor&, const DenseTensor&) = default;

 private:
  std::size_t flat_index(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  FloatStorage data_;
};

// Standard matrix product of two rank-2 tensors; k-ascending accumulation in double.
DenseTensor matmul(const DenseTensor& a, const DenseTensor& b);
DenseTensor transpose(const DenseTensor& a);

DenseTensor add(const DenseTensor& a, const DenseTensor& b);
DenseTensor subtract(const DenseTensor& a, const DenseTensor& b);
DenseTensor multiply(const DenseTensor& a, const DenseTensor& b);
DenseTensor scale(const DenseTensor& a, float factor);

// Max-subtracted softmax over every slice along `axis`.
DenseTensor softmax(const DenseTensor& logits, std::size_t axis);

// Mean and population standard deviation along `axis`; the axis is removed
// from the result shape. Two-pass, accumulated in double.
std::pair<DenseTensor, DenseTensor> mean_std(const DenseTensor& x, std::size_t axis);

// Sum along `axis` (axis removed), accumulated in double.
DenseTensor sum(const DenseTensor& x, std::size_t axis);

// Row-wise argmax of a rank-2 tensor; ties go to the lowest column.
std::vector<int> argmax_rows(const DenseTensor& x);

}  // namespace pseudolabel
