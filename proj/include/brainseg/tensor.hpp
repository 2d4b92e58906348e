#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace brainseg::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape &s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape &s);

/// Dense row-major array. Feature maps use shape (batch, d0, d1, d2, channels);
/// convolution kernels (k, k, k, in, out); per-channel vectors (channels).
template <typename T> class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {}

  const Shape &shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_[axis]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T *ptr() { return data_.data(); }
  const T *ptr() const { return data_.data(); }
  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T &operator[](std::size_t i) { return data_[i]; }
  const T &operator[](std::size_t i) const { return data_[i]; }

  // Spatial voxel count of a 5D feature map (batch included).
  std::size_t voxels() const { return shape_[0] * shape_[1] * shape_[2] * shape_[3]; }
  std::size_t channels() const { return shape_.back(); }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename U> Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor &other) const = default;

private:
  Shape shape_;
  std::vector<T> data_;
};

} // namespace brainseg::nn
