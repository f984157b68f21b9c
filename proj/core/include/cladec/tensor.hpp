#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cladec {

/// Raised when tensor shapes do not line up with an operation's contract.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

std::string to_string(const Shape& shape);
std::size_t volume(const Shape& shape);

/// Dense row-major float tensor. Image tensors use NCHW order.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }
  std::vector<float>& storage() { return data_; }
  const std::vector<float>& storage() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  float& at(int n, int c, int h, int w);
  float at(int n, int c, int h, int w) const;

  /// Same storage, new shape; the element count must match.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  void fill(float value);
  void zero() { fill(0.0f); }

  /// Samples [begin, end) along axis 0.
  Tensor slice_batch(int begin, int end) const;
  /// Gathers the given samples along axis 0, in order.
  Tensor gather_batch(std::span<const int> indices) const;
  /// Channels [begin, end) along axis 1.
  Tensor slice_channels(int begin, int end) const;

  /// Size of one sample (product of all non-batch dims).
  std::size_t sample_size() const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  Shape shape_;
  std::vector<float> data_;
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

/// Concatenate along axis 0.
Tensor concat_batch(std::span<const Tensor> parts);
/// Concatenate along axis 1.
Tensor concat_channels(std::span<const Tensor> parts);

void add_inplace(Tensor& dst, const Tensor& src);
void scale_inplace(Tensor& dst, float factor);

}  // namespace cladec
