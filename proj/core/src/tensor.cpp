#include "cladec/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace cladec {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t volume(const Shape& shape) {
  std::size_t v = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + to_string(shape));
    v *= static_cast<std::size_t>(d);
  }
  return v;
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(volume(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != volume(shape_)) {
    throw ShapeError("value count " + std::to_string(data_.size()) + " does not match shape " +
                     to_string(shape_));
  }
}

int Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) throw ShapeError("axis out of range for " + to_string(shape_));
  return shape_[static_cast<std::size_t>(axis)];
}

float& Tensor::at(int n, int c, int h, int w) {
  return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

float Tensor::at(int n, int c, int h, int w) const {
  return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  if (volume(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

std::size_t Tensor::sample_size() const {
  if (shape_.empty()) return 0;
  return shape_[0] == 0 ? volume(Shape(shape_.begin() + 1, shape_.end()))
                        : data_.size() / static_cast<std::size_t>(shape_[0]);
}

Tensor Tensor::slice_batch(int begin, int end) const {
  if (rank() < 1 || begin < 0 || end > shape_[0] || begin > end) {
    throw ShapeError("batch slice [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of range for " + to_string(shape_));
  }
  Shape s = shape_;
  s[0] = end - begin;
  const std::size_t stride = sample_size();
  std::vector<float> v(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                       data_.begin() + static_cast<std::ptrdiff_t>(end * stride));
  return Tensor(std::move(s), std::move(v));
}

Tensor Tensor::gather_batch(std::span<const int> indices) const {
  Shape s = shape_;
  s[0] = static_cast<int>(indices.size());
  Tensor out(s);
  const std::size_t stride = sample_size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0 || idx >= shape_[0]) throw ShapeError("gather index out of range");
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(idx * stride), stride,
                out.data_.begin() + static_cast<std::ptrdiff_t>(i * stride));
  }
  return out;
}

Tensor Tensor::slice_channels(int begin, int end) const {
  if (rank() < 2 || begin < 0 || end > shape_[1] || begin >= end) {
    throw ShapeError("channel slice [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + to_string(shape_));
  }
  Shape s = shape_;
  s[1] = end - begin;
  Tensor out(s);
  const std::size_t inner = volume(Shape(shape_.begin() + 2, shape_.end()));
  const std::size_t src_stride = static_cast<std::size_t>(shape_[1]) * inner;
  const std::size_t dst_stride = static_cast<std::size_t>(s[1]) * inner;
  for (int n = 0; n < shape_[0]; ++n) {
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(n * src_stride + begin * inner),
                dst_stride, out.data_.begin() + static_cast<std::ptrdiff_t>(n * dst_stride));
  }
  return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

Tensor concat_batch(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_batch: no parts");
  Shape s = parts.front().shape();
  int n = 0;
  for (const auto& p : parts) {
    if (p.rank() != static_cast<int>(s.size()) ||
        !std::equal(s.begin() + 1, s.end(), p.shape().begin() + 1)) {
      throw ShapeError("concat_batch: incompatible shape " + to_string(p.shape()));
    }
    n += p.dim(0);
  }
  s[0] = n;
  std::vector<float> v;
  v.reserve(volume(s));
  for (const auto& p : parts) v.insert(v.end(), p.storage().begin(), p.storage().end());
  return Tensor(std::move(s), std::move(v));
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no parts");
  Shape s = parts.front().shape();
  int c = 0;
  for (const auto& p : parts) {
    if (p.rank() != static_cast<int>(s.size()) || p.dim(0) != s[0] ||
        !std::equal(s.begin() + 2, s.end(), p.shape().begin() + 2)) {
      throw ShapeError("concat_channels: incompatible shape " + to_string(p.shape()));
    }
    c += p.dim(1);
  }
  s[1] = c;
  Tensor out(s);
  const std::size_t inner = volume(Shape(s.begin() + 2, s.end()));
  for (int n = 0; n < s[0]; ++n) {
    std::size_t offset = static_cast<std::size_t>(n) * c * inner;
    for (const auto& p : parts) {
      const std::size_t chunk = static_cast<std::size_t>(p.dim(1)) * inner;
      std::copy_n(p.data() + n * chunk, chunk, out.data() + offset);
      offset += chunk;
    }
  }
  return out;
}

void add_inplace(Tensor& dst, const Tensor& src) {
  require_same_shape(dst, src, "add_inplace");
  float* d = dst.data();
  const float* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

void scale_inplace(Tensor& dst, float factor) {
  for (float& v : dst.storage()) v *= factor;
}

}  // namespace cladec
