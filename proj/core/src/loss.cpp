#include "cladec/loss.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace cladec::loss {

LossGrad cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != static_cast<int>(labels.size())) {
    throw ShapeError("cross_entropy: logits " + to_string(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const int n = logits.dim(0), k = logits.dim(1);
  LossGrad out{0.0, Tensor(logits.shape())};
  const float inv_n = 1.0f / static_cast<float>(n);
  for (int i = 0; i < n; ++i) {
    const float* row = logits.data() + static_cast<std::size_t>(i) * k;
    float* grow = out.grad.data() + static_cast<std::size_t>(i) * k;
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw ShapeError("cross_entropy: label out of range");
    const float mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    const double log_z = std::log(z) + mx;
    out.value += log_z - row[y];
    for (int j = 0; j < k; ++j) {
      grow[j] = static_cast<float>(std::exp(row[j] - log_z)) * inv_n;
    }
    grow[y] -= inv_n;
  }
  out.value /= n;
  return out;
}

LossGrad sum_squared_error(const Tensor& prediction, const Tensor& target) {
  require_same_shape(prediction, target, "sum_squared_error");
  const int n = prediction.dim(0);
  LossGrad out{0.0, Tensor(prediction.shape())};
  const float scale = 2.0f / static_cast<float>(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const float d = prediction[i] - target[i];
    acc += static_cast<double>(d) * d;
    out.grad[i] = scale * d;
  }
  out.value = acc / n;
  return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const int n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const float* row = logits.data() + static_cast<std::size_t>(i) * k;
    out[static_cast<std::size_t>(i)] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

}  // namespace cladec::loss
