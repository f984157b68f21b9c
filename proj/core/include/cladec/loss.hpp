#pragma once

#include <span>
#include <vector>

#include "cladec/tensor.hpp"

namespace cladec::loss {

struct LossGrad {
  double value = 0.0;
  Tensor grad;  // d value / d input
};

/// Softmax cross-entropy averaged over the batch. logits: [N, classes].
LossGrad cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Squared error summed over the pixels of a sample and averaged over samples.
LossGrad sum_squared_error(const Tensor& prediction, const Tensor& target);

/// Index of the largest logit per row.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace cladec::loss
