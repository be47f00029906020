#pragma once

#include <cstdint>
#include <vector>

#include "dmoe/types.hpp"

namespace dmoe {

// Linear softmax classifier: p = softmax(W x + b).
struct SoftmaxHead {
  Matrix weight;  // classes x inputs
  Vector bias;    // classes

  int num_classes() const noexcept { return static_cast<int>(weight.rows()); }
  int input_dim() const noexcept { return static_cast<int>(weight.cols()); }

  static SoftmaxHead zeros(int classes, int inputs);
  // inputs: one sample per column; returns classes x B.
  Matrix probabilities(const Matrix& inputs) const;
};

struct SoftmaxHeadConfig {
  double learning_rate = 0.5;
  double momentum = 0.9;
  double lr_decay = 0.5;
  int lr_decay_every = 40;
  int epochs = 120;
  int batch_size = 32;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;

  void validate() const;
};

// Negative log-likelihood summed over samples plus weight_decay * |W|^2.
// Fills `grad` (same shapes as the head) when non-null.
double softmax_objective(const SoftmaxHead& head, const Matrix& inputs, const std::vector<int>& labels,
                         double weight_decay, SoftmaxHead* grad);

// Mini-batch gradient descent with momentum. Inputs are divided by their
// per-feature RMS while optimising and the scale is folded back into the
// returned weights, so the model stays linear in the raw inputs while the
// step size does not depend on their units.
// Starts from `init` (raw-input coordinates) when given, zeros otherwise.
SoftmaxHead train_softmax_head(const Matrix& inputs, const std::vector<int>& labels, int num_classes,
                               const SoftmaxHeadConfig& cfg, const SoftmaxHead* init = nullptr);

Matrix softmax_columns(const Matrix& logits);

}  // namespace dmoe
