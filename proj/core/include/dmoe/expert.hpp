#pragma once

#include <cstdint>
#include <vector>

#include "dmoe/backbone.hpp"
#include "dmoe/dataset.hpp"
#include "dmoe/kernel.hpp"
#include "dmoe/ontology.hpp"
#include "dmoe/taskgroups.hpp"
#include "dmoe/types.hpp"

namespace dmoe {

// One base expert: a backbone encoder h(x) plus an (M+1)-way multi-task
// softmax head. In-group slot j scores (w0 + v_j)^T h + b_j; the sentinel
// slot M scores w_nig^T h + b_M.
struct ExpertModel {
  TaskGroup group;
  Backbone backbone;
  Vector w0;     // d
  Matrix v;      // d x M
  Vector w_nig;  // d
  Vector bias;   // M + 1
  std::vector<double> loss_trajectory;

  int num_slots() const noexcept { return group.size() + 1; }
  int encoding_dim() const noexcept { return backbone.output_dim(); }
  // d x M matrix whose column j is w0 + v_j.
  Matrix class_weights() const;
  // d x (M+1): class_weights() followed by w_nig.
  Matrix head_weights() const;
  bool all_finite() const;
};

// Zero head, Glorot backbone.
ExpertModel make_expert(const TaskGroup& group, int input_dim, const BackboneSpec& spec, Rng& rng);

struct TrainConfig {
  double mu = 1.0;
  double delta1 = 1e-4;
  double delta2 = 1e-2;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double lr_decay = 0.5;      // multiplied in every lr_decay_every epochs
  int lr_decay_every = 20;    // 0 disables decay
  int epochs = 60;
  int batch_size = 32;
  int sim_refresh_period = 5;  // U
  int samples_per_class = 0;   // R; 0 uses every training sample
  int sentinel_samples = -1;   // -1: as many as the in-group samples
  bool freeze_class_components = false;  // keep every v_j at zero
  // Standardise inputs with the training set's per-feature mean and spread.
  bool standardize_inputs = true;
  std::uint64_t seed = 0;
  BackboneSpec backbone;
  KernelConfig kernel;

  void validate() const;
};

// S over the M in-group classes and its Laplacian L = Deg(S) - S.
struct SimilarityState {
  Matrix s;
  Matrix laplacian;

  static SimilarityState from_affinity(const AffinityMatrix& s);
};

SimilarityState similarity_matrix(const ClassFeatures& features, const KernelConfig& cfg);

// Samples as columns; labels are head slots 0..M (M = sentinel).
struct Batch {
  Matrix inputs;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

Vector forward(const ExpertModel& model, const Vector& x);
// (M+1) x B probabilities.
Matrix forward_batch(const ExpertModel& model, const Matrix& inputs);

struct ExpertGradients {
  std::vector<DenseLayer> backbone;
  Vector w0;
  Matrix v;
  Vector w_nig;
  Vector bias;
};

// mu * sum CE + delta1 (Tr(W W^T) + |w_nig|^2) + delta2/2 Tr(W L W^T).
double loss(const ExpertModel& model, const Batch& batch, const SimilarityState& sim, const TrainConfig& cfg);
ExpertGradients gradient(const ExpertModel& model, const Batch& batch, const SimilarityState& sim,
                         const TrainConfig& cfg);

// Same objective with the regularisers multiplied by `reg_scale`; fills
// `grad` when non-null. Mini-batch training uses reg_scale = B / N so an
// epoch's batches add up to one copy of the regularisers.
double objective(const ExpertModel& model, const Batch& batch, const SimilarityState& sim, const TrainConfig& cfg,
                 double reg_scale, ExpertGradients* grad);

double manifold_penalty(const Matrix& class_weights, const Matrix& laplacian);

// Flat views in a fixed order: backbone layers (weight column-major, bias),
// w0, v (column-major), w_nig, bias.
Vector parameter_vector(const ExpertModel& model);
void set_parameter_vector(ExpertModel& model, const Vector& params);
Vector gradient_vector(const ExpertGradients& grad);

// Seeded draw without replacement from the train samples of classes outside
// the group, labelled with the sentinel slot. Throws InvalidDataset when the
// pool holds fewer than `count` samples.
Batch sample_not_in_group(const Dataset& ds, const TaskGroup& group, std::size_t count, std::uint64_t seed);

// The in-group samples (first R per class) followed by the sentinel draw.
Batch expert_training_set(const TaskGroup& group, const Dataset& ds, const TrainConfig& cfg);

ExpertModel train_expert(const TaskGroup& group, const Dataset& ds, const TrainConfig& cfg);

// Top-1 over the M in-group slots on the `split` samples of in-group classes.
double within_group_accuracy(const ExpertModel& model, const Dataset& ds, Split split);

}  // namespace dmoe
