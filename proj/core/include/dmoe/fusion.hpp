#pragma once

#include <span>
#include <string>
#include <vector>

#include "dmoe/dataset.hpp"
#include "dmoe/expert.hpp"
#include "dmoe/softmax_head.hpp"
#include "dmoe/taskgroups.hpp"

namespace dmoe {

// odds:   Y(i) = sum_j L_j(i) PS(i,j) (1 - phi_j) / phi_j, L_j(i) in {1, lambda}
// scaled: Y(i) = sum_j lambda' L_j(i) PS(i,j) phi_j,      L_j(i) in {1, 0}
enum class StackingVariant { odds, scaled };

std::string to_string(StackingVariant v);
StackingVariant stacking_variant_from_string(const std::string& name);

// Clamp applied to the not-in-group score before it enters a stacking function.
inline constexpr double kPhiEpsilon = 1e-6;

struct ExpertScores {
  Vector p;           // M in-group probabilities, slot order
  double phi = 0.5;   // clamped not-in-group probability
};

ExpertScores expert_scores(const ExpertModel& model, const Vector& x);

// lambda' for the scaled variant: lambda, or 1 when lambda is 0.
double scaled_variant_factor(double lambda);

// Omega-dimensional stacked feature from per-expert scores; scores[j]
// belongs to plan.groups[j]. Throws InvalidArgument on a mismatch.
Vector stack_scores(const GroupingPlan& plan, std::span<const ExpertScores> scores, double lambda,
                    StackingVariant variant);

Vector stack_features(std::span<const ExpertModel> experts, const GroupingPlan& plan, const Vector& x,
                      double lambda, StackingVariant variant);
// Omega x B, one stacked feature per input column.
Matrix stack_features_batch(std::span<const ExpertModel> experts, const GroupingPlan& plan, const Matrix& inputs,
                            double lambda, StackingVariant variant);

struct MixtureModel {
  std::vector<ExpertModel> experts;
  GroupingPlan plan;
  SoftmaxHead head;  // Omega x Omega
  StackingVariant variant = StackingVariant::odds;
  double lambda = 0.0;

  int num_classes() const noexcept { return plan.num_classes; }
  void validate() const;
};

struct FusionConfig {
  SoftmaxHeadConfig head;
  // Start the stacking head at W = I, b = 0 (logits equal to the stacked
  // feature) instead of at zero.
  bool identity_init = true;
  // Optional second phase: gradients of the stacking-level loss flow back
  // through the stacked features into every expert's softmax head.
  bool end_to_end = false;
  int refine_epochs = 5;
  double refine_learning_rate = 0.01;
  int refine_batch_size = 32;
  double refine_clip = 1.0;  // max per-sample gradient norm for each expert head
};

MixtureModel train_stacking_head(std::vector<ExpertModel> experts, GroupingPlan plan, const Dataset& ds,
                                 StackingVariant variant, const FusionConfig& cfg);

struct MixtureGradients {
  SoftmaxHead head;
  std::vector<ExpertGradients> experts;  // head parameters only; backbone left empty
};

// Stacking-level negative log-likelihood of `labels` (global class ids).
double mixture_objective(const MixtureModel& mixture, const Matrix& inputs, const std::vector<ClassId>& labels,
                         double weight_decay, MixtureGradients* grad);

struct RankedClass {
  ClassId cls = 0;
  double score = 0.0;
  bool operator==(const RankedClass&) const = default;
};

// Descending score, ties broken by the lower class id. Throws InvalidArgument
// unless 1 <= k <= scores.size().
std::vector<RankedClass> rank_scores(const Vector& scores, int k);

std::vector<RankedClass> predict(const MixtureModel& mixture, const Vector& x, int k);
Matrix predict_proba(const MixtureModel& mixture, const Matrix& inputs);

// Early fusion: the experts' encodings are concatenated and fed to one
// Omega-way softmax.
struct EarlyFusionModel {
  std::vector<Backbone> encoders;
  SoftmaxHead head;

  int feature_dim() const noexcept;
  Matrix features(const Matrix& inputs) const;
  Matrix predict_proba(const Matrix& inputs) const;
};

// Sum of encoder output dims; throws InvalidArgument when the experts do not
// share one encoding dimension.
int early_fusion_dimension(std::span<const ExpertModel> experts);

EarlyFusionModel early_fusion_train(std::span<const ExpertModel> experts, const Dataset& ds,
                                    const SoftmaxHeadConfig& cfg);
std::vector<RankedClass> predict(const EarlyFusionModel& model, const Vector& x, int k);

inline constexpr int kMixtureFormatVersion = 1;

// {format_version, plan, expert_checkpoint_paths, variant, lambda, head_params}
std::string mixture_to_json(const MixtureModel& mixture, const std::vector<std::string>& expert_paths);
// Experts are read from the referenced checkpoint files; relative paths are
// resolved against `base_dir`.
MixtureModel mixture_from_json(const std::string& text, const std::string& base_dir);

// {format_version, expert_checkpoint_paths, head_params}; only the experts'
// backbones are used when loading.
std::string early_fusion_to_json(const EarlyFusionModel& model, const std::vector<std::string>& expert_paths);
EarlyFusionModel early_fusion_from_json(const std::string& text, const std::string& base_dir);

std::string softmax_head_to_json(const SoftmaxHead& head);
SoftmaxHead softmax_head_from_json(const std::string& text);

}  // namespace dmoe
