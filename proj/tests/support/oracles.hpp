#pragma once

// Straight-line reference implementations used to cross-check the library.
// They share no code with it beyond the plain data types.

#include <cstdint>
#include <functional>
#include <vector>

#include "dmoe/expert.hpp"
#include "dmoe/fusion.hpp"
#include "dmoe/ontology.hpp"
#include "dmoe/taskgroups.hpp"

namespace oracle {

using dmoe::Matrix;
using dmoe::Vector;

// Encoder output for one input, evaluated with scalar loops.
std::vector<double> encode(const dmoe::Backbone& backbone, const std::vector<double>& x);

// mu * sum CE + delta1 (sum_j |w0 + v_j|^2 + |w_nig|^2)
//   + delta2 / 4 * sum_ab S_ab |w_a - w_b|^2
// The last term is delta2 / 2 * Tr(W L W^T) written through S directly.
double expert_loss(const dmoe::ExpertModel& model, const dmoe::Batch& batch, const Matrix& s, double mu,
                   double delta1, double delta2);

// Softmax of the expert head for one input, evaluated with scalar loops.
std::vector<double> expert_forward(const dmoe::ExpertModel& model, const std::vector<double>& x);

struct GroupScore {
  std::vector<double> p;  // slot order
  double phi = 0.5;
};

// Upsilon(i) summed term by term over every (class, group) pair, with the
// literal membership weights: odds uses 1 / lambda and scaled uses 1 / 0.
std::vector<double> stack(const dmoe::GroupingPlan& plan, const std::vector<GroupScore>& scores, double lambda,
                          dmoe::StackingVariant variant);

// Stacking head probabilities for one stacked feature.
std::vector<double> head_softmax(const dmoe::SoftmaxHead& head, const std::vector<double>& upsilon);

// Nodes on the tree path between two leaves, by walking parent pointers.
int path_nodes(const std::vector<dmoe::TaxonomyNode>& nodes, int leaf_a, int leaf_b);

// Partition of 0..n-1 into exactly k non-empty blocks minimising the
// normalised cut of the affinity (diagonal ignored). Labels are canonical:
// blocks numbered in order of their smallest member.
std::vector<int> min_ncut_partition(const Matrix& affinity, int k);

// Relabels a partition so blocks are numbered by first appearance.
std::vector<int> canonical(const std::vector<int>& labels);

// Central differences of f around x.
Vector numeric_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double step = 1e-5);

// |a - b| / max(|a|, |b|, floor) in the Euclidean norm.
double relative_error(const Vector& a, const Vector& b, double floor = 1e-8);

}  // namespace oracle
