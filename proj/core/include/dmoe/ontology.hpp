#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dmoe/kernel.hpp"
#include "dmoe/types.hpp"

namespace dmoe {

struct TaxonomyNode {
  int id = 0;
  std::optional<int> parent;
  std::string label;
};

// Rooted tree whose leaves are the atomic classes. Class ids are assigned to
// leaves in the order the leaf nodes appear in the node list.
class TaxonomyTree {
 public:
  // Validates: unique ids, exactly one root, known parents, no cycles, n >= 1 leaf.
  // Throws InvariantViolation.
  static TaxonomyTree from_nodes(std::vector<TaxonomyNode> nodes);

  const std::vector<TaxonomyNode>& nodes() const noexcept { return nodes_; }
  // Node id of each class, indexed by class id.
  const std::vector<int>& leaves() const noexcept { return leaves_; }
  std::size_t num_classes() const noexcept { return leaves_.size(); }
  const std::string& class_label(ClassId c) const;

  // H: the largest number of nodes on a root-to-leaf path (root and leaf counted).
  int depth_max() const noexcept { return depth_max_; }

  ClassId class_of_node(int node_id) const;

  // Nodes on the unique path between the leaves of i and j, endpoints included.
  // 1 when i == j. Throws LookupError for unknown classes.
  int path_node_count(ClassId i, ClassId j) const;

  // Recomputes H and the leaf set from scratch and checks them against the
  // stored values.
  void validate() const;

 private:
  std::vector<int> ancestors_of(std::size_t node_index) const;
  void check_class(ClassId c) const;

  std::vector<TaxonomyNode> nodes_;
  std::vector<int> parent_index_;  // -1 for the root
  std::vector<int> depth_;         // nodes on root->node path
  std::vector<int> leaves_;
  std::unordered_map<int, std::size_t> index_of_;
  int depth_max_ = 0;
};

// Reads `node_id<TAB>parent_id_or_dash<TAB>label` records. Blank lines are skipped.
TaxonomyTree read_taxonomy(std::istream& in);
TaxonomyTree load_taxonomy(const std::string& path);
void write_taxonomy(std::ostream& out, const TaxonomyTree& tree);

// D(i, j) for the semantic affinity. Swappable for users who count the path
// differently (edges instead of nodes, endpoints excluded, ...).
using PathDistance = std::function<double(const TaxonomyTree&, ClassId, ClassId)>;

double node_count_distance(const TaxonomyTree& tree, ClassId i, ClassId j);

// psi(i, j) = -ln(D / 2H), D clamped below at 1 so psi(i, i) is the finite cap
// -ln(1 / 2H).
double semantic_affinity(const TaxonomyTree& tree, ClassId i, ClassId j,
                         const PathDistance& distance = node_count_distance);

double self_affinity_cap(const TaxonomyTree& tree);

enum class AffinityKind { semantic, visual };

// Square symmetric matrix over classes. Construction checks symmetry
// (exact), finiteness, a constant diagonal for semantic matrices and
// non-negativity for visual ones; violations throw InvariantViolation.
class AffinityMatrix {
 public:
  AffinityMatrix(Matrix values, AffinityKind kind);

  Eigen::Index size() const noexcept { return values_.rows(); }
  const Matrix& values() const noexcept { return values_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return values_(i, j); }
  AffinityKind kind() const noexcept { return kind_; }

 private:
  Matrix values_;
  AffinityKind kind_;
};

AffinityMatrix build_semantic_matrix(const TaxonomyTree& tree,
                                     const PathDistance& distance = node_count_distance);

// Class-averaged Gaussian kernel over raw features.
AffinityMatrix visual_affinity_matrix(const ClassFeatures& features, const KernelConfig& cfg);

// Header row `class_id,0,1,...`, then one row per class.
void write_affinity_csv(std::ostream& out, const AffinityMatrix& aff);

// Normalized spectral clustering into k categories. Category ids are
// relabelled so they appear in order of their smallest member class.
std::vector<int> spectral_partition(const AffinityMatrix& aff, int k, std::uint64_t seed);
// Raw-matrix entry point; rejects non-symmetric input with InvariantViolation.
std::vector<int> spectral_partition(const Matrix& affinity, int k, std::uint64_t seed);

struct Category {
  int id = 0;
  std::vector<ClassId> members;  // ascending
};

struct TwoLayerOntology {
  std::vector<Category> categories;
  // Categories in ascending id, members ascending within each.
  std::vector<ClassId> leaf_order;
};

TwoLayerOntology build_two_layer_ontology(const AffinityMatrix& aff, int k, std::uint64_t seed);
TwoLayerOntology ontology_from_assignment(const std::vector<int>& assignment);

// Smallest k whose ontology keeps every category at or below `max_category_size`.
int default_category_count(const AffinityMatrix& aff, int max_category_size, std::uint64_t seed);

std::string ontology_to_json(const TwoLayerOntology& ontology);
TwoLayerOntology ontology_from_json(const std::string& text);

}  // namespace dmoe
