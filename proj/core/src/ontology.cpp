#include "dmoe/ontology.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>

#include "dmoe/error.hpp"
#include "json.hpp"

namespace dmoe {

// ---------------------------------------------------------------------------
// TaxonomyTree

TaxonomyTree TaxonomyTree::from_nodes(std::vector<TaxonomyNode> nodes) {
  if (nodes.empty()) throw InvariantViolation("taxonomy has no nodes");

  TaxonomyTree t;
  t.nodes_ = std::move(nodes);
  const std::size_t n = t.nodes_.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!t.index_of_.emplace(t.nodes_[i].id, i).second) {
      throw InvariantViolation("duplicate node id " + std::to_string(t.nodes_[i].id));
    }
  }

  t.parent_index_.assign(n, -1);
  std::vector<bool> has_child(n, false);
  int root = -1;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& node = t.nodes_[i];
    if (!node.parent) {
      if (root >= 0) throw InvariantViolation("taxonomy has more than one root");
      root = static_cast<int>(i);
      continue;
    }
    auto it = t.index_of_.find(*node.parent);
    if (it == t.index_of_.end()) {
      throw InvariantViolation("node " + std::to_string(node.id) + " references unknown parent " +
                               std::to_string(*node.parent));
    }
    if (it->second == i) throw InvariantViolation("node " + std::to_string(node.id) + " is its own parent");
    t.parent_index_[i] = static_cast<int>(it->second);
    has_child[it->second] = true;
  }
  if (root < 0) throw InvariantViolation("taxonomy has no root");

  // Depths by walking up; a walk longer than n nodes means a cycle.
  t.depth_.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    int d = 0;
    int cur = static_cast<int>(i);
    while (cur >= 0) {
      if (++d > static_cast<int>(n)) {
        throw InvariantViolation("cycle through node " + std::to_string(t.nodes_[i].id));
      }
      cur = t.parent_index_[static_cast<std::size_t>(cur)];
    }
    t.depth_[i] = d;
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (!has_child[i]) {
      t.leaves_.push_back(t.nodes_[i].id);
      t.depth_max_ = std::max(t.depth_max_, t.depth_[i]);
    }
  }
  return t;
}

const std::string& TaxonomyTree::class_label(ClassId c) const {
  check_class(c);
  return nodes_[index_of_.at(leaves_[static_cast<std::size_t>(c)])].label;
}

ClassId TaxonomyTree::class_of_node(int node_id) const {
  auto it = std::find(leaves_.begin(), leaves_.end(), node_id);
  if (it == leaves_.end()) throw LookupError("node " + std::to_string(node_id) + " is not a leaf");
  return static_cast<ClassId>(it - leaves_.begin());
}

void TaxonomyTree::check_class(ClassId c) const {
  if (c < 0 || static_cast<std::size_t>(c) >= leaves_.size()) {
    throw LookupError("unknown class id " + std::to_string(c));
  }
}

std::vector<int> TaxonomyTree::ancestors_of(std::size_t node_index) const {
  std::vector<int> path;
  for (int cur = static_cast<int>(node_index); cur >= 0; cur = parent_index_[static_cast<std::size_t>(cur)]) {
    path.push_back(cur);
  }
  return path;  // node first, root last
}

int TaxonomyTree::path_node_count(ClassId i, ClassId j) const {
  check_class(i);
  check_class(j);
  if (i == j) return 1;
  const auto a = ancestors_of(index_of_.at(leaves_[static_cast<std::size_t>(i)]));
  const auto b = ancestors_of(index_of_.at(leaves_[static_cast<std::size_t>(j)]));
  // Strip the shared suffix (common ancestors); keep the lowest one once.
  std::size_t ia = a.size();
  std::size_t ib = b.size();
  while (ia > 0 && ib > 0 && a[ia - 1] == b[ib - 1]) {
    --ia;
    --ib;
  }
  return static_cast<int>(ia + ib + 1);
}

void TaxonomyTree::validate() const {
  std::vector<bool> has_child(nodes_.size(), false);
  for (int p : parent_index_)
    if (p >= 0) has_child[static_cast<std::size_t>(p)] = true;
  int h = 0;
  std::vector<int> leaves;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (has_child[i]) continue;
    leaves.push_back(nodes_[i].id);
    h = std::max(h, static_cast<int>(ancestors_of(i).size()));
  }
  if (h != depth_max_) throw InvariantViolation("stored depth_max disagrees with the tree");
  if (leaves != leaves_) throw InvariantViolation("stored leaf list disagrees with the tree");
}

// ---------------------------------------------------------------------------
// Semantic affinity

double node_count_distance(const TaxonomyTree& tree, ClassId i, ClassId j) {
  return static_cast<double>(tree.path_node_count(i, j));
}

double self_affinity_cap(const TaxonomyTree& tree) {
  return -std::log(1.0 / (2.0 * tree.depth_max()));
}

double semantic_affinity(const TaxonomyTree& tree, ClassId i, ClassId j, const PathDistance& distance) {
  if (i == j) {
    // Still reject unknown ids.
    tree.path_node_count(i, j);
    return self_affinity_cap(tree);
  }
  const double d = std::max(1.0, distance(tree, i, j));
  return -std::log(d / (2.0 * tree.depth_max()));
}

AffinityMatrix::AffinityMatrix(Matrix values, AffinityKind kind) : values_(std::move(values)), kind_(kind) {
  if (values_.rows() != values_.cols()) throw InvariantViolation("affinity matrix is not square");
  const Eigen::Index n = values_.rows();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double v = values_(i, j);
      if (!std::isfinite(v)) throw InvariantViolation("affinity matrix has a non-finite entry");
      if (v != values_(j, i)) throw InvariantViolation("affinity matrix is not symmetric");
      if (kind_ == AffinityKind::visual && v < 0.0) {
        throw InvariantViolation("visual affinity matrix has a negative entry");
      }
    }
    if (kind_ == AffinityKind::semantic && values_(i, i) != values_(0, 0)) {
      throw InvariantViolation("semantic affinity diagonal is not constant");
    }
  }
}

AffinityMatrix build_semantic_matrix(const TaxonomyTree& tree, const PathDistance& distance) {
  const auto n = static_cast<Eigen::Index>(tree.num_classes());
  if (n < 2) throw InvalidArgument("semantic matrix needs at least two classes");
  Matrix psi(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    psi(i, i) = semantic_affinity(tree, static_cast<ClassId>(i), static_cast<ClassId>(i), distance);
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = semantic_affinity(tree, static_cast<ClassId>(i), static_cast<ClassId>(j), distance);
      psi(i, j) = v;
      psi(j, i) = v;
    }
  }
  return AffinityMatrix(std::move(psi), AffinityKind::semantic);
}

AffinityMatrix visual_affinity_matrix(const ClassFeatures& features, const KernelConfig& cfg) {
  const double bw = resolve_bandwidth(features, cfg);
  return AffinityMatrix(mean_kernel_matrix(features, bw), AffinityKind::visual);
}

void write_affinity_csv(std::ostream& out, const AffinityMatrix& aff) {
  const Eigen::Index n = aff.size();
  out << "class_id";
  for (Eigen::Index j = 0; j < n; ++j) out << ',' << j;
  out << '\n';
  const auto old_precision = out.precision(17);
  for (Eigen::Index i = 0; i < n; ++i) {
    out << i;
    for (Eigen::Index j = 0; j < n; ++j) out << ',' << aff(i, j);
    out << '\n';
  }
  out.precision(old_precision);
}

// ---------------------------------------------------------------------------
// Spectral clustering

namespace {

struct KMeansResult {
  std::vector<int> labels;
  double inertia = 0.0;
};

// Points are rows of `x`.
KMeansResult kmeans(const Matrix& x, int k, Rng& rng) {
  const Eigen::Index n = x.rows();
  Matrix centers(k, x.cols());

  // k-means++ seeding.
  std::vector<Eigen::Index> chosen;
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  chosen.push_back(first(rng));
  Vector d2 = Vector::Constant(n, std::numeric_limits<double>::infinity());
  for (int c = 1; c < k; ++c) {
    const Eigen::Index last = chosen.back();
    for (Eigen::Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), (x.row(i) - x.row(last)).squaredNorm());
    const double total = d2.sum();
    Eigen::Index pick = -1;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (d2(i) <= 0.0) continue;
        pick = i;
        r -= d2(i);
        if (r <= 0.0) break;
      }
    } else {
      // Fewer distinct points than clusters: take the lowest unused index.
      for (Eigen::Index i = 0; i < n && pick < 0; ++i)
        if (std::find(chosen.begin(), chosen.end(), i) == chosen.end()) pick = i;
    }
    chosen.push_back(pick);
  }
  for (int c = 0; c < k; ++c) centers.row(c) = x.row(chosen[static_cast<std::size_t>(c)]);

  std::vector<int> labels(static_cast<std::size_t>(n), -1);
  auto repair_empty = [&](std::vector<Eigen::Index>& sizes) {
    for (int c = 0; c < k; ++c) {
      if (sizes[static_cast<std::size_t>(c)] > 0) continue;
      const auto largest = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
      Eigen::Index far = -1;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (labels[static_cast<std::size_t>(i)] != largest) continue;
        const double d = (x.row(i) - centers.row(largest)).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      labels[static_cast<std::size_t>(far)] = c;
      --sizes[static_cast<std::size_t>(largest)];
      ++sizes[static_cast<std::size_t>(c)];
      centers.row(c) = x.row(far);
    }
  };

  for (int iter = 0; iter < 300; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = (x.row(i) - centers.row(c)).squaredNorm();
        if (d < best_d) {  // strict: ties go to the lower cluster index
          best_d = d;
          best = c;
        }
      }
      if (labels[static_cast<std::size_t>(i)] != best) {
        labels[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    std::vector<Eigen::Index> sizes(static_cast<std::size_t>(k), 0);
    for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
    repair_empty(sizes);

    centers.setZero();
    for (Eigen::Index i = 0; i < n; ++i) centers.row(labels[static_cast<std::size_t>(i)]) += x.row(i);
    for (int c = 0; c < k; ++c) centers.row(c) /= static_cast<double>(sizes[static_cast<std::size_t>(c)]);
    if (!changed && iter > 0) break;
  }

  KMeansResult r;
  r.labels = std::move(labels);
  for (Eigen::Index i = 0; i < n; ++i)
    r.inertia += (x.row(i) - centers.row(r.labels[static_cast<std::size_t>(i)])).squaredNorm();
  return r;
}

std::vector<int> canonical_labels(const std::vector<int>& labels) {
  std::map<int, int> remap;
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = remap.emplace(labels[i], static_cast<int>(remap.size()));
    out[i] = it->second;
  }
  return out;
}

constexpr int kKMeansRestarts = 8;

}  // namespace

namespace {

std::vector<int> spectral_partition_impl(const Matrix& values, int k, std::uint64_t seed) {
  const Eigen::Index n = values.rows();
  if (k < 1) throw InvalidArgument("k must be at least 1");
  if (k > n) throw InvalidArgument("k = " + std::to_string(k) + " exceeds class count " + std::to_string(n));
  if (k == 1) return std::vector<int>(static_cast<std::size_t>(n), 0);

  Matrix a = values;
  a.array() -= a.minCoeff();
  a.diagonal().setZero();
  const Vector deg = a.rowwise().sum();
  Vector dinv(n);
  for (Eigen::Index i = 0; i < n; ++i) dinv(i) = deg(i) > 0.0 ? 1.0 / std::sqrt(deg(i)) : 0.0;
  Matrix lap = -(dinv.asDiagonal() * a * dinv.asDiagonal());
  lap.diagonal().array() += 1.0;
  // Symmetrize away rounding so the solver sees an exactly self-adjoint input.
  lap = 0.5 * (lap + lap.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Matrix> solver(lap);
  if (solver.info() != Eigen::Success) throw Error("eigen decomposition failed");
  Matrix u = solver.eigenvectors().leftCols(k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double norm = u.row(i).norm();
    if (norm > 0.0) u.row(i) /= norm;
  }

  Rng rng(seed);
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < kKMeansRestarts; ++r) {
    KMeansResult res = kmeans(u, k, rng);
    if (res.inertia < best.inertia - 1e-12) best = std::move(res);
  }
  return canonical_labels(best.labels);
}

}  // namespace

std::vector<int> spectral_partition(const AffinityMatrix& aff, int k, std::uint64_t seed) {
  return spectral_partition_impl(aff.values(), k, seed);
}

std::vector<int> spectral_partition(const Matrix& affinity, int k, std::uint64_t seed) {
  if (affinity.rows() != affinity.cols()) throw InvariantViolation("affinity matrix is not square");
  if (!affinity.allFinite()) throw InvariantViolation("affinity matrix has a non-finite entry");
  if (affinity != affinity.transpose()) throw InvariantViolation("affinity matrix is not symmetric");
  return spectral_partition_impl(affinity, k, seed);
}

TwoLayerOntology ontology_from_assignment(const std::vector<int>& assignment) {
  TwoLayerOntology ont;
  std::map<int, std::vector<ClassId>> groups;
  for (std::size_t c = 0; c < assignment.size(); ++c) groups[assignment[c]].push_back(static_cast<ClassId>(c));
  for (auto& [id, members] : groups) {
    ont.categories.push_back(Category{id, members});
    ont.leaf_order.insert(ont.leaf_order.end(), members.begin(), members.end());
  }
  return ont;
}

TwoLayerOntology build_two_layer_ontology(const AffinityMatrix& aff, int k, std::uint64_t seed) {
  return ontology_from_assignment(spectral_partition(aff, k, seed));
}

int default_category_count(const AffinityMatrix& aff, int max_category_size, std::uint64_t seed) {
  if (max_category_size < 1) throw InvalidArgument("max category size must be positive");
  const auto n = static_cast<int>(aff.size());
  for (int k = std::max(1, (n + max_category_size - 1) / max_category_size); k < n; ++k) {
    const auto labels = spectral_partition(aff, k, seed);
    std::vector<int> sizes(static_cast<std::size_t>(k), 0);
    for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
    if (*std::max_element(sizes.begin(), sizes.end()) <= max_category_size) return k;
  }
  return n;
}

std::string ontology_to_json(const TwoLayerOntology& ontology) {
  nlohmann::json j;
  j["leaf_order"] = ontology.leaf_order;
  auto cats = nlohmann::json::array();
  for (const auto& c : ontology.categories) cats.push_back({{"id", c.id}, {"members", c.members}});
  j["categories"] = cats;
  return j.dump(2);
}

TwoLayerOntology ontology_from_json(const std::string& text) {
  TwoLayerOntology ont;
  try {
    const auto j = nlohmann::json::parse(text);
    ont.leaf_order = j.at("leaf_order").get<std::vector<ClassId>>();
    for (const auto& c : j.at("categories")) {
      ont.categories.push_back(Category{c.at("id").get<int>(), c.at("members").get<std::vector<ClassId>>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("ontology json: ") + e.what());
  }
  std::vector<ClassId> sorted = ont.leaf_order;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i] != static_cast<ClassId>(i)) throw InvariantViolation("leaf_order is not a permutation");
  }
  return ont;
}

}  // namespace dmoe
