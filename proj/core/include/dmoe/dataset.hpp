#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dmoe/ontology.hpp"
#include "dmoe/types.hpp"

namespace dmoe {

enum class Split { train, test };

// Labelled feature vectors over `num_classes` classes with a train/test split.
struct Dataset {
  int num_classes = 0;
  int dim = 0;
  Matrix features;  // one sample per row
  std::vector<ClassId> labels;
  std::vector<std::size_t> train;  // ascending sample indices
  std::vector<std::size_t> test;

  std::size_t size() const noexcept { return labels.size(); }
  const std::vector<std::size_t>& indices(Split s) const noexcept { return s == Split::train ? train : test; }
  std::vector<int> per_class_count() const;

  // Labels in range, every class on both sides of the split, disjoint splits.
  // Throws InvalidDataset.
  void validate() const;

  bool operator==(const Dataset& other) const;
};

// Samples of `split` restricted to class c, in ascending index order.
std::vector<std::size_t> class_indices(const Dataset& ds, Split split, ClassId c);

// Element k holds the `split` samples of classes[k] as rows.
ClassFeatures features_by_class(const Dataset& ds, Split split, std::span<const ClassId> classes);
ClassFeatures features_by_class(const Dataset& ds, Split split);

// Columns are samples; handy for feeding encoders.
Matrix gather_columns(const Dataset& ds, std::span<const std::size_t> indices);

struct SynthSpec {
  int n_categories = 8;
  int classes_per_category = 5;
  int dim = 16;
  int samples_per_class = 30;
  double category_spread = 10.0;
  double class_spread = 1.0;
  double train_fraction = 0.8;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticData {
  Dataset dataset;
  TaxonomyTree taxonomy;
  std::vector<int> category_of_class;
};

// Hierarchical Gaussian mixture: category centres ~ N(0, category_spread^2 I),
// class centres ~ N(category centre, class_spread^2 I), samples ~ N(class
// centre, I). The taxonomy is root -> categories -> classes.
SyntheticData generate_synthetic(const SynthSpec& spec);

// Per-class stratified split; every class keeps at least one sample per side.
Dataset split(Dataset ds, double train_fraction, std::uint64_t seed);

// CSV: `#dim=<d>,classes=<n>` header, then `split,class_id,v1,...,vd` rows.
Dataset read_dataset(std::istream& in);
Dataset load_features(const std::string& path);
void write_dataset(std::ostream& out, const Dataset& ds);
void save_dataset(const std::string& path, const Dataset& ds);

// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

}  // namespace dmoe
