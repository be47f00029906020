#include "dmoe/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <string_view>

#include "dmoe/error.hpp"

namespace dmoe {

std::vector<int> Dataset::per_class_count() const {
  std::vector<int> counts(static_cast<std::size_t>(std::max(num_classes, 0)), 0);
  for (ClassId c : labels)
    if (c >= 0 && c < num_classes) ++counts[static_cast<std::size_t>(c)];
  return counts;
}

void Dataset::validate() const {
  if (num_classes < 1) throw InvalidDataset("dataset must have at least one class");
  if (dim < 1) throw InvalidDataset("feature dimension must be positive");
  if (features.rows() != static_cast<Eigen::Index>(labels.size()) || features.cols() != dim) {
    throw InvalidDataset("feature matrix shape does not match labels/dim");
  }
  for (ClassId c : labels) {
    if (c < 0 || c >= num_classes) throw InvalidDataset("label " + std::to_string(c) + " out of range");
  }
  std::vector<int> side(labels.size(), 0);
  std::vector<int> train_count(static_cast<std::size_t>(num_classes), 0);
  std::vector<int> test_count(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i : train) {
    if (i >= labels.size()) throw InvalidDataset("train index out of range");
    if (side[i] != 0) throw InvalidDataset("sample " + std::to_string(i) + " listed twice");
    side[i] = 1;
    ++train_count[static_cast<std::size_t>(labels[i])];
  }
  for (std::size_t i : test) {
    if (i >= labels.size()) throw InvalidDataset("test index out of range");
    if (side[i] != 0) throw InvalidDataset("sample " + std::to_string(i) + " is in both splits");
    side[i] = 2;
    ++test_count[static_cast<std::size_t>(labels[i])];
  }
  for (int c = 0; c < num_classes; ++c) {
    if (train_count[static_cast<std::size_t>(c)] < 1 || test_count[static_cast<std::size_t>(c)] < 1) {
      throw InvalidDataset("class " + std::to_string(c) + " lacks a train or test sample");
    }
  }
  if (!features.allFinite()) throw InvalidDataset("features contain non-finite values");
}

bool Dataset::operator==(const Dataset& o) const {
  return num_classes == o.num_classes && dim == o.dim && labels == o.labels && train == o.train &&
         test == o.test && features.rows() == o.features.rows() && features.cols() == o.features.cols() &&
         features == o.features;
}

std::vector<std::size_t> class_indices(const Dataset& ds, Split split, ClassId c) {
  std::vector<std::size_t> out;
  for (std::size_t i : ds.indices(split))
    if (ds.labels[i] == c) out.push_back(i);
  return out;
}

ClassFeatures features_by_class(const Dataset& ds, Split split, std::span<const ClassId> classes) {
  ClassFeatures out;
  out.reserve(classes.size());
  for (ClassId c : classes) {
    const auto idx = class_indices(ds, split, c);
    Matrix m(static_cast<Eigen::Index>(idx.size()), ds.dim);
    for (std::size_t r = 0; r < idx.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = ds.features.row(static_cast<Eigen::Index>(idx[r]));
    out.push_back(std::move(m));
  }
  return out;
}

ClassFeatures features_by_class(const Dataset& ds, Split split) {
  std::vector<ClassId> all(static_cast<std::size_t>(ds.num_classes));
  for (int c = 0; c < ds.num_classes; ++c) all[static_cast<std::size_t>(c)] = c;
  return features_by_class(ds, split, all);
}

Matrix gather_columns(const Dataset& ds, std::span<const std::size_t> indices) {
  Matrix out(ds.dim, static_cast<Eigen::Index>(indices.size()));
  for (std::size_t k = 0; k < indices.size(); ++k) {
    out.col(static_cast<Eigen::Index>(k)) = ds.features.row(static_cast<Eigen::Index>(indices[k])).transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------

void SynthSpec::validate() const {
  if (n_categories < 1 || classes_per_category < 1 || dim < 1 || samples_per_class < 1) {
    throw InvalidArgument("synthetic spec counts must be at least 1");
  }
  if (!(class_spread > 0.0) || !(category_spread > class_spread)) {
    throw InvalidArgument("synthetic spec needs category_spread > class_spread > 0");
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw InvalidArgument("train fraction must lie in (0, 1)");
  }
}

SyntheticData generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](const Vector& centre, double spread) {
    Vector v(spec.dim);
    for (int d = 0; d < spec.dim; ++d) v(d) = centre(d) + spread * normal(rng);
    return v;
  };

  const int n_classes = spec.n_categories * spec.classes_per_category;
  Dataset ds;
  ds.num_classes = n_classes;
  ds.dim = spec.dim;
  ds.features.resize(static_cast<Eigen::Index>(n_classes) * spec.samples_per_class, spec.dim);
  ds.labels.reserve(static_cast<std::size_t>(ds.features.rows()));

  SyntheticData out;
  std::vector<TaxonomyNode> nodes;
  nodes.push_back({0, std::nullopt, "root"});
  for (int k = 0; k < spec.n_categories; ++k) nodes.push_back({1 + k, 0, "category_" + std::to_string(k)});

  Eigen::Index row = 0;
  const Vector origin = Vector::Zero(spec.dim);
  for (int k = 0; k < spec.n_categories; ++k) {
    const Vector cat_centre = draw(origin, spec.category_spread);
    for (int m = 0; m < spec.classes_per_category; ++m) {
      const ClassId c = k * spec.classes_per_category + m;
      nodes.push_back({1 + spec.n_categories + c, 1 + k, "class_" + std::to_string(c)});
      out.category_of_class.push_back(k);
      const Vector class_centre = draw(cat_centre, spec.class_spread);
      for (int r = 0; r < spec.samples_per_class; ++r) {
        ds.features.row(row++) = draw(class_centre, 1.0).transpose();
        ds.labels.push_back(c);
      }
    }
  }
  out.taxonomy = TaxonomyTree::from_nodes(std::move(nodes));
  out.dataset = split(std::move(ds), spec.train_fraction, spec.seed);
  return out;
}

Dataset split(Dataset ds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw InvalidArgument("train fraction must lie in (0, 1)");
  }
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.labels.size(); ++i) {
    const ClassId c = ds.labels[i];
    if (c < 0 || c >= ds.num_classes) throw InvalidDataset("label " + std::to_string(c) + " out of range");
    by_class[static_cast<std::size_t>(c)].push_back(i);
  }
  ds.train.clear();
  ds.test.clear();
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.size() < 2) {
      throw InvalidDataset("class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                           " samples; a split needs at least 2");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto total = static_cast<long>(idx.size());
    const long n_train = std::clamp(std::lround(train_fraction * static_cast<double>(total)), 1L, total - 1);
    ds.train.insert(ds.train.end(), idx.begin(), idx.begin() + n_train);
    ds.test.insert(ds.test.end(), idx.begin() + n_train, idx.end());
  }
  std::sort(ds.train.begin(), ds.train.end());
  std::sort(ds.test.begin(), ds.test.end());
  return ds;
}

// ---------------------------------------------------------------------------
// CSV

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw Error("cannot format number");
  return std::string(buf, ptr);
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view field, std::size_t line, const char* what) {
  T v{};
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end || field.empty()) {
    throw ParseError(line, std::string("bad ") + what + " '" + std::string(field) + "'");
  }
  return v;
}

}  // namespace

Dataset read_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(0, "dataset file is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  Dataset ds;
  {
    constexpr std::string_view dim_key = "#dim=";
    constexpr std::string_view cls_key = ",classes=";
    const std::string_view header(line);
    const auto cpos = header.find(cls_key);
    if (!header.starts_with(dim_key) || cpos == std::string_view::npos) {
      throw ParseError(1, "expected header '#dim=<d>,classes=<n>'");
    }
    ds.dim = parse_number<int>(header.substr(dim_key.size(), cpos - dim_key.size()), 1, "dim");
    ds.num_classes = parse_number<int>(header.substr(cpos + cls_key.size()), 1, "class count");
    if (ds.dim < 1 || ds.num_classes < 1) throw ParseError(1, "dim and classes must be positive");
  }

  std::vector<double> values;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_commas(line);
    if (fields.size() != static_cast<std::size_t>(ds.dim) + 2) {
      throw ParseError(lineno, "expected " + std::to_string(ds.dim) + " feature values, got " +
                                   std::to_string(fields.size() < 2 ? 0 : fields.size() - 2));
    }
    const std::size_t index = ds.labels.size();
    if (fields[0] == "train") {
      ds.train.push_back(index);
    } else if (fields[0] == "test") {
      ds.test.push_back(index);
    } else {
      throw ParseError(lineno, "unknown split label '" + std::string(fields[0]) + "'");
    }
    const int c = parse_number<int>(fields[1], lineno, "class id");
    if (c < 0 || c >= ds.num_classes) throw ParseError(lineno, "class id " + std::to_string(c) + " out of range");
    ds.labels.push_back(c);
    for (std::size_t k = 2; k < fields.size(); ++k) values.push_back(parse_number<double>(fields[k], lineno, "value"));
  }
  if (ds.labels.empty()) throw ParseError(lineno, "dataset has no rows");

  ds.features = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      values.data(), static_cast<Eigen::Index>(ds.labels.size()), ds.dim);
  ds.validate();
  return ds;
}

Dataset load_features(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset file " + path);
  return read_dataset(in);
}

void write_dataset(std::ostream& out, const Dataset& ds) {
  out << "#dim=" << ds.dim << ",classes=" << ds.num_classes << '\n';
  std::vector<int> side(ds.size(), 0);
  for (std::size_t i : ds.train) side[i] = 1;
  for (std::size_t i : ds.test) side[i] = 2;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (side[i] == 0) continue;
    out << (side[i] == 1 ? "train" : "test") << ',' << ds.labels[i];
    for (int d = 0; d < ds.dim; ++d) out << ',' << format_double(ds.features(static_cast<Eigen::Index>(i), d));
    out << '\n';
  }
}

void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write dataset file " + path);
  write_dataset(out, ds);
}

}  // namespace dmoe
