#include "fixtures.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unistd.h>

namespace fixture {

namespace {

dmoe::Matrix uniform(Eigen::Index rows, Eigen::Index cols, double scale, dmoe::Rng& rng) {
  std::uniform_real_distribution<double> u(-scale, scale);
  dmoe::Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = u(rng);
  return m;
}

}  // namespace

dmoe::ExpertModel random_expert(const std::vector<dmoe::ClassId>& members, int input_dim,
                                const std::vector<int>& hidden, dmoe::Activation act, dmoe::Rng& rng,
                                double scale) {
  std::vector<dmoe::DenseLayer> layers;
  int in = input_dim;
  for (int width : hidden) {
    layers.push_back({uniform(width, in, 1.0, rng), uniform(width, 1, scale, rng).col(0)});
    in = width;
  }
  dmoe::ExpertModel m;
  m.group.members = members;
  m.backbone = dmoe::Backbone(input_dim, std::move(layers), act);
  std::uniform_real_distribution<double> pos(0.5, 1.5);
  dmoe::Vector shift = uniform(input_dim, 1, 0.5, rng).col(0);
  dmoe::Vector sc(input_dim);
  for (int i = 0; i < input_dim; ++i) sc(i) = pos(rng);
  m.backbone.set_input_normalization(shift, sc);
  const auto k = static_cast<Eigen::Index>(members.size());
  m.w0 = uniform(in, 1, scale, rng).col(0);
  m.v = uniform(in, k, scale, rng);
  m.w_nig = uniform(in, 1, scale, rng).col(0);
  m.bias = uniform(k + 1, 1, scale, rng).col(0);
  return m;
}

dmoe::Matrix random_similarity(int m, dmoe::Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  dmoe::Matrix s(m, m);
  for (int a = 0; a < m; ++a) {
    s(a, a) = 1.0;
    for (int b = a + 1; b < m; ++b) s(a, b) = s(b, a) = u(rng);
  }
  return s;
}

dmoe::Batch random_batch(int input_dim, int size, int num_labels, dmoe::Rng& rng) {
  dmoe::Batch b;
  b.inputs = uniform(input_dim, size, 2.0, rng);
  std::uniform_int_distribution<int> lab(0, num_labels - 1);
  for (int i = 0; i < size; ++i) b.labels.push_back(lab(rng));
  return b;
}

dmoe::GroupingPlan random_plan(int n, int groups, int size, dmoe::Rng& rng) {
  dmoe::GroupingPlan plan;
  plan.num_classes = n;
  plan.group_size = size;
  std::vector<dmoe::ClassId> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), 0);
  std::vector<bool> covered(static_cast<std::size_t>(n), false);
  for (int j = 0; j < groups; ++j) {
    std::shuffle(all.begin(), all.end(), rng);
    std::vector<dmoe::ClassId> members(all.begin(), all.begin() + size);
    for (auto c : members) covered[static_cast<std::size_t>(c)] = true;
    plan.groups.push_back({j, members});
  }
  // Leftover classes join a random group, so sizes may differ.
  std::uniform_int_distribution<int> pick(0, groups - 1);
  for (int c = 0; c < n; ++c) {
    if (!covered[static_cast<std::size_t>(c)]) plan.groups[static_cast<std::size_t>(pick(rng))].members.push_back(c);
  }
  return plan;
}

dmoe::ExperimentConfig tiny_config() {
  dmoe::ExperimentConfig cfg;
  cfg.synth.n_categories = 2;
  cfg.synth.classes_per_category = 2;
  cfg.synth.dim = 4;
  cfg.synth.samples_per_class = 12;
  cfg.group_size = 2;
  cfg.lambda = 0.0;
  cfg.train.epochs = 5;
  cfg.train.backbone.hidden = {8};
  cfg.fusion_cfg.head.epochs = 5;
  cfg.ks = {1, 2};
  return cfg;
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("dmoe-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace fixture
