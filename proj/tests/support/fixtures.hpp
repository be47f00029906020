#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dmoe/experiment_config.hpp"
#include "dmoe/expert.hpp"
#include "dmoe/fusion.hpp"

namespace fixture {

// Expert over `members` with every parameter drawn from U(-scale, scale),
// including a random input normalisation.
dmoe::ExpertModel random_expert(const std::vector<dmoe::ClassId>& members, int input_dim,
                                const std::vector<int>& hidden, dmoe::Activation act, dmoe::Rng& rng,
                                double scale = 0.5);

// Symmetric non-negative M x M matrix with unit diagonal.
dmoe::Matrix random_similarity(int m, dmoe::Rng& rng);

dmoe::Batch random_batch(int input_dim, int size, int num_labels, dmoe::Rng& rng);

// `groups` random subsets of `size` classes from 0..n-1; classes left out
// are appended to random groups so every class is covered.
dmoe::GroupingPlan random_plan(int n, int groups, int size, dmoe::Rng& rng);

// Small pipeline configuration: 2 x 2 synthetic classes, short training.
dmoe::ExperimentConfig tiny_config();

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

std::string slurp(const std::string& path);

}  // namespace fixture
