#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dmoe/pipeline.hpp"

namespace dmoe {

struct AblationGrid {
  std::vector<Assignment> assignments{Assignment::tree, Assignment::random};
  std::vector<double> delta2s;  // empty: {0, base delta2}
  std::vector<double> lambdas{0.0, 0.25, 0.5};
  std::vector<StackingVariant> variants{StackingVariant::odds, StackingVariant::scaled};
  std::vector<FusionMode> fusions{FusionMode::late, FusionMode::early};
  bool baseline = true;
  // Each seed sets both the data seed and the pipeline seed.
  std::vector<std::uint64_t> seeds{1};
};

struct AblationCell {
  ExperimentConfig config;
  bool monolithic = false;
  std::optional<Report> report;  // empty when the cell failed
  std::string error;

  std::uint64_t seed() const noexcept { return config.seed; }
};

struct AblationResult {
  std::vector<AblationCell> cells;

  std::size_t failed() const;
};

// Every mixture cell of the grid, followed by one monolithic baseline per
// seed. A failing cell records its error and the grid carries on. With
// base.output_dir set, each cell writes into <output_dir>/cells/<hash>/.
AblationResult run_ablation(const ExperimentConfig& base, const AblationGrid& grid);

// One row per cell: settings, top-k columns for base ks, config hash, status.
void write_ablation_csv(const std::string& path, const AblationResult& result, const std::vector<int>& ks);
// Mean top-1 over successful seeds per setting, keyed by lambda and by the
// number of experts respectively.
void write_accuracy_vs_lambda(const std::string& path, const AblationResult& result);
void write_accuracy_vs_experts(const std::string& path, const AblationResult& result);

}  // namespace dmoe
