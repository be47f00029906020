#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dmoe/dataset.hpp"
#include "dmoe/experiment_config.hpp"
#include "dmoe/expert.hpp"
#include "dmoe/fusion.hpp"
#include "dmoe/metrics.hpp"
#include "dmoe/ontology.hpp"
#include "dmoe/taskgroups.hpp"

namespace dmoe {

struct TopK {
  int k = 1;
  double accuracy = 0.0;
};

struct Report {
  std::string method;  // mixture | early_fusion | monolithic
  std::string config_hash;
  std::vector<std::pair<std::string, std::string>> config;  // echo, hashed keys only
  std::vector<TopK> topk;                                    // ks <= Omega
  std::vector<int> ks_skipped;                               // ks > Omega
  std::vector<double> per_class;
  std::vector<double> per_class_sorted;
  std::vector<double> expert_accuracy;  // within-group test top-1 per expert
  int num_classes = 0;
  int num_groups = 0;
  int num_categories = 0;
  StageSeeds seeds{};
  std::vector<std::pair<std::string, double>> timings;  // seconds per stage

  double top1() const;
  double accuracy_at(int k) const;
  // Timings are left out when `with_timings` is false; everything else is a
  // pure function of the config.
  std::string to_json(bool with_timings = true) const;
};

// Drops the timings object from a report JSON document.
std::string strip_timings(const std::string& report_json);

struct PreparedData {
  Dataset dataset;
  std::optional<TaxonomyTree> taxonomy;
};

struct OntologyResult {
  AffinityMatrix affinity;
  TwoLayerOntology ontology;
};

// Each stage below is a thin composition of public module calls; the CLI
// subcommands run them one at a time.
PreparedData prepare_data(const ExperimentConfig& cfg);
OntologyResult build_ontology(const ExperimentConfig& cfg, const PreparedData& data);
GroupingPlan build_plan(const ExperimentConfig& cfg, int num_classes, const TwoLayerOntology* ontology);
TrainConfig expert_config(const ExperimentConfig& cfg, int group_index);
std::vector<ExpertModel> train_experts(const ExperimentConfig& cfg, const GroupingPlan& plan, const Dataset& ds);
ExpertModel train_monolithic(const ExperimentConfig& cfg, const Dataset& ds);
FusionConfig fusion_config(const ExperimentConfig& cfg);

struct Evaluation {
  std::vector<TopK> topk;
  std::vector<int> ks_skipped;
  PerClassAccuracy per_class;
  std::vector<Ranking> rankings;
  Matrix scores;  // Omega x (test samples)
};

// `scores` holds one column per test sample in ds.test order.
Evaluation evaluate_scores(const Matrix& scores, const Dataset& ds, const std::vector<int>& ks);

Matrix monolithic_scores(const ExpertModel& model, const Matrix& inputs);

// Writes `sample_id,rank,class_id,score` rows for the top `depth` classes.
void write_predictions(const std::string& path, const Evaluation& eval, const Dataset& ds, int depth);
void write_per_class(const std::string& path, const PerClassAccuracy& acc);

// Trained experts shared between runs whose expert-relevant settings agree
// (fusion mode, stacking variant and head settings may differ).
class ExpertCache {
 public:
  std::shared_ptr<const std::vector<ExpertModel>> find(const std::string& key) const;
  void store(const std::string& key, std::shared_ptr<const std::vector<ExpertModel>> experts);
  static std::string key_for(const ExperimentConfig& cfg);

 private:
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const std::vector<ExpertModel>>> entries_;
};

// data -> ontology -> plan -> experts -> fusion -> evaluation. Stage
// failures surface as StageError. Outputs go to cfg.output_dir when set.
Report run_pipeline(const ExperimentConfig& cfg, ExpertCache* cache = nullptr);
// Single Omega-way expert with no groups, no sentinel and no manifold term.
Report run_monolithic(const ExperimentConfig& cfg);

}  // namespace dmoe
