#include "dmoe/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <future>
#include <numeric>
#include <sstream>

#include "dmoe/checkpoint.hpp"
#include "dmoe/error.hpp"
#include "json.hpp"

namespace dmoe {

namespace fs = std::filesystem;
using nlohmann::json;

double Report::top1() const { return accuracy_at(1); }

double Report::accuracy_at(int k) const {
  for (const auto& t : topk)
    if (t.k == k) return t.accuracy;
  throw LookupError("report has no top-" + std::to_string(k) + " entry");
}

std::string Report::to_json(bool with_timings) const {
  json j;
  j["method"] = method;
  j["config_hash"] = config_hash;
  json echo = json::object();
  for (const auto& [k, v] : config) echo[k] = v;
  j["config"] = echo;
  json tk = json::array();
  for (const auto& t : topk) tk.push_back({{"k", t.k}, {"accuracy", t.accuracy}});
  j["topk"] = tk;
  j["ks_skipped"] = ks_skipped;
  j["num_classes"] = num_classes;
  j["num_groups"] = num_groups;
  j["num_categories"] = num_categories;
  j["per_class_accuracy"] = per_class;
  j["per_class_sorted"] = per_class_sorted;
  j["expert_within_group_accuracy"] = expert_accuracy;
  j["seeds"] = {{"data", seeds.data},
                {"ontology", seeds.ontology},
                {"assignment", seeds.assignment},
                {"experts", seeds.experts},
                {"head", seeds.head}};
  if (with_timings) {
    json t = json::object();
    for (const auto& [stage, secs] : timings) t[stage] = secs;
    j["timings"] = t;
  }
  return j.dump(2) + "\n";
}

std::string strip_timings(const std::string& report_json) {
  json j = json::parse(report_json);
  j.erase("timings");
  return j.dump(2) + "\n";
}

namespace {

class StageTimer {
 public:
  explicit StageTimer(Report& r) : report_(r) {}

  // Runs `fn` as stage `name`, records its wall time and wraps failures.
  template <class F>
  auto operator()(const std::string& name, F&& fn) -> decltype(fn()) {
    const auto start = std::chrono::steady_clock::now();
    try {
      if constexpr (std::is_void_v<decltype(fn())>) {
        fn();
        record(name, start);
      } else {
        auto out = fn();
        record(name, start);
        return out;
      }
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, e.what());
    }
  }

 private:
  void record(const std::string& name, std::chrono::steady_clock::time_point start) {
    const std::chrono::duration<double> d = std::chrono::steady_clock::now() - start;
    report_.timings.emplace_back(name, d.count());
  }
  Report& report_;
};

std::vector<int> test_labels(const Dataset& ds) {
  std::vector<int> out;
  out.reserve(ds.test.size());
  for (std::size_t i : ds.test) out.push_back(ds.labels[i]);
  return out;
}

void start_report(Report& r, const ExperimentConfig& cfg, std::string method) {
  r.method = std::move(method);
  r.config_hash = config_hash(cfg);
  std::istringstream lines(config_to_text(cfg));
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find('=');
    r.config.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  r.seeds = stage_seeds(cfg);
}

void finish_report(Report& r, const Evaluation& ev) {
  r.topk = ev.topk;
  r.ks_skipped = ev.ks_skipped;
  r.per_class = ev.per_class.accuracy;
  r.per_class_sorted = ev.per_class.sorted_curve;
}

std::string expert_file(int j) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "experts/expert_%03d.json", j);
  return buf;
}

int prediction_depth(const Evaluation& ev) { return ev.topk.empty() ? 1 : ev.topk.back().k; }

void write_common(const fs::path& dir, const Report& report, const Evaluation& ev, const PreparedData& data) {
  fs::create_directories(dir / "experts");
  save_dataset((dir / "dataset.csv").string(), data.dataset);
  if (data.taxonomy) {
    std::ofstream tax(dir / "taxonomy.tsv");
    write_taxonomy(tax, *data.taxonomy);
  }
  write_per_class((dir / "per_class.csv").string(), ev.per_class);
  write_predictions((dir / "predictions.csv").string(), ev, data.dataset, prediction_depth(ev));
  write_text_file((dir / "report.json").string(), report.to_json(true));
}

}  // namespace

// ---------------------------------------------------------------------------

PreparedData prepare_data(const ExperimentConfig& cfg) {
  if (cfg.data_path.empty()) {
    auto synth = generate_synthetic(cfg.synth);
    return PreparedData{std::move(synth.dataset), std::move(synth.taxonomy)};
  }
  PreparedData data{load_features(cfg.data_path), std::nullopt};
  if (!cfg.taxonomy_path.empty()) {
    data.taxonomy = load_taxonomy(cfg.taxonomy_path);
    if (static_cast<int>(data.taxonomy->num_classes()) != data.dataset.num_classes) {
      throw InvalidArgument("taxonomy has " + std::to_string(data.taxonomy->num_classes()) + " leaves but the dataset has " +
                            std::to_string(data.dataset.num_classes) + " classes");
    }
  }
  return data;
}

OntologyResult build_ontology(const ExperimentConfig& cfg, const PreparedData& data) {
  const auto seeds = stage_seeds(cfg);
  AffinityMatrix aff = [&] {
    if (cfg.ontology == OntologySource::semantic) {
      if (!data.taxonomy) throw InvalidArgument("the semantic ontology needs a taxonomy (set taxonomy_path)");
      return build_semantic_matrix(*data.taxonomy);
    }
    KernelConfig k = cfg.train.kernel;
    k.seed = seeds.ontology;
    return visual_affinity_matrix(features_by_class(data.dataset, Split::train), k);
  }();
  const int n = static_cast<int>(aff.size());
  const int k = cfg.categories > 0 ? cfg.categories
                                   : default_category_count(aff, std::min(cfg.group_size, n), seeds.ontology);
  auto onto = build_two_layer_ontology(aff, k, seeds.ontology);
  return OntologyResult{std::move(aff), std::move(onto)};
}

GroupingPlan build_plan(const ExperimentConfig& cfg, int num_classes, const TwoLayerOntology* ontology) {
  if (cfg.assignment == Assignment::tree) {
    if (ontology == nullptr) throw InvalidArgument("tree-guided assignment needs an ontology");
    return generate_groups(ontology->leaf_order, cfg.group_size, cfg.lambda);
  }
  std::vector<ClassId> classes(static_cast<std::size_t>(num_classes));
  std::iota(classes.begin(), classes.end(), ClassId{0});
  return random_groups(classes, cfg.group_size, cfg.lambda, stage_seeds(cfg).assignment);
}

TrainConfig expert_config(const ExperimentConfig& cfg, int group_index) {
  TrainConfig t = cfg.train;
  t.seed = derive_seed(stage_seeds(cfg).experts, static_cast<std::uint64_t>(group_index));
  t.kernel.seed = derive_seed(t.seed, 0x6b);
  return t;
}

std::vector<ExpertModel> train_experts(const ExperimentConfig& cfg, const GroupingPlan& plan, const Dataset& ds) {
  const int n = plan.num_groups();
  std::vector<ExpertModel> experts(static_cast<std::size_t>(n));
  const int workers = std::clamp(cfg.workers, 1, std::max(1, n));
  // Worker w trains groups w, w + workers, ...; every expert has its own seed
  // so the result does not depend on the worker count.
  auto job = [&](int w) {
    for (int j = w; j < n; j += workers) {
      experts[static_cast<std::size_t>(j)] = train_expert(plan.groups[static_cast<std::size_t>(j)], ds, expert_config(cfg, j));
    }
  };
  if (workers == 1) {
    job(0);
  } else {
    std::vector<std::future<void>> pending;
    for (int w = 0; w < workers; ++w) pending.push_back(std::async(std::launch::async, job, w));
    for (auto& f : pending) f.get();
  }
  return experts;
}

ExpertModel train_monolithic(const ExperimentConfig& cfg, const Dataset& ds) {
  TaskGroup all;
  all.index = 0;
  all.members.resize(static_cast<std::size_t>(ds.num_classes));
  std::iota(all.members.begin(), all.members.end(), ClassId{0});
  TrainConfig t = expert_config(cfg, 0);
  t.delta2 = 0.0;
  t.sentinel_samples = 0;
  return train_expert(all, ds, t);
}

FusionConfig fusion_config(const ExperimentConfig& cfg) {
  FusionConfig f = cfg.fusion_cfg;
  f.head.seed = stage_seeds(cfg).head;
  return f;
}

Matrix monolithic_scores(const ExpertModel& model, const Matrix& inputs) {
  const Matrix q = forward_batch(model, inputs);
  const int m = model.group.size();
  Matrix out(m, inputs.cols());
  for (int slot = 0; slot < m; ++slot) out.row(model.group.members[static_cast<std::size_t>(slot)]) = q.row(slot);
  return out;
}

Evaluation evaluate_scores(const Matrix& scores, const Dataset& ds, const std::vector<int>& ks) {
  if (scores.cols() != static_cast<Eigen::Index>(ds.test.size()) || scores.rows() != ds.num_classes) {
    throw InvalidArgument("score matrix does not match the test split");
  }
  Evaluation ev;
  ev.scores = scores;
  ev.rankings = rank_columns(scores);
  const auto labels = test_labels(ds);
  for (int k : ks) {
    if (k > ds.num_classes) {
      ev.ks_skipped.push_back(k);
      continue;
    }
    ev.topk.push_back({k, topk_accuracy(ev.rankings, labels, k)});
  }
  ev.per_class = per_class_accuracy(ev.rankings, labels, ds.num_classes);
  return ev;
}

void write_predictions(const std::string& path, const Evaluation& ev, const Dataset& ds, int depth) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write '" + path + "'");
  out << "sample_id,rank,class_id,score\n";
  for (std::size_t s = 0; s < ev.rankings.size(); ++s) {
    const auto& r = ev.rankings[s];
    for (int rank = 0; rank < std::min<int>(depth, static_cast<int>(r.size())); ++rank) {
      const ClassId c = r[static_cast<std::size_t>(rank)];
      out << ds.test[s] << ',' << rank + 1 << ',' << c << ','
          << format_double(ev.scores(c, static_cast<Eigen::Index>(s))) << '\n';
    }
  }
}

void write_per_class(const std::string& path, const PerClassAccuracy& acc) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write '" + path + "'");
  out << "class_id,accuracy,curve_position,curve_accuracy\n";
  for (std::size_t c = 0; c < acc.accuracy.size(); ++c) {
    out << c << ',' << format_double(acc.accuracy[c]) << ',' << c + 1 << ',' << format_double(acc.sorted_curve[c])
        << '\n';
  }
}

// ---------------------------------------------------------------------------

std::shared_ptr<const std::vector<ExpertModel>> ExpertCache::find(const std::string& key) const {
  std::lock_guard lock(mutex_);
  const auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : it->second;
}

void ExpertCache::store(const std::string& key, std::shared_ptr<const std::vector<ExpertModel>> experts) {
  std::lock_guard lock(mutex_);
  entries_[key] = std::move(experts);
}

std::string ExpertCache::key_for(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  const ExperimentConfig defaults;
  c.variant = defaults.variant;
  c.fusion = defaults.fusion;
  c.fusion_cfg = defaults.fusion_cfg;
  c.ks = defaults.ks;
  return config_to_text(c);
}

Report run_pipeline(const ExperimentConfig& cfg, ExpertCache* cache) {
  Report report;
  StageTimer stage(report);
  stage("config", [&] { cfg.validate(); });
  start_report(report, cfg, cfg.fusion == FusionMode::late ? "mixture" : "early_fusion");

  const PreparedData data = stage("data", [&] { return prepare_data(cfg); });
  const Dataset& ds = data.dataset;
  report.num_classes = ds.num_classes;

  std::optional<OntologyResult> onto;
  if (cfg.assignment == Assignment::tree) {
    onto = stage("ontology", [&] { return build_ontology(cfg, data); });
    report.num_categories = static_cast<int>(onto->ontology.categories.size());
  }
  const GroupingPlan plan =
      stage("assign", [&] { return build_plan(cfg, ds.num_classes, onto ? &onto->ontology : nullptr); });
  report.num_groups = plan.num_groups();

  const std::vector<ExpertModel> experts = stage("train-experts", [&] {
    if (cache == nullptr) return train_experts(cfg, plan, ds);
    const auto key = ExpertCache::key_for(cfg);
    if (auto hit = cache->find(key)) return *hit;
    auto trained = std::make_shared<const std::vector<ExpertModel>>(train_experts(cfg, plan, ds));
    cache->store(key, trained);
    return *trained;
  });
  for (const auto& e : experts) report.expert_accuracy.push_back(within_group_accuracy(e, ds, Split::test));

  const Matrix test_inputs = gather_columns(ds, ds.test);
  std::optional<MixtureModel> mixture;
  std::optional<EarlyFusionModel> early;
  stage("fuse", [&] {
    if (cfg.fusion == FusionMode::late) {
      mixture = train_stacking_head(experts, plan, ds, cfg.variant, fusion_config(cfg));
    } else {
      early = early_fusion_train(experts, ds, fusion_config(cfg).head);
    }
  });

  const Evaluation ev = stage("eval", [&] {
    return evaluate_scores(mixture ? predict_proba(*mixture, test_inputs) : early->predict_proba(test_inputs), ds,
                           cfg.ks);
  });
  finish_report(report, ev);

  if (!cfg.output_dir.empty()) {
    stage("write", [&] {
      const fs::path dir(cfg.output_dir);
      fs::create_directories(dir / "experts");
      std::vector<std::string> paths;
      // With end-to-end refinement the mixture holds updated expert heads.
      const auto& saved = mixture ? mixture->experts : experts;
      for (int j = 0; j < plan.num_groups(); ++j) {
        paths.push_back(expert_file(j));
        save_expert((dir / paths.back()).string(), saved[static_cast<std::size_t>(j)], expert_config(cfg, j));
      }
      write_text_file((dir / "plan.json").string(), plan_to_json(plan));
      if (onto) {
        write_text_file((dir / "ontology.json").string(), ontology_to_json(onto->ontology));
        std::ofstream aff(dir / "affinity.csv");
        write_affinity_csv(aff, onto->affinity);
      }
      if (mixture) {
        write_text_file((dir / "mixture.json").string(), mixture_to_json(*mixture, paths));
      } else {
        write_text_file((dir / "early_fusion.json").string(), early_fusion_to_json(*early, paths));
      }
      write_text_file((dir / "config.txt").string(), config_to_text(cfg));
      write_common(dir, report, ev, data);
    });
  }
  return report;
}

Report run_monolithic(const ExperimentConfig& cfg) {
  Report report;
  StageTimer stage(report);
  stage("config", [&] { cfg.validate(); });
  start_report(report, cfg, "monolithic");
  const PreparedData data = stage("data", [&] { return prepare_data(cfg); });
  const Dataset& ds = data.dataset;
  report.num_classes = ds.num_classes;
  report.num_groups = 1;

  const ExpertModel model = stage("train-experts", [&] { return train_monolithic(cfg, ds); });
  report.expert_accuracy.push_back(within_group_accuracy(model, ds, Split::test));
  const Evaluation ev =
      stage("eval", [&] { return evaluate_scores(monolithic_scores(model, gather_columns(ds, ds.test)), ds, cfg.ks); });
  finish_report(report, ev);

  if (!cfg.output_dir.empty()) {
    stage("write", [&] {
      const fs::path dir(cfg.output_dir);
      fs::create_directories(dir / "experts");
      TrainConfig t = expert_config(cfg, 0);
      t.delta2 = 0.0;
      t.sentinel_samples = 0;
      save_expert((dir / "experts/monolithic.json").string(), model, t);
      write_text_file((dir / "config.txt").string(), config_to_text(cfg));
      write_common(dir, report, ev, data);
    });
  }
  return report;
}

}  // namespace dmoe
