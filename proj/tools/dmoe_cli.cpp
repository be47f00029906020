#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dmoe/ablation.hpp"
#include "dmoe/checkpoint.hpp"
#include "dmoe/error.hpp"
#include "dmoe/pipeline.hpp"

namespace fs = std::filesystem;
using namespace dmoe;

namespace {

// Shared by every subcommand: --config FILE plus one flag per config key.
struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "flat key=value config file; flags override it");
    for (const auto& key : config_keys()) {
      std::string flag = key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      app->add_option_function<std::string>(
             "--" + flag, [this, key](const std::string& v) { overrides[key] = v; },
             "default " + (get_setting(ExperimentConfig{}, key).empty() ? std::string("(empty)")
                                                                        : get_setting(ExperimentConfig{}, key)))
          ->group("Experiment");
    }
  }

  ExperimentConfig resolve() const {
    ExperimentConfig cfg = file.empty() ? ExperimentConfig{} : load_config(file);
    apply_settings(cfg, overrides);
    cfg.validate();
    return cfg;
  }
};

std::string expert_name(int j) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "expert_%03d.json", j);
  return buf;
}

void print_report(const Report& r) {
  std::cout << r.method << " [" << r.config_hash << "]";
  for (const auto& t : r.topk) std::cout << "  top" << t.k << "=" << format_double(t.accuracy);
  std::cout << "  groups=" << r.num_groups << "\n";
}

template <class T>
std::vector<T> parse_list(const std::string& text, T (*one)(const std::string&)) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(one(item));
  return out;
}

double to_double(const std::string& s) { return std::stod(s); }
std::uint64_t to_u64(const std::string& s) { return std::stoull(s); }
Assignment to_assignment(const std::string& s) {
  if (s == "tree") return Assignment::tree;
  if (s == "random") return Assignment::random;
  throw InvalidArgument("unknown assignment '" + s + "'");
}
FusionMode to_fusion(const std::string& s) {
  if (s == "late") return FusionMode::late;
  if (s == "early") return FusionMode::early;
  throw InvalidArgument("unknown fusion mode '" + s + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep mixture of diverse experts: ontology-guided task groups, multi-task experts, stacked fusion"};
  app.require_subcommand(1);

  ConfigFlags flags;
  std::string stage = "cli";
  std::function<void()> action;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic hierarchical dataset and its taxonomy");
  std::string gen_out = "dataset.csv", gen_tax = "taxonomy.tsv";
  gen->add_option("--out", gen_out, "dataset CSV path");
  gen->add_option("--taxonomy-out", gen_tax, "taxonomy TSV path");
  gen->callback([&] {
    stage = "gen-data";
    action = [&] {
      auto cfg = flags.resolve();
      auto synth = generate_synthetic(cfg.synth);
      save_dataset(gen_out, synth.dataset);
      std::ofstream tax(gen_tax);
      write_taxonomy(tax, synth.taxonomy);
      std::cout << "wrote " << gen_out << " (" << synth.dataset.size() << " samples, " << synth.dataset.num_classes
                << " classes) and " << gen_tax << "\n";
    };
  });

  // ontology
  auto* onto = app.add_subcommand("ontology", "build the affinity matrix and two-layer ontology");
  std::string aff_out = "affinity.csv", onto_out = "ontology.json";
  onto->add_option("--affinity-out", aff_out, "affinity CSV path");
  onto->add_option("--out", onto_out, "ontology JSON path");
  onto->callback([&] {
    stage = "ontology";
    action = [&] {
      auto cfg = flags.resolve();
      const auto res = build_ontology(cfg, prepare_data(cfg));
      std::ofstream aff(aff_out);
      write_affinity_csv(aff, res.affinity);
      write_text_file(onto_out, ontology_to_json(res.ontology));
      std::cout << "wrote " << res.ontology.categories.size() << " categories to " << onto_out << "\n";
    };
  });

  // assign
  auto* assign = app.add_subcommand("assign", "generate task groups from a leaf order");
  std::string assign_onto, plan_out = "plan.json";
  int assign_classes = 0;
  assign->add_option("--ontology-file", assign_onto, "ontology JSON (tree-guided assignment)");
  assign->add_option("--num-classes", assign_classes, "class count for random assignment (default: from data)");
  assign->add_option("--out", plan_out, "plan JSON path");
  assign->callback([&] {
    stage = "assign";
    action = [&] {
      auto cfg = flags.resolve();
      GroupingPlan plan;
      if (cfg.assignment == Assignment::tree) {
        if (assign_onto.empty()) throw InvalidArgument("--ontology-file is required for tree-guided assignment");
        const auto o = ontology_from_json(read_text_file(assign_onto));
        plan = build_plan(cfg, static_cast<int>(o.leaf_order.size()), &o);
      } else {
        const int n = assign_classes > 0 ? assign_classes : prepare_data(cfg).dataset.num_classes;
        plan = build_plan(cfg, n, nullptr);
      }
      write_text_file(plan_out, plan_to_json(plan));
      std::cout << "wrote " << plan.num_groups() << " groups (stride " << plan.stride << ") to " << plan_out << "\n";
    };
  });

  // train-experts
  auto* train = app.add_subcommand("train-experts", "train one expert per task group");
  std::string train_plan, train_dir = "experts";
  train->add_option("--plan", train_plan, "plan JSON")->required();
  train->add_option("--out-dir", train_dir, "checkpoint directory");
  train->callback([&] {
    stage = "train-experts";
    action = [&] {
      auto cfg = flags.resolve();
      const auto plan = plan_from_json(read_text_file(train_plan));
      const auto data = prepare_data(cfg);
      const auto experts = train_experts(cfg, plan, data.dataset);
      fs::create_directories(train_dir);
      for (int j = 0; j < plan.num_groups(); ++j) {
        const auto& e = experts[static_cast<std::size_t>(j)];
        save_expert((fs::path(train_dir) / expert_name(j)).string(), e, expert_config(cfg, j));
        std::cout << expert_name(j) << "  within-group top1="
                  << format_double(within_group_accuracy(e, data.dataset, Split::test)) << "\n";
      }
    };
  });

  // fuse
  auto* fuse = app.add_subcommand("fuse", "train the fusion head over trained experts");
  std::string fuse_plan, fuse_dir = "experts", fuse_out;
  fuse->add_option("--plan", fuse_plan, "plan JSON")->required();
  fuse->add_option("--experts-dir", fuse_dir, "directory holding expert_NNN.json");
  fuse->add_option("--out", fuse_out, "model JSON (default mixture.json or early_fusion.json)");
  fuse->callback([&] {
    stage = "fuse";
    action = [&] {
      auto cfg = flags.resolve();
      const auto plan = plan_from_json(read_text_file(fuse_plan));
      const auto data = prepare_data(cfg);
      if (fuse_out.empty()) fuse_out = cfg.fusion == FusionMode::late ? "mixture.json" : "early_fusion.json";
      const fs::path out_dir = fs::absolute(fuse_out).parent_path();
      fs::create_directories(out_dir);
      std::vector<ExpertModel> experts;
      std::vector<std::string> rel;
      for (int j = 0; j < plan.num_groups(); ++j) {
        const auto p = fs::absolute(fs::path(fuse_dir) / expert_name(j));
        experts.push_back(load_expert(p.string()).model);
        rel.push_back(fs::relative(p, out_dir).string());
      }
      if (cfg.fusion == FusionMode::late) {
        const auto mix = train_stacking_head(std::move(experts), plan, data.dataset, cfg.variant, fusion_config(cfg));
        write_text_file(fuse_out, mixture_to_json(mix, rel));
      } else {
        const auto model = early_fusion_train(experts, data.dataset, fusion_config(cfg).head);
        write_text_file(fuse_out, early_fusion_to_json(model, rel));
      }
      std::cout << "wrote " << fuse_out << "\n";
    };
  });

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a fused model on the test split");
  std::string eval_model;
  eval->add_option("--model", eval_model, "mixture.json or early_fusion.json")->required();
  eval->callback([&] {
    stage = "eval";
    action = [&] {
      auto cfg = flags.resolve();
      const auto data = prepare_data(cfg);
      const auto& ds = data.dataset;
      const std::string base = fs::absolute(eval_model).parent_path().string();
      const Matrix inputs = gather_columns(ds, ds.test);
      const Matrix scores = cfg.fusion == FusionMode::late
                                ? predict_proba(mixture_from_json(read_text_file(eval_model), base), inputs)
                                : early_fusion_from_json(read_text_file(eval_model), base).predict_proba(inputs);
      const auto ev = evaluate_scores(scores, ds, cfg.ks);
      Report r;
      r.method = cfg.fusion == FusionMode::late ? "mixture" : "early_fusion";
      r.config_hash = config_hash(cfg);
      r.topk = ev.topk;
      r.ks_skipped = ev.ks_skipped;
      r.per_class = ev.per_class.accuracy;
      r.per_class_sorted = ev.per_class.sorted_curve;
      r.num_classes = ds.num_classes;
      r.seeds = stage_seeds(cfg);
      const fs::path dir = cfg.output_dir.empty() ? fs::path(".") : fs::path(cfg.output_dir);
      fs::create_directories(dir);
      write_text_file((dir / "report.json").string(), r.to_json(false));
      write_per_class((dir / "per_class.csv").string(), ev.per_class);
      write_predictions((dir / "predictions.csv").string(), ev, ds, ev.topk.empty() ? 1 : ev.topk.back().k);
      print_report(r);
    };
  });

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "run every stage end to end");
  bool pipe_baseline = false;
  pipe->add_flag("--monolithic", pipe_baseline, "train the single-softmax baseline instead of the mixture");
  pipe->callback([&] {
    stage = "pipeline";
    action = [&] {
      auto cfg = flags.resolve();
      print_report(pipe_baseline ? run_monolithic(cfg) : run_pipeline(cfg));
    };
  });

  // ablate
  auto* ablate = app.add_subcommand("ablate", "run the comparison grid and write ablation.csv");
  std::string ab_assign = "tree,random", ab_delta2, ab_lambdas = "0,0.25,0.5", ab_variants = "odds,scaled",
              ab_fusions = "late,early", ab_seeds = "1";
  bool ab_no_baseline = false;
  ablate->add_option("--assignments", ab_assign, "comma list of tree|random");
  ablate->add_option("--delta2s", ab_delta2, "comma list (default: 0 and the configured delta2)");
  ablate->add_option("--lambdas", ab_lambdas, "comma list");
  ablate->add_option("--variants", ab_variants, "comma list of odds|scaled");
  ablate->add_option("--fusions", ab_fusions, "comma list of late|early");
  ablate->add_option("--seeds", ab_seeds, "comma list of seeds");
  ablate->add_flag("--no-baseline", ab_no_baseline, "skip the monolithic baseline");
  ablate->callback([&] {
    stage = "ablate";
    action = [&] {
      auto cfg = flags.resolve();
      if (cfg.output_dir.empty()) cfg.output_dir = "ablation";
      AblationGrid grid;
      grid.assignments = parse_list<Assignment>(ab_assign, to_assignment);
      if (!ab_delta2.empty()) grid.delta2s = parse_list<double>(ab_delta2, to_double);
      grid.lambdas = parse_list<double>(ab_lambdas, to_double);
      grid.variants = parse_list<StackingVariant>(ab_variants, stacking_variant_from_string);
      grid.fusions = parse_list<FusionMode>(ab_fusions, to_fusion);
      grid.seeds = parse_list<std::uint64_t>(ab_seeds, to_u64);
      grid.baseline = !ab_no_baseline;
      const auto result = run_ablation(cfg, grid);
      for (const auto& c : result.cells) {
        if (c.report) print_report(*c.report);
        else std::cout << "FAILED [" << config_hash(c.config) << "] " << c.error << "\n";
      }
      std::cout << result.cells.size() << " cells, " << result.failed() << " failed; tables in " << cfg.output_dir
                << "\n";
    };
  });

  for (auto* sub : {gen, onto, assign, train, fuse, eval, pipe, ablate}) flags.attach(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    action();
  } catch (const StageError& e) {
    std::cerr << "error " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error [" << stage << "] " << e.what() << "\n";
    return 1;
  }
  return 0;
}
