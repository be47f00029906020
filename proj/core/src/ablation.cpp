#include "dmoe/ablation.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <tuple>

#include "dmoe/error.hpp"

namespace dmoe {

std::size_t AblationResult::failed() const {
  std::size_t n = 0;
  for (const auto& c : cells) n += c.report ? 0 : 1;
  return n;
}

namespace {

ExperimentConfig seeded(const ExperimentConfig& base, std::uint64_t seed) {
  ExperimentConfig c = base;
  c.seed = seed;
  c.synth.seed = seed;
  return c;
}

void run_cell(AblationCell& cell, ExpertCache& cache) {
  try {
    cell.report = cell.monolithic ? run_monolithic(cell.config) : run_pipeline(cell.config, &cache);
  } catch (const std::exception& e) {
    cell.error = e.what();
  }
}

std::string cell_dir(const std::string& root, const ExperimentConfig& cfg, bool monolithic) {
  return (std::filesystem::path(root) / "cells" / ((monolithic ? "monolithic-" : "mixture-") + config_hash(cfg)))
      .string();
}

std::string csv_field(std::string s) {
  for (char& ch : s)
    if (ch == ',' || ch == '\n' || ch == '"') ch = ' ';
  return s;
}

// (assignment, delta2, variant, fusion, lambda, groups) -> (sum top-1, count)
using SeriesKey = std::tuple<std::string, double, std::string, std::string, double, int>;

std::map<SeriesKey, std::pair<double, int>> mixture_series(const AblationResult& result) {
  std::map<SeriesKey, std::pair<double, int>> out;
  for (const auto& c : result.cells) {
    if (c.monolithic || !c.report) continue;
    const auto& cfg = c.config;
    SeriesKey key{to_string(cfg.assignment), cfg.train.delta2, to_string(cfg.variant), to_string(cfg.fusion),
                  cfg.lambda, c.report->num_groups};
    auto& [sum, n] = out[key];
    sum += c.report->top1();
    ++n;
  }
  return out;
}

}  // namespace

AblationResult run_ablation(const ExperimentConfig& base, const AblationGrid& grid) {
  base.validate();
  if (grid.seeds.empty()) throw InvalidArgument("ablation needs at least one seed");
  const std::vector<double> delta2s = grid.delta2s.empty() ? std::vector<double>{0.0, base.train.delta2} : grid.delta2s;

  AblationResult result;
  for (auto seed : grid.seeds) {
    const ExperimentConfig s = seeded(base, seed);
    for (auto a : grid.assignments)
      for (double d2 : delta2s)
        for (double lam : grid.lambdas)
          for (auto v : grid.variants)
            for (auto f : grid.fusions) {
              AblationCell cell;
              cell.config = s;
              cell.config.assignment = a;
              cell.config.train.delta2 = d2;
              cell.config.lambda = lam;
              cell.config.variant = v;
              cell.config.fusion = f;
              result.cells.push_back(std::move(cell));
            }
    if (grid.baseline) {
      AblationCell cell;
      cell.config = s;
      cell.monolithic = true;
      result.cells.push_back(std::move(cell));
    }
  }

  ExpertCache cache;
  for (auto& cell : result.cells) {
    if (!base.output_dir.empty()) cell.config.output_dir = cell_dir(base.output_dir, cell.config, cell.monolithic);
    run_cell(cell, cache);
  }
  if (!base.output_dir.empty()) {
    const std::filesystem::path dir(base.output_dir);
    std::filesystem::create_directories(dir);
    write_ablation_csv((dir / "ablation.csv").string(), result, base.ks);
    write_accuracy_vs_lambda((dir / "accuracy_vs_lambda.csv").string(), result);
    write_accuracy_vs_experts((dir / "accuracy_vs_experts.csv").string(), result);
  }
  return result;
}

void write_ablation_csv(const std::string& path, const AblationResult& result, const std::vector<int>& ks) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write '" + path + "'");
  out << "cell,seed,method,assignment,delta2,lambda,variant,fusion,num_groups";
  for (int k : ks) out << ",top" << k;
  out << ",config_hash,status,error\n";
  for (std::size_t i = 0; i < result.cells.size(); ++i) {
    const auto& c = result.cells[i];
    const auto& cfg = c.config;
    out << i << ',' << c.seed() << ',' << (c.monolithic ? "monolithic" : "mixture") << ','
        << (c.monolithic ? "-" : to_string(cfg.assignment)) << ','
        << format_double(c.monolithic ? 0.0 : cfg.train.delta2) << ','
        << (c.monolithic ? "-" : format_double(cfg.lambda)) << ','
        << (c.monolithic ? "-" : to_string(cfg.variant)) << ',' << (c.monolithic ? "-" : to_string(cfg.fusion))
        << ',' << (c.report ? std::to_string(c.report->num_groups) : "");
    for (int k : ks) {
      out << ',';
      if (c.report) {
        for (const auto& t : c.report->topk)
          if (t.k == k) out << format_double(t.accuracy);
      }
    }
    out << ',' << config_hash(cfg) << ',' << (c.report ? "ok" : "failed") << ',' << csv_field(c.error) << '\n';
  }
}

void write_accuracy_vs_lambda(const std::string& path, const AblationResult& result) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write '" + path + "'");
  out << "assignment,delta2,variant,fusion,lambda,num_groups,mean_top1,seeds\n";
  for (const auto& [key, acc] : mixture_series(result)) {
    const auto& [a, d2, v, f, lam, groups] = key;
    out << a << ',' << format_double(d2) << ',' << v << ',' << f << ',' << format_double(lam) << ',' << groups << ','
        << format_double(acc.first / acc.second) << ',' << acc.second << '\n';
  }
}

void write_accuracy_vs_experts(const std::string& path, const AblationResult& result) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write '" + path + "'");
  std::map<std::tuple<int, std::string, double, std::string, std::string, double>, std::pair<double, int>> by_groups;
  for (const auto& [key, acc] : mixture_series(result)) {
    const auto& [a, d2, v, f, lam, groups] = key;
    by_groups[{groups, a, d2, v, f, lam}] = acc;
  }
  out << "num_groups,assignment,delta2,variant,fusion,lambda,mean_top1,seeds\n";
  for (const auto& [key, acc] : by_groups) {
    const auto& [groups, a, d2, v, f, lam] = key;
    out << groups << ',' << a << ',' << format_double(d2) << ',' << v << ',' << f << ',' << format_double(lam) << ','
        << format_double(acc.first / acc.second) << ',' << acc.second << '\n';
  }
}

}  // namespace dmoe
