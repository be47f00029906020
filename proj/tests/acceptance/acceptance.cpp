// Acceptance run: prints one PASS/FAIL line per criterion and exits nonzero
// when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>

#include "dmoe/checkpoint.hpp"
#include "dmoe/error.hpp"
#include "dmoe/pipeline.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace dmoe;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

// ---------------------------------------------------------------- 1

Outcome group_arithmetic() {
  const int half = group_count(7756, 970, 0.5);
  const int none = group_count(7756, 970, 0.0);
  return {half == 16 && none == 8, "group_count(7756,970,0.5)=" + std::to_string(half) +
                                       ", group_count(7756,970,0)=" + std::to_string(none)};
}

// ---------------------------------------------------------------- 2

Outcome gradient_checks() {
  Rng rng(20240);
  double worst_expert = 0.0, worst_mixture = 0.0;
  int expert_cases = 0, mixture_cases = 0;
  const double grid[] = {0.0, 0.1, 1.0};

  for (double d1 : grid) {
    for (double d2 : grid) {
      for (int rep = 0; rep < 12; ++rep) {
        const int m = 1 + rep % 5;
        std::vector<ClassId> members(static_cast<std::size_t>(m));
        std::iota(members.begin(), members.end(), 0);
        const std::vector<int> hidden = rep % 3 == 0 ? std::vector<int>{} : std::vector<int>{5, 3};
        const auto model = fixture::random_expert(members, 4, hidden, Activation::tanh, rng);
        const auto batch = fixture::random_batch(4, 6, m + 1, rng);
        const auto sim = SimilarityState::from_affinity(AffinityMatrix(fixture::random_similarity(m, rng), AffinityKind::visual));
        TrainConfig cfg;
        cfg.mu = 1.0;
        cfg.delta1 = d1;
        cfg.delta2 = d2;
        const Vector analytic = gradient_vector(gradient(model, batch, sim, cfg));
        const Vector numeric = oracle::numeric_gradient(
            [&](const Vector& p) {
              ExpertModel probe = model;
              set_parameter_vector(probe, p);
              return loss(probe, batch, sim, cfg);
            },
            parameter_vector(model));
        worst_expert = std::max(worst_expert, oracle::relative_error(analytic, numeric));
        ++expert_cases;
      }
    }
  }

  for (int rep = 0; rep < 108; ++rep) {
    const int n = 3 + rep % 6;
    auto plan = fixture::random_plan(n, 1 + rep % 4, 2 + rep % 2, rng);
    plan.lambda = 0.25 * (rep % 3);
    MixtureModel mix;
    mix.plan = plan;
    mix.lambda = plan.lambda;
    mix.variant = rep % 2 == 0 ? StackingVariant::odds : StackingVariant::scaled;
    for (const auto& g : plan.groups) mix.experts.push_back(fixture::random_expert(g.members, 3, {4}, Activation::tanh, rng, 0.8));
    mix.head.weight = Matrix::Random(n, n);
    mix.head.bias = Vector::Random(n);
    const auto batch = fixture::random_batch(3, 5, n, rng);
    const double wd = grid[rep % 3];

    auto slots = [](MixtureModel& m) {
      std::vector<double*> out;
      auto add = [&](auto& x) {
        for (Eigen::Index i = 0; i < x.size(); ++i) out.push_back(x.data() + i);
      };
      add(m.head.weight);
      add(m.head.bias);
      for (auto& e : m.experts) {
        add(e.w0);
        add(e.v);
        add(e.w_nig);
        add(e.bias);
      }
      return out;
    };
    MixtureGradients g;
    mixture_objective(mix, batch.inputs, batch.labels, wd, &g);
    std::vector<double> flat;
    auto push = [&](const auto& x) { flat.insert(flat.end(), x.data(), x.data() + x.size()); };
    push(g.head.weight);
    push(g.head.bias);
    for (const auto& eg : g.experts) {
      push(eg.w0);
      push(eg.v);
      push(eg.w_nig);
      push(eg.bias);
    }
    const auto ptrs = slots(mix);
    Vector theta(static_cast<Eigen::Index>(ptrs.size()));
    for (std::size_t i = 0; i < ptrs.size(); ++i) theta(static_cast<Eigen::Index>(i)) = *ptrs[i];
    const Vector numeric = oracle::numeric_gradient(
        [&](const Vector& p) {
          MixtureModel probe = mix;
          const auto pp = slots(probe);
          for (std::size_t i = 0; i < pp.size(); ++i) *pp[i] = p(static_cast<Eigen::Index>(i));
          return mixture_objective(probe, batch.inputs, batch.labels, wd, nullptr);
        },
        theta);
    const Vector analytic = Eigen::Map<const Vector>(flat.data(), static_cast<Eigen::Index>(flat.size()));
    worst_mixture = std::max(worst_mixture, oracle::relative_error(analytic, numeric));
    ++mixture_cases;
  }
  const bool pass = expert_cases >= 100 && mixture_cases >= 100 && worst_expert < 1e-4 && worst_mixture < 1e-4;
  return {pass, std::to_string(expert_cases) + " expert instances (max rel err " + sci(worst_expert) + "), " +
                    std::to_string(mixture_cases) + " stacking instances (max rel err " + sci(worst_mixture) + ")"};
}

// ---------------------------------------------------------------- 3

Outcome invariants() {
  Rng rng(77);
  double worst_sum = 0.0, worst_row = 0.0, min_eig = 0.0;
  int forwards = 0, laplacians = 0;
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 200; ++rep) {
    const int m = 1 + rep % 20;
    std::vector<ClassId> members(static_cast<std::size_t>(m));
    std::iota(members.begin(), members.end(), 0);
    const auto model = fixture::random_expert(members, 5, {8, 4}, Activation::tanh, rng, 1.0 + rep % 5);
    const auto batch = fixture::random_batch(5, 10, 1, rng);
    const Matrix q = forward_batch(model, batch.inputs * (1.0 + rep % 7));
    for (Eigen::Index c = 0; c < q.cols(); ++c) {
      worst_sum = std::max(worst_sum, std::abs(q.col(c).sum() - 1.0));
      ++forwards;
    }

    // One Laplacian from a random S and one built from random features.
    ClassFeatures f;
    for (int c = 0; c < m; ++c) {
      Matrix x(1 + rep % 4, 3);
      for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = nd(rng) + c % 3;
      f.push_back(x);
    }
    for (const auto& sim : {SimilarityState::from_affinity(AffinityMatrix(fixture::random_similarity(m, rng), AffinityKind::visual)),
                            similarity_matrix(f, KernelConfig{})}) {
      for (Eigen::Index r = 0; r < sim.laplacian.rows(); ++r) worst_row = std::max(worst_row, std::abs(sim.laplacian.row(r).sum()));
      Eigen::SelfAdjointEigenSolver<Matrix> es(sim.laplacian, Eigen::EigenvaluesOnly);
      min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
      ++laplacians;
    }
  }
  const bool pass = worst_sum <= 1e-9 && worst_row <= 1e-9 && min_eig >= -1e-8;
  return {pass, std::to_string(forwards) + " forward outputs (max |sum-1| " + sci(worst_sum) + "), " +
                    std::to_string(laplacians) + " Laplacians with M<=20 (max |row sum| " + sci(worst_row) +
                    ", min eigenvalue " + sci(min_eig) + ")"};
}

// ---------------------------------------------------------------- 4

Outcome stacking_oracle() {
  Rng rng(4242);
  double worst = 0.0;
  int mixtures = 0;
  std::uniform_int_distribution<int> nd(2, 40), gd(1, 8);
  while (mixtures < 1000) {
    const int n = nd(rng);
    const int groups = gd(rng);
    std::uniform_int_distribution<int> md(1, std::min(n, 10));
    auto plan = fixture::random_plan(n, groups, md(rng), rng);
    plan.lambda = std::uniform_real_distribution<double>(0.0, 0.9)(rng);
    std::vector<ExpertModel> experts;
    for (const auto& g : plan.groups) experts.push_back(fixture::random_expert(g.members, 3, {4}, Activation::tanh, rng, 0.8));
    const Vector x = Vector::Random(3) * 2.0;
    const std::vector<double> xs(x.data(), x.data() + 3);
    std::vector<oracle::GroupScore> scores;
    for (const auto& e : experts) {
      const auto q = oracle::expert_forward(e, xs);
      scores.push_back({std::vector<double>(q.begin(), q.end() - 1), q.back()});
    }
    const auto variant = mixtures % 2 == 0 ? StackingVariant::odds : StackingVariant::scaled;
    const Vector got = stack_features(experts, plan, x, plan.lambda, variant);
    const auto ref = oracle::stack(plan, scores, plan.lambda, variant);
    for (int i = 0; i < n; ++i) worst = std::max(worst, std::abs(got(i) - ref[static_cast<std::size_t>(i)]));
    ++mixtures;
  }
  return {worst <= 1e-12, std::to_string(mixtures) + " random mixtures (theta<=8, Omega<=40), max |diff| " + sci(worst)};
}

// ---------------------------------------------------------------- 5

Outcome clustering_recovery() {
  Rng rng(555);
  int recovered = 0;
  const int instances = 50;
  for (int rep = 0; rep < instances; ++rep) {
    std::vector<int> sizes;
    int total = 0;
    std::uniform_int_distribution<int> bd(2, 4), sd(2, 3);
    const int blocks = bd(rng);
    for (int b = 0; b < blocks; ++b) {
      const int s = std::min(sd(rng), 8 - total - 2 * (blocks - b - 1));
      sizes.push_back(s);
      total += s;
    }
    std::vector<int> planted;
    for (std::size_t b = 0; b < sizes.size(); ++b) planted.insert(planted.end(), static_cast<std::size_t>(sizes[b]), static_cast<int>(b));
    std::shuffle(planted.begin(), planted.end(), rng);

    std::uniform_real_distribution<double> w(0.3, 1.0);
    Matrix a = Matrix::Zero(total, total);
    for (int i = 0; i < total; ++i) {
      a(i, i) = 1.0;
      for (int j = i + 1; j < total; ++j)
        if (planted[static_cast<std::size_t>(i)] == planted[static_cast<std::size_t>(j)]) a(i, j) = a(j, i) = w(rng);
    }
    const auto got = spectral_partition(AffinityMatrix(a, AffinityKind::visual), blocks, static_cast<std::uint64_t>(rep));
    const auto oracle_best = oracle::min_ncut_partition(a, blocks);
    if (oracle::canonical(got) == oracle_best && oracle_best == oracle::canonical(planted)) ++recovered;
  }
  return {recovered == instances,
          std::to_string(recovered) + "/" + std::to_string(instances) + " planted block partitions recovered (n<=8)"};
}

// ------------------------------------------------------------ 6 - 9

ExperimentConfig reference(std::uint64_t seed) {
  ExperimentConfig cfg;  // defaults are the reference benchmark
  cfg.synth.seed = seed;
  cfg.seed = seed;
  cfg.workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return cfg;
}

struct SeedRuns {
  Report mixture, random, early, monolithic, lambda0, lambda25, no_manifold;
};

std::vector<SeedRuns> run_reference_grid() {
  std::vector<SeedRuns> out;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    ExpertCache cache;
    SeedRuns r;
    auto cfg = reference(s);
    r.mixture = run_pipeline(cfg, &cache);
    auto c = cfg;
    c.fusion = FusionMode::early;
    r.early = run_pipeline(c, &cache);
    c = cfg;
    c.assignment = Assignment::random;
    r.random = run_pipeline(c);
    r.monolithic = run_monolithic(cfg);
    c = cfg;
    c.lambda = 0.0;
    r.lambda0 = run_pipeline(c);
    c.lambda = 0.25;
    r.lambda25 = run_pipeline(c);
    c = cfg;
    c.train.delta2 = 0.0;
    r.no_manifold = run_pipeline(c);
    std::cout << "  seed " << s << ": mixture " << fmt(r.mixture.top1()) << ", random " << fmt(r.random.top1())
              << ", early " << fmt(r.early.top1()) << ", monolithic " << fmt(r.monolithic.top1()) << ", lambda0 "
              << fmt(r.lambda0.top1()) << ", lambda0.25 " << fmt(r.lambda25.top1()) << "\n";
    out.push_back(std::move(r));
  }
  return out;
}

Outcome table1(const std::vector<SeedRuns>& runs) {
  int over_mono = 0, over_random = 0;
  for (const auto& r : runs) {
    over_mono += r.mixture.top1() > r.monolithic.top1();
    over_random += r.mixture.top1() > r.random.top1();
  }
  return {over_mono >= 3 && over_random >= 3, "mixture > monolithic in " + std::to_string(over_mono) +
                                                  "/5 seeds, tree-guided > random in " + std::to_string(over_random) +
                                                  "/5 seeds"};
}

Outcome table2(const std::vector<SeedRuns>& runs) {
  const int groups = 7;
  std::vector<double> with(groups, 0.0), without(groups, 0.0);
  for (const auto& r : runs) {
    if (r.mixture.expert_accuracy.size() < static_cast<std::size_t>(groups)) return {false, "fewer than 7 groups"};
    for (int g = 0; g < groups; ++g) {
      with[static_cast<std::size_t>(g)] += r.mixture.expert_accuracy[static_cast<std::size_t>(g)] / 5.0;
      without[static_cast<std::size_t>(g)] += r.no_manifold.expert_accuracy[static_cast<std::size_t>(g)] / 5.0;
    }
  }
  int wins = 0;
  std::string per;
  for (int g = 0; g < groups; ++g) {
    wins += with[static_cast<std::size_t>(g)] > without[static_cast<std::size_t>(g)];
    per += (g ? " " : "") + fmt(with[static_cast<std::size_t>(g)], 3) + "/" + fmt(without[static_cast<std::size_t>(g)], 3);
  }
  return {wins >= 4, "delta2 default beats delta2=0 in " + std::to_string(wins) + "/7 groups (with/without: " + per + ")"};
}

Outcome table3(const std::vector<SeedRuns>& runs) {
  double m0 = 0, m25 = 0, m50 = 0;
  for (const auto& r : runs) {
    m0 += r.lambda0.top1() / 5.0;
    m25 += r.lambda25.top1() / 5.0;
    m50 += r.mixture.top1() / 5.0;
  }
  const double allowance = 0.005;
  const bool pass = m25 >= m0 - allowance && m50 >= m25 - allowance;
  return {pass, "mean top-1 at lambda 0 / 0.25 / 0.5: " + fmt(m0) + " / " + fmt(m25) + " / " + fmt(m50)};
}

Outcome table4(const std::vector<SeedRuns>& runs) {
  int late = 0;
  std::string per;
  for (const auto& r : runs) {
    late += r.mixture.top1() >= r.early.top1();
    per += (per.empty() ? "" : " ") + fmt(r.mixture.top1()) + "/" + fmt(r.early.top1());
  }
  return {late >= 3, "late >= early in " + std::to_string(late) + "/5 seeds (late/early: " + per + ")"};
}

// ---------------------------------------------------------------- 10

Outcome determinism() {
  fixture::TempDir a("acc-a"), b("acc-b");
  auto cfg = reference(1);
  cfg.output_dir = a.path().string();
  const auto r1 = run_pipeline(cfg);
  cfg.output_dir = b.path().string();
  cfg.workers = 1;
  const auto r2 = run_pipeline(cfg);
  const bool reports = r1.to_json(false) == r2.to_json(false) &&
                       strip_timings(fixture::slurp(a.file("report.json"))) == strip_timings(fixture::slurp(b.file("report.json")));

  const auto ds = load_features(a.file("dataset.csv"));
  const auto fresh = generate_synthetic(cfg.synth).dataset;
  fixture::TempDir c("acc-c");
  save_dataset(c.file("again.csv"), ds);
  const bool dataset = ds == fresh && ds.features == fresh.features &&
                       fixture::slurp(c.file("again.csv")) == fixture::slurp(a.file("dataset.csv"));

  bool checkpoints = true;
  for (int j = 0; j < r1.num_groups; ++j) {
    char name[64];
    std::snprintf(name, sizeof name, "experts/expert_%03d.json", j);
    const auto text = fixture::slurp(a.file(name));
    const auto ck = expert_from_json(text);
    save_expert(c.file("e.json"), ck.model, ck.config);
    const auto back = load_expert(c.file("e.json"));
    checkpoints = checkpoints && fixture::slurp(c.file("e.json")) == text &&
                  parameter_vector(back.model) == parameter_vector(ck.model) &&
                  back.model.loss_trajectory == ck.model.loss_trajectory;
  }
  return {reports && dataset && checkpoints, std::string("reports ") + (reports ? "identical" : "differ") +
                                                 ", dataset round-trip " + (dataset ? "exact" : "broken") +
                                                 ", checkpoint round-trip " + (checkpoints ? "exact" : "broken")};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const std::function<Outcome()>& fn) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failures += !o.pass;
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail << " [" << fmt(secs, 1)
              << "s]" << std::endl;
  };

  report(1, group_arithmetic);
  report(2, gradient_checks);
  report(3, invariants);
  report(4, stacking_oracle);
  report(5, clustering_recovery);

  std::vector<SeedRuns> runs;
  const auto start = std::chrono::steady_clock::now();
  try {
    std::cout << "reference benchmark, seeds 1..5:" << std::endl;
    runs = run_reference_grid();
  } catch (const std::exception& e) {
    std::cout << "reference benchmark failed: " << e.what() << std::endl;
  }
  std::cout << "  grid time " << fmt(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 1)
            << "s" << std::endl;
  auto on_grid = [&](const std::function<Outcome(const std::vector<SeedRuns>&)>& fn) {
    return [&, fn] { return runs.size() == 5 ? fn(runs) : Outcome{false, "reference benchmark did not complete"}; };
  };
  report(6, on_grid(table1));
  report(7, on_grid(table2));
  report(8, on_grid(table3));
  report(9, on_grid(table4));
  report(10, determinism);

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
