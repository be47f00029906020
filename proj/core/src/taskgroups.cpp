#include "dmoe/taskgroups.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "dmoe/error.hpp"
#include "json.hpp"

namespace dmoe {

int TaskGroup::slot_of(ClassId c) const noexcept {
  auto it = std::find(members.begin(), members.end(), c);
  return it == members.end() ? -1 : static_cast<int>(it - members.begin());
}

int group_stride(int group_size, double lambda) {
  return std::max(1, static_cast<int>(std::lround(group_size * (1.0 - lambda))));
}

int group_count(int num_classes, int group_size, double lambda) {
  if (!(lambda >= 0.0 && lambda < 1.0)) {
    throw InvalidArgument("overlap lambda must lie in [0, 1), got " + std::to_string(lambda));
  }
  if (group_size < 1 || group_size > num_classes) {
    throw InvalidArgument("group size M must satisfy 1 <= M <= n (M = " + std::to_string(group_size) +
                          ", n = " + std::to_string(num_classes) + ")");
  }
  // A window covering every class is one group whatever the overlap.
  if (group_size == num_classes) return 1;
  const int s = group_stride(group_size, lambda);
  return (num_classes + s - 1) / s;
}

namespace {

void require_permutation(std::span<const ClassId> order) {
  std::vector<ClassId> sorted(order.begin(), order.end());
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i] != static_cast<ClassId>(i)) {
      throw InvalidArgument("class order is not a permutation of 0..n-1");
    }
  }
}

}  // namespace

GroupingPlan generate_groups(std::span<const ClassId> order, int group_size, double lambda) {
  const auto n = static_cast<int>(order.size());
  const int count = group_count(n, group_size, lambda);
  require_permutation(order);

  GroupingPlan plan;
  plan.lambda = lambda;
  plan.group_size = group_size;
  plan.num_classes = n;
  plan.stride = group_stride(group_size, lambda);
  plan.groups.reserve(static_cast<std::size_t>(count));
  for (int j = 0; j < count; ++j) {
    TaskGroup g;
    g.index = j;
    g.members.reserve(static_cast<std::size_t>(group_size));
    for (int t = 0; t < group_size; ++t) {
      g.members.push_back(order[static_cast<std::size_t>((j * plan.stride + t) % n)]);
    }
    plan.groups.push_back(std::move(g));
  }
  return plan;
}

GroupingPlan random_groups(std::span<const ClassId> classes, int group_size, double lambda,
                           std::uint64_t seed) {
  std::vector<ClassId> shuffled(classes.begin(), classes.end());
  Rng rng(seed);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  return generate_groups(shuffled, group_size, lambda);
}

std::vector<Membership> membership(const GroupingPlan& plan, ClassId c) {
  if (c < 0 || c >= plan.num_classes) throw LookupError("unknown class id " + std::to_string(c));
  std::vector<Membership> out;
  for (const auto& g : plan.groups) {
    const int slot = g.slot_of(c);
    if (slot >= 0) out.push_back({g.index, slot});
  }
  if (out.empty()) throw InvariantViolation("class " + std::to_string(c) + " is in no group");
  return out;
}

void validate_plan(const GroupingPlan& plan) {
  if (plan.groups.empty()) throw InvariantViolation("plan has no groups");
  std::vector<bool> seen(static_cast<std::size_t>(plan.num_classes), false);
  for (std::size_t j = 0; j < plan.groups.size(); ++j) {
    const auto& g = plan.groups[j];
    if (g.index != static_cast<int>(j)) throw InvariantViolation("group indices are not 0..k-1 in order");
    if (g.size() != plan.group_size) throw InvariantViolation("group " + std::to_string(j) + " has the wrong size");
    std::set<ClassId> distinct;
    for (ClassId c : g.members) {
      if (c < 0 || c >= plan.num_classes) throw InvariantViolation("group member out of range");
      if (!distinct.insert(c).second) throw InvariantViolation("group " + std::to_string(j) + " repeats a class");
      seen[static_cast<std::size_t>(c)] = true;
    }
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw InvariantViolation("plan does not cover every class");
  }
}

std::string plan_to_json(const GroupingPlan& plan) {
  nlohmann::json j;
  j["lambda"] = plan.lambda;
  j["M"] = plan.group_size;
  j["stride"] = plan.stride;
  auto groups = nlohmann::json::array();
  for (const auto& g : plan.groups) groups.push_back(g.members);
  j["groups"] = groups;
  return j.dump();
}

GroupingPlan plan_from_json(const std::string& text) {
  GroupingPlan plan;
  try {
    const auto j = nlohmann::json::parse(text);
    plan.lambda = j.at("lambda").get<double>();
    plan.group_size = j.at("M").get<int>();
    plan.stride = j.at("stride").get<int>();
    int max_id = -1;
    for (const auto& members : j.at("groups")) {
      TaskGroup g;
      g.index = static_cast<int>(plan.groups.size());
      g.members = members.get<std::vector<ClassId>>();
      for (ClassId c : g.members) max_id = std::max(max_id, c);
      plan.groups.push_back(std::move(g));
    }
    plan.num_classes = max_id + 1;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("grouping plan json: ") + e.what());
  }
  validate_plan(plan);
  return plan;
}

}  // namespace dmoe
