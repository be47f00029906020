#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dmoe/types.hpp"

namespace dmoe {

// M member classes plus the implicit "not-in-group" output at slot M.
struct TaskGroup {
  int index = 0;
  std::vector<ClassId> members;

  int size() const noexcept { return static_cast<int>(members.size()); }
  int sentinel_index() const noexcept { return size(); }
  // Slot of class c, or -1 when c is not a member.
  int slot_of(ClassId c) const noexcept;
  bool contains(ClassId c) const noexcept { return slot_of(c) >= 0; }
};

struct GroupingPlan {
  std::vector<TaskGroup> groups;
  double lambda = 0.0;
  int group_size = 0;  // M
  int num_classes = 0;  // Omega
  int stride = 1;

  int num_groups() const noexcept { return static_cast<int>(groups.size()); }
};

struct Membership {
  int group = 0;
  int slot = 0;
  bool operator==(const Membership&) const = default;
};

// s = max(1, round(M (1 - lambda))).
int group_stride(int group_size, double lambda);

// ceil(n / s). Throws InvalidArgument unless 1 <= M <= n and 0 <= lambda < 1.
int group_count(int num_classes, int group_size, double lambda);

// Circular windows of M consecutive classes over `order`, advancing by the
// stride. `order` must be a permutation of 0..n-1.
GroupingPlan generate_groups(std::span<const ClassId> order, int group_size, double lambda);

// Same windowing over a seeded shuffle of `classes`.
GroupingPlan random_groups(std::span<const ClassId> classes, int group_size, double lambda,
                           std::uint64_t seed);

// Every (group, slot) holding class c; throws LookupError for unknown classes.
std::vector<Membership> membership(const GroupingPlan& plan, ClassId c);

// Rejects plans whose groups have duplicates, wrong sizes or miss a class.
void validate_plan(const GroupingPlan& plan);

// {lambda, M, stride, groups: [[class ids]]}
std::string plan_to_json(const GroupingPlan& plan);
GroupingPlan plan_from_json(const std::string& text);

}  // namespace dmoe
