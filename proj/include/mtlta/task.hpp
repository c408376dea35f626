#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mtlta {

/// Official metric of a task.
enum class Metric { accuracy, f1_positive, f1_macro };

std::string_view metric_name(Metric m);
/// Parses "accuracy", "f1_positive" or "f1_macro"; throws ConfigError on anything else.
Metric parse_metric(std::string_view name);

/// A task's identity: name, task description (TD), label set and official metric.
struct TaskSpec {
  std::string name;
  std::string description;
  std::vector<std::string> labels;
  std::optional<std::string> positive_label;
  Metric metric = Metric::accuracy;

  std::size_t num_classes() const { return labels.size(); }
  /// Class index of `label`, or nullopt when it is not part of the label set.
  std::optional<std::size_t> label_index(std::string_view label) const;
  /// Index of the positive class (required when metric is f1_positive, else 1).
  std::size_t positive_index() const;

  /// Throws ConfigError when the invariants do not hold.
  void validate() const;
};

/// Ordered task list. Order is fixed for a model's lifetime: task-identification
/// vectors and head indices are positions in this list.
class TaskRegistry {
 public:
  TaskRegistry() = default;
  explicit TaskRegistry(std::vector<TaskSpec> tasks);

  std::size_t size() const { return tasks_.size(); }
  const TaskSpec& at(std::size_t index) const;
  const std::vector<TaskSpec>& tasks() const { return tasks_; }
  std::optional<std::size_t> find(std::string_view name) const;

 private:
  std::vector<TaskSpec> tasks_;
};

}  // namespace mtlta
