#include "mtlta/task.hpp"

#include <algorithm>
#include <set>

#include "mtlta/errors.hpp"

namespace mtlta {

std::string_view metric_name(Metric m) {
  switch (m) {
    case Metric::accuracy:
      return "accuracy";
    case Metric::f1_positive:
      return "f1_positive";
    case Metric::f1_macro:
      return "f1_macro";
  }
  return "unknown";
}

Metric parse_metric(std::string_view name) {
  if (name == "accuracy") return Metric::accuracy;
  if (name == "f1_positive") return Metric::f1_positive;
  if (name == "f1_macro") return Metric::f1_macro;
  throw ConfigError("metric", "unknown metric '" + std::string(name) + "' (accuracy, f1_positive, f1_macro)");
}

std::optional<std::size_t> TaskSpec::label_index(std::string_view label) const {
  auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) return std::nullopt;
  return static_cast<std::size_t>(it - labels.begin());
}

std::size_t TaskSpec::positive_index() const {
  if (positive_label) {
    if (auto idx = label_index(*positive_label)) return *idx;
  }
  return labels.size() > 1 ? 1 : 0;
}

void TaskSpec::validate() const {
  if (name.empty()) throw ConfigError("name", "must not be empty");
  if (description.empty()) throw ConfigError("description", "task '" + name + "' needs a non-empty description");
  if (labels.size() < 2) throw ConfigError("labels", "task '" + name + "' needs at least two labels");
  if (std::set<std::string>(labels.begin(), labels.end()).size() != labels.size()) {
    throw ConfigError("labels", "task '" + name + "' has duplicate labels");
  }
  if (metric == Metric::f1_positive) {
    if (!positive_label) throw ConfigError("positive_label", "task '" + name + "' uses f1_positive but names no positive label");
    if (!label_index(*positive_label)) {
      throw ConfigError("positive_label", "'" + *positive_label + "' is not a label of task '" + name + "'");
    }
  }
}

TaskRegistry::TaskRegistry(std::vector<TaskSpec> tasks) : tasks_(std::move(tasks)) {
  std::set<std::string> names;
  for (const auto& t : tasks_) {
    t.validate();
    if (!names.insert(t.name).second) throw ConfigError("tasks", "duplicate task name '" + t.name + "'");
  }
}

const TaskSpec& TaskRegistry::at(std::size_t index) const {
  if (index >= tasks_.size()) {
    throw IndexError("task index " + std::to_string(index) + " outside registry of " + std::to_string(tasks_.size()) +
                     " tasks");
  }
  return tasks_[index];
}

std::optional<std::size_t> TaskRegistry::find(std::string_view name) const {
  for (std::size_t i = 0; i < tasks_.size(); ++i)
    if (tasks_[i].name == name) return i;
  return std::nullopt;
}

}  // namespace mtlta
