#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mtlta/models.hpp"
#include "mtlta/tensor.hpp"

namespace mtlta {

struct OptimConfig {
  double lr_peak = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t epochs = 15;
  std::size_t batch_size = 64;
  double dropout_p = 0.3;

  void validate() const;
};

/// Per-parameter AdamW moments, keyed by tensor identity. Each parameter keeps
/// its own step counter so parameters skipped by a step (inactive heads) keep
/// their bias correction in sync with their own update history.
class OptimState {
 public:
  struct Slot {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t t = 0;
  };
  Slot& slot(const Tensor& param);
  const Slot* find(const Tensor& param) const;

 private:
  std::unordered_map<std::uint64_t, Slot> slots_;
};

/// One decoupled-weight-decay Adam update on `params` using their accumulated gradients.
void adamw_step(std::span<const Tensor> params, OptimState& state, double lr_t, const OptimConfig& config);

/// lr_peak * (1 - step / total_steps). Throws std::invalid_argument when step > total_steps.
double lr_at(std::size_t step, std::size_t total_steps, double lr_peak);

/// Forward, cross-entropy, backward and one AdamW update of trainable_params(task).
/// Dropout is applied when `dropout_rng` is given. Returns the batch loss.
double train_step(Model& model, OptimState& state, const std::vector<std::vector<std::size_t>>& inputs,
                  std::span<const std::size_t> labels, std::size_t task, double lr, const OptimConfig& config,
                  Rng* dropout_rng);

enum class SchedulePolicy { round_robin, proportional };
std::string_view schedule_name(SchedulePolicy p);
SchedulePolicy parse_schedule(std::string_view name);

/// Model-ready inputs for one task.
struct EncodedSet {
  std::vector<std::vector<std::size_t>> inputs;
  std::vector<std::size_t> labels;
  std::size_t size() const { return labels.size(); }
};

struct TaskData {
  EncodedSet train;
  EncodedSet validation;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t task = 0;
  std::string metric;
  double value = 0.0;
  double lr = 0.0;
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t task = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::vector<StepRecord> steps;
  std::vector<std::size_t> best_epoch;  // per task
  std::vector<Model> best_models;       // per task: snapshot taken at its best epoch
};

/// Joint training: every epoch interleaves the tasks' shuffled batches under
/// `policy`, updating only trainable_params(task) per batch, then scores each
/// task's validation split with its official metric.
TrainResult train_joint(Model& model, const std::vector<TaskData>& data, const OptimConfig& config,
                        SchedulePolicy policy, std::uint64_t seed);

/// Earliest epoch with the highest value of `task`'s metric.
std::size_t select_best_epoch(const std::vector<EpochRecord>& history, std::size_t task);

/// Deterministic `fraction` hold-out (at least one example when n >= 2): returns (train, validation) indices.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(std::size_t n, double fraction,
                                                                               std::uint64_t seed);

}  // namespace mtlta
