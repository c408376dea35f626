#include "mtlta/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mtlta/errors.hpp"
#include "mtlta/metrics.hpp"
#include "mtlta/rng.hpp"

namespace mtlta {

void OptimConfig::validate() const {
  if (!(lr_peak > 0.0)) throw ConfigError("optim.lr_peak", "must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("optim.beta1", "must lie in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("optim.beta2", "must lie in (0, 1)");
  if (!(eps >= 0.0)) throw ConfigError("optim.eps", "must be non-negative");
  if (!(weight_decay >= 0.0)) throw ConfigError("optim.weight_decay", "must be non-negative");
  if (epochs == 0) throw ConfigError("optim.epochs", "must be positive");
  if (batch_size == 0) throw ConfigError("optim.batch_size", "must be positive");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("optim.dropout", "must lie in [0, 1)");
}

OptimState::Slot& OptimState::slot(const Tensor& param) {
  auto& s = slots_[param.id()];
  if (s.m.empty() && param.numel() != 0) {
    s.m.assign(param.numel(), 0.0);
    s.v.assign(param.numel(), 0.0);
  }
  return s;
}

const OptimState::Slot* OptimState::find(const Tensor& param) const {
  auto it = slots_.find(param.id());
  return it == slots_.end() ? nullptr : &it->second;
}

void adamw_step(std::span<const Tensor> params, OptimState& state, double lr_t, const OptimConfig& config) {
  if (lr_t < 0.0) throw std::invalid_argument("adamw_step: negative learning rate");
  for (const Tensor& p : params) {
    auto& s = state.slot(p);
    if (s.m.size() != p.numel()) {
      throw ShapeError("adamw_step: optimizer state has " + std::to_string(s.m.size()) + " entries for parameter " +
                       shape_string(p.shape()));
    }
    s.t += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(s.t));
    const auto g = p.grad();
    Tensor handle = p;
    auto w = handle.mutable_values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      s.m[i] = config.beta1 * s.m[i] + (1.0 - config.beta1) * g[i];
      s.v[i] = config.beta2 * s.v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      w[i] -= lr_t * (mhat / (std::sqrt(vhat) + config.eps) + config.weight_decay * w[i]);
    }
  }
}

double lr_at(std::size_t step, std::size_t total_steps, double lr_peak) {
  if (total_steps == 0) throw std::invalid_argument("lr_at: total_steps must be positive");
  if (step > total_steps) {
    throw std::invalid_argument("lr_at: step " + std::to_string(step) + " beyond total " + std::to_string(total_steps));
  }
  return lr_peak * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

double train_step(Model& model, OptimState& state, const std::vector<std::vector<std::size_t>>& inputs,
                  std::span<const std::size_t> labels, std::size_t task, double lr, const OptimConfig& config,
                  Rng* dropout_rng) {
  auto params = model.trainable_params(task);
  for (auto& p : params) p.zero_grad();
  Tensor loss = softmax_cross_entropy(model.forward(inputs, task, dropout_rng, config.dropout_p), labels);
  loss.backward();
  adamw_step(params, state, lr, config);
  return loss.item();
}

std::string_view schedule_name(SchedulePolicy p) {
  return p == SchedulePolicy::round_robin ? "round_robin" : "proportional";
}

SchedulePolicy parse_schedule(std::string_view name) {
  if (name == "round_robin") return SchedulePolicy::round_robin;
  if (name == "proportional") return SchedulePolicy::proportional;
  throw ConfigError("schedule_policy", "unknown policy '" + std::string(name) + "' (round_robin, proportional)");
}

namespace {

std::vector<std::size_t> epoch_schedule(const std::vector<std::size_t>& batches, const std::vector<std::size_t>& sizes,
                                        SchedulePolicy policy, Rng& rng) {
  std::vector<std::size_t> order;
  if (policy == SchedulePolicy::round_robin) {
    const std::size_t most = *std::max_element(batches.begin(), batches.end());
    for (std::size_t b = 0; b < most; ++b)
      for (std::size_t t = 0; t < batches.size(); ++t)
        if (b < batches[t]) order.push_back(t);
    return order;
  }
  std::vector<std::size_t> remaining = batches;
  std::size_t left = std::accumulate(batches.begin(), batches.end(), std::size_t{0});
  for (; left > 0; --left) {
    double total = 0.0;
    for (std::size_t t = 0; t < sizes.size(); ++t) total += remaining[t] > 0 ? static_cast<double>(sizes[t]) : 0.0;
    double r = rng.uniform() * total;
    std::size_t pick = sizes.size();
    for (std::size_t t = 0; t < sizes.size(); ++t) {
      if (remaining[t] == 0) continue;
      pick = t;
      r -= static_cast<double>(sizes[t]);
      if (r < 0.0) break;
    }
    --remaining[pick];
    order.push_back(pick);
  }
  return order;
}

}  // namespace

TrainResult train_joint(Model& model, const std::vector<TaskData>& data, const OptimConfig& config,
                        SchedulePolicy policy, std::uint64_t seed) {
  config.validate();
  const std::size_t n_tasks = model.tasks().size();
  if (data.size() != n_tasks) {
    throw ConfigError("tasks", "model has " + std::to_string(n_tasks) + " tasks but " + std::to_string(data.size()) +
                                   " datasets were given");
  }
  std::vector<std::size_t> sizes(n_tasks), batches(n_tasks);
  for (std::size_t t = 0; t < n_tasks; ++t) {
    const auto& tr = data[t].train;
    if (tr.size() == 0) throw DataError("task '" + model.tasks().at(t).name + "' has an empty training set");
    if (tr.inputs.size() != tr.labels.size()) throw DataError("inputs and labels differ in length");
    sizes[t] = tr.size();
    batches[t] = (tr.size() + config.batch_size - 1) / config.batch_size;
  }
  const std::size_t total_steps = config.epochs * std::accumulate(batches.begin(), batches.end(), std::size_t{0});

  Rng rng(seed);
  Rng order_rng = rng.fork();
  Rng dropout_rng = rng.fork();
  OptimState state;
  TrainResult result;
  result.best_epoch.assign(n_tasks, 0);
  std::vector<double> best(n_tasks, -1.0);
  result.best_models.reserve(n_tasks);
  for (std::size_t t = 0; t < n_tasks; ++t) result.best_models.push_back(model.clone());

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::vector<std::size_t>> perm(n_tasks);
    for (std::size_t t = 0; t < n_tasks; ++t) {
      perm[t].resize(sizes[t]);
      std::iota(perm[t].begin(), perm[t].end(), std::size_t{0});
      order_rng.shuffle(std::span<std::size_t>(perm[t]));
    }
    std::vector<std::size_t> next_batch(n_tasks, 0);
    for (std::size_t t : epoch_schedule(batches, sizes, policy, order_rng)) {
      const auto& tr = data[t].train;
      const std::size_t begin = next_batch[t]++ * config.batch_size;
      const std::size_t end = std::min(begin + config.batch_size, sizes[t]);
      std::vector<std::vector<std::size_t>> inputs;
      std::vector<std::size_t> labels;
      for (std::size_t i = begin; i < end; ++i) {
        inputs.push_back(tr.inputs[perm[t][i]]);
        labels.push_back(tr.labels[perm[t][i]]);
      }
      const double lr = lr_at(step, total_steps, config.lr_peak);
      const double loss = train_step(model, state, inputs, labels, t, lr, config, &dropout_rng);
      result.steps.push_back({step, t, loss, lr});
      ++step;
    }
    const double lr_now = lr_at(step, total_steps, config.lr_peak);
    for (std::size_t t = 0; t < n_tasks; ++t) {
      const TaskSpec& spec = model.tasks().at(t);
      const EncodedSet& eval = data[t].validation.size() > 0 ? data[t].validation : data[t].train;
      const auto preds = predict(model, eval.inputs, t);
      const double value = official_metric(spec, preds, eval.labels);
      result.history.push_back({epoch, t, std::string(metric_name(spec.metric)), value, lr_now});
      if (value > best[t]) {
        best[t] = value;
        result.best_epoch[t] = epoch;
        result.best_models[t] = model.clone();
      }
    }
  }
  return result;
}

std::size_t select_best_epoch(const std::vector<EpochRecord>& history, std::size_t task) {
  bool found = false;
  std::size_t best_epoch = 0;
  double best = 0.0;
  for (const auto& r : history) {
    if (r.task != task) continue;
    if (!found || r.value > best || (r.value == best && r.epoch < best_epoch)) {
      found = true;
      best = r.value;
      best_epoch = r.epoch;
    }
  }
  if (!found) throw std::invalid_argument("select_best_epoch: no records for task " + std::to_string(task));
  return best_epoch;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(std::size_t n, double fraction,
                                                                               std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  std::size_t n_val = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  if (n_val == 0 && n >= 2 && fraction > 0.0) n_val = 1;
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

}  // namespace mtlta
