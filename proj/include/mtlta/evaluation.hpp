#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "mtlta/data.hpp"
#include "mtlta/metrics.hpp"
#include "mtlta/models.hpp"
#include "mtlta/training.hpp"

namespace mtlta {

enum class Protocol { cv, traintest };
std::string_view protocol_name(Protocol p);
Protocol parse_protocol(std::string_view name);

/// Everything that determines an experiment besides the data.
/// model.encoder.vocab_size is ignored: each run sets it from the vocabulary
/// built on that run's training portion.
struct ExperimentSpec {
  ModelConfig model;
  OptimConfig optim;
  SchedulePolicy schedule = SchedulePolicy::round_robin;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::size_t k = 5;
  double validation_fraction = 0.1;
  std::size_t min_count = 1;
  std::uint64_t split_seed = 0;  // fold assignment and validation hold-outs
  std::size_t threads = 1;

  /// Throws ConfigError naming the offending field.
  void validate(std::size_t num_tasks, Protocol protocol) const;
};

struct TaskDataset {
  TaskSpec spec;
  std::vector<Example> train;
  std::vector<Example> test;  // empty for cross-validation
};

/// Encoder input tokens for one example under `variant` (TD-prefixed for MTL-TAI).
std::vector<std::string> model_input(const Example& ex, const TaskSpec& task, Variant variant, std::size_t max_len);

/// One training run: a (fold, seed) pair for cv, fold 0 for traintest.
struct RunResult {
  std::size_t fold = 0;
  std::uint64_t seed = 0;
  std::vector<double> scores;        // per task, official metric on the held-out data
  std::vector<std::size_t> best_epoch;
  std::vector<EpochRecord> history;
  std::size_t vocab_size = 0;
};

struct TaskScore {
  std::string task;
  std::string metric;
  double estimate = 0.0;
  double half_width = 0.0;
  std::size_t n = 0;            // number of samples behind the interval
  std::vector<double> samples;  // fold scores (cv) or seed scores (traintest)
};

struct MetricReport {
  Variant variant = Variant::mtl;
  Protocol protocol = Protocol::cv;
  std::vector<std::string> task_heads;
  std::vector<TaskScore> scores;
  std::vector<RunResult> runs;  // sorted by (fold, seed)
};

/// Called once per finished run with the per-task best models and the run's vocabulary.
/// Invoked from the thread that produced the run, under a lock.
using RunObserver =
    std::function<void(const RunResult&, const std::vector<Model>& best_models, const Vocabulary& vocab)>;

/// k-fold cross-validation over each task's `train` examples. Every (fold, seed) pair
/// trains on the other folds with a fresh vocabulary, selects each task's best epoch on
/// a validation hold-out, and scores the held-out fold. A fold's score is the mean over
/// seeds; the interval is ci95_t over the k fold scores.
MetricReport run_cv(const std::vector<TaskDataset>& tasks, const ExperimentSpec& spec,
                    const RunObserver& observer = {});

/// Trains on `train` (validation carved from it), scores `test` once per seed;
/// the interval is ci95_t over the seed scores.
MetricReport run_traintest(const std::vector<TaskDataset>& tasks, const ExperimentSpec& spec,
                           const RunObserver& observer = {});

/// "Task Heads" label: task names joined by '+'.
std::string task_heads_label(const std::vector<std::string>& names);

/// One JSON object per task score, keys sorted, doubles in shortest round-trip form.
void write_records(std::ostream& out, const MetricReport& report);

/// Parsed form of a record line.
struct ReportRow {
  std::string variant;
  std::string protocol;
  std::string task_heads;
  std::string task;
  std::string metric;
  double estimate = 0.0;
  double half_width = 0.0;
  std::size_t n = 0;
};

/// Reads records written by write_records. Throws DataError naming the line on malformed input.
std::vector<ReportRow> read_records(std::istream& in);

/// Aligned table with Model and Task Heads columns and one "estimate ± half-width"
/// column per task, grouped by variant in STL, MTL, MTL-TAI, MTL-TE order.
std::string format_table(const std::vector<ReportRow>& rows);

std::vector<ReportRow> report_rows(const MetricReport& report);

/// Per-epoch log of one run, one JSON object per (epoch, task): fold, seed, epoch, task, metric, value, lr.
void write_epoch_log(std::ostream& out, const RunResult& run, const std::vector<std::string>& task_names);

}  // namespace mtlta
