#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mtlta/data.hpp"
#include "mtlta/evaluation.hpp"

namespace mtlta {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

struct TaskConfig {
  TaskSpec spec;
  std::filesystem::path train;
  std::optional<std::filesystem::path> test;
};

/// A parsed experiment file. Relative paths are resolved against the file's directory.
struct ExperimentConfig {
  Protocol mode = Protocol::cv;
  ExperimentSpec spec;
  std::vector<TaskConfig> tasks;
  std::filesystem::path output_dir;
  bool save_checkpoints = true;
};

/// Parses and validates a JSON experiment file. Unknown keys, bad values, violated
/// invariants and missing data files raise ConfigError naming the field.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir);

/// Applies MTLTA_OUTPUT_DIR and MTLTA_THREADS when set.
void apply_environment(ExperimentConfig& config);

/// Runs the configured experiment and writes report.txt, records.jsonl, runs.jsonl,
/// epochs.jsonl and checkpoints/ under the output directory.
int cmd_run(const std::filesystem::path& config_path, std::ostream& out, std::ostream& err);

/// Writes task_a.tsv, task_b.tsv and manifest.json into `out_dir`.
int cmd_synth(const SynthConfig& config, const std::filesystem::path& out_dir, std::ostream& out, std::ostream& err);

/// Generator parameters recorded in a synth manifest.
SynthConfig read_synth_manifest(const std::filesystem::path& path);

/// Prints one line per gradcheck entry; exit 0 iff all pass. `corrupt_relu` turns on the relu fault.
int cmd_gradcheck(bool corrupt_relu, std::ostream& out);

/// Prints the comparison table for a records file ("no records" when it has none).
int cmd_report(const std::filesystem::path& records, std::ostream& out, std::ostream& err);

}  // namespace mtlta
