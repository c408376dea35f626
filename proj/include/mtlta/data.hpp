#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mtlta/rng.hpp"
#include "mtlta/task.hpp"

namespace mtlta {

inline constexpr std::string_view kSepToken = "<sep>";
inline constexpr std::string_view kUrlToken = "<url>";
inline constexpr std::string_view kUserToken = "<user>";

/// Lowercases, splits on whitespace and punctuation, and collapses URLs and
/// @-mentions to <url> / <user>.
std::vector<std::string> tokenize(std::string_view text);

struct Example {
  std::string id;
  std::string text;
  std::vector<std::string> tokens;
  std::size_t label = 0;
  std::size_t task_index = 0;
};

/// Word vocabulary with PAD=0 and UNK=1; other tokens numbered in first-seen order.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;

  Vocabulary();

  /// Throws DataError on an empty corpus.
  static Vocabulary build(const std::vector<std::vector<std::string>>& sequences, std::size_t min_count = 1);

  std::size_t size() const { return tokens_.size(); }
  std::size_t id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(std::size_t id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::vector<std::size_t> encode(const std::vector<std::string>& tokens) const;

  /// One token per line, in id order (reserved entries included).
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
};

/// TD tokens, then <sep>, then the TS truncated from the right to fit max_len.
/// Throws DataError when the TD plus <sep> does not fit.
std::vector<std::string> make_tai_input(const std::vector<std::string>& ts_tokens, const TaskSpec& task,
                                        std::size_t max_len);

/// TS tokens truncated from the right to max_len.
std::vector<std::string> make_plain_input(const std::vector<std::string>& ts_tokens, std::size_t max_len);

/// Header `id\ttext\tlabel[\tlanguage]`; rows whose language is not "es" are skipped.
std::vector<Example> load_tsv(const std::filesystem::path& path, const TaskSpec& task, std::size_t task_index);

/// Writes examples in the format load_tsv reads (no language column).
void write_tsv(const std::filesystem::path& path, const std::vector<Example>& examples, const TaskSpec& task);

/// Seeded shuffle of 0..n-1, sliced into k contiguous folds; the first n % k folds get one extra.
std::vector<std::vector<std::size_t>> kfold(std::size_t n, std::size_t k, std::uint64_t seed);

struct SynthConfig {
  std::size_t n_per_task = 500;
  std::size_t vocab_size = 84;
  double conflict = 0.0;
  std::uint64_t seed = 0;
};

struct SynthCorpus {
  std::vector<TaskSpec> tasks;
  std::vector<std::vector<Example>> examples;  // one list per task
};

/// Two binary polarity tasks over `vocab_size` distinct words. `conflict` is the
/// probability that an example carries cross-task triggers whose meaning in the
/// other task contradicts its label; see synth.cpp for the construction.
/// Labels are exactly balanced (n_per_task even) and output is a pure function of the config.
SynthCorpus synthesize_tasks(const SynthConfig& config);

}  // namespace mtlta
