#include <algorithm>
#include <cmath>
#include <string>

#include "mtlta/data.hpp"
#include "mtlta/errors.hpp"

namespace mtlta {

// Both tasks read polarity from a shared lexicon of "pos*" / "neg*" words. For
// task B the "not*" markers are triggers as well: they invert the lexicon
// polarity. An example is marked with probability `conflict`. Marked A examples
// therefore carry task-B triggers whose task-B meaning is the opposite of their
// label, and marked B examples carry lexicon words whose task-A meaning is the
// opposite of theirs. With conflict = 0 no markers appear and the tasks agree.
SynthCorpus synthesize_tasks(const SynthConfig& config) {
  if (config.n_per_task < 16) throw ConfigError("n_per_task", "must be at least 16");
  if (!(config.conflict >= 0.0 && config.conflict <= 1.0)) throw ConfigError("conflict", "must lie in [0, 1]");
  if (config.vocab_size < 8) throw ConfigError("vocab_size", "must be at least 8");

  const std::size_t lexicon = 2 * std::max<std::size_t>(1, config.vocab_size / 8);
  const std::size_t markers = std::max<std::size_t>(1, config.vocab_size / 20);
  const std::size_t fillers = config.vocab_size - lexicon - markers;

  auto word = [](const char* prefix, std::size_t i) { return std::string(prefix) + std::to_string(i); };

  SynthCorpus corpus;
  corpus.tasks = {
      {"task_a", "Surface polarity", {"negative", "positive"}, std::nullopt, Metric::accuracy},
      {"task_b", "Negation aware polarity", {"negative", "positive"}, std::nullopt, Metric::accuracy},
  };
  Rng rng(config.seed);
  for (std::size_t task = 0; task < 2; ++task) {
    std::vector<std::size_t> labels(config.n_per_task);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 2;
    rng.shuffle(std::span<std::size_t>(labels));

    std::vector<Example> examples;
    for (std::size_t i = 0; i < config.n_per_task; ++i) {
      const std::size_t y = labels[i];
      const std::size_t len = 6 + rng.below(6);
      std::vector<std::string> tokens(len);
      for (auto& t : tokens) t = word("w", rng.below(fillers));
      std::vector<std::size_t> slots(len);
      for (std::size_t s = 0; s < len; ++s) slots[s] = s;
      rng.shuffle(std::span<std::size_t>(slots));

      const bool marked = rng.bernoulli(config.conflict);
      const std::size_t polarity = task == 1 && marked ? 1 - y : y;
      tokens[slots[0]] = word(polarity == 1 ? "pos" : "neg", rng.below(lexicon / 2));
      if (marked) {
        const auto count = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.5 * static_cast<double>(len))));
        for (std::size_t j = 1; j <= count && j < len; ++j) tokens[slots[j]] = word("not", rng.below(markers));
      }

      Example ex;
      ex.id = corpus.tasks[task].name + "-" + std::to_string(i);
      for (std::size_t t = 0; t < len; ++t) ex.text += (t ? " " : "") + tokens[t];
      ex.tokens = std::move(tokens);
      ex.label = y;
      ex.task_index = task;
      examples.push_back(std::move(ex));
    }
    corpus.examples.push_back(std::move(examples));
  }
  return corpus;
}

}  // namespace mtlta
