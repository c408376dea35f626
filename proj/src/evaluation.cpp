#include "mtlta/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <iomanip>
#include <istream>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "mtlta/errors.hpp"

namespace mtlta {

using nlohmann::json;

std::string_view protocol_name(Protocol p) { return p == Protocol::cv ? "cv" : "traintest"; }

Protocol parse_protocol(std::string_view name) {
  if (name == "cv") return Protocol::cv;
  if (name == "traintest") return Protocol::traintest;
  throw ConfigError("mode", "expected 'cv' or 'traintest', got '" + std::string(name) + "'");
}

void ExperimentSpec::validate(std::size_t num_tasks, Protocol protocol) const {
  ModelConfig m = model;
  m.encoder.vocab_size = 2;  // set per run from the fold vocabulary
  m.validate(num_tasks);
  optim.validate();
  if (seeds.empty()) throw ConfigError("seeds", "at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("seeds", "seeds must be distinct");
  }
  if (protocol == Protocol::cv && k < 2) throw ConfigError("k", "cross-validation needs k >= 2");
  if (protocol == Protocol::traintest && seeds.size() < 2) {
    throw ConfigError("seeds", "traintest needs at least 2 seeds for a confidence interval");
  }
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction", "must lie in (0, 1)");
  }
  if (min_count < 1) throw ConfigError("min_count", "must be at least 1");
  if (threads < 1) throw ConfigError("threads", "must be at least 1");
}

std::vector<std::string> model_input(const Example& ex, const TaskSpec& task, Variant variant, std::size_t max_len) {
  return variant == Variant::mtl_tai ? make_tai_input(ex.tokens, task, max_len) : make_plain_input(ex.tokens, max_len);
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  // splitmix64 finalizer over a running combination
  std::uint64_t x = a;
  for (std::uint64_t v : {b, c}) {
    x += 0x9e3779b97f4a7c15ULL + v;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    x ^= x >> 31;
  }
  return x;
}

// Index sets of one run, per task.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

struct RunPlan {
  std::size_t fold = 0;
  std::uint64_t seed = 0;
};

struct Prepared {
  std::vector<TaskData> data;
  std::vector<EncodedSet> heldout;
  Vocabulary vocab;
};

Prepared prepare(const std::vector<TaskDataset>& tasks, const std::vector<Split>& splits, bool test_from_test,
                 const ExperimentSpec& spec) {
  const Variant variant = spec.model.variant;
  const std::size_t max_len = spec.model.encoder.max_len;
  std::vector<std::vector<std::vector<std::string>>> train_tok(tasks.size()), val_tok(tasks.size()),
      test_tok(tasks.size());
  std::vector<std::vector<std::string>> corpus;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto& ds = tasks[t];
    for (std::size_t i : splits[t].train) train_tok[t].push_back(model_input(ds.train[i], ds.spec, variant, max_len));
    for (std::size_t i : splits[t].validation) {
      val_tok[t].push_back(model_input(ds.train[i], ds.spec, variant, max_len));
    }
    const auto& test_src = test_from_test ? ds.test : ds.train;
    for (std::size_t i : splits[t].test) test_tok[t].push_back(model_input(test_src[i], ds.spec, variant, max_len));
    corpus.insert(corpus.end(), train_tok[t].begin(), train_tok[t].end());
    corpus.insert(corpus.end(), val_tok[t].begin(), val_tok[t].end());
  }

  Prepared p;
  p.vocab = Vocabulary::build(corpus, spec.min_count);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto& ds = tasks[t];
    const auto& test_src = test_from_test ? ds.test : ds.train;
    TaskData td;
    for (std::size_t j = 0; j < splits[t].train.size(); ++j) {
      td.train.inputs.push_back(p.vocab.encode(train_tok[t][j]));
      td.train.labels.push_back(ds.train[splits[t].train[j]].label);
    }
    for (std::size_t j = 0; j < splits[t].validation.size(); ++j) {
      td.validation.inputs.push_back(p.vocab.encode(val_tok[t][j]));
      td.validation.labels.push_back(ds.train[splits[t].validation[j]].label);
    }
    EncodedSet held;
    for (std::size_t j = 0; j < splits[t].test.size(); ++j) {
      held.inputs.push_back(p.vocab.encode(test_tok[t][j]));
      held.labels.push_back(test_src[splits[t].test[j]].label);
    }
    p.data.push_back(std::move(td));
    p.heldout.push_back(std::move(held));
  }
  return p;
}

TaskRegistry registry_of(const std::vector<TaskDataset>& tasks) {
  std::vector<TaskSpec> specs;
  for (const auto& t : tasks) specs.push_back(t.spec);
  return TaskRegistry(std::move(specs));
}

// Trains one (fold, seed) pair and scores the held-out examples.
RunResult execute(const std::vector<TaskDataset>& tasks, const TaskRegistry& registry, const std::vector<Split>& splits,
                  bool test_from_test, const ExperimentSpec& spec, const RunPlan& plan, const RunObserver& observer,
                  std::mutex& observer_mutex) {
  Prepared prep = prepare(tasks, splits, test_from_test, spec);
  ModelConfig mc = spec.model;
  mc.encoder.vocab_size = prep.vocab.size();
  Rng init_rng(mix(plan.seed, plan.fold, 0));
  Model model(mc, registry, init_rng);
  TrainResult tr = train_joint(model, prep.data, spec.optim, spec.schedule, mix(plan.seed, plan.fold, 1));

  RunResult run;
  run.fold = plan.fold;
  run.seed = plan.seed;
  run.best_epoch = tr.best_epoch;
  run.history = tr.history;
  run.vocab_size = prep.vocab.size();
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto preds = predict(tr.best_models[t], prep.heldout[t].inputs, t);
    run.scores.push_back(official_metric(registry.at(t), preds, prep.heldout[t].labels));
  }
  if (observer) {
    std::lock_guard<std::mutex> lock(observer_mutex);
    observer(run, tr.best_models, prep.vocab);
  }
  return run;
}

// Runs every plan on up to `threads` workers; results come back in plan order.
std::vector<RunResult> execute_all(const std::vector<TaskDataset>& tasks, const std::vector<std::vector<Split>>& splits,
                                   bool test_from_test, const ExperimentSpec& spec, const std::vector<RunPlan>& plans,
                                   const RunObserver& observer) {
  const TaskRegistry registry = registry_of(tasks);
  std::vector<RunResult> results(plans.size());
  std::mutex observer_mutex;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < plans.size(); i = next++) {
      try {
        results[i] = execute(tasks, registry, splits[plans[i].fold], test_from_test, spec, plans[i], observer,
                             observer_mutex);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = plans.size();
      }
    }
  };
  const std::size_t n_threads = std::min(spec.threads, plans.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

void check_tasks(const std::vector<TaskDataset>& tasks, bool need_test) {
  if (tasks.empty()) throw ConfigError("tasks", "at least one task is required");
  for (const auto& t : tasks) {
    if (t.train.empty()) throw DataError("task '" + t.spec.name + "' has no training examples");
    if (need_test && t.test.empty()) throw DataError("task '" + t.spec.name + "' has no test examples");
    for (const auto& ex : t.train) {
      if (ex.label >= t.spec.num_classes()) throw DataError("task '" + t.spec.name + "': label out of range");
    }
  }
}

MetricReport base_report(const std::vector<TaskDataset>& tasks, const ExperimentSpec& spec, Protocol protocol) {
  MetricReport r;
  r.variant = spec.model.variant;
  r.protocol = protocol;
  for (const auto& t : tasks) r.task_heads.push_back(t.spec.name);
  return r;
}

TaskScore make_score(const TaskSpec& task, std::vector<double> samples) {
  TaskScore s;
  s.task = task.name;
  s.metric = std::string(metric_name(task.metric));
  const Interval ci = ci95_t(samples);
  s.estimate = ci.mean;
  s.half_width = ci.half_width;
  s.n = samples.size();
  s.samples = std::move(samples);
  return s;
}

// Validation hold-out seed for one task within one fold.
std::uint64_t validation_seed(const ExperimentSpec& spec, std::size_t fold, std::size_t task) {
  return mix(spec.split_seed, 1000 + fold, task);
}

}  // namespace

MetricReport run_cv(const std::vector<TaskDataset>& tasks, const ExperimentSpec& spec, const RunObserver& observer) {
  check_tasks(tasks, false);
  spec.validate(tasks.size(), Protocol::cv);

  std::vector<std::vector<std::vector<std::size_t>>> folds;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    folds.push_back(kfold(tasks[t].train.size(), spec.k, mix(spec.split_seed, t, 0)));
  }
  std::vector<std::vector<Split>> splits(spec.k, std::vector<Split>(tasks.size()));
  for (std::size_t f = 0; f < spec.k; ++f) {
    for (std::size_t t = 0; t < tasks.size(); ++t) {
      Split& s = splits[f][t];
      s.test = folds[t][f];
      std::sort(s.test.begin(), s.test.end());
      std::vector<std::size_t> rest;
      for (std::size_t g = 0; g < spec.k; ++g) {
        if (g != f) rest.insert(rest.end(), folds[t][g].begin(), folds[t][g].end());
      }
      std::sort(rest.begin(), rest.end());
      auto [tr, val] = split_validation(rest.size(), spec.validation_fraction, validation_seed(spec, f, t));
      for (std::size_t i : tr) s.train.push_back(rest[i]);
      for (std::size_t i : val) s.validation.push_back(rest[i]);
    }
  }

  std::vector<RunPlan> plans;
  for (std::size_t f = 0; f < spec.k; ++f)
    for (std::uint64_t seed : spec.seeds) plans.push_back({f, seed});

  MetricReport report = base_report(tasks, spec, Protocol::cv);
  report.runs = execute_all(tasks, splits, false, spec, plans, observer);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    std::vector<double> fold_scores(spec.k, 0.0);
    for (const auto& run : report.runs) fold_scores[run.fold] += run.scores[t] / static_cast<double>(spec.seeds.size());
    report.scores.push_back(make_score(tasks[t].spec, std::move(fold_scores)));
  }
  return report;
}

MetricReport run_traintest(const std::vector<TaskDataset>& tasks, const ExperimentSpec& spec,
                           const RunObserver& observer) {
  check_tasks(tasks, true);
  spec.validate(tasks.size(), Protocol::traintest);

  std::vector<std::vector<Split>> splits(1, std::vector<Split>(tasks.size()));
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    Split& s = splits[0][t];
    std::tie(s.train, s.validation) =
        split_validation(tasks[t].train.size(), spec.validation_fraction, validation_seed(spec, 0, t));
    s.test.resize(tasks[t].test.size());
    std::iota(s.test.begin(), s.test.end(), std::size_t{0});
  }
  std::vector<RunPlan> plans;
  for (std::uint64_t seed : spec.seeds) plans.push_back({0, seed});

  MetricReport report = base_report(tasks, spec, Protocol::traintest);
  report.runs = execute_all(tasks, splits, true, spec, plans, observer);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    std::vector<double> seed_scores;
    for (const auto& run : report.runs) seed_scores.push_back(run.scores[t]);
    report.scores.push_back(make_score(tasks[t].spec, std::move(seed_scores)));
  }
  return report;
}

std::string task_heads_label(const std::vector<std::string>& names) {
  std::string out;
  for (const auto& n : names) out += (out.empty() ? "" : "+") + n;
  return out;
}

std::vector<ReportRow> report_rows(const MetricReport& report) {
  std::vector<ReportRow> rows;
  for (const auto& s : report.scores) {
    rows.push_back({std::string(variant_name(report.variant)), std::string(protocol_name(report.protocol)),
                    task_heads_label(report.task_heads), s.task, s.metric, s.estimate, s.half_width, s.n});
  }
  return rows;
}

void write_records(std::ostream& out, const MetricReport& report) {
  for (const auto& s : report.scores) {
    json j;
    j["variant"] = variant_name(report.variant);
    j["protocol"] = protocol_name(report.protocol);
    j["task_heads"] = task_heads_label(report.task_heads);
    j["task"] = s.task;
    j["metric"] = s.metric;
    j["estimate"] = s.estimate;
    j["half_width"] = s.half_width;
    j["n"] = s.n;
    j["samples"] = s.samples;
    out << j.dump() << '\n';
  }
}

std::vector<ReportRow> read_records(std::istream& in) {
  std::vector<ReportRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      ReportRow r;
      r.variant = j.at("variant").get<std::string>();
      parse_variant(r.variant);
      r.protocol = j.at("protocol").get<std::string>();
      r.task_heads = j.at("task_heads").get<std::string>();
      r.task = j.at("task").get<std::string>();
      r.metric = j.at("metric").get<std::string>();
      r.estimate = j.at("estimate").get<double>();
      r.half_width = j.at("half_width").get<double>();
      r.n = j.at("n").get<std::size_t>();
      rows.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError("records line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw DataError("records line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

namespace {

std::string display_name(const std::string& variant) {
  std::string out = variant;
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::toupper(c); });
  return out;
}

// Display width in code points; the table only contains ASCII plus '±'.
std::size_t width(const std::string& s) {
  std::size_t w = 0;
  for (unsigned char c : s) w += (c & 0xC0) != 0x80;
  return w;
}

std::string pad(const std::string& s, std::size_t w) { return s + std::string(w - std::min(w, width(s)), ' '); }

}  // namespace

std::string format_table(const std::vector<ReportRow>& rows) {
  if (rows.empty()) return "no records\n";
  std::vector<std::string> columns;
  bool mixed_protocols = false;
  for (const auto& r : rows) {
    if (std::find(columns.begin(), columns.end(), r.task) == columns.end()) columns.push_back(r.task);
    mixed_protocols = mixed_protocols || r.protocol != rows.front().protocol;
  }

  struct Group {
    std::string variant, task_heads, protocol;
    std::map<std::string, std::string> cells;
  };
  // Rows sort by variant rank, then by first appearance of their (variant, task heads, protocol).
  std::map<std::pair<int, std::size_t>, Group> groups;
  std::map<std::tuple<std::string, std::string, std::string>, std::size_t> first_seen;
  for (const auto& r : rows) {
    auto it = first_seen.emplace(std::make_tuple(r.variant, r.task_heads, r.protocol), first_seen.size()).first;
    Group& g = groups[{variant_rank(parse_variant(r.variant)), it->second}];
    g.variant = r.variant;
    g.task_heads = r.task_heads;
    g.protocol = r.protocol;
    std::ostringstream cell;
    cell << std::fixed << std::setprecision(3) << r.estimate << " ± " << r.half_width;
    g.cells[r.task] = cell.str();
  }

  std::vector<std::string> header = {"Model", "Task Heads"};
  if (mixed_protocols) header.push_back("Protocol");
  for (const auto& c : columns) header.push_back(c);
  std::vector<std::vector<std::string>> table = {header};
  for (const auto& [key, g] : groups) {
    std::vector<std::string> line = {display_name(g.variant), g.task_heads};
    if (mixed_protocols) line.push_back(g.protocol);
    for (const auto& c : columns) {
      auto it = g.cells.find(c);
      line.push_back(it == g.cells.end() ? "-" : it->second);
    }
    table.push_back(std::move(line));
  }

  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& line : table)
    for (std::size_t i = 0; i < line.size(); ++i) widths[i] = std::max(widths[i], width(line[i]));
  std::ostringstream out;
  for (std::size_t r = 0; r < table.size(); ++r) {
    std::string text;
    for (std::size_t i = 0; i < table[r].size(); ++i) {
      text += (i ? "  " : "") + (i + 1 == table[r].size() ? table[r][i] : pad(table[r][i], widths[i]));
    }
    out << text << '\n';
    if (r == 0) {
      std::size_t total = 2 * (widths.size() - 1);
      for (auto w : widths) total += w;
      out << std::string(total, '-') << '\n';
    }
  }
  return out.str();
}

void write_epoch_log(std::ostream& out, const RunResult& run, const std::vector<std::string>& task_names) {
  for (const auto& r : run.history) {
    json j;
    j["fold"] = run.fold;
    j["seed"] = run.seed;
    j["epoch"] = r.epoch;
    j["task"] = task_names.at(r.task);
    j["metric"] = r.metric;
    j["value"] = r.value;
    j["lr"] = r.lr;
    out << j.dump() << '\n';
  }
}

}  // namespace mtlta
