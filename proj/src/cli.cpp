#include "mtlta/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mtlta/errors.hpp"
#include "mtlta/gradcheck_suite.hpp"

namespace mtlta {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Typed, path-aware access to one JSON object; finish() rejects keys nobody read.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "config" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    if (!j_.contains(key)) throw ConfigError(field(key), "is required");
    seen_.insert(key);
    return j_.at(key);
  }

  std::string str(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_string()) throw ConfigError(field(key), "expected a string");
    return v.get<std::string>();
  }
  std::string str(const std::string& key, const std::string& fallback) { return has(key) ? str(key) : fallback; }

  std::size_t count(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number_unsigned()) throw ConfigError(field(key), "expected a non-negative integer");
    return v.get<std::size_t>();
  }
  std::size_t count(const std::string& key, std::size_t fallback) { return has(key) ? count(key) : fallback; }

  double number(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_number()) throw ConfigError(field(key), "expected a number");
    return v.get<double>();
  }
  double number(const std::string& key, double fallback) { return has(key) ? number(key) : fallback; }

  bool flag(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_boolean()) throw ConfigError(field(key), "expected true or false");
    return v.get<bool>();
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(field(key), "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

EncoderConfig parse_encoder(Fields f) {
  EncoderConfig e;
  e.hidden = f.count("hidden", e.hidden);
  e.layers = f.count("layers", e.layers);
  e.heads = f.count("heads", e.heads);
  e.max_len = f.count("max_len", e.max_len);
  e.ffn_mult = f.count("ffn_mult", e.ffn_mult);
  f.finish();
  return e;
}

OptimConfig parse_optim(Fields f) {
  OptimConfig o;
  o.lr_peak = f.number("lr_peak", o.lr_peak);
  o.beta1 = f.number("beta1", o.beta1);
  o.beta2 = f.number("beta2", o.beta2);
  o.eps = f.number("eps", o.eps);
  o.weight_decay = f.number("weight_decay", o.weight_decay);
  o.epochs = f.count("epochs", o.epochs);
  o.batch_size = f.count("batch_size", o.batch_size);
  o.dropout_p = f.number("dropout", o.dropout_p);
  f.finish();
  return o;
}

TaskConfig parse_task(Fields f, const fs::path& base) {
  TaskConfig t;
  t.spec.name = f.str("name");
  t.spec.description = f.str("description");
  const json& labels = f.raw("labels");
  if (!labels.is_array()) throw ConfigError(f.field("labels"), "expected a list of strings");
  for (const auto& l : labels) {
    if (!l.is_string()) throw ConfigError(f.field("labels"), "expected a list of strings");
    t.spec.labels.push_back(l.get<std::string>());
  }
  if (f.has("positive_label")) t.spec.positive_label = f.str("positive_label");
  try {
    t.spec.metric = parse_metric(f.str("metric", "accuracy"));
  } catch (const ConfigError& e) {
    throw ConfigError(f.field("metric"), e.message());
  }
  try {
    t.spec.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(f.field(e.field()), e.message());
  }
  t.train = resolve(base, f.str("train"));
  if (!fs::is_regular_file(t.train)) throw ConfigError(f.field("train"), "file not found: " + t.train.string());
  if (f.has("test")) {
    t.test = resolve(base, f.str("test"));
    if (!fs::is_regular_file(*t.test)) throw ConfigError(f.field("test"), "file not found: " + t.test->string());
  }
  f.finish();
  return t;
}

std::vector<std::uint64_t> parse_seeds(Fields& f) {
  const json& v = f.raw("seeds");
  if (!v.is_array() || v.empty()) throw ConfigError("seeds", "expected a non-empty list of non-negative integers");
  std::vector<std::uint64_t> seeds;
  for (const auto& s : v) {
    if (!s.is_number_unsigned()) throw ConfigError("seeds", "expected a non-empty list of non-negative integers");
    seeds.push_back(s.get<std::uint64_t>());
  }
  return seeds;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config", "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  out << body;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::vector<Example> load_all(const TaskConfig& t, std::size_t index, bool include_test) {
  auto ex = load_tsv(t.train, t.spec, index);
  if (include_test && t.test) {
    auto more = load_tsv(*t.test, t.spec, index);
    ex.insert(ex.end(), std::make_move_iterator(more.begin()), std::make_move_iterator(more.end()));
  }
  return ex;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", std::string("not valid JSON: ") + e.what());
  }
  Fields f(j, "");
  ExperimentConfig c;
  c.spec.model.variant = parse_variant(f.str("variant"));
  c.mode = parse_protocol(f.str("mode", "cv"));
  c.spec.k = f.count("k", c.spec.k);
  c.spec.seeds = parse_seeds(f);
  c.spec.schedule = parse_schedule(f.str("schedule_policy", std::string(schedule_name(c.spec.schedule))));
  c.spec.model.teb_units = f.count("teb_units", c.spec.model.teb_units);
  if (f.has("teb_units") && c.spec.model.variant != Variant::mtl_te) {
    throw ConfigError("teb_units", "only applies to mtl-te");
  }
  c.spec.validation_fraction = f.number("validation_fraction", c.spec.validation_fraction);
  c.spec.min_count = f.count("min_count", c.spec.min_count);
  c.spec.split_seed = f.count("split_seed", c.spec.split_seed);
  c.spec.threads = f.count("threads", c.spec.threads);
  c.output_dir = resolve(base_dir, f.str("output_dir", "output"));
  c.save_checkpoints = f.flag("checkpoints", true);
  if (f.has("encoder")) c.spec.model.encoder = parse_encoder(Fields(f.raw("encoder"), "encoder"));
  if (f.has("optim")) c.spec.optim = parse_optim(Fields(f.raw("optim"), "optim"));

  const json& tasks = f.raw("tasks");
  if (!tasks.is_array() || tasks.empty()) throw ConfigError("tasks", "expected a non-empty list");
  std::set<std::string> names;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    c.tasks.push_back(parse_task(Fields(tasks[i], "tasks[" + std::to_string(i) + "]"), base_dir));
    if (!names.insert(c.tasks.back().spec.name).second) {
      throw ConfigError("tasks[" + std::to_string(i) + "].name", "duplicate task '" + c.tasks.back().spec.name + "'");
    }
    if (c.mode == Protocol::traintest && !c.tasks.back().test) {
      throw ConfigError("tasks[" + std::to_string(i) + "].test", "is required in traintest mode");
    }
  }
  f.finish();

  c.spec.validate(c.tasks.size(), c.mode);
  if (c.spec.model.variant == Variant::mtl_tai) {
    for (std::size_t i = 0; i < c.tasks.size(); ++i) {
      if (tokenize(c.tasks[i].spec.description).size() + 1 > c.spec.model.encoder.max_len) {
        throw ConfigError("tasks[" + std::to_string(i) + "].description",
                          "task description plus <sep> exceeds encoder.max_len");
      }
    }
  }
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  return parse_config(read_file(path), path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

void apply_environment(ExperimentConfig& config) {
  if (const char* dir = std::getenv("MTLTA_OUTPUT_DIR"); dir != nullptr && *dir != '\0') config.output_dir = dir;
  if (const char* threads = std::getenv("MTLTA_THREADS"); threads != nullptr && *threads != '\0') {
    std::size_t used = 0;
    unsigned long n = 0;
    try {
      n = std::stoul(threads, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != std::string(threads).size() || n < 1) {
      throw ConfigError("MTLTA_THREADS", "expected a positive integer, got '" + std::string(threads) + "'");
    }
    config.spec.threads = n;
  }
}

int cmd_run(const fs::path& config_path, std::ostream& out, std::ostream& err) {
  ExperimentConfig config;
  try {
    config = load_config(config_path);
    apply_environment(config);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    const bool cv = config.mode == Protocol::cv;
    std::vector<TaskDataset> tasks;
    std::vector<std::string> names;
    for (std::size_t i = 0; i < config.tasks.size(); ++i) {
      TaskDataset d;
      d.spec = config.tasks[i].spec;
      d.train = load_all(config.tasks[i], i, cv);
      if (!cv) d.test = load_tsv(*config.tasks[i].test, d.spec, i);
      names.push_back(d.spec.name);
      tasks.push_back(std::move(d));
    }

    fs::create_directories(config.output_dir);
    const fs::path ckpt_root = config.output_dir / "checkpoints";
    RunObserver observer;
    if (config.save_checkpoints) {
      observer = [&](const RunResult& run, const std::vector<Model>& best, const Vocabulary& vocab) {
        const fs::path dir = ckpt_root / ("fold" + std::to_string(run.fold) + "-seed" + std::to_string(run.seed));
        fs::create_directories(dir);
        vocab.save(dir / "vocab.txt");
        for (std::size_t t = 0; t < best.size(); ++t) best[t].save(dir / (names[t] + ".ckpt"));
      };
    }

    const MetricReport report = cv ? run_cv(tasks, config.spec, observer) : run_traintest(tasks, config.spec, observer);

    std::ostringstream records, runs, epochs;
    write_records(records, report);
    for (const auto& run : report.runs) {
      json j;
      j["fold"] = run.fold;
      j["seed"] = run.seed;
      j["vocab_size"] = run.vocab_size;
      for (std::size_t t = 0; t < names.size(); ++t) {
        j["scores"][names[t]] = run.scores[t];
        j["best_epoch"][names[t]] = run.best_epoch[t];
      }
      runs << j.dump() << '\n';
      write_epoch_log(epochs, run, names);
    }
    const std::string table = format_table(report_rows(report));
    write_file(config.output_dir / "records.jsonl", records.str());
    write_file(config.output_dir / "runs.jsonl", runs.str());
    write_file(config.output_dir / "epochs.jsonl", epochs.str());
    write_file(config.output_dir / "report.txt", table);
    out << table;
    out << (cv ? "intervals over " + std::to_string(config.spec.k) + " fold scores (each the mean over seeds)"
               : "intervals over " + std::to_string(config.spec.seeds.size()) + " seed scores")
        << '\n';
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

int cmd_synth(const SynthConfig& config, const fs::path& out_dir, std::ostream& out, std::ostream& err) {
  SynthCorpus corpus;
  try {
    corpus = synthesize_tasks(config);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  }
  try {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) throw std::runtime_error("cannot create directory " + out_dir.string());
    json manifest;
    manifest["generator"] = {{"n_per_task", config.n_per_task},
                             {"vocab_size", config.vocab_size},
                             {"conflict", config.conflict},
                             {"seed", config.seed}};
    manifest["tasks"] = json::array();
    for (std::size_t t = 0; t < corpus.tasks.size(); ++t) {
      const TaskSpec& spec = corpus.tasks[t];
      const std::string file = spec.name + ".tsv";
      write_tsv(out_dir / file, corpus.examples[t], spec);
      manifest["tasks"].push_back({{"name", spec.name},
                                   {"description", spec.description},
                                   {"labels", spec.labels},
                                   {"metric", metric_name(spec.metric)},
                                   {"train", file}});
      out << "wrote " << (out_dir / file).string() << " (" << corpus.examples[t].size() << " rows)\n";
    }
    write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
    out << "wrote " << (out_dir / "manifest.json").string() << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

SynthConfig read_synth_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    const json j = json::parse(in);
    const json& g = j.at("generator");
    SynthConfig c;
    c.n_per_task = g.at("n_per_task").get<std::size_t>();
    c.vocab_size = g.at("vocab_size").get<std::size_t>();
    c.conflict = g.at("conflict").get<double>();
    c.seed = g.at("seed").get<std::uint64_t>();
    return c;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

int cmd_gradcheck(bool corrupt_relu, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  set_relu_backward_fault(corrupt_relu);
  std::vector<GradcheckEntry> entries;
  try {
    entries = run_gradcheck_suite();
  } catch (...) {
    set_relu_backward_fault(false);
    throw;
  }
  set_relu_backward_fault(false);
  bool ok = true;
  for (const auto& e : entries) {
    ok = ok && e.passed();
    out << std::left << std::setw(24) << e.name << ' ' << std::scientific << std::setprecision(3) << e.max_rel_error
        << "  (tolerance " << e.tolerance << ")  " << (e.passed() ? "ok" : "FAIL") << '\n';
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out << std::defaultfloat << (ok ? "gradcheck passed" : "gradcheck FAILED") << " in " << std::fixed
      << std::setprecision(2) << secs << " s\n";
  out.copyfmt(std::ios(nullptr));
  return ok ? kExitOk : kExitRuntime;
}

int cmd_report(const fs::path& records, std::ostream& out, std::ostream& err) {
  std::ifstream in(records, std::ios::binary);
  if (!in) {
    err << "error: cannot read records file " << records.string() << '\n';
    return kExitUsage;
  }
  try {
    out << format_table(read_records(in));
    return kExitOk;
  } catch (const DataError& e) {
    err << "error: " << records.string() << ": " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace mtlta
