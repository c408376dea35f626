#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "mtlta/cli.hpp"
#include "mtlta/errors.hpp"
#include "mtlta/gradcheck_suite.hpp"
#include "mtlta/metrics.hpp"

namespace py = pybind11;
using namespace mtlta;

namespace {

struct CommandResult {
  int code;
  std::string out;
  std::string err;
};

py::dict example_dict(const Example& ex) {
  py::dict d;
  d["id"] = ex.id;
  d["text"] = ex.text;
  d["tokens"] = ex.tokens;
  d["label"] = ex.label;
  return d;
}

TaskSpec make_spec(const std::string& description) {
  return {"task", description, {"negative", "positive"}, std::nullopt, Metric::accuracy};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the mtlta multi-task text classification core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  py::class_<CommandResult>(m, "CommandResult")
      .def_readonly("code", &CommandResult::code)
      .def_readonly("out", &CommandResult::out)
      .def_readonly("err", &CommandResult::err)
      .def("__repr__", [](const CommandResult& r) { return "<CommandResult code=" + std::to_string(r.code) + ">"; });

  m.def("tokenize", [](const std::string& text) { return tokenize(text); }, py::arg("text"));
  m.def(
      "make_tai_input",
      [](const std::vector<std::string>& tokens, const std::string& description, std::size_t max_len) {
        return make_tai_input(tokens, make_spec(description), max_len);
      },
      py::arg("tokens"), py::arg("description"), py::arg("max_len"));
  m.def("kfold", &kfold, py::arg("n"), py::arg("k"), py::arg("seed"));

  m.def(
      "synthesize",
      [](std::size_t n_per_task, double conflict, std::uint64_t seed, std::size_t vocab_size) {
        const auto corpus = synthesize_tasks({n_per_task, vocab_size, conflict, seed});
        py::list tasks;
        for (std::size_t t = 0; t < corpus.tasks.size(); ++t) {
          py::dict d;
          d["name"] = corpus.tasks[t].name;
          d["description"] = corpus.tasks[t].description;
          d["labels"] = corpus.tasks[t].labels;
          py::list examples;
          for (const auto& ex : corpus.examples[t]) examples.append(example_dict(ex));
          d["examples"] = examples;
          tasks.append(d);
        }
        return tasks;
      },
      py::arg("n_per_task") = 500, py::arg("conflict") = 0.0, py::arg("seed") = 0, py::arg("vocab_size") = 84);

  using Labels = std::vector<std::size_t>;
  m.def(
      "accuracy", [](const Labels& p, const Labels& g) { return accuracy(p, g); }, py::arg("preds"),
      py::arg("golds"));
  m.def(
      "f1_positive", [](const Labels& p, const Labels& g, std::size_t positive) { return f1_positive(p, g, positive); },
      py::arg("preds"), py::arg("golds"), py::arg("positive") = 1);
  m.def(
      "f1_macro", [](const Labels& p, const Labels& g, std::size_t classes) { return f1_macro(p, g, classes); },
      py::arg("preds"), py::arg("golds"), py::arg("num_classes") = 2);
  m.def(
      "ci95_t",
      [](const std::vector<double>& samples) {
        const auto ci = ci95_t(samples);
        return py::make_tuple(ci.mean, ci.half_width);
      },
      py::arg("samples"), "Returns (mean, half_width).");

  m.def(
      "gradcheck_suite",
      [](std::uint64_t seed) {
        std::vector<GradcheckEntry> entries;
        {
          py::gil_scoped_release release;
          entries = run_gradcheck_suite(seed);
        }
        py::list out;
        for (const auto& e : entries) out.append(py::make_tuple(e.name, e.max_rel_error, e.tolerance, e.passed()));
        return out;
      },
      py::arg("seed") = 0, "Returns (name, max_rel_error, tolerance, passed) tuples.");

  m.def(
      "run",
      [](const std::filesystem::path& config) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cmd_run(config, out, err);
        }
        return CommandResult{code, out.str(), err.str()};
      },
      py::arg("config"));
  m.def(
      "synth",
      [](const std::filesystem::path& out_dir, std::size_t n_per_task, double conflict, std::uint64_t seed,
         std::size_t vocab_size) {
        std::ostringstream out, err;
        const int code = cmd_synth({n_per_task, vocab_size, conflict, seed}, out_dir, out, err);
        return CommandResult{code, out.str(), err.str()};
      },
      py::arg("out_dir"), py::arg("n_per_task") = 500, py::arg("conflict") = 0.0, py::arg("seed") = 0,
      py::arg("vocab_size") = 84);
  m.def(
      "report",
      [](const std::filesystem::path& records) {
        std::ostringstream out, err;
        const int code = cmd_report(records, out, err);
        return CommandResult{code, out.str(), err.str()};
      },
      py::arg("records"));
}
