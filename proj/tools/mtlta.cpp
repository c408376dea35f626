#include <CLI11.hpp>
#include <iostream>

#include "mtlta/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Multi-task text classification laboratory"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run the experiment described by a JSON config");
  std::string config;
  run->add_option("config", config, "Experiment config file")->required();

  auto* synth = app.add_subcommand("synth", "Write a synthetic two-task corpus");
  mtlta::SynthConfig sc;
  std::string out_dir;
  synth->add_option("--n-per-task", sc.n_per_task, "Examples per task")->capture_default_str();
  synth->add_option("--conflict", sc.conflict, "Probability of conflicting cross-task triggers")
      ->capture_default_str();
  synth->add_option("--seed", sc.seed, "Generator seed")->capture_default_str();
  synth->add_option("--vocab-size", sc.vocab_size, "Distinct words")->capture_default_str();
  synth->add_option("--out", out_dir, "Output directory")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every op and model variant");
  bool corrupt_relu = false;
  gradcheck->add_flag("--corrupt-relu", corrupt_relu, "Inject a fault into relu's backward pass");

  auto* report = app.add_subcommand("report", "Print the comparison table of a records file");
  std::string records;
  report->add_option("records", records, "records.jsonl file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? mtlta::kExitOk : mtlta::kExitUsage;
  }

  if (*run) return mtlta::cmd_run(config, std::cout, std::cerr);
  if (*synth) return mtlta::cmd_synth(sc, out_dir, std::cout, std::cerr);
  if (*gradcheck) return mtlta::cmd_gradcheck(corrupt_relu, std::cout);
  return mtlta::cmd_report(records, std::cout, std::cerr);
}
