#include <iostream>

#include <CLI11.hpp>

#include "more/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Mixture of rule and black-box experts: train, evaluate, explain, report"};
  app.require_subcommand(1);

  std::string config, bundle, data, instance;
  bool hard_gate = false;

  auto* train = app.add_subcommand("train", "Run rule discovery and write a model bundle");
  train->add_option("--config", config, "Run configuration file")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a bundle on a labelled CSV");
  eval->add_option("--bundle", bundle, "Bundle directory")->required();
  eval->add_option("--data", data, "Labelled CSV with the bundle's header")->required();
  eval->add_flag("--hard-gate", hard_gate, "Route each instance wholly to one expert");

  auto* expl = app.add_subcommand("explain", "Explain one prediction from the bundle alone");
  expl->add_option("--bundle", bundle, "Bundle directory")->required();
  expl->add_option("--instance", instance, "Instance as inline JSON or a JSON file path")->required();

  auto* report = app.add_subcommand("report", "Print the per-iteration metrics CSV");
  report->add_option("--bundle", bundle, "Bundle directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? more::kExitOk : more::kExitConfig;
  }

  try {
    if (*train) {
      more::cmd_train(more::load_config(config), std::cout);
    } else if (*eval) {
      more::cmd_eval(bundle, data, hard_gate, std::cout);
    } else if (*expl) {
      more::cmd_explain(bundle, instance, std::cout);
    } else if (*report) {
      more::cmd_report(bundle, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return more::exit_code_for(e);
  }
  return more::kExitOk;
}
