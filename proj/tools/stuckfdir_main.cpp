#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "stuckfdir/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Stuck-value fault detection: simulate, inject, train, evaluate"};
  app.require_subcommand(1);
  app.fallthrough();

  stuckfdir::CommandOptions opts;
  std::string config, model, out = "run";
  std::uint64_t seed = 0;
  std::size_t stride = 0;
  auto* config_opt = app.add_option("--config", config, "Run configuration JSON");
  auto* seed_opt = app.add_option("--seed", seed, "Global seed (overrides the config)");
  auto* model_opt =
      app.add_option("--model", model, "Model kind")->check(CLI::IsMember({"tree", "cnn"}));
  app.add_option("--out", out, "Run directory")->capture_default_str();
  app.add_flag("--transfer", opts.transfer, "Evaluate the IMU tree on accelerometer data");
  auto* stride_opt =
      app.add_option("--stride", stride, "Window stride for this command")->check(CLI::PositiveNumber);

  app.add_subcommand("generate", "Simulate trajectories, inject faults, write the dataset");
  app.add_subcommand("train", "Train the tree (IMU only) or the CNN on the training split");
  app.add_subcommand("eval", "Score a trained model on the test split; also writes plot CSVs");
  app.add_subcommand("report", "Combine the evaluation reports into comparison.md");
  app.add_subcommand("plotdata", "Rewrite the per-sample plot CSVs of a trained model");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  if (*config_opt) opts.config = config;
  if (*seed_opt) opts.seed = seed;
  if (*model_opt) opts.model = model;
  if (*stride_opt) opts.stride = stride;
  opts.out = out;
  const std::string command = app.get_subcommands().front()->get_name();
  return stuckfdir::run_command(command, opts, std::cout, std::cerr);
}
