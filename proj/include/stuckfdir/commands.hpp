#pragma once

// CLI subcommands. Each one reads and writes files under `out`:
//
//   generate  config.json dataset.csv dataset.json
//   train     tree_model.json tree_rules.txt tree_train_log.json
//             cnn_model.bin cnn_train_log.json
//   eval      report_<model>[_transfer].{json,md} plot_<model>[_transfer]_<sensor>.csv
//   report    comparison.md
//   plotdata  plot_<model>[_transfer]_<sensor>.csv
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 training error.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>

#include "stuckfdir/pipeline.hpp"

namespace stuckfdir {

struct CommandOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> model;  // "tree" or "cnn"
  std::filesystem::path out = "run";
  bool transfer = false;
  std::optional<std::size_t> stride;
};

/// --config if given, else <out>/config.json if present, else defaults; then
/// flag overrides.
RunConfig resolve_config(const CommandOptions& opts);

void cmd_generate(const CommandOptions& opts, std::ostream& log);
void cmd_train(const CommandOptions& opts, std::ostream& log);
void cmd_eval(const CommandOptions& opts, std::ostream& log);
void cmd_report(const CommandOptions& opts, std::ostream& log);
void cmd_plotdata(const CommandOptions& opts, std::ostream& log);

/// Dispatches by name and maps exceptions to exit codes, writing a one-line
/// diagnostic to `err`.
int run_command(std::string_view command, const CommandOptions& opts, std::ostream& log,
                std::ostream& err);

}  // namespace stuckfdir
