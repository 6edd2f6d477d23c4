#include "stuckfdir/commands.hpp"

#include <cstdio>
#include <ostream>

#include <json.hpp>

#include "stuckfdir/error.hpp"

namespace stuckfdir {

namespace fs = std::filesystem;
using nlohmann::json;

RunConfig resolve_config(const CommandOptions& opts) {
  RunConfig cfg;
  if (opts.config) {
    cfg = load_run_config(*opts.config);
  } else if (fs::exists(opts.out / "config.json")) {
    cfg = load_run_config(opts.out / "config.json");
  }
  if (opts.seed) cfg.seed = *opts.seed;
  cfg.finalize();
  return cfg;
}

namespace {

DatasetBundle load_dataset(const fs::path& out) {
  const fs::path csv = out / "dataset.csv";
  const fs::path meta = out / "dataset.json";
  if (!fs::exists(csv) || !fs::exists(meta))
    throw DataError("dataset not found in " + out.string() + " (run `generate` first)");
  return dataset_from_text(read_text_file(csv), read_text_file(meta));
}

std::string require_model(const CommandOptions& opts) {
  if (!opts.model) throw UsageError("--model {tree,cnn} is required");
  if (*opts.model != "tree" && *opts.model != "cnn")
    throw UsageError("--model must be 'tree' or 'cnn', got '" + *opts.model + "'");
  return *opts.model;
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

struct Evaluated {
  ModelReport report;
  std::vector<SensorEvaluation> evals;
  std::string tag;  // file-name stem
};

Evaluated evaluate_model(const CommandOptions& opts, const RunConfig& cfg, const DataSplit& split,
                         const SensorCalibration& cal) {
  const std::string model = require_model(opts);
  const std::size_t stride = opts.stride.value_or(cfg.features.eval_stride);
  if (stride < 1 || stride > cfg.features.window)
    throw UsageError("--stride must lie in [1, window]");
  Evaluated e;
  e.report.model = model;
  e.report.transfer = opts.transfer;
  e.tag = model + (opts.transfer ? "_transfer" : "");
  if (model == "tree") {
    const fs::path path = opts.out / "tree_model.json";
    if (!fs::exists(path)) throw DataError("tree model not found (run `train --model tree`)");
    const TreeModel tree = tree_from_json(read_text_file(path));
    if (opts.transfer) {
      auto t = transfer_experiment(tree, split.test, cal.accelerometer, cfg.features.window, stride,
                                   cfg.features.variance_window);
      e.evals.push_back(std::move(t.evaluation));
    } else {
      e.evals.push_back(evaluate_tree(tree, split.test, SensorKind::Imu, cal.imu,
                                      cfg.features.window, stride, cfg.features.variance_window));
    }
  } else {
    if (opts.transfer) throw UsageError("--transfer applies only to tree models");
    const fs::path path = opts.out / "cnn_model.bin";
    if (!fs::exists(path)) throw DataError("CNN model not found (run `train --model cnn`)");
    const CnnModel cnn = cnn_from_bytes(read_text_file(path));
    if (cnn.arch.input_length != cfg.features.window)
      throw DataError("CNN input length " + std::to_string(cnn.arch.input_length) +
                      " does not match the configured window " +
                      std::to_string(cfg.features.window));
    auto both = evaluate_cnn(cnn, split.test, stride, cfg.cnn.threshold);
    e.evals.push_back(std::move(both[0]));
    e.evals.push_back(std::move(both[1]));
  }
  for (const auto& ev : e.evals) e.report.sensors.push_back(make_sensor_report(ev));
  return e;
}

void write_plots(const CommandOptions& opts, const RunConfig& cfg, const DataSplit& split,
                 const Evaluated& e, std::ostream& log) {
  if (cfg.plot_trajectory >= split.test.trajectories.size())
    throw UsageError("plot_trajectory exceeds the number of test trajectories");
  for (const auto& ev : e.evals) {
    const fs::path p =
        opts.out / ("plot_" + e.tag + "_" + std::string(to_string(ev.sensor)) + ".csv");
    write_text_file(p, plot_data_csv(split.test.trajectories[cfg.plot_trajectory], ev.sensor, ev,
                                     cfg.plot_trajectory));
    log << "wrote " << p.string() << "\n";
  }
}

}  // namespace

void cmd_generate(const CommandOptions& opts, std::ostream& log) {
  const RunConfig cfg = resolve_config(opts);
  std::error_code ec;
  fs::create_directories(opts.out, ec);
  if (ec) throw DataError("cannot create " + opts.out.string() + ": " + ec.message());
  const DatasetBundle bundle = generate_dataset(cfg);
  write_text_file(opts.out / "config.json", run_config_to_json(cfg));
  write_text_file(opts.out / "dataset.csv", dataset_to_csv(bundle.dataset));
  write_text_file(opts.out / "dataset.json",
                  dataset_sidecar_json(bundle.dataset, bundle.calibration));
  const auto& ds = bundle.dataset;
  log << "trajectories: " << ds.trajectories.size() << "\n"
      << "samples: " << ds.total_samples() << "\n"
      << "faults injected: " << ds.faults.size() << "\n"
      << "fault fraction imu: " << fmt("%.4f", ds.faulted_fraction(SensorKind::Imu)) << "\n"
      << "fault fraction accelerometer: "
      << fmt("%.4f", ds.faulted_fraction(SensorKind::Accelerometer)) << "\n";
}

void cmd_train(const CommandOptions& opts, std::ostream& log) {
  const std::string model = require_model(opts);
  RunConfig cfg = resolve_config(opts);
  if (opts.stride) {
    cfg.features.train_stride = *opts.stride;
    cfg.finalize();
  }
  const DatasetBundle bundle = load_dataset(opts.out);
  const DataSplit split = split_by_trajectory(bundle.dataset, cfg.train_fraction);
  if (model == "tree") {
    std::vector<std::uint8_t> labels;
    const FeatureMatrix x = tree_training_matrix(split.train, SensorKind::Imu,
                                                 bundle.calibration.imu,
                                                 cfg.features.variance_window, labels);
    const TreeModel tree = train_tree(x, labels, cfg.tree);
    const RuleExport rules = export_rules(tree);
    write_text_file(opts.out / "tree_model.json", tree_to_json(tree));
    write_text_file(opts.out / "tree_rules.txt", rules.to_text());
    json tlog = {{"rows", x.rows},
                 {"positives", std::count(labels.begin(), labels.end(), 1)},
                 {"depth", tree.depth()},
                 {"leaves", tree.leaf_count()},
                 {"split_counts", rules.split_counts}};
    write_text_file(opts.out / "tree_train_log.json", tlog.dump(2) + "\n");
    log << "tree: " << x.rows << " samples, depth " << tree.depth() << ", "
        << tree.leaf_count() << " leaves\n"
        << rules.to_text();
  } else {
    const TrainResult r = train_window_cnn(split.train, bundle.calibration, cfg);
    write_text_file(opts.out / "cnn_model.bin", cnn_to_bytes(r.model));
    json tlog = {{"parameters", r.model.parameter_count()},
                 {"train_stride", cfg.features.train_stride},
                 {"loss_history", r.loss_history}};
    write_text_file(opts.out / "cnn_train_log.json", tlog.dump(2) + "\n");
    log << "cnn: " << r.model.parameter_count() << " parameters\n";
    for (std::size_t e = 0; e < r.loss_history.size(); ++e)
      log << "epoch " << e + 1 << " loss " << fmt("%.6f", r.loss_history[e]) << "\n";
  }
}

void cmd_eval(const CommandOptions& opts, std::ostream& log) {
  const RunConfig cfg = resolve_config(opts);
  const DatasetBundle bundle = load_dataset(opts.out);
  const DataSplit split = split_by_trajectory(bundle.dataset, cfg.train_fraction);
  const Evaluated e = evaluate_model(opts, cfg, split, bundle.calibration);
  write_text_file(opts.out / ("report_" + e.tag + ".json"), report_to_json(e.report));
  const std::string md = reports_to_markdown(std::span(&e.report, 1));
  write_text_file(opts.out / ("report_" + e.tag + ".md"), md);
  write_plots(opts, cfg, split, e, log);
  log << md;
}

void cmd_report(const CommandOptions& opts, std::ostream& log) {
  std::vector<ModelReport> reports;
  for (const char* tag : {"tree", "tree_transfer", "cnn"}) {
    const fs::path p = opts.out / ("report_" + std::string(tag) + ".json");
    if (fs::exists(p)) reports.push_back(report_from_json(read_text_file(p)));
  }
  if (reports.empty()) throw DataError("no reports found in " + opts.out.string() + " (run `eval`)");
  const std::string md = reports_to_markdown(reports);
  write_text_file(opts.out / "comparison.md", md);
  log << md;
}

void cmd_plotdata(const CommandOptions& opts, std::ostream& log) {
  const RunConfig cfg = resolve_config(opts);
  const DatasetBundle bundle = load_dataset(opts.out);
  const DataSplit split = split_by_trajectory(bundle.dataset, cfg.train_fraction);
  write_plots(opts, cfg, split, evaluate_model(opts, cfg, split, bundle.calibration), log);
}

int run_command(std::string_view command, const CommandOptions& opts, std::ostream& log,
                std::ostream& err) {
  try {
    if (command == "generate") cmd_generate(opts, log);
    else if (command == "train") cmd_train(opts, log);
    else if (command == "eval") cmd_eval(opts, log);
    else if (command == "report") cmd_report(opts, log);
    else if (command == "plotdata") cmd_plotdata(opts, log);
    else throw UsageError("unknown command '" + std::string(command) + "'");
    return 0;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const TrainingError& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace stuckfdir
