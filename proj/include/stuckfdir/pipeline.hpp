#pragma once

// End-to-end experiment wiring shared by the CLI and the acceptance suite.
//
// Every random stream derives from RunConfig::seed:
//   trajectory i        derive_seed(seed, "trajectory") -> derive_seed(_, i)
//   measurement noise i derive_seed(seed, "noise")      -> derive_seed(_, i)
//   fault injection     derive_seed(seed, "injection")
//   calibration traces  derive_seed(seed, "calibration")
//   CNN init / shuffle  derive_seed(seed, "cnn")

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stuckfdir/convnet.hpp"
#include "stuckfdir/dataset_io.hpp"
#include "stuckfdir/evalkit.hpp"
#include "stuckfdir/faultlab.hpp"
#include "stuckfdir/featext.hpp"
#include "stuckfdir/gbtree.hpp"
#include "stuckfdir/simkit.hpp"

namespace stuckfdir {

struct FeatureConfig {
  std::size_t window = kDefaultWindowLength;
  std::size_t train_stride = 4;
  std::size_t eval_stride = 1;
  std::size_t variance_window = kDefaultVarianceWindow;
};

struct CnnConfig {
  CnnArchitecture arch;
  TrainConfig train;
  double threshold = 0.6;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t trajectories = 50;
  double train_fraction = 0.8;
  TrajectoryConfig trajectory;
  InjectionPolicy injection;
  FeatureConfig features;
  TreeHyper tree;
  CnnConfig cnn;
  std::size_t plot_trajectory = 0;  // index within the test split

  /// Copies the global seed into the module configs and validates them.
  void finalize();
};

/// Parses a config document; absent keys keep their defaults and unknown keys
/// are rejected with UsageError.
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& cfg);

/// Nominal noisy traces, fault injection, and calibration scales.
DatasetBundle generate_dataset(const RunConfig& cfg);

struct DataSplit {
  LabeledDataset train;
  LabeledDataset test;
};

/// First round(train_fraction * n) trajectories train, the rest test.
DataSplit split_by_trajectory(const LabeledDataset& dataset, double train_fraction);

/// Per-sample features of `sensor` over samples whose trailing variance window
/// is full; `labels` receives the matching flags.
FeatureMatrix tree_training_matrix(const LabeledDataset& dataset, SensorKind sensor,
                                   double calibration_scale, std::size_t variance_window,
                                   std::vector<std::uint8_t>& labels);

TreeModel train_imu_tree(const LabeledDataset& train, const SensorCalibration& calibration,
                         const RunConfig& cfg);
/// Derivative channels are scaled by the per-sensor calibration scales.
TrainResult train_window_cnn(const LabeledDataset& train, const SensorCalibration& calibration,
                             const RunConfig& cfg);

struct ExperimentResults {
  DatasetBundle data;
  DataSplit split;
  TreeModel tree;
  TrainResult cnn;
  SensorEvaluation tree_imu;
  TransferResult tree_transfer;
  std::array<SensorEvaluation, 2> cnn_eval;
};

/// generate -> split -> train tree and CNN -> evaluate on the test split.
ExperimentResults run_experiment(const RunConfig& cfg);

}  // namespace stuckfdir
