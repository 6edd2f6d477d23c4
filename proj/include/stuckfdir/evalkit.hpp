#pragma once

// Precision / recall scoring, per-fault-case breakdowns, and the
// IMU-to-accelerometer transfer evaluation of the tree.
//
// Both detectors are scored on the same index set: the final samples of all
// stride-spaced windows of length W. The tree classifies each such sample
// from its own features; the CNN classifies the window ending there.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stuckfdir/convnet.hpp"
#include "stuckfdir/faultlab.hpp"
#include "stuckfdir/gbtree.hpp"

namespace stuckfdir {

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
};

struct Score {
  ConfusionCounts counts;
  double precision = 1.0;  // 1 when nothing was flagged
  double recall = 1.0;     // 1 when nothing was faulty
};

Score score(std::span<const std::uint8_t> predictions, std::span<const std::uint8_t> labels);

struct CaseStats {
  std::size_t count = 0;
  std::size_t detected = 0;
  double recall = 1.0;
};

struct CaseBreakdown {
  std::array<CaseStats, FaultCase::kCount> cases;
  std::size_t false_negatives = 0;
  std::size_t noisy_false_negatives = 0;
  /// Share of false negatives whose fault carries noise on top; 0 when there
  /// are no false negatives.
  double noise_fn_fraction = 0.0;

  /// Recall restricted to faults with (noise_on_top == noisy).
  double subset_recall(bool noisy) const;
};

/// Throws DataError when a positive label lacks metadata or lengths differ.
CaseBreakdown breakdown(std::span<const std::uint8_t> predictions,
                        std::span<const std::uint8_t> labels,
                        std::span<const std::optional<FaultCase>> metadata);

/// One scored sample of a sensor head.
struct EvalSample {
  std::size_t trajectory = 0;
  std::size_t index = 0;
};

struct SensorEvaluation {
  SensorKind sensor = SensorKind::Imu;
  std::vector<EvalSample> samples;
  std::vector<std::uint8_t> predictions;
  std::vector<std::uint8_t> labels;
  std::vector<std::optional<FaultCase>> metadata;
  Score score;
  CaseBreakdown cases;

  void finalize();  // recomputes score and cases from the vectors
};

/// Scores the tree on `sensor` at window-final indices of every trajectory.
/// Throws DataError if the model's feature names differ from the extractor's.
SensorEvaluation evaluate_tree(const TreeModel& tree, const LabeledDataset& dataset,
                               SensorKind sensor, double calibration_scale,
                               std::size_t window_length, std::size_t stride,
                               std::size_t variance_window = kDefaultVarianceWindow);

/// Scores both CNN heads on every stride-spaced window.
std::array<SensorEvaluation, 2> evaluate_cnn(const CnnModel& model, const LabeledDataset& dataset,
                                             std::size_t stride, double threshold = 0.5);

struct TransferResult {
  Score score;
  CaseBreakdown cases;
  double noise_free_recall = 1.0;
  SensorEvaluation evaluation;
};

/// Runs an IMU-trained tree unchanged on accelerometer data whose features use
/// the accelerometer calibration scale.
TransferResult transfer_experiment(const TreeModel& imu_tree, const LabeledDataset& accel_dataset,
                                   double accel_calibration_scale, std::size_t window_length,
                                   std::size_t stride,
                                   std::size_t variance_window = kDefaultVarianceWindow);

struct SensorReport {
  SensorKind sensor = SensorKind::Imu;
  Score score;
  CaseBreakdown cases;
};

struct ModelReport {
  std::string model;  // "tree" or "cnn"
  bool transfer = false;
  std::vector<SensorReport> sensors;
};

SensorReport make_sensor_report(const SensorEvaluation& eval);

/// Machine-readable report: metrics, confusion counts, per-case breakdown,
/// noise-FN fraction, and clean/noisy subset recall per sensor.
std::string report_to_json(const ModelReport& report);
ModelReport report_from_json(const std::string& text);

/// Model x (precision, recall) table per sensor, like the published layout.
std::string reports_to_markdown(std::span<const ModelReport> reports);

/// Per-sample signal, label and flags of one trajectory and sensor:
/// `t,ch0,ch1,ch2,label,flag` (flag empty where the detector did not score).
std::string plot_data_csv(const LabeledTrajectory& trajectory, SensorKind sensor,
                          const SensorEvaluation& eval, std::size_t trajectory_index);

}  // namespace stuckfdir
