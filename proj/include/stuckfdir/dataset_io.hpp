#pragma once

// On-disk form of a labeled dataset.
//
// dataset.csv:  t,imu0,imu1,imu2,acc0,acc1,acc2,label_imu,label_acc
//               trajectories are concatenated; t restarts at 0 for each one.
//               Values are written with 17 significant digits so a reload is
//               bit-exact.
// dataset.json: sample rate, trajectory lengths, per-sensor ranges, noise and
//               calibration scales, and every injected fault with its interval.

#include <filesystem>
#include <string>

#include "stuckfdir/faultlab.hpp"
#include "stuckfdir/featext.hpp"

namespace stuckfdir {

struct DatasetBundle {
  LabeledDataset dataset;
  SensorCalibration calibration;
};

std::string dataset_to_csv(const LabeledDataset& dataset);
std::string dataset_sidecar_json(const LabeledDataset& dataset,
                                 const SensorCalibration& calibration);

/// Rebuilds traces, labels and fault metadata. Throws DataError when the CSV
/// and the sidecar disagree.
DatasetBundle dataset_from_text(const std::string& csv, const std::string& sidecar);

std::string read_text_file(const std::filesystem::path& path);
/// Throws DataError when the file cannot be written.
void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace stuckfdir
