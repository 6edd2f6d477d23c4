#pragma once

// Per-sample features for the decision tree and fixed-length windows for the
// CNN.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stuckfdir/faultlab.hpp"
#include "stuckfdir/simkit.hpp"

namespace stuckfdir {

inline constexpr std::size_t kDefaultVarianceWindow = 16;

/// Backward difference scaled to units/s; d[0] = 0.
std::vector<double> derivative(std::span<const double> channel, double sample_rate_hz);

/// Population variance of the last `window` samples ending at each index
/// (fewer at the start of the sequence).
std::vector<double> trailing_variance(std::span<const double> channel, std::size_t window);

struct ChannelFeatures {
  double value = 0.0;
  double derivative = 0.0;
  double peak_score = 0.0;  // |derivative| / calibration scale
  std::uint8_t out_of_range = 0;
};

struct FeatureFrame {
  std::array<ChannelFeatures, 3> channels;
  /// Minimum over channels of the trailing variance.
  double min_trailing_variance = 0.0;
};

/// Peak-score normalizers of both sensors.
struct SensorCalibration {
  double imu = 1.0;
  double accelerometer = 1.0;

  double scale(SensorKind kind) const { return kind == SensorKind::Imu ? imu : accelerometer; }
};

/// Median |derivative| of a nominal trace, pooled over its three channels.
/// Throws UsageError if the median is zero.
double calibration_scale(const SensorTrace& nominal);

std::vector<FeatureFrame> extract_features(const SensorTrace& trace, double calibration_scale,
                                           std::size_t variance_window = kDefaultVarianceWindow);

/// Column order of the tree feature matrix:
///   value_ch{c}, derivative_ch{c}, peak_score_ch{c}, out_of_range_ch{c} for
///   c = 0..2, then min_trailing_variance.
const std::vector<std::string>& tree_feature_names();
inline constexpr std::size_t kTreeFeatureCount = 13;

/// Row-major dense matrix of tree features.
struct FeatureMatrix {
  std::vector<std::string> names;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  void append_row(std::span<const double> values);
};

void flatten_frame(const FeatureFrame& frame, std::span<double> out);
FeatureMatrix to_feature_matrix(std::span<const FeatureFrame> frames);

/// One row per sample in tree_feature_names() order, preceded by `t`.
std::string features_to_csv(std::span<const FeatureFrame> frames, double sample_rate_hz);

inline constexpr std::size_t kWindowChannels = 6;

/// A view of W consecutive samples of one trajectory (3 IMU then 3
/// accelerometer channels). The dataset must outlive its windows.
struct Window {
  const LabeledTrajectory* source = nullptr;
  std::size_t trajectory = 0;
  std::size_t start = 0;
  std::size_t length = 0;
  std::array<std::uint8_t, 2> label{};  // (imu, accelerometer) at the final sample

  std::size_t end_index() const { return start + length - 1; }
  /// Raw samples of channel c in [0, 6).
  std::span<const double> raw(std::size_t c) const;
  /// Channel-major (6 x length) values mapped by (v - mid) / half_range.
  void normalized(std::span<double> out) const;
  std::vector<double> normalized() const;
};

std::vector<Window> make_windows(const LabeledTrajectory& trajectory, std::size_t trajectory_index,
                                 std::size_t length, std::size_t stride);

/// Windows of every trajectory; a window never crosses trajectories.
std::vector<Window> make_windows(const LabeledDataset& dataset, std::size_t length,
                                 std::size_t stride);

}  // namespace stuckfdir
