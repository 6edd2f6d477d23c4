#pragma once

// Synthetic IMU / accelerometer telemetry.
//
// Each channel of a trajectory is a smooth base signal
//
//   x(t) = bias + sum_m A_m * sin(2*pi*f_m*t + phi_m)
//
// with the number of modes, amplitudes, frequencies, phases, and bias drawn
// from a seeded generator. Amplitudes are rescaled when needed so that
// |bias| + sum A_m never exceeds `confine_fraction` of the half range, which
// keeps the noise-free signal inside the nominal range.

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace stuckfdir {

inline constexpr std::size_t kDefaultWindowLength = 180;

enum class SensorKind { Imu, Accelerometer };

std::string_view to_string(SensorKind kind);
SensorKind sensor_kind_from_string(std::string_view name);

struct Range {
  double low = 0.0;
  double high = 0.0;

  double mid() const { return 0.5 * (low + high); }
  double half_width() const { return 0.5 * (high - low); }
  bool contains(double v) const { return v >= low && v <= high; }
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool valid() const { return lo <= hi; }
};

struct IntInterval {
  int lo = 0;
  int hi = 0;

  bool valid() const { return lo <= hi; }
};

/// One sensor's 3-axis time series.
struct SensorTrace {
  SensorKind kind = SensorKind::Imu;
  double sample_rate_hz = 10.0;
  std::array<std::vector<double>, 3> channels;
  std::array<Range, 3> nominal_range;
  double noise_sigma = 0.0;

  std::size_t size() const { return channels[0].size(); }

  /// Throws DataError when channel lengths differ, the trace is empty, or a
  /// range is inverted.
  void validate() const;
};

/// Signal statistics of one sensor kind.
struct SensorProfile {
  Range nominal_range;  // applied to all three channels
  double noise_sigma = 0.0;
  Interval amplitude;     // per mode, channel units
  Interval frequency_hz;  // per mode
  Interval bias;          // per channel, offset from the range midpoint
  double confine_fraction = 0.9;
};

/// IMU angular rates in rad/s. Noise is 0.5 % of the half range.
SensorProfile default_imu_profile();
/// Accelerometer in m/s^2. Noise is 3 % of the half range.
SensorProfile default_accelerometer_profile();

struct TrajectoryConfig {
  std::uint64_t seed = 0;
  double duration_s = 200.0;
  double sample_rate_hz = 10.0;
  IntInterval num_modes{3, 8};
  SensorProfile imu = default_imu_profile();
  SensorProfile accelerometer = default_accelerometer_profile();
  std::size_t min_samples = kDefaultWindowLength;

  const SensorProfile& profile(SensorKind kind) const {
    return kind == SensorKind::Imu ? imu : accelerometer;
  }
  /// floor(duration_s * sample_rate_hz)
  std::size_t num_samples() const;
  /// Throws UsageError on an invalid configuration.
  void validate() const;
};

/// Noise-free base signal; a deterministic function of (cfg, kind).
SensorTrace generate_trajectory(const TrajectoryConfig& cfg, SensorKind kind);

/// Adds i.i.d. N(0, noise_sigma^2) to every sample of every channel.
SensorTrace add_measurement_noise(const SensorTrace& trace, std::uint64_t seed);

/// CSV with header `t,ch0,ch1,ch2`; time with 6 decimals, values in
/// scientific notation with 9 significant digits.
std::string trace_to_csv(const SensorTrace& trace);

}  // namespace stuckfdir
