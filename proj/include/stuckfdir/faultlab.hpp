#pragma once

// Stuck-value fault injection and per-sample ground truth.
//
// A fault holds one or all three axes of a sensor at a constant value over
// [start_index, start_index + duration): either the sample preceding the
// fault (stuck at last) or an arbitrary value (stuck at random), optionally
// with fresh measurement noise on top of the held value. Labels are per
// sensor, not per axis.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stuckfdir/simkit.hpp"

namespace stuckfdir {

enum class FaultKind { StuckAtLast, StuckAtRandom };

/// One of the eight (kind, axes, noise) combinations.
struct FaultCase {
  FaultKind kind = FaultKind::StuckAtLast;
  bool all_axes = false;
  bool noise_on_top = false;

  static constexpr std::size_t kCount = 8;
  /// Bit layout: kind (4) | all_axes (2) | noise_on_top (1).
  std::size_t index() const;
  static FaultCase from_index(std::size_t i);
  /// e.g. "last/single/noise", "random/all/clean"
  std::string name() const;
  static FaultCase from_name(const std::string& name);

  friend bool operator==(const FaultCase&, const FaultCase&) = default;
};

struct FaultSpec {
  FaultKind kind = FaultKind::StuckAtLast;
  std::optional<int> axis;  // empty: all three axes
  bool noise_on_top = false;
  std::size_t start_index = 1;
  std::size_t duration = 1;
  std::array<double, 3> stuck_value{};  // read for StuckAtRandom only

  FaultCase fault_case() const { return {kind, !axis.has_value(), noise_on_top}; }
  bool affects(int channel) const { return !axis || *axis == channel; }
  std::size_t end_index() const { return start_index + duration; }
  /// Throws DataError if the interval does not fit a trace of `length` samples.
  void validate(std::size_t length) const;
};

struct FaultLabel {
  std::vector<std::uint8_t> flags;
  std::vector<std::optional<FaultCase>> meta;  // engaged iff flag == 1

  static FaultLabel nominal(std::size_t length);
  std::size_t size() const { return flags.size(); }
  std::size_t positives() const;
};

/// Returns the faulted trace and a label flagging exactly the fault interval.
std::pair<SensorTrace, FaultLabel> inject_fault(const SensorTrace& trace, const FaultSpec& spec,
                                                std::uint64_t seed);

/// In-place variant; merges the fault into an existing label.
void apply_fault(SensorTrace& trace, FaultLabel& label, const FaultSpec& spec, std::uint64_t seed);

struct InjectionPolicy {
  std::uint64_t seed = 0;
  IntInterval faults_per_trajectory{1, 6};
  IntInterval duration{50, 600};
  double target_fault_fraction = 0.5;
  std::array<double, FaultCase::kCount> mixture{0.125, 0.125, 0.125, 0.125,
                                                0.125, 0.125, 0.125, 0.125};
  /// Minimum gap between consecutive faults of one sensor.
  std::size_t min_separation = kDefaultWindowLength;
  /// StuckAtRandom values are uniform over mid +/- span * half range.
  double stuck_value_span = 2.0;

  void validate() const;
};

struct LabeledTrajectory {
  SensorTrace imu;
  SensorTrace acc;
  FaultLabel imu_label;
  FaultLabel acc_label;

  std::size_t size() const { return imu.size(); }
  const SensorTrace& trace(SensorKind k) const { return k == SensorKind::Imu ? imu : acc; }
  const FaultLabel& label(SensorKind k) const {
    return k == SensorKind::Imu ? imu_label : acc_label;
  }
};

struct InjectedFault {
  std::size_t trajectory = 0;
  SensorKind sensor = SensorKind::Imu;
  FaultSpec spec;
};

struct LabeledDataset {
  std::vector<LabeledTrajectory> trajectories;
  std::vector<InjectedFault> faults;

  std::size_t total_samples() const;
  double faulted_fraction(SensorKind kind) const;
};

/// Places non-overlapping fault intervals for one sensor of one trajectory.
/// Exposed for testing; build_dataset uses it internally.
std::vector<FaultSpec> plan_faults(const InjectionPolicy& policy, const SensorTrace& trace,
                                   std::uint64_t seed);

/// Injects policy-drawn faults into every (IMU, accelerometer) trace pair.
/// Throws UsageError when the policy cannot be satisfied.
LabeledDataset build_dataset(const InjectionPolicy& policy,
                             const std::vector<std::pair<SensorTrace, SensorTrace>>& traces);

}  // namespace stuckfdir
