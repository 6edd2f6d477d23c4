#include "stuckfdir/simkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "stuckfdir/error.hpp"
#include "stuckfdir/rng.hpp"

namespace stuckfdir {

std::string_view to_string(SensorKind kind) {
  return kind == SensorKind::Imu ? "imu" : "accelerometer";
}

SensorKind sensor_kind_from_string(std::string_view name) {
  if (name == "imu") return SensorKind::Imu;
  if (name == "accelerometer" || name == "acc") return SensorKind::Accelerometer;
  throw UsageError("unknown sensor kind '" + std::string(name) + "'");
}

void SensorTrace::validate() const {
  if (channels[0].empty()) throw DataError("sensor trace is empty");
  for (std::size_t c = 0; c < 3; ++c) {
    if (channels[c].size() != channels[0].size())
      throw DataError("sensor trace channels have different lengths");
    if (!(nominal_range[c].low < nominal_range[c].high))
      throw DataError("nominal range low must be below high");
  }
  if (!(sample_rate_hz > 0.0)) throw DataError("sample rate must be positive");
  if (!(noise_sigma >= 0.0)) throw DataError("noise sigma must be nonnegative");
}

SensorProfile default_imu_profile() {
  SensorProfile p;
  p.nominal_range = {-0.5, 0.5};
  p.noise_sigma = 0.005 * p.nominal_range.half_width();
  p.amplitude = {0.02, 0.08};
  p.frequency_hz = {0.004, 0.04};
  p.bias = {-0.1, 0.1};
  return p;
}

SensorProfile default_accelerometer_profile() {
  SensorProfile p;
  p.nominal_range = {-0.5, 0.5};
  p.noise_sigma = 0.03 * p.nominal_range.half_width();
  p.amplitude = {0.05, 0.15};
  p.frequency_hz = {0.04, 0.12};
  p.bias = {-0.1, 0.1};
  return p;
}

std::size_t TrajectoryConfig::num_samples() const {
  return static_cast<std::size_t>(std::floor(duration_s * sample_rate_hz + 1e-9));
}

namespace {

void validate_profile(const SensorProfile& p, std::string_view name) {
  const std::string n(name);
  if (!(p.nominal_range.low < p.nominal_range.high))
    throw UsageError(n + ": nominal range must be nonempty");
  if (!p.amplitude.valid() || !p.frequency_hz.valid() || !p.bias.valid())
    throw UsageError(n + ": amplitude, frequency and bias intervals must be nonempty");
  if (p.amplitude.lo < 0.0 || p.frequency_hz.lo < 0.0)
    throw UsageError(n + ": amplitude and frequency must be nonnegative");
  if (!(p.noise_sigma >= 0.0)) throw UsageError(n + ": noise sigma must be nonnegative");
  if (!(p.confine_fraction > 0.0 && p.confine_fraction <= 1.0))
    throw UsageError(n + ": confine fraction must lie in (0, 1]");
  const double max_bias = std::max(std::abs(p.bias.lo), std::abs(p.bias.hi));
  if (max_bias > p.nominal_range.half_width())
    throw UsageError(n + ": bias interval leaves the nominal range");
}

}  // namespace

void TrajectoryConfig::validate() const {
  if (!(duration_s > 0.0)) throw UsageError("duration_s must be positive");
  if (!(sample_rate_hz > 0.0)) throw UsageError("sample_rate_hz must be positive");
  if (!num_modes.valid() || num_modes.lo < 0) throw UsageError("num_modes interval is empty");
  if (num_samples() < std::max<std::size_t>(min_samples, 1))
    throw UsageError("trajectory shorter than one window (" + std::to_string(num_samples()) +
                     " < " + std::to_string(min_samples) + " samples)");
  validate_profile(imu, "imu");
  validate_profile(accelerometer, "accelerometer");
}

SensorTrace generate_trajectory(const TrajectoryConfig& cfg, SensorKind kind) {
  cfg.validate();
  const SensorProfile& prof = cfg.profile(kind);
  Rng rng(derive_seed(cfg.seed, kind == SensorKind::Imu ? "trajectory/imu" : "trajectory/acc"));

  SensorTrace trace;
  trace.kind = kind;
  trace.sample_rate_hz = cfg.sample_rate_hz;
  trace.noise_sigma = prof.noise_sigma;
  trace.nominal_range.fill(prof.nominal_range);

  const std::size_t n = cfg.num_samples();
  const double mid = prof.nominal_range.mid();
  const double budget = prof.confine_fraction * prof.nominal_range.half_width();

  struct Mode {
    double amplitude, omega, phase;
  };
  for (auto& channel : trace.channels) {
    const auto k = static_cast<int>(rng.uniform_int(cfg.num_modes.lo, cfg.num_modes.hi));
    std::vector<Mode> modes;
    double amp_sum = 0.0;
    for (int m = 0; m < k; ++m) {
      Mode mode{rng.uniform(prof.amplitude.lo, prof.amplitude.hi),
                2.0 * std::numbers::pi * rng.uniform(prof.frequency_hz.lo, prof.frequency_hz.hi),
                2.0 * std::numbers::pi * rng.uniform()};
      amp_sum += mode.amplitude;
      modes.push_back(mode);
    }
    // Bias is an offset from the range midpoint.
    double bias = rng.uniform(prof.bias.lo, prof.bias.hi);
    bias = std::clamp(bias, -budget, budget);
    const double room = budget - std::abs(bias);
    if (amp_sum > room) {
      const double scale = amp_sum > 0.0 ? room / amp_sum : 0.0;
      for (auto& mode : modes) mode.amplitude *= scale;
    }

    channel.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / cfg.sample_rate_hz;
      double v = mid + bias;
      for (const auto& mode : modes) v += mode.amplitude * std::sin(mode.omega * t + mode.phase);
      channel[i] = v;
    }
  }
  return trace;
}

SensorTrace add_measurement_noise(const SensorTrace& trace, std::uint64_t seed) {
  trace.validate();
  SensorTrace out = trace;
  if (trace.noise_sigma == 0.0) return out;
  Rng rng(seed);
  for (auto& channel : out.channels)
    for (auto& v : channel) v += trace.noise_sigma * rng.gaussian();
  return out;
}

std::string trace_to_csv(const SensorTrace& trace) {
  trace.validate();
  std::string out = "t,ch0,ch1,ch2\n";
  char buf[128];
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const double t = static_cast<double>(i) / trace.sample_rate_hz;
    std::snprintf(buf, sizeof buf, "%.6f,%.8e,%.8e,%.8e\n", t, trace.channels[0][i],
                  trace.channels[1][i], trace.channels[2][i]);
    out += buf;
  }
  return out;
}

}  // namespace stuckfdir
