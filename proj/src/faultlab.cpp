#include "stuckfdir/faultlab.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stuckfdir/error.hpp"
#include "stuckfdir/rng.hpp"

namespace stuckfdir {

std::size_t FaultCase::index() const {
  return (kind == FaultKind::StuckAtRandom ? 4u : 0u) + (all_axes ? 2u : 0u) +
         (noise_on_top ? 1u : 0u);
}

FaultCase FaultCase::from_index(std::size_t i) {
  if (i >= kCount) throw DataError("fault case index out of range");
  return {(i & 4u) ? FaultKind::StuckAtRandom : FaultKind::StuckAtLast, (i & 2u) != 0,
          (i & 1u) != 0};
}

std::string FaultCase::name() const {
  std::string s = kind == FaultKind::StuckAtLast ? "last" : "random";
  s += all_axes ? "/all" : "/single";
  s += noise_on_top ? "/noise" : "/clean";
  return s;
}

FaultCase FaultCase::from_name(const std::string& name) {
  for (std::size_t i = 0; i < kCount; ++i)
    if (from_index(i).name() == name) return from_index(i);
  throw DataError("unknown fault case '" + name + "'");
}

void FaultSpec::validate(std::size_t length) const {
  if (axis && (*axis < 0 || *axis > 2)) throw DataError("fault axis must be 0, 1 or 2");
  if (duration < 1) throw DataError("fault duration must be at least one sample");
  if (kind == FaultKind::StuckAtLast && start_index < 1)
    throw DataError("stuck-at-last fault cannot start at index 0");
  if (start_index > length || duration > length - start_index)
    throw DataError("fault interval [" + std::to_string(start_index) + ", " +
                    std::to_string(start_index + duration) + ") exceeds trace length " +
                    std::to_string(length));
}

FaultLabel FaultLabel::nominal(std::size_t length) {
  FaultLabel l;
  l.flags.assign(length, 0);
  l.meta.assign(length, std::nullopt);
  return l;
}

std::size_t FaultLabel::positives() const {
  return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), std::uint8_t{1}));
}

void apply_fault(SensorTrace& trace, FaultLabel& label, const FaultSpec& spec,
                 std::uint64_t seed) {
  trace.validate();
  spec.validate(trace.size());
  if (label.size() != trace.size()) throw DataError("label length differs from trace length");

  Rng rng(seed);
  const FaultCase fc = spec.fault_case();
  for (int c = 0; c < 3; ++c) {
    if (!spec.affects(c)) continue;
    auto& ch = trace.channels[static_cast<std::size_t>(c)];
    const double held = spec.kind == FaultKind::StuckAtLast
                            ? ch[spec.start_index - 1]
                            : spec.stuck_value[static_cast<std::size_t>(c)];
    for (std::size_t i = spec.start_index; i < spec.end_index(); ++i) {
      ch[i] = held;
      if (spec.noise_on_top && trace.noise_sigma > 0.0) ch[i] += trace.noise_sigma * rng.gaussian();
    }
  }
  for (std::size_t i = spec.start_index; i < spec.end_index(); ++i) {
    label.flags[i] = 1;
    label.meta[i] = fc;
  }
}

std::pair<SensorTrace, FaultLabel> inject_fault(const SensorTrace& trace, const FaultSpec& spec,
                                                std::uint64_t seed) {
  SensorTrace out = trace;
  FaultLabel label = FaultLabel::nominal(trace.size());
  apply_fault(out, label, spec, seed);
  return {std::move(out), std::move(label)};
}

void InjectionPolicy::validate() const {
  if (!faults_per_trajectory.valid() || faults_per_trajectory.lo < 0)
    throw UsageError("faults_per_trajectory must be a nonempty nonnegative interval");
  if (!duration.valid() || duration.lo < 1)
    throw UsageError("fault duration interval must be nonempty and at least 1");
  if (!(target_fault_fraction > 0.0 && target_fault_fraction < 1.0))
    throw UsageError("target_fault_fraction must lie in (0, 1)");
  double sum = 0.0;
  for (double w : mixture) {
    if (!(w >= 0.0)) throw UsageError("mixture weights must be nonnegative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw UsageError("mixture weights must sum to 1");
  if (!(stuck_value_span > 0.0)) throw UsageError("stuck_value_span must be positive");
}

std::size_t LabeledDataset::total_samples() const {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += t.size();
  return n;
}

double LabeledDataset::faulted_fraction(SensorKind kind) const {
  std::size_t pos = 0;
  const std::size_t n = total_samples();
  for (const auto& t : trajectories) pos += t.label(kind).positives();
  return n == 0 ? 0.0 : static_cast<double>(pos) / static_cast<double>(n);
}

namespace {

// Splits `total` into parts.size() integer shares proportional to random
// weights, each share capped by `capacity`. Requires total <= sum(capacity).
std::vector<std::size_t> random_allocation(std::size_t total, std::size_t parts,
                                           std::size_t capacity, Rng& rng) {
  std::vector<std::size_t> share(parts, 0);
  if (parts == 0 || total == 0) return share;
  std::vector<double> w(parts);
  for (auto& x : w) x = rng.uniform() + 1e-3;
  const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < parts; ++i) {
    share[i] = std::min(capacity, static_cast<std::size_t>(std::floor(
                                      static_cast<double>(total) * w[i] / wsum)));
    assigned += share[i];
  }
  for (std::size_t i = 0; assigned < total; i = (i + 1) % parts) {
    if (share[i] < capacity) {
      ++share[i];
      ++assigned;
    }
  }
  return share;
}

FaultCase draw_case(const InjectionPolicy& policy, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < FaultCase::kCount; ++i) {
    if (policy.mixture[i] <= 0.0) continue;
    last_positive = i;
    acc += policy.mixture[i];
    if (u < acc) return FaultCase::from_index(i);
  }
  return FaultCase::from_index(last_positive);
}

}  // namespace

std::vector<FaultSpec> plan_faults(const InjectionPolicy& policy, const SensorTrace& trace,
                                   std::uint64_t seed) {
  policy.validate();
  trace.validate();
  if (policy.faults_per_trajectory.hi == 0) return {};

  const std::size_t n = trace.size();
  const auto dmin = static_cast<std::size_t>(policy.duration.lo);
  const auto dmax = static_cast<std::size_t>(policy.duration.hi);
  const std::size_t sep = policy.min_separation;
  const auto target =
      static_cast<std::size_t>(std::llround(policy.target_fault_fraction * static_cast<double>(n)));

  // Smallest footprint of k faults: k minimal durations, k-1 gaps, and the
  // leading sample a stuck-at-last fault needs.
  auto min_footprint = [&](std::size_t k) { return k * dmin + (k - 1) * sep + 1; };

  std::vector<std::size_t> fits, balanced;
  for (int ki = std::max(policy.faults_per_trajectory.lo, 1); ki <= policy.faults_per_trajectory.hi;
       ++ki) {
    const auto k = static_cast<std::size_t>(ki);
    if (min_footprint(k) > n) continue;
    fits.push_back(k);
    if (k * dmin <= target && target <= k * dmax && target + (k - 1) * sep + 1 <= n)
      balanced.push_back(k);
  }
  if (fits.empty())
    throw UsageError("injection policy infeasible: " +
                     std::to_string(std::max(policy.faults_per_trajectory.lo, 1)) +
                     " fault(s) of >= " + std::to_string(dmin) + " samples with separation " +
                     std::to_string(sep) + " do not fit in " + std::to_string(n) + " samples");

  Rng rng(seed);
  std::size_t k;
  if (!balanced.empty()) {
    k = balanced[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(balanced.size()) - 1))];
  } else {
    // Closest achievable fraction.
    auto miss = [&](std::size_t kk) {
      const std::size_t hi = std::min(kk * dmax, n - 1 - (kk - 1) * sep);
      const std::size_t lo = kk * dmin;
      return target < lo ? lo - target : (target > hi ? target - hi : 0);
    };
    k = *std::min_element(fits.begin(), fits.end(),
                          [&](std::size_t a, std::size_t b) { return miss(a) < miss(b); });
  }

  const std::size_t room = n - 1 - (k - 1) * sep;
  const std::size_t total = std::clamp(target, k * dmin, std::min(k * dmax, room));
  const auto extra = random_allocation(total - k * dmin, k, dmax - dmin, rng);
  const std::size_t slack = room - total;
  const auto gaps = random_allocation(slack, k + 1, slack, rng);

  std::vector<FaultSpec> specs;
  std::size_t pos = 1 + gaps[0];
  for (std::size_t i = 0; i < k; ++i) {
    const FaultCase fc = draw_case(policy, rng);
    FaultSpec spec;
    spec.kind = fc.kind;
    spec.noise_on_top = fc.noise_on_top;
    if (!fc.all_axes) spec.axis = static_cast<int>(rng.uniform_int(0, 2));
    spec.start_index = pos;
    spec.duration = dmin + extra[i];
    if (spec.kind == FaultKind::StuckAtRandom) {
      for (std::size_t c = 0; c < 3; ++c) {
        const Range& r = trace.nominal_range[c];
        const double half = policy.stuck_value_span * r.half_width();
        spec.stuck_value[c] = rng.uniform(r.mid() - half, r.mid() + half);
      }
    }
    specs.push_back(spec);
    pos += spec.duration + sep + gaps[i + 1];
  }
  return specs;
}

LabeledDataset build_dataset(const InjectionPolicy& policy,
                             const std::vector<std::pair<SensorTrace, SensorTrace>>& traces) {
  policy.validate();
  if (traces.empty()) throw UsageError("build_dataset needs at least one trajectory");

  LabeledDataset ds;
  ds.trajectories.reserve(traces.size());
  for (std::size_t t = 0; t < traces.size(); ++t) {
    const auto& [imu, acc] = traces[t];
    imu.validate();
    acc.validate();
    if (imu.size() != acc.size())
      throw DataError("IMU and accelerometer traces of trajectory " + std::to_string(t) +
                      " differ in length");
    LabeledTrajectory lt{imu, acc, FaultLabel::nominal(imu.size()),
                         FaultLabel::nominal(acc.size())};
    for (SensorKind kind : {SensorKind::Imu, SensorKind::Accelerometer}) {
      const std::uint64_t base =
          derive_seed(derive_seed(policy.seed, t), kind == SensorKind::Imu ? "imu" : "acc");
      SensorTrace& trace = kind == SensorKind::Imu ? lt.imu : lt.acc;
      FaultLabel& label = kind == SensorKind::Imu ? lt.imu_label : lt.acc_label;
      const auto specs = plan_faults(policy, trace, derive_seed(base, "plan"));
      for (std::size_t f = 0; f < specs.size(); ++f) {
        apply_fault(trace, label, specs[f], derive_seed(base, f + 1));
        ds.faults.push_back({t, kind, specs[f]});
      }
    }
    ds.trajectories.push_back(std::move(lt));
  }
  return ds;
}

}  // namespace stuckfdir
