#include "stuckfdir/featext.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "stuckfdir/error.hpp"

namespace stuckfdir {

std::vector<double> derivative(std::span<const double> channel, double sample_rate_hz) {
  if (channel.empty()) throw DataError("derivative of an empty channel");
  std::vector<double> d(channel.size(), 0.0);
  for (std::size_t t = 1; t < channel.size(); ++t)
    d[t] = (channel[t] - channel[t - 1]) * sample_rate_hz;
  return d;
}

std::vector<double> trailing_variance(std::span<const double> channel, std::size_t window) {
  if (window == 0) throw UsageError("variance window must be positive");
  std::vector<double> out(channel.size(), 0.0);
  for (std::size_t t = 0; t < channel.size(); ++t) {
    const std::size_t first = t + 1 >= window ? t + 1 - window : 0;
    const auto n = static_cast<double>(t - first + 1);
    // Deviations from the newest sample, so identical samples give exactly 0.
    double mean = 0.0;
    for (std::size_t i = first; i <= t; ++i) mean += channel[i] - channel[t];
    mean /= n;
    double var = 0.0;
    for (std::size_t i = first; i <= t; ++i) {
      const double dev = channel[i] - channel[t] - mean;
      var += dev * dev;
    }
    out[t] = var / n;
  }
  return out;
}

double calibration_scale(const SensorTrace& nominal) {
  nominal.validate();
  if (nominal.size() < 2) throw UsageError("calibration trace needs at least two samples");
  std::vector<double> mags;
  mags.reserve(3 * (nominal.size() - 1));
  for (const auto& ch : nominal.channels) {
    const auto d = derivative(ch, nominal.sample_rate_hz);
    for (std::size_t t = 1; t < d.size(); ++t) mags.push_back(std::abs(d[t]));
  }
  const auto mid = mags.begin() + static_cast<std::ptrdiff_t>(mags.size() / 2);
  std::nth_element(mags.begin(), mid, mags.end());
  double median = *mid;
  if (mags.size() % 2 == 0) {
    const double lower = *std::max_element(mags.begin(), mid);
    median = 0.5 * (median + lower);
  }
  if (!(median > 0.0))
    throw UsageError("calibration scale is zero: calibration trace is constant");
  return median;
}

std::vector<FeatureFrame> extract_features(const SensorTrace& trace, double scale,
                                           std::size_t variance_window) {
  trace.validate();
  if (!(scale > 0.0)) throw UsageError("calibration scale must be positive");
  std::vector<FeatureFrame> frames(trace.size());
  for (std::size_t c = 0; c < 3; ++c) {
    const auto& ch = trace.channels[c];
    const auto d = derivative(ch, trace.sample_rate_hz);
    const auto var = trailing_variance(ch, variance_window);
    const Range& r = trace.nominal_range[c];
    for (std::size_t t = 0; t < ch.size(); ++t) {
      auto& f = frames[t].channels[c];
      f.value = ch[t];
      f.derivative = d[t];
      f.peak_score = std::abs(d[t]) / scale;
      f.out_of_range = r.contains(ch[t]) ? 0 : 1;
      frames[t].min_trailing_variance =
          c == 0 ? var[t] : std::min(frames[t].min_trailing_variance, var[t]);
    }
  }
  return frames;
}

const std::vector<std::string>& tree_feature_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (int c = 0; c < 3; ++c) {
      const std::string suffix = "_ch" + std::to_string(c);
      n.push_back("value" + suffix);
      n.push_back("derivative" + suffix);
      n.push_back("peak_score" + suffix);
      n.push_back("out_of_range" + suffix);
    }
    n.push_back("min_trailing_variance");
    return n;
  }();
  return names;
}

void FeatureMatrix::append_row(std::span<const double> values) {
  if (values.size() != cols) throw DataError("feature row has the wrong width");
  data.insert(data.end(), values.begin(), values.end());
  ++rows;
}

void flatten_frame(const FeatureFrame& frame, std::span<double> out) {
  if (out.size() != kTreeFeatureCount) throw DataError("feature row has the wrong width");
  std::size_t k = 0;
  for (const auto& ch : frame.channels) {
    out[k++] = ch.value;
    out[k++] = ch.derivative;
    out[k++] = ch.peak_score;
    out[k++] = ch.out_of_range;
  }
  out[k] = frame.min_trailing_variance;
}

FeatureMatrix to_feature_matrix(std::span<const FeatureFrame> frames) {
  FeatureMatrix m;
  m.names = tree_feature_names();
  m.cols = kTreeFeatureCount;
  m.rows = frames.size();
  m.data.resize(m.rows * m.cols);
  for (std::size_t i = 0; i < frames.size(); ++i)
    flatten_frame(frames[i], {m.data.data() + i * m.cols, m.cols});
  return m;
}

std::string features_to_csv(std::span<const FeatureFrame> frames, double sample_rate_hz) {
  std::string out = "t";
  for (const auto& n : tree_feature_names()) out += "," + n;
  out += '\n';
  std::array<double, kTreeFeatureCount> row{};
  char buf[64];
  for (std::size_t i = 0; i < frames.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6f", static_cast<double>(i) / sample_rate_hz);
    out += buf;
    flatten_frame(frames[i], row);
    for (double v : row) {
      std::snprintf(buf, sizeof buf, ",%.8e", v);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

std::span<const double> Window::raw(std::size_t c) const {
  const SensorTrace& tr = c < 3 ? source->imu : source->acc;
  return std::span<const double>(tr.channels[c % 3]).subspan(start, length);
}

void Window::normalized(std::span<double> out) const {
  if (out.size() != kWindowChannels * length) throw DataError("window buffer has the wrong size");
  for (std::size_t c = 0; c < kWindowChannels; ++c) {
    const SensorTrace& tr = c < 3 ? source->imu : source->acc;
    const Range& r = tr.nominal_range[c % 3];
    const double mid = r.mid();
    const double inv_half = 1.0 / r.half_width();
    const auto src = raw(c);
    for (std::size_t i = 0; i < length; ++i) out[c * length + i] = (src[i] - mid) * inv_half;
  }
}

std::vector<double> Window::normalized() const {
  std::vector<double> out(kWindowChannels * length);
  normalized(out);
  return out;
}

std::vector<Window> make_windows(const LabeledTrajectory& trajectory, std::size_t trajectory_index,
                                 std::size_t length, std::size_t stride) {
  if (length < 2) throw UsageError("window length must be at least 2");
  if (stride < 1 || stride > length) throw UsageError("stride must lie in [1, window length]");
  const std::size_t n = trajectory.size();
  if (n < length)
    throw DataError("trajectory of " + std::to_string(n) + " samples is shorter than the window (" +
                    std::to_string(length) + ")");
  std::vector<Window> out;
  out.reserve((n - length) / stride + 1);
  for (std::size_t s = 0; s + length <= n; s += stride) {
    Window w;
    w.source = &trajectory;
    w.trajectory = trajectory_index;
    w.start = s;
    w.length = length;
    w.label = {trajectory.imu_label.flags[s + length - 1],
               trajectory.acc_label.flags[s + length - 1]};
    out.push_back(w);
  }
  return out;
}

std::vector<Window> make_windows(const LabeledDataset& dataset, std::size_t length,
                                 std::size_t stride) {
  std::vector<Window> out;
  for (std::size_t t = 0; t < dataset.trajectories.size(); ++t) {
    auto w = make_windows(dataset.trajectories[t], t, length, stride);
    out.insert(out.end(), w.begin(), w.end());
  }
  return out;
}

}  // namespace stuckfdir
