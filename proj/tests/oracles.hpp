#pragma once

// Independent reference computations used by the unit and acceptance tests.
// None of these call into the code paths they check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "stuckfdir/convnet.hpp"
#include "stuckfdir/evalkit.hpp"
#include "stuckfdir/featext.hpp"
#include "stuckfdir/gbtree.hpp"

namespace oracle {

/// Elementwise backward difference.
inline std::vector<double> diff(const std::vector<double>& x, double rate) {
  std::vector<double> d(x.size(), 0.0);
  for (std::size_t t = 1; t < x.size(); ++t) d[t] = (x[t] - x[t - 1]) * rate;
  return d;
}

struct Split {
  std::size_t feature = 0;
  double threshold = 0.0;
  double gain = 0.0;
};

/// Every (feature, midpoint) candidate, with left/right sums recomputed from
/// scratch per candidate (O(n^2 f)). Selection: maximum gain; among gains
/// within the shared tie tolerance of it, the lowest (feature, threshold).
inline std::optional<Split> best_split(const stuckfdir::FeatureMatrix& x,
                                       const std::vector<std::size_t>& rows,
                                       const std::vector<double>& g, const std::vector<double>& h,
                                       double lambda, double gamma, double min_child_weight) {
  if (rows.size() < 2) return std::nullopt;
  double gt = 0, ht = 0, gabs = 0;
  for (auto r : rows) {
    gt += g[r];
    ht += h[r];
    gabs += std::abs(g[r]);
  }
  const double tol = stuckfdir::kGainTieTolerance * (1.0 + gabs * gabs / (ht + lambda));
  std::vector<Split> cands;
  for (std::size_t f = 0; f < x.cols; ++f) {
    std::vector<double> vals;
    for (auto r : rows) vals.push_back(x.at(r, f));
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
      double thr = vals[i] + 0.5 * (vals[i + 1] - vals[i]);
      if (!(thr > vals[i])) thr = vals[i + 1];
      double gl = 0, hl = 0, gr = 0, hr = 0;
      for (auto r : rows) {
        if (x.at(r, f) < thr) {
          gl += g[r];
          hl += h[r];
        } else {
          gr += g[r];
          hr += h[r];
        }
      }
      if (hl < min_child_weight || hr < min_child_weight) continue;
      const double gain = 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) -
                                 (gl + gr) * (gl + gr) / (hl + hr + lambda)) -
                          gamma;
      cands.push_back({f, thr, gain});
    }
  }
  if (cands.empty()) return std::nullopt;
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& c : cands) best = std::max(best, c.gain);
  if (!(best > tol)) return std::nullopt;
  for (const auto& c : cands)
    if (c.gain >= best - tol) return c;
  return std::nullopt;
}

/// Central differences on float parameters, dividing by the realized step.
inline std::vector<double> finite_difference_gradient(const stuckfdir::CnnModel& model,
                                                      std::span<const double> input,
                                                      const std::array<std::uint8_t, 2>& labels,
                                                      double eps = 1e-4) {
  stuckfdir::CnnModel m = model;
  std::vector<double> grad(m.params.size());
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const float orig = m.params[i];
    const float plus = static_cast<float>(static_cast<double>(orig) + eps);
    const float minus = static_cast<float>(static_cast<double>(orig) - eps);
    m.params[i] = plus;
    const double lp = stuckfdir::bce_loss(stuckfdir::forward(m, input).prob, labels);
    m.params[i] = minus;
    const double lm = stuckfdir::bce_loss(stuckfdir::forward(m, input).prob, labels);
    m.params[i] = orig;
    grad[i] = (lp - lm) / (static_cast<double>(plus) - static_cast<double>(minus));
  }
  return grad;
}

/// True when forward and backward one-sided differences agree for every
/// parameter, i.e. no perturbation of size eps crosses a ReLU or pooling kink.
inline bool smooth_along_parameters(const stuckfdir::CnnModel& model,
                                    std::span<const double> input,
                                    const std::array<std::uint8_t, 2>& labels, double eps) {
  stuckfdir::CnnModel m = model;
  const double l0 = stuckfdir::bce_loss(stuckfdir::forward(m, input).prob, labels);
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const float orig = m.params[i];
    const float plus = static_cast<float>(static_cast<double>(orig) + eps);
    const float minus = static_cast<float>(static_cast<double>(orig) - eps);
    m.params[i] = plus;
    const double lp = stuckfdir::bce_loss(stuckfdir::forward(m, input).prob, labels);
    m.params[i] = minus;
    const double lm = stuckfdir::bce_loss(stuckfdir::forward(m, input).prob, labels);
    m.params[i] = orig;
    const double up = (lp - l0) / (static_cast<double>(plus) - static_cast<double>(orig));
    const double down = (l0 - lm) / (static_cast<double>(orig) - static_cast<double>(minus));
    // Curvature of a smooth loss changes the slopes by O(eps); a kink by O(1).
    if (std::abs(up - down) > 1e-2 * std::max(1.0, std::abs(up) + std::abs(down))) return false;
  }
  return true;
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

/// Confusion counts by direct enumeration.
inline stuckfdir::ConfusionCounts count(const std::vector<std::uint8_t>& pred,
                                        const std::vector<std::uint8_t>& label) {
  stuckfdir::ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    c.tp += pred[i] == 1 && label[i] == 1;
    c.fp += pred[i] == 1 && label[i] == 0;
    c.fn += pred[i] == 0 && label[i] == 1;
    c.tn += pred[i] == 0 && label[i] == 0;
  }
  return c;
}

}  // namespace oracle
