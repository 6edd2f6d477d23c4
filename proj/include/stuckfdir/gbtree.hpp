#pragma once

// Single-round gradient-boosted decision tree under the binary logistic
// objective (exact greedy split search).
//
// With one boosting round the gradient statistics are taken at the prior
// p0 = sigmoid(base_score) and never refreshed, so training reduces to
// growing one regularized regression tree on (g, h) = (p0 - y, p0 (1 - p0)).

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stuckfdir/featext.hpp"

namespace stuckfdir {

struct GradPair {
  double gradient = 0.0;
  double hessian = 0.0;
};

inline constexpr double kProbClamp = 1e-7;

/// Gradient and hessian of binary cross-entropy w.r.t. the logit.
/// `p` is clamped to [1e-7, 1 - 1e-7].
GradPair logistic_stats(std::uint8_t label, double p);

double sigmoid(double x);
double logit(double p);

struct SplitParams {
  double lambda = 1.0;
  double gamma = 0.0;
  double min_child_weight = 1.0;
};

/// 1/2 [GL^2/(HL+l) + GR^2/(HR+l) - (GL+GR)^2/(HL+HR+l)] - gamma
double split_gain(double gl, double hl, double gr, double hr, double lambda, double gamma);

/// Gains closer than this (scaled by 1 + sum|g|^2/(H+lambda)) count as ties.
inline constexpr double kGainTieTolerance = 1e-9;

struct SplitCandidate {
  std::size_t feature = 0;
  double threshold = 0.0;  // rows with x < threshold (or NaN) go left
  double gain = 0.0;
};

/// Exhaustive scan of midpoints between sorted distinct values of every
/// feature over `rows`. Among candidates honoring min_child_weight whose gain
/// is within tolerance of the maximum, returns the lowest (feature, threshold).
/// Returns nothing when fewer than two rows or the best gain is <= 0.
/// `gradients` and `hessians` are indexed by row id.
std::optional<SplitCandidate> best_split(const FeatureMatrix& x, std::span<const std::size_t> rows,
                                         std::span<const double> gradients,
                                         std::span<const double> hessians,
                                         const SplitParams& params);

struct TreeHyper {
  int num_trees = 1;
  int max_depth = 6;
  double lambda = 1.0;
  double gamma = 0.0;
  double min_child_weight = 1.0;
  double decision_threshold = 0.5;

  SplitParams split_params() const { return {lambda, gamma, min_child_weight}; }
  void validate() const;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  bool default_left = true;  // route for missing (NaN) values
  int left = -1;
  int right = -1;
  double weight = 0.0;  // leaf logit contribution
  int depth = 0;

  bool is_leaf() const { return feature < 0; }
};

struct TreeModel {
  std::vector<TreeNode> nodes;  // nodes[0] is the root, preorder
  double base_score = 0.0;
  TreeHyper hyper;
  std::vector<std::string> feature_names;

  /// Longest root-to-leaf path counted in internal nodes.
  int depth() const;
  std::size_t leaf_count() const;
  /// Index of the leaf a row is routed to.
  std::size_t route(std::span<const double> row) const;
};

struct TreePrediction {
  double probability = 0.5;
  std::uint8_t flag = 0;
};

/// Grows one tree depth-first from base_score = logit(positive fraction).
/// Throws TrainingError on an empty or single-class dataset.
TreeModel train_tree(const FeatureMatrix& x, std::span<const std::uint8_t> labels,
                     const TreeHyper& hyper);

TreePrediction predict(const TreeModel& model, std::span<const double> row);
TreePrediction predict(const TreeModel& model, const FeatureFrame& frame);

struct Rule {
  std::vector<std::string> conditions;
  double weight = 0.0;
  double probability = 0.0;
  bool fault = false;
  std::string text;
};

struct RuleExport {
  std::vector<Rule> rules;  // one per leaf, left to right
  std::map<std::string, std::size_t> split_counts;

  std::string to_text() const;
};

RuleExport export_rules(const TreeModel& model);

/// JSON with node list, base_score, hyperparameters and feature names.
std::string tree_to_json(const TreeModel& model);
TreeModel tree_from_json(const std::string& text);

}  // namespace stuckfdir
