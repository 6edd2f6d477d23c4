#include "stuckfdir/gbtree.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>

#include <json.hpp>

#include "stuckfdir/error.hpp"

namespace stuckfdir {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logit(double p) {
  p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return std::log(p / (1.0 - p));
}

GradPair logistic_stats(std::uint8_t label, double p) {
  p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return {p - static_cast<double>(label), p * (1.0 - p)};
}

double split_gain(double gl, double hl, double gr, double hr, double lambda, double gamma) {
  const double g = gl + gr;
  const double h = hl + hr;
  return 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda)) - gamma;
}

namespace {

struct Candidate {
  std::size_t feature;
  double threshold;
  double gain;
};

double midpoint(double lo, double hi) {
  const double m = lo + 0.5 * (hi - lo);
  // Adjacent doubles can round the midpoint down onto `lo`.
  return m > lo ? m : hi;
}

}  // namespace

std::optional<SplitCandidate> best_split(const FeatureMatrix& x, std::span<const std::size_t> rows,
                                         std::span<const double> gradients,
                                         std::span<const double> hessians,
                                         const SplitParams& params) {
  if (rows.size() < 2) return std::nullopt;

  double g_total = 0.0, h_total = 0.0, g_abs = 0.0;
  for (std::size_t r : rows) {
    g_total += gradients[r];
    h_total += hessians[r];
    g_abs += std::abs(gradients[r]);
  }
  const double tol = kGainTieTolerance * (1.0 + g_abs * g_abs / (h_total + params.lambda));

  std::vector<Candidate> candidates;
  std::vector<std::pair<double, std::size_t>> sorted;
  sorted.reserve(rows.size());
  for (std::size_t f = 0; f < x.cols; ++f) {
    sorted.clear();
    double g_missing = 0.0, h_missing = 0.0;
    for (std::size_t r : rows) {
      const double v = x.at(r, f);
      if (std::isnan(v)) {
        g_missing += gradients[r];
        h_missing += hessians[r];
      } else {
        sorted.emplace_back(v, r);
      }
    }
    std::sort(sorted.begin(), sorted.end());
    double gl = g_missing, hl = h_missing;
    for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
      gl += gradients[sorted[i].second];
      hl += hessians[sorted[i].second];
      if (sorted[i].first == sorted[i + 1].first) continue;
      const double gr = g_total - gl;
      const double hr = h_total - hl;
      if (hl < params.min_child_weight || hr < params.min_child_weight) continue;
      candidates.push_back({f, midpoint(sorted[i].first, sorted[i + 1].first),
                            split_gain(gl, hl, gr, hr, params.lambda, params.gamma)});
    }
  }
  if (candidates.empty()) return std::nullopt;

  double max_gain = -std::numeric_limits<double>::infinity();
  for (const auto& c : candidates) max_gain = std::max(max_gain, c.gain);
  if (!(max_gain > tol)) return std::nullopt;
  // Candidates are already in (feature, threshold) order.
  for (const auto& c : candidates)
    if (c.gain >= max_gain - tol) return SplitCandidate{c.feature, c.threshold, c.gain};
  return std::nullopt;
}

void TreeHyper::validate() const {
  if (num_trees != 1) throw UsageError("only a single tree (num_trees = 1) is supported");
  if (max_depth < 0) throw UsageError("max_depth must be nonnegative");
  if (!(lambda >= 0.0) || !(gamma >= 0.0) || !(min_child_weight >= 0.0))
    throw UsageError("lambda, gamma and min_child_weight must be nonnegative");
  if (!(decision_threshold > 0.0 && decision_threshold < 1.0))
    throw UsageError("decision threshold must lie in (0, 1)");
}

int TreeModel::depth() const {
  int d = 0;
  for (const auto& n : nodes)
    if (n.is_leaf()) d = std::max(d, n.depth);
  return d;
}

std::size_t TreeModel::leaf_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

std::size_t TreeModel::route(std::span<const double> row) const {
  if (nodes.empty()) throw DataError("tree model has no nodes");
  std::size_t i = 0;
  while (!nodes[i].is_leaf()) {
    const TreeNode& n = nodes[i];
    const auto f = static_cast<std::size_t>(n.feature);
    const double v = f < row.size() ? row[f] : std::numeric_limits<double>::quiet_NaN();
    const bool left = std::isnan(v) ? n.default_left : v < n.threshold;
    i = static_cast<std::size_t>(left ? n.left : n.right);
  }
  return i;
}

TreeModel train_tree(const FeatureMatrix& x, std::span<const std::uint8_t> labels,
                     const TreeHyper& hyper) {
  hyper.validate();
  if (x.rows == 0) throw TrainingError("cannot train a tree on an empty dataset");
  if (labels.size() != x.rows) throw DataError("label count differs from feature rows");
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (positives == 0 || positives == x.rows)
    throw TrainingError("training labels contain a single class (" + std::to_string(positives) +
                        " positive of " + std::to_string(x.rows) + ")");

  TreeModel model;
  model.hyper = hyper;
  model.feature_names = x.names;
  model.base_score = logit(static_cast<double>(positives) / static_cast<double>(x.rows));
  const double p0 = sigmoid(model.base_score);

  std::vector<double> g(x.rows), h(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    const auto s = logistic_stats(labels[i], p0);
    g[i] = s.gradient;
    h[i] = s.hessian;
  }
  const SplitParams params = hyper.split_params();

  std::function<int(std::vector<std::size_t>, int)> grow = [&](std::vector<std::size_t> rows,
                                                               int depth) -> int {
    const int id = static_cast<int>(model.nodes.size());
    model.nodes.emplace_back();
    model.nodes[id].depth = depth;
    std::optional<SplitCandidate> split;
    if (depth < hyper.max_depth) split = best_split(x, rows, g, h, params);
    if (!split) {
      double gs = 0.0, hs = 0.0;
      for (std::size_t r : rows) {
        gs += g[r];
        hs += h[r];
      }
      model.nodes[id].weight = hs + hyper.lambda > 0.0 ? -gs / (hs + hyper.lambda) : 0.0;
      return id;
    }
    std::vector<std::size_t> left, right;
    for (std::size_t r : rows) {
      const double v = x.at(r, split->feature);
      (std::isnan(v) || v < split->threshold ? left : right).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();
    model.nodes[id].feature = static_cast<int>(split->feature);
    model.nodes[id].threshold = split->threshold;
    const int l = grow(std::move(left), depth + 1);
    const int r = grow(std::move(right), depth + 1);
    model.nodes[id].left = l;
    model.nodes[id].right = r;
    return id;
  };

  std::vector<std::size_t> all(x.rows);
  std::iota(all.begin(), all.end(), 0);
  grow(std::move(all), 0);
  return model;
}

TreePrediction predict(const TreeModel& model, std::span<const double> row) {
  const TreeNode& leaf = model.nodes[model.route(row)];
  const double p = sigmoid(model.base_score + leaf.weight);
  return {p, static_cast<std::uint8_t>(p >= model.hyper.decision_threshold ? 1 : 0)};
}

TreePrediction predict(const TreeModel& model, const FeatureFrame& frame) {
  std::array<double, kTreeFeatureCount> row{};
  flatten_frame(frame, row);
  return predict(model, row);
}

namespace {

std::string format_number(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

RuleExport export_rules(const TreeModel& model) {
  RuleExport out;
  if (model.nodes.empty()) return out;
  auto name_of = [&](int f) {
    const auto i = static_cast<std::size_t>(f);
    return i < model.feature_names.size() ? model.feature_names[i] : "f" + std::to_string(f);
  };
  for (const auto& n : model.nodes)
    if (!n.is_leaf()) ++out.split_counts[name_of(n.feature)];

  std::vector<std::string> path;
  std::function<void(int)> walk = [&](int id) {
    const TreeNode& n = model.nodes[static_cast<std::size_t>(id)];
    if (n.is_leaf()) {
      Rule rule;
      rule.conditions = path;
      rule.weight = n.weight;
      rule.probability = sigmoid(model.base_score + n.weight);
      rule.fault = rule.probability >= model.hyper.decision_threshold;
      std::string lhs;
      for (std::size_t i = 0; i < path.size(); ++i) lhs += (i ? " AND " : "") + path[i];
      if (lhs.empty()) lhs = "TRUE";
      rule.text = lhs + " -> " + (rule.fault ? "FAULT" : "NOMINAL") +
                  " (w=" + format_number(n.weight) + ", p=" + format_number(rule.probability) +
                  ")";
      out.rules.push_back(std::move(rule));
      return;
    }
    const std::string f = name_of(n.feature);
    const std::string thr = format_number(n.threshold);
    path.push_back(f + " < " + thr);
    walk(n.left);
    path.back() = f + " >= " + thr;
    walk(n.right);
    path.pop_back();
  };
  walk(0);
  return out;
}

std::string RuleExport::to_text() const {
  std::string s;
  for (std::size_t i = 0; i < rules.size(); ++i)
    s += "rule " + std::to_string(i) + ": " + rules[i].text + "\n";
  s += "split counts:\n";
  for (const auto& [name, count] : split_counts)
    s += "  " + name + ": " + std::to_string(count) + "\n";
  return s;
}

using nlohmann::json;

std::string tree_to_json(const TreeModel& model) {
  json j;
  j["format"] = "stuckfdir-tree";
  j["version"] = 1;
  j["base_score"] = model.base_score;
  j["hyperparameters"] = {{"num_trees", model.hyper.num_trees},
                          {"max_depth", model.hyper.max_depth},
                          {"lambda", model.hyper.lambda},
                          {"gamma", model.hyper.gamma},
                          {"min_child_weight", model.hyper.min_child_weight},
                          {"decision_threshold", model.hyper.decision_threshold}};
  j["feature_names"] = model.feature_names;
  json nodes = json::array();
  for (std::size_t i = 0; i < model.nodes.size(); ++i) {
    const TreeNode& n = model.nodes[i];
    json jn = {{"id", i}, {"depth", n.depth}};
    if (n.is_leaf()) {
      jn["leaf_weight"] = n.weight;
    } else {
      jn["feature"] = n.feature;
      jn["threshold"] = n.threshold;
      jn["default_left"] = n.default_left;
      jn["children"] = {n.left, n.right};
    }
    nodes.push_back(jn);
  }
  j["nodes"] = nodes;
  return j.dump(2) + "\n";
}

TreeModel tree_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format").get<std::string>() != "stuckfdir-tree")
      throw DataError("not a tree model file");
    TreeModel m;
    m.base_score = j.at("base_score").get<double>();
    const json& hp = j.at("hyperparameters");
    m.hyper.num_trees = hp.at("num_trees").get<int>();
    m.hyper.max_depth = hp.at("max_depth").get<int>();
    m.hyper.lambda = hp.at("lambda").get<double>();
    m.hyper.gamma = hp.at("gamma").get<double>();
    m.hyper.min_child_weight = hp.at("min_child_weight").get<double>();
    m.hyper.decision_threshold = hp.at("decision_threshold").get<double>();
    m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    const json& nodes = j.at("nodes");
    m.nodes.resize(nodes.size());
    for (const json& jn : nodes) {
      const auto id = jn.at("id").get<std::size_t>();
      if (id >= m.nodes.size()) throw DataError("tree node id out of range");
      TreeNode& n = m.nodes[id];
      n.depth = jn.at("depth").get<int>();
      if (jn.contains("leaf_weight")) {
        n.weight = jn.at("leaf_weight").get<double>();
      } else {
        n.feature = jn.at("feature").get<int>();
        n.threshold = jn.at("threshold").get<double>();
        n.default_left = jn.at("default_left").get<bool>();
        n.left = jn.at("children").at(0).get<int>();
        n.right = jn.at("children").at(1).get<int>();
        const auto count = static_cast<int>(m.nodes.size());
        if (n.left <= 0 || n.left >= count || n.right <= 0 || n.right >= count)
          throw DataError("tree node child out of range");
      }
    }
    if (m.nodes.empty()) throw DataError("tree model has no nodes");
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed tree model JSON: ") + e.what());
  }
}

}  // namespace stuckfdir
