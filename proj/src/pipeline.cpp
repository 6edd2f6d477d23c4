#include "stuckfdir/pipeline.hpp"

#include <cmath>
#include <set>

#include <json.hpp>

#include "stuckfdir/error.hpp"
#include "stuckfdir/rng.hpp"

namespace stuckfdir {

using nlohmann::json;

namespace {

// Reads known keys of one JSON object and rejects the rest.
class StrictObject {
 public:
  StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw UsageError("config: '" + path_ + "' must be an object");
  }

  template <typename T>
  void read(const char* key, T& dst) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      dst = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw UsageError("config: '" + path_ + "." + key + "' has the wrong type");
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& at(const char* key) const { return j_.at(key); }
  std::string child(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw UsageError("config: unknown key '" + path_ + "." + k + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_interval(StrictObject& o, const char* key, Interval& dst) {
  std::array<double, 2> v{dst.lo, dst.hi};
  o.read(key, v);
  dst = {v[0], v[1]};
}

void read_int_interval(StrictObject& o, const char* key, IntInterval& dst) {
  std::array<int, 2> v{dst.lo, dst.hi};
  o.read(key, v);
  dst = {v[0], v[1]};
}

void read_profile(const json& j, const std::string& path, SensorProfile& p) {
  StrictObject o(j, path);
  std::array<double, 2> range{p.nominal_range.low, p.nominal_range.high};
  o.read("nominal_range", range);
  p.nominal_range = {range[0], range[1]};
  o.read("noise_sigma", p.noise_sigma);
  read_interval(o, "amplitude", p.amplitude);
  read_interval(o, "frequency_hz", p.frequency_hz);
  read_interval(o, "bias", p.bias);
  o.read("confine_fraction", p.confine_fraction);
  o.finish();
}

json profile_json(const SensorProfile& p) {
  return {{"nominal_range", {p.nominal_range.low, p.nominal_range.high}},
          {"noise_sigma", p.noise_sigma},
          {"amplitude", {p.amplitude.lo, p.amplitude.hi}},
          {"frequency_hz", {p.frequency_hz.lo, p.frequency_hz.hi}},
          {"bias", {p.bias.lo, p.bias.hi}},
          {"confine_fraction", p.confine_fraction}};
}

std::vector<ConvStage> read_stages(const json& j, const std::string& path) {
  if (!j.is_array()) throw UsageError("config: '" + path + "' must be an array");
  std::vector<ConvStage> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    ConvStage s;
    StrictObject o(j[i], path + "[" + std::to_string(i) + "]");
    o.read("kernel_size", s.kernel_size);
    o.read("num_filters", s.num_filters);
    o.read("pool_size", s.pool_size);
    o.finish();
    out.push_back(s);
  }
  return out;
}

json stages_json(const std::vector<ConvStage>& stages) {
  json a = json::array();
  for (const auto& s : stages)
    a.push_back({{"kernel_size", s.kernel_size}, {"num_filters", s.num_filters},
                 {"pool_size", s.pool_size}});
  return a;
}

}  // namespace

void RunConfig::finalize() {
  if (trajectories < 1) throw UsageError("config: at least one trajectory is required");
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw UsageError("config: train_fraction must lie in (0, 1)");
  trajectory.seed = derive_seed(seed, "trajectory");
  trajectory.min_samples = features.window;
  injection.seed = derive_seed(seed, "injection");
  cnn.train.seed = derive_seed(seed, "cnn");
  cnn.arch.input_length = features.window;
  trajectory.validate();
  injection.validate();
  tree.validate();
  cnn.arch.validate();
  cnn.train.validate();
  if (features.window < 2) throw UsageError("config: window must be at least 2");
  if (features.train_stride < 1 || features.train_stride > features.window ||
      features.eval_stride < 1 || features.eval_stride > features.window)
    throw UsageError("config: strides must lie in [1, window]");
  if (features.variance_window < 1) throw UsageError("config: variance_window must be positive");
  if (!(cnn.threshold >= 0.0 && cnn.threshold <= 1.0))
    throw UsageError("config: cnn.threshold must lie in [0, 1]");
}

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig cfg;
  StrictObject root(j, "config");
  root.read("seed", cfg.seed);
  root.read("trajectories", cfg.trajectories);
  root.read("train_fraction", cfg.train_fraction);
  root.read("plot_trajectory", cfg.plot_trajectory);
  if (root.has("trajectory")) {
    StrictObject o(root.at("trajectory"), root.child("trajectory"));
    o.read("duration_s", cfg.trajectory.duration_s);
    o.read("sample_rate_hz", cfg.trajectory.sample_rate_hz);
    read_int_interval(o, "num_modes", cfg.trajectory.num_modes);
    if (o.has("imu")) read_profile(o.at("imu"), o.child("imu"), cfg.trajectory.imu);
    if (o.has("accelerometer"))
      read_profile(o.at("accelerometer"), o.child("accelerometer"), cfg.trajectory.accelerometer);
    o.finish();
  }
  if (root.has("injection")) {
    StrictObject o(root.at("injection"), root.child("injection"));
    read_int_interval(o, "faults_per_trajectory", cfg.injection.faults_per_trajectory);
    read_int_interval(o, "duration", cfg.injection.duration);
    o.read("target_fault_fraction", cfg.injection.target_fault_fraction);
    o.read("mixture", cfg.injection.mixture);
    o.read("min_separation", cfg.injection.min_separation);
    o.read("stuck_value_span", cfg.injection.stuck_value_span);
    o.finish();
  }
  if (root.has("features")) {
    StrictObject o(root.at("features"), root.child("features"));
    o.read("window", cfg.features.window);
    o.read("train_stride", cfg.features.train_stride);
    o.read("eval_stride", cfg.features.eval_stride);
    o.read("variance_window", cfg.features.variance_window);
    o.finish();
  }
  if (root.has("tree")) {
    StrictObject o(root.at("tree"), root.child("tree"));
    o.read("num_trees", cfg.tree.num_trees);
    o.read("max_depth", cfg.tree.max_depth);
    o.read("lambda", cfg.tree.lambda);
    o.read("gamma", cfg.tree.gamma);
    o.read("min_child_weight", cfg.tree.min_child_weight);
    o.read("decision_threshold", cfg.tree.decision_threshold);
    o.finish();
  }
  if (root.has("cnn")) {
    StrictObject o(root.at("cnn"), root.child("cnn"));
    if (o.has("branch_stages"))
      cfg.cnn.arch.branch_stages = read_stages(o.at("branch_stages"), o.child("branch_stages"));
    if (o.has("merge_stages"))
      cfg.cnn.arch.merge_stages = read_stages(o.at("merge_stages"), o.child("merge_stages"));
    o.read("learning_rate", cfg.cnn.train.learning_rate);
    o.read("batch_size", cfg.cnn.train.batch_size);
    o.read("epochs", cfg.cnn.train.epochs);
    o.read("augment", cfg.cnn.train.augment);
    o.read("cosine_decay", cfg.cnn.train.cosine_decay);
    o.read("derivative_channels", cfg.cnn.arch.derivative_channels);
    o.read("threshold", cfg.cnn.threshold);
    o.finish();
  }
  root.finish();
  cfg.finalize();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  return run_config_from_json(text);
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["trajectories"] = cfg.trajectories;
  j["train_fraction"] = cfg.train_fraction;
  j["plot_trajectory"] = cfg.plot_trajectory;
  j["trajectory"] = {{"duration_s", cfg.trajectory.duration_s},
                     {"sample_rate_hz", cfg.trajectory.sample_rate_hz},
                     {"num_modes", {cfg.trajectory.num_modes.lo, cfg.trajectory.num_modes.hi}},
                     {"imu", profile_json(cfg.trajectory.imu)},
                     {"accelerometer", profile_json(cfg.trajectory.accelerometer)}};
  const auto& inj = cfg.injection;
  j["injection"] = {
      {"faults_per_trajectory", {inj.faults_per_trajectory.lo, inj.faults_per_trajectory.hi}},
      {"duration", {inj.duration.lo, inj.duration.hi}},
      {"target_fault_fraction", inj.target_fault_fraction},
      {"mixture", inj.mixture},
      {"min_separation", inj.min_separation},
      {"stuck_value_span", inj.stuck_value_span}};
  j["features"] = {{"window", cfg.features.window},
                   {"train_stride", cfg.features.train_stride},
                   {"eval_stride", cfg.features.eval_stride},
                   {"variance_window", cfg.features.variance_window}};
  j["tree"] = {{"num_trees", cfg.tree.num_trees},
               {"max_depth", cfg.tree.max_depth},
               {"lambda", cfg.tree.lambda},
               {"gamma", cfg.tree.gamma},
               {"min_child_weight", cfg.tree.min_child_weight},
               {"decision_threshold", cfg.tree.decision_threshold}};
  j["cnn"] = {{"branch_stages", stages_json(cfg.cnn.arch.branch_stages)},
              {"merge_stages", stages_json(cfg.cnn.arch.merge_stages)},
              {"learning_rate", cfg.cnn.train.learning_rate},
              {"batch_size", cfg.cnn.train.batch_size},
              {"epochs", cfg.cnn.train.epochs},
              {"augment", cfg.cnn.train.augment},
              {"cosine_decay", cfg.cnn.train.cosine_decay},
              {"derivative_channels", cfg.cnn.arch.derivative_channels},
              {"threshold", cfg.cnn.threshold}};
  return j.dump(2) + "\n";
}

DatasetBundle generate_dataset(const RunConfig& cfg) {
  std::vector<std::pair<SensorTrace, SensorTrace>> traces;
  traces.reserve(cfg.trajectories);
  const std::uint64_t traj_root = derive_seed(cfg.seed, "trajectory");
  const std::uint64_t noise_root = derive_seed(cfg.seed, "noise");
  for (std::size_t i = 0; i < cfg.trajectories; ++i) {
    TrajectoryConfig tc = cfg.trajectory;
    tc.seed = derive_seed(traj_root, i);
    const std::uint64_t noise = derive_seed(noise_root, i);
    traces.emplace_back(
        add_measurement_noise(generate_trajectory(tc, SensorKind::Imu), derive_seed(noise, "imu")),
        add_measurement_noise(generate_trajectory(tc, SensorKind::Accelerometer),
                              derive_seed(noise, "acc")));
  }
  DatasetBundle bundle;
  bundle.dataset = build_dataset(cfg.injection, traces);

  TrajectoryConfig cal = cfg.trajectory;
  cal.seed = derive_seed(cfg.seed, "calibration");
  bundle.calibration.imu = calibration_scale(add_measurement_noise(
      generate_trajectory(cal, SensorKind::Imu), derive_seed(cal.seed, "imu-noise")));
  bundle.calibration.accelerometer = calibration_scale(add_measurement_noise(
      generate_trajectory(cal, SensorKind::Accelerometer), derive_seed(cal.seed, "acc-noise")));
  return bundle;
}

DataSplit split_by_trajectory(const LabeledDataset& dataset, double train_fraction) {
  const std::size_t n = dataset.trajectories.size();
  if (n < 2) throw DataError("a train/test split needs at least two trajectories");
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  DataSplit s;
  for (std::size_t t = 0; t < n; ++t)
    (t < n_train ? s.train : s.test).trajectories.push_back(dataset.trajectories[t]);
  for (InjectedFault f : dataset.faults) {
    if (f.trajectory < n_train) {
      s.train.faults.push_back(f);
    } else {
      f.trajectory -= n_train;
      s.test.faults.push_back(f);
    }
  }
  return s;
}

FeatureMatrix tree_training_matrix(const LabeledDataset& dataset, SensorKind sensor,
                                   double calibration_scale, std::size_t variance_window,
                                   std::vector<std::uint8_t>& labels) {
  FeatureMatrix m;
  m.names = tree_feature_names();
  m.cols = kTreeFeatureCount;
  labels.clear();
  std::array<double, kTreeFeatureCount> row{};
  for (const auto& traj : dataset.trajectories) {
    const auto frames = extract_features(traj.trace(sensor), calibration_scale, variance_window);
    const auto& flags = traj.label(sensor).flags;
    for (std::size_t i = variance_window - 1; i < frames.size(); ++i) {
      flatten_frame(frames[i], row);
      m.append_row(row);
      labels.push_back(flags[i]);
    }
  }
  return m;
}

TreeModel train_imu_tree(const LabeledDataset& train, const SensorCalibration& calibration,
                         const RunConfig& cfg) {
  std::vector<std::uint8_t> labels;
  const FeatureMatrix x = tree_training_matrix(train, SensorKind::Imu, calibration.imu,
                                               cfg.features.variance_window, labels);
  return train_tree(x, labels, cfg.tree);
}

TrainResult train_window_cnn(const LabeledDataset& train, const SensorCalibration& calibration,
                             const RunConfig& cfg) {
  const auto windows = make_windows(train, cfg.features.window, cfg.features.train_stride);
  CnnModel m = make_initialized_cnn(cfg.cnn.arch, cfg.cnn.train);
  m.derivative_scale = {calibration.imu, calibration.accelerometer};
  return train_cnn(m, windows);
}

ExperimentResults run_experiment(const RunConfig& cfg) {
  ExperimentResults r;
  r.data = generate_dataset(cfg);
  r.split = split_by_trajectory(r.data.dataset, cfg.train_fraction);
  r.tree = train_imu_tree(r.split.train, r.data.calibration, cfg);
  r.cnn = train_window_cnn(r.split.train, r.data.calibration, cfg);
  r.tree_imu = evaluate_tree(r.tree, r.split.test, SensorKind::Imu, r.data.calibration.imu,
                             cfg.features.window, cfg.features.eval_stride,
                             cfg.features.variance_window);
  r.tree_transfer = transfer_experiment(r.tree, r.split.test, r.data.calibration.accelerometer,
                                        cfg.features.window, cfg.features.eval_stride,
                                        cfg.features.variance_window);
  r.cnn_eval = evaluate_cnn(r.cnn.model, r.split.test, cfg.features.eval_stride, cfg.cnn.threshold);
  return r;
}

}  // namespace stuckfdir
