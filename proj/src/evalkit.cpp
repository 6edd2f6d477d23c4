#include "stuckfdir/evalkit.hpp"

#include <cstdio>
#include <map>

#include <json.hpp>

#include "stuckfdir/error.hpp"

namespace stuckfdir {

Score score(std::span<const std::uint8_t> predictions, std::span<const std::uint8_t> labels) {
  if (predictions.size() != labels.size())
    throw DataError("prediction and label sequences differ in length");
  if (predictions.empty()) throw DataError("cannot score an empty sequence");
  Score s;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool p = predictions[i] != 0;
    const bool y = labels[i] != 0;
    if (p && y) ++s.counts.tp;
    else if (p) ++s.counts.fp;
    else if (y) ++s.counts.fn;
    else ++s.counts.tn;
  }
  const auto& c = s.counts;
  s.precision = c.tp + c.fp == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  s.recall = c.tp + c.fn == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return s;
}

double CaseBreakdown::subset_recall(bool noisy) const {
  std::size_t count = 0, detected = 0;
  for (std::size_t i = 0; i < FaultCase::kCount; ++i) {
    if (FaultCase::from_index(i).noise_on_top != noisy) continue;
    count += cases[i].count;
    detected += cases[i].detected;
  }
  return count == 0 ? 1.0 : static_cast<double>(detected) / static_cast<double>(count);
}

CaseBreakdown breakdown(std::span<const std::uint8_t> predictions,
                        std::span<const std::uint8_t> labels,
                        std::span<const std::optional<FaultCase>> metadata) {
  if (predictions.size() != labels.size() || metadata.size() != labels.size())
    throw DataError("predictions, labels and metadata differ in length");
  CaseBreakdown b;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i]) continue;
    if (!metadata[i]) throw DataError("positive label at position " + std::to_string(i) +
                                      " has no fault metadata");
    auto& c = b.cases[metadata[i]->index()];
    ++c.count;
    if (predictions[i]) {
      ++c.detected;
    } else {
      ++b.false_negatives;
      if (metadata[i]->noise_on_top) ++b.noisy_false_negatives;
    }
  }
  for (auto& c : b.cases)
    c.recall = c.count == 0 ? 1.0 : static_cast<double>(c.detected) / static_cast<double>(c.count);
  b.noise_fn_fraction = b.false_negatives == 0 ? 0.0
                                               : static_cast<double>(b.noisy_false_negatives) /
                                                     static_cast<double>(b.false_negatives);
  return b;
}

void SensorEvaluation::finalize() {
  score = stuckfdir::score(predictions, labels);
  cases = breakdown(predictions, labels, metadata);
}

SensorEvaluation evaluate_tree(const TreeModel& tree, const LabeledDataset& dataset,
                               SensorKind sensor, double calibration_scale,
                               std::size_t window_length, std::size_t stride,
                               std::size_t variance_window) {
  if (tree.feature_names != tree_feature_names())
    throw DataError("tree model features do not match the feature extractor");
  if (window_length < 1 || stride < 1) throw UsageError("window length and stride must be positive");
  SensorEvaluation ev;
  ev.sensor = sensor;
  std::array<double, kTreeFeatureCount> row{};
  for (std::size_t t = 0; t < dataset.trajectories.size(); ++t) {
    const auto& traj = dataset.trajectories[t];
    const auto& label = traj.label(sensor);
    const auto frames = extract_features(traj.trace(sensor), calibration_scale, variance_window);
    for (std::size_t i = window_length - 1; i < frames.size(); i += stride) {
      flatten_frame(frames[i], row);
      ev.samples.push_back({t, i});
      ev.predictions.push_back(predict(tree, row).flag);
      ev.labels.push_back(label.flags[i]);
      ev.metadata.push_back(label.meta[i]);
    }
  }
  if (ev.labels.empty()) throw DataError("dataset has no samples to evaluate");
  ev.finalize();
  return ev;
}

std::array<SensorEvaluation, 2> evaluate_cnn(const CnnModel& model, const LabeledDataset& dataset,
                                             std::size_t stride, double threshold) {
  std::array<SensorEvaluation, 2> ev;
  ev[0].sensor = SensorKind::Imu;
  ev[1].sensor = SensorKind::Accelerometer;
  CnnWorkspace ws;
  std::vector<double> input(model.arch.input_channels() * model.arch.input_length);
  for (std::size_t t = 0; t < dataset.trajectories.size(); ++t) {
    const auto& traj = dataset.trajectories[t];
    for (const Window& w : make_windows(traj, t, model.arch.input_length, stride)) {
      cnn_input(model, w, input);
      const CnnOutput out = forward(model, input, ws);
      const std::size_t i = w.end_index();
      for (std::size_t h = 0; h < 2; ++h) {
        const FaultLabel& label = h == 0 ? traj.imu_label : traj.acc_label;
        ev[h].samples.push_back({t, i});
        ev[h].predictions.push_back(out.prob[h] >= threshold ? 1 : 0);
        ev[h].labels.push_back(label.flags[i]);
        ev[h].metadata.push_back(label.meta[i]);
      }
    }
  }
  if (ev[0].labels.empty()) throw DataError("dataset has no windows to evaluate");
  for (auto& e : ev) e.finalize();
  return ev;
}

TransferResult transfer_experiment(const TreeModel& imu_tree, const LabeledDataset& accel_dataset,
                                   double accel_calibration_scale, std::size_t window_length,
                                   std::size_t stride, std::size_t variance_window) {
  TransferResult r;
  r.evaluation = evaluate_tree(imu_tree, accel_dataset, SensorKind::Accelerometer,
                               accel_calibration_scale, window_length, stride, variance_window);
  r.score = r.evaluation.score;
  r.cases = r.evaluation.cases;
  r.noise_free_recall = r.cases.subset_recall(false);
  return r;
}

SensorReport make_sensor_report(const SensorEvaluation& eval) {
  return {eval.sensor, eval.score, eval.cases};
}

using nlohmann::json;

std::string report_to_json(const ModelReport& report) {
  json j;
  j["model"] = report.model;
  j["mode"] = report.transfer ? "transfer" : "standard";
  json sensors = json::array();
  for (const auto& s : report.sensors) {
    json cases = json::object();
    for (std::size_t i = 0; i < FaultCase::kCount; ++i) {
      const auto& c = s.cases.cases[i];
      cases[FaultCase::from_index(i).name()] = {
          {"count", c.count}, {"detected", c.detected}, {"recall", c.recall}};
    }
    const auto& k = s.score.counts;
    sensors.push_back({{"sensor", std::string(to_string(s.sensor))},
                       {"precision", s.score.precision},
                       {"recall", s.score.recall},
                       {"confusion", {{"tp", k.tp}, {"fp", k.fp}, {"fn", k.fn}, {"tn", k.tn}}},
                       {"noise_free_recall", s.cases.subset_recall(false)},
                       {"noisy_recall", s.cases.subset_recall(true)},
                       {"false_negatives", s.cases.false_negatives},
                       {"noisy_false_negatives", s.cases.noisy_false_negatives},
                       {"noise_fn_fraction", s.cases.noise_fn_fraction},
                       {"breakdown", cases}});
  }
  j["sensors"] = sensors;
  return j.dump(2) + "\n";
}

ModelReport report_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    ModelReport r;
    r.model = j.at("model").get<std::string>();
    r.transfer = j.at("mode").get<std::string>() == "transfer";
    for (const json& s : j.at("sensors")) {
      SensorReport sr;
      sr.sensor = sensor_kind_from_string(s.at("sensor").get<std::string>());
      sr.score.precision = s.at("precision").get<double>();
      sr.score.recall = s.at("recall").get<double>();
      const json& c = s.at("confusion");
      sr.score.counts = {c.at("tp").get<std::size_t>(), c.at("fp").get<std::size_t>(),
                         c.at("fn").get<std::size_t>(), c.at("tn").get<std::size_t>()};
      sr.cases.false_negatives = s.at("false_negatives").get<std::size_t>();
      sr.cases.noisy_false_negatives = s.at("noisy_false_negatives").get<std::size_t>();
      sr.cases.noise_fn_fraction = s.at("noise_fn_fraction").get<double>();
      for (std::size_t i = 0; i < FaultCase::kCount; ++i) {
        const json& cs = s.at("breakdown").at(FaultCase::from_index(i).name());
        sr.cases.cases[i] = {cs.at("count").get<std::size_t>(), cs.at("detected").get<std::size_t>(),
                             cs.at("recall").get<double>()};
      }
      r.sensors.push_back(sr);
    }
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed report JSON: ") + e.what());
  }
}

std::string reports_to_markdown(std::span<const ModelReport> reports) {
  std::string out;
  char buf[160];
  for (SensorKind sensor : {SensorKind::Imu, SensorKind::Accelerometer}) {
    std::string rows;
    for (const auto& r : reports) {
      for (const auto& s : r.sensors) {
        if (s.sensor != sensor) continue;
        const std::string name = (r.model == "tree" ? std::string("Tree") : std::string("CNN")) +
                                 (r.transfer ? " (transfer)" : "");
        std::snprintf(buf, sizeof buf, "| %s | %.2f | %.2f | %.2f | %.2f |\n", name.c_str(),
                      s.score.precision, s.score.recall, s.cases.subset_recall(false),
                      s.cases.noise_fn_fraction);
        rows += buf;
      }
    }
    if (rows.empty()) continue;
    out += "### " + std::string(sensor == SensorKind::Imu ? "IMU" : "Accelerometer") +
           " test set\n\n";
    out += "| Model | Precision | Recall | Noise-free recall | Noisy share of FN |\n";
    out += "|---|---|---|---|---|\n";
    out += rows + "\n";
  }
  return out;
}

std::string plot_data_csv(const LabeledTrajectory& trajectory, SensorKind sensor,
                          const SensorEvaluation& eval, std::size_t trajectory_index) {
  const SensorTrace& trace = trajectory.trace(sensor);
  const FaultLabel& label = trajectory.label(sensor);
  std::vector<int> flag(trace.size(), -1);
  for (std::size_t k = 0; k < eval.samples.size(); ++k)
    if (eval.samples[k].trajectory == trajectory_index)
      flag[eval.samples[k].index] = eval.predictions[k];
  std::string out = "t,ch0,ch1,ch2,label,flag\n";
  char buf[160];
  for (std::size_t i = 0; i < trace.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6f,%.8e,%.8e,%.8e,%d,", static_cast<double>(i) / trace.sample_rate_hz,
                  trace.channels[0][i], trace.channels[1][i], trace.channels[2][i],
                  static_cast<int>(label.flags[i]));
    out += buf;
    if (flag[i] >= 0) out += std::to_string(flag[i]);
    out += '\n';
  }
  return out;
}

}  // namespace stuckfdir
