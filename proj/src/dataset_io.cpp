#include "stuckfdir/dataset_io.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "stuckfdir/error.hpp"

namespace stuckfdir {

using nlohmann::json;

std::string dataset_to_csv(const LabeledDataset& dataset) {
  std::string out = "t,imu0,imu1,imu2,acc0,acc1,acc2,label_imu,label_acc\n";
  char buf[320];
  for (const auto& traj : dataset.trajectories) {
    const auto& imu = traj.imu.channels;
    const auto& acc = traj.acc.channels;
    for (std::size_t i = 0; i < traj.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.6f,%.16e,%.16e,%.16e,%.16e,%.16e,%.16e,%d,%d\n",
                    static_cast<double>(i) / traj.imu.sample_rate_hz, imu[0][i], imu[1][i],
                    imu[2][i], acc[0][i], acc[1][i], acc[2][i],
                    static_cast<int>(traj.imu_label.flags[i]),
                    static_cast<int>(traj.acc_label.flags[i]));
      out += buf;
    }
  }
  return out;
}

namespace {

json sensor_json(const SensorTrace& t, double calibration) {
  json ranges = json::array();
  for (const auto& r : t.nominal_range) ranges.push_back({r.low, r.high});
  return {{"nominal_range", ranges}, {"noise_sigma", t.noise_sigma},
          {"calibration_scale", calibration}};
}

json fault_json(const InjectedFault& f) {
  const FaultSpec& s = f.spec;
  json j = {{"trajectory", f.trajectory},
            {"sensor", std::string(to_string(f.sensor))},
            {"case", s.fault_case().name()},
            {"kind", s.kind == FaultKind::StuckAtLast ? "stuck_at_last" : "stuck_at_random"},
            {"axes", s.axis ? json(*s.axis) : json("all")},
            {"noise_on_top", s.noise_on_top},
            {"start_index", s.start_index},
            {"duration", s.duration}};
  if (s.kind == FaultKind::StuckAtRandom)
    j["stuck_value"] = {s.stuck_value[0], s.stuck_value[1], s.stuck_value[2]};
  return j;
}

FaultSpec fault_from_json(const json& j) {
  FaultSpec s;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "stuck_at_last") s.kind = FaultKind::StuckAtLast;
  else if (kind == "stuck_at_random") s.kind = FaultKind::StuckAtRandom;
  else throw DataError("unknown fault kind '" + kind + "'");
  const json& axes = j.at("axes");
  if (axes.is_number_integer()) s.axis = axes.get<int>();
  else if (axes.get<std::string>() != "all") throw DataError("fault axes must be 0-2 or \"all\"");
  s.noise_on_top = j.at("noise_on_top").get<bool>();
  s.start_index = j.at("start_index").get<std::size_t>();
  s.duration = j.at("duration").get<std::size_t>();
  if (s.kind == FaultKind::StuckAtRandom)
    for (std::size_t c = 0; c < 3; ++c) s.stuck_value[c] = j.at("stuck_value").at(c).get<double>();
  return s;
}

void apply_sensor_json(SensorTrace& t, const json& j) {
  for (std::size_t c = 0; c < 3; ++c)
    t.nominal_range[c] = {j.at("nominal_range").at(c).at(0).get<double>(),
                          j.at("nominal_range").at(c).at(1).get<double>()};
  t.noise_sigma = j.at("noise_sigma").get<double>();
}

double parse_double(std::string_view field, std::size_t line) {
  double v = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size())
    throw DataError("dataset.csv line " + std::to_string(line) + ": bad number '" +
                    std::string(field) + "'");
  return v;
}

}  // namespace

std::string dataset_sidecar_json(const LabeledDataset& dataset,
                                 const SensorCalibration& calibration) {
  if (dataset.trajectories.empty()) throw DataError("dataset has no trajectories");
  const auto& first = dataset.trajectories.front();
  json j;
  j["format"] = "stuckfdir-dataset";
  j["version"] = 1;
  j["sample_rate_hz"] = first.imu.sample_rate_hz;
  json lengths = json::array();
  for (const auto& t : dataset.trajectories) lengths.push_back(t.size());
  j["trajectory_lengths"] = lengths;
  j["sensors"] = {{"imu", sensor_json(first.imu, calibration.imu)},
                  {"accelerometer", sensor_json(first.acc, calibration.accelerometer)}};
  json faults = json::array();
  for (const auto& f : dataset.faults) faults.push_back(fault_json(f));
  j["faults"] = faults;
  j["summary"] = {{"trajectories", dataset.trajectories.size()},
                  {"samples", dataset.total_samples()},
                  {"fault_fraction_imu", dataset.faulted_fraction(SensorKind::Imu)},
                  {"fault_fraction_accelerometer",
                   dataset.faulted_fraction(SensorKind::Accelerometer)}};
  return j.dump(2) + "\n";
}

DatasetBundle dataset_from_text(const std::string& csv, const std::string& sidecar) {
  json meta;
  try {
    meta = json::parse(sidecar);
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed dataset sidecar: ") + e.what());
  }
  DatasetBundle bundle;
  try {
    if (meta.at("format").get<std::string>() != "stuckfdir-dataset")
      throw DataError("not a dataset sidecar");
    const double rate = meta.at("sample_rate_hz").get<double>();
    const auto lengths = meta.at("trajectory_lengths").get<std::vector<std::size_t>>();
    bundle.calibration.imu = meta.at("sensors").at("imu").at("calibration_scale").get<double>();
    bundle.calibration.accelerometer =
        meta.at("sensors").at("accelerometer").at("calibration_scale").get<double>();

    std::istringstream in(csv);
    std::string line;
    if (!std::getline(in, line) || line != "t,imu0,imu1,imu2,acc0,acc1,acc2,label_imu,label_acc")
      throw DataError("dataset.csv has an unexpected header");
    std::size_t line_no = 1;
    for (std::size_t t = 0; t < lengths.size(); ++t) {
      LabeledTrajectory traj;
      traj.imu.kind = SensorKind::Imu;
      traj.acc.kind = SensorKind::Accelerometer;
      traj.imu.sample_rate_hz = traj.acc.sample_rate_hz = rate;
      apply_sensor_json(traj.imu, meta.at("sensors").at("imu"));
      apply_sensor_json(traj.acc, meta.at("sensors").at("accelerometer"));
      traj.imu_label = FaultLabel::nominal(lengths[t]);
      traj.acc_label = FaultLabel::nominal(lengths[t]);
      for (auto& ch : traj.imu.channels) ch.resize(lengths[t]);
      for (auto& ch : traj.acc.channels) ch.resize(lengths[t]);
      std::vector<std::uint8_t> flags_imu(lengths[t]), flags_acc(lengths[t]);
      for (std::size_t i = 0; i < lengths[t]; ++i) {
        if (!std::getline(in, line)) throw DataError("dataset.csv is shorter than the sidecar says");
        ++line_no;
        std::array<std::string_view, 9> f;
        std::string_view rest(line);
        for (std::size_t k = 0; k < 9; ++k) {
          const auto comma = rest.find(',');
          if ((comma == std::string_view::npos) != (k == 8))
            throw DataError("dataset.csv line " + std::to_string(line_no) + ": expected 9 fields");
          f[k] = rest.substr(0, comma);
          if (k < 8) rest.remove_prefix(comma + 1);
        }
        for (std::size_t c = 0; c < 3; ++c) {
          traj.imu.channels[c][i] = parse_double(f[1 + c], line_no);
          traj.acc.channels[c][i] = parse_double(f[4 + c], line_no);
        }
        if ((f[7] != "0" && f[7] != "1") || (f[8] != "0" && f[8] != "1"))
          throw DataError("dataset.csv line " + std::to_string(line_no) + ": labels must be 0/1");
        flags_imu[i] = f[7] == "1";
        flags_acc[i] = f[8] == "1";
      }
      traj.imu.validate();
      traj.acc.validate();
      bundle.dataset.trajectories.push_back(std::move(traj));
      // Flags are rebuilt from the fault list below and checked against these.
      auto& back = bundle.dataset.trajectories.back();
      back.imu_label.flags = std::move(flags_imu);
      back.acc_label.flags = std::move(flags_acc);
    }
    if (std::getline(in, line) && !line.empty())
      throw DataError("dataset.csv is longer than the sidecar says");

    std::vector<LabeledTrajectory>& trajs = bundle.dataset.trajectories;
    std::vector<FaultLabel> rebuilt_imu, rebuilt_acc;
    for (const auto& t : trajs) {
      rebuilt_imu.push_back(FaultLabel::nominal(t.size()));
      rebuilt_acc.push_back(FaultLabel::nominal(t.size()));
    }
    for (const json& jf : meta.at("faults")) {
      InjectedFault f;
      f.trajectory = jf.at("trajectory").get<std::size_t>();
      f.sensor = sensor_kind_from_string(jf.at("sensor").get<std::string>());
      f.spec = fault_from_json(jf);
      if (f.trajectory >= trajs.size()) throw DataError("fault refers to a missing trajectory");
      f.spec.validate(trajs[f.trajectory].size());
      FaultLabel& l = f.sensor == SensorKind::Imu ? rebuilt_imu[f.trajectory]
                                                  : rebuilt_acc[f.trajectory];
      for (std::size_t i = f.spec.start_index; i < f.spec.end_index(); ++i) {
        l.flags[i] = 1;
        l.meta[i] = f.spec.fault_case();
      }
      bundle.dataset.faults.push_back(f);
    }
    for (std::size_t t = 0; t < trajs.size(); ++t) {
      if (rebuilt_imu[t].flags != trajs[t].imu_label.flags ||
          rebuilt_acc[t].flags != trajs[t].acc_label.flags)
        throw DataError("labels in dataset.csv disagree with the fault list of trajectory " +
                        std::to_string(t));
      trajs[t].imu_label = std::move(rebuilt_imu[t]);
      trajs[t].acc_label = std::move(rebuilt_acc[t]);
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed dataset sidecar: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(e.what());
  }
  return bundle;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << content;
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace stuckfdir
