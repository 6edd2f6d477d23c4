// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Criteria 1-4 and 7 run the CLI pipeline twice at desk scale.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "stuckfdir/commands.hpp"
#include "stuckfdir/error.hpp"
#include "stuckfdir/rng.hpp"

using namespace stuckfdir;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& check) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("%s criterion %d (%s): %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, name.c_str(),
              o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// ---- desk-scale runs ------------------------------------------------------

struct DeskRun {
  fs::path dir;
  std::string error;
  ModelReport tree, transfer, cnn;
};

DeskRun desk_run(const fs::path& dir) {
  DeskRun r{dir, {}, {}, {}, {}};
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ostringstream log, err;
  CommandOptions o;
  o.out = dir;
  o.seed = 1;
  auto step = [&](const char* cmd, std::optional<std::string> model, bool transfer) {
    o.model = std::move(model);
    o.transfer = transfer;
    if (!r.error.empty()) return;
    if (run_command(cmd, o, log, err) != 0) r.error = std::string(cmd) + ": " + err.str();
  };
  step("generate", std::nullopt, false);
  step("train", "tree", false);
  step("train", "cnn", false);
  step("eval", "tree", false);
  step("eval", "tree", true);
  step("eval", "cnn", false);
  step("report", std::nullopt, false);
  if (!r.error.empty()) return r;
  r.tree = report_from_json(read_text_file(dir / "report_tree.json"));
  r.transfer = report_from_json(read_text_file(dir / "report_tree_transfer.json"));
  r.cnn = report_from_json(read_text_file(dir / "report_cnn.json"));
  std::fputs(read_text_file(dir / "comparison.md").c_str(), stdout);
  return r;
}

const SensorReport& sensor(const ModelReport& m, SensorKind k) {
  for (const auto& s : m.sensors)
    if (s.sensor == k) return s;
  throw DataError("report lacks sensor " + std::string(to_string(k)));
}

// Tree row per sensor: the IMU-trained tree on IMU, its transfer on the
// accelerometer.
const SensorReport& tree_row(const DeskRun& r, SensorKind k) {
  return k == SensorKind::Imu ? sensor(r.tree, k) : sensor(r.transfer, k);
}

Outcome criterion1(const DeskRun& r) {
  if (!r.error.empty()) return {false, r.error};
  Outcome o;
  for (SensorKind k : {SensorKind::Imu, SensorKind::Accelerometer}) {
    const auto& t = tree_row(r, k);
    const auto& c = sensor(r.cnn, k);
    bool all_cases = true;
    for (const auto& cs : c.cases.cases) all_cases = all_cases && cs.count > 0;
    const bool ok = all_cases && c.score.recall >= t.score.recall + 0.10 &&
                    c.score.precision >= 0.90 && t.score.precision >= 0.90;
    o.pass = o.pass && ok;
    o.detail += std::string(to_string(k)) +
                fmt(" cnn P=%.3f R=%.3f tree P=%.3f R=%.3f; ", c.score.precision, c.score.recall,
                    t.score.precision, t.score.recall);
    if (!all_cases) o.detail += "missing fault cases; ";
  }
  return o;
}

Outcome criterion2(const DeskRun& r) {
  if (!r.error.empty()) return {false, r.error};
  Outcome o;
  for (SensorKind k : {SensorKind::Imu, SensorKind::Accelerometer}) {
    const auto& t = tree_row(r, k);
    o.pass = o.pass && t.cases.noise_fn_fraction >= 0.90;
    o.detail += std::string(to_string(k)) +
                fmt(" noisy share of FN %.4f (%.0f/%.0f); ", t.cases.noise_fn_fraction,
                    static_cast<double>(t.cases.noisy_false_negatives),
                    static_cast<double>(t.cases.false_negatives));
  }
  return o;
}

Outcome criterion3(const DeskRun& r) {
  if (!r.error.empty()) return {false, r.error};
  Outcome o;
  for (SensorKind k : {SensorKind::Imu, SensorKind::Accelerometer}) {
    const double rec = tree_row(r, k).cases.subset_recall(false);
    o.pass = o.pass && rec >= 0.95;
    o.detail += std::string(to_string(k)) + fmt(" noise-free recall %.4f; ", rec);
  }
  return o;
}

Outcome criterion4(const DeskRun& r) {
  if (!r.error.empty()) return {false, r.error};
  const double imu = sensor(r.tree, SensorKind::Imu).score.recall;
  const auto& acc = sensor(r.transfer, SensorKind::Accelerometer);
  const double clean = acc.cases.subset_recall(false);
  return {acc.score.recall < imu && clean >= 0.95,
          fmt("recall imu %.4f, transfer %.4f, transfer noise-free %.4f", imu, acc.score.recall,
              clean)};
}

Outcome criterion7(const DeskRun& a, const DeskRun& b) {
  if (!a.error.empty()) return {false, a.error};
  if (!b.error.empty()) return {false, b.error};
  std::size_t n = 0;
  for (const auto& entry : fs::directory_iterator(a.dir)) {
    const fs::path other = b.dir / entry.path().filename();
    if (!fs::exists(other)) return {false, "missing " + other.string()};
    if (read_text_file(entry.path()) != read_text_file(other))
      return {false, entry.path().filename().string() + " differs"};
    ++n;
  }
  return {n >= 10, std::to_string(n) + " files byte-identical across two seeded runs"};
}

// ---- split oracle ----------------------------------------------------------

Outcome criterion5() {
  Rng r(5005);
  std::size_t splits = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = static_cast<std::size_t>(r.uniform_int(10, 200));
    const std::size_t f = static_cast<std::size_t>(r.uniform_int(1, 6));
    const int levels = static_cast<int>(r.uniform_int(3, 40));
    FeatureMatrix x;
    x.cols = f;
    for (std::size_t c = 0; c < f; ++c) x.names.push_back("f" + std::to_string(c));
    std::vector<std::uint8_t> y(n);
    std::vector<double> row(f);
    for (std::size_t i = 0; i < n; ++i) {
      for (auto& v : row) v = static_cast<double>(r.uniform_int(0, levels)) / levels;
      x.append_row(row);
      y[i] = (row[0] + 0.5 * r.gaussian() > 0.5) ? 1 : 0;
    }
    y[0] = 0;
    y[1] = 1;
    TreeHyper hyper;
    hyper.min_child_weight = r.uniform() < 0.5 ? 0.0 : 1.0;
    const TreeModel m = train_tree(x, y, hyper);
    const double p0 = sigmoid(m.base_score);
    std::vector<double> g(n), h(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto gp = logistic_stats(y[i], p0);
      g[i] = gp.gradient;
      h[i] = gp.hessian;
    }
    // Rows reaching each node, by replaying the learned routing.
    std::vector<std::vector<std::size_t>> rows(m.nodes.size());
    for (std::size_t i = 0; i < n; ++i) rows[0].push_back(i);
    for (std::size_t id = 0; id < m.nodes.size(); ++id) {
      const TreeNode& node = m.nodes[id];
      const auto want = oracle::best_split(x, rows[id], g, h, hyper.lambda, hyper.gamma,
                                           hyper.min_child_weight);
      if (node.is_leaf()) {
        // A leaf above max depth must have had no admissible split.
        if (node.depth < hyper.max_depth && want)
          return {false, "instance " + std::to_string(inst) + ": oracle splits a leaf"};
        continue;
      }
      if (!want || want->feature != static_cast<std::size_t>(node.feature) ||
          want->threshold != node.threshold)
        return {false, "instance " + std::to_string(inst) + " node " + std::to_string(id) +
                           " disagrees with the oracle"};
      ++splits;
      for (auto i : rows[id]) {
        const bool left = x.at(i, static_cast<std::size_t>(node.feature)) < node.threshold;
        rows[static_cast<std::size_t>(left ? node.left : node.right)].push_back(i);
      }
    }
  }
  return {true, "100 instances, " + std::to_string(splits) + " splits match the brute-force oracle"};
}

// ---- gradient check --------------------------------------------------------

Outcome criterion6() {
  CnnArchitecture a;
  a.input_length = 24;
  a.branch_stages = {{3, 3, 2}, {3, 4, 2}};
  a.merge_stages = {{2, 3, 2}};
  double worst = 0.0;
  std::size_t params = 0;
  int redraws = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    TrainConfig tc;
    tc.seed = seed;
    const CnnModel m = make_initialized_cnn(a, tc);
    params = m.parameter_count();
    if (params > 500) return {false, "model too large"};
    Rng r(derive_seed(seed, "gradcheck"));
    std::vector<double> x(a.input_channels() * a.input_length);
    std::array<std::uint8_t, 2> y{};
    // Central differences are meaningless across a ReLU or max-pool kink, so
    // redraw the input until the loss is smooth along every parameter.
    int draws = 0;
    do {
      for (auto& v : x) v = r.uniform(-1.0, 1.0);
      y = {static_cast<std::uint8_t>(r.uniform_int(0, 1)),
           static_cast<std::uint8_t>(r.uniform_int(0, 1))};
      ++draws;
    } while (!oracle::smooth_along_parameters(m, x, y, 1e-4) && draws < 50);
    redraws += draws - 1;
    const auto g = backward(m, x, y);
    const auto fd = oracle::finite_difference_gradient(m, x, y, 1e-4);
    for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, oracle::relative_error(g[i], fd[i]));
  }
  return {worst < 1e-3, fmt("%.0f parameters x 10 seeds, max relative error %.3g (%.0f inputs redrawn at kinks)",
                            static_cast<double>(params), worst, redraws)};
}

// ---- injection properties --------------------------------------------------

Outcome criterion8() {
  Rng r(8008);
  for (int i = 0; i < 1000; ++i) {
    TrajectoryConfig tc;
    tc.seed = r.next();
    tc.duration_s = r.uniform(18.0, 120.0);
    const SensorKind kind = r.uniform() < 0.5 ? SensorKind::Imu : SensorKind::Accelerometer;
    const SensorTrace trace = add_measurement_noise(generate_trajectory(tc, kind), r.next());
    const std::size_t n = trace.size();
    FaultSpec s;
    s.kind = r.uniform() < 0.5 ? FaultKind::StuckAtLast : FaultKind::StuckAtRandom;
    if (r.uniform() < 0.5) s.axis = static_cast<int>(r.uniform_int(0, 2));
    s.noise_on_top = r.uniform() < 0.5;
    s.start_index = static_cast<std::size_t>(r.uniform_int(1, static_cast<std::int64_t>(n) - 1));
    s.duration = static_cast<std::size_t>(
        r.uniform_int(1, static_cast<std::int64_t>(n - s.start_index)));
    for (auto& v : s.stuck_value) v = r.uniform(-1.0, 1.0);
    const auto [out, label] = inject_fault(trace, s, r.next());
    for (std::size_t t = 0; t < n; ++t) {
      const bool inside = t >= s.start_index && t < s.end_index();
      if (label.flags[t] != (inside ? 1 : 0) || label.meta[t].has_value() != inside)
        return {false, "label mismatch in spec " + std::to_string(i)};
      if (inside && !(*label.meta[t] == s.fault_case()))
        return {false, "metadata mismatch in spec " + std::to_string(i)};
      for (int c = 0; c < 3; ++c) {
        const double before = trace.channels[static_cast<std::size_t>(c)][t];
        const double after = out.channels[static_cast<std::size_t>(c)][t];
        if (!inside || !s.affects(c)) {
          if (std::memcmp(&before, &after, sizeof(double)) != 0)
            return {false, "untouched sample changed in spec " + std::to_string(i)};
          continue;
        }
        const double held = s.kind == FaultKind::StuckAtLast
                                 ? trace.channels[static_cast<std::size_t>(c)][s.start_index - 1]
                                 : s.stuck_value[static_cast<std::size_t>(c)];
        if (!s.noise_on_top && after != held)
          return {false, "held value wrong in spec " + std::to_string(i)};
        if (s.noise_on_top && std::abs(after - held) > 8.0 * trace.noise_sigma)
          return {false, "noise on top too large in spec " + std::to_string(i)};
      }
    }
  }
  // Balance over random policies.
  double worst = 0.0;
  for (int p = 0; p < 5; ++p) {
    InjectionPolicy policy;
    policy.seed = r.next();
    policy.target_fault_fraction = r.uniform(0.2, 0.6);
    std::vector<std::pair<SensorTrace, SensorTrace>> traces;
    for (int t = 0; t < 20; ++t) {
      TrajectoryConfig tc;
      tc.seed = r.next();
      traces.emplace_back(generate_trajectory(tc, SensorKind::Imu),
                          generate_trajectory(tc, SensorKind::Accelerometer));
    }
    const LabeledDataset ds = build_dataset(policy, traces);
    for (SensorKind k : {SensorKind::Imu, SensorKind::Accelerometer})
      worst = std::max(worst, std::abs(ds.faulted_fraction(k) - policy.target_fault_fraction) /
                                  policy.target_fault_fraction);
  }
  return {worst <= 0.10, fmt("1000 specs consistent; worst relative balance error %.4f", worst)};
}

// ---- feature properties ----------------------------------------------------

Outcome criterion9() {
  Rng r(9009);
  double worst = 0.0;
  std::size_t interiors = 0;
  for (int i = 0; i < 500; ++i) {
    const std::size_t n = static_cast<std::size_t>(r.uniform_int(2, 400));
    const double rate = r.uniform(1.0, 50.0);
    std::vector<double> x(n), y(n), z(n);
    for (std::size_t t = 0; t < n; ++t) {
      x[t] = r.gaussian();
      y[t] = r.uniform(-5, 5);
    }
    const double a = r.uniform(-3, 3), b = r.uniform(-3, 3);
    for (std::size_t t = 0; t < n; ++t) z[t] = a * x[t] + b * y[t];
    const auto dx = derivative(x, rate), dy = derivative(y, rate), dz = derivative(z, rate);
    for (std::size_t t = 1; t < n; ++t)
      worst = std::max(worst, std::abs(dz[t] - (a * dx[t] + b * dy[t])) /
                                  std::max(1.0, std::abs(dz[t])));
  }
  for (int i = 0; i < 300; ++i) {
    TrajectoryConfig tc;
    tc.seed = r.next();
    tc.duration_s = 40.0;
    const SensorTrace trace =
        add_measurement_noise(generate_trajectory(tc, SensorKind::Imu), r.next());
    FaultSpec s;
    s.kind = r.uniform() < 0.5 ? FaultKind::StuckAtLast : FaultKind::StuckAtRandom;
    if (r.uniform() < 0.5) s.axis = static_cast<int>(r.uniform_int(0, 2));
    s.start_index = static_cast<std::size_t>(r.uniform_int(1, 300));
    s.duration = static_cast<std::size_t>(r.uniform_int(2, 399 - static_cast<std::int64_t>(s.start_index)));
    for (auto& v : s.stuck_value) v = r.uniform(-0.5, 0.5);
    const auto [out, label] = inject_fault(trace, s, r.next());
    const auto frames = extract_features(out, 1.0);
    for (int c = 0; c < 3; ++c) {
      if (!s.affects(c)) continue;
      for (std::size_t t = s.start_index + 1; t < s.end_index(); ++t) {
        if (frames[t].channels[static_cast<std::size_t>(c)].derivative != 0.0)
          return {false, "nonzero derivative inside a noise-free stuck interval"};
        ++interiors;
      }
    }
  }
  return {worst < 1e-9, fmt("linearity max error %.3g; %.0f stuck interior samples have zero derivative",
                            worst, static_cast<double>(interiors))};
}

// ---- hyperparameter fidelity -----------------------------------------------

Outcome criterion10(const DeskRun& run) {
  Outcome o;
  int deepest = 0;
  if (run.error.empty()) {
    const TreeModel m = tree_from_json(read_text_file(run.dir / "tree_model.json"));
    deepest = m.depth();
    o.pass = m.depth() <= 6 && m.leaf_count() <= 64;
  } else {
    o.pass = false;
  }
  Rng r(1010);
  for (int i = 0; i < 20; ++i) {
    FeatureMatrix x;
    x.cols = 3;
    x.names = {"a", "b", "c"};
    std::vector<std::uint8_t> y;
    for (int k = 0; k < 400; ++k) {
      x.append_row(std::vector<double>{r.uniform(), r.uniform(), r.uniform()});
      y.push_back(r.uniform() < 0.5 ? 1 : 0);
    }
    TreeHyper hyper;
    hyper.min_child_weight = 0.0;
    const TreeModel m = train_tree(x, y, hyper);
    deepest = std::max(deepest, m.depth());
    o.pass = o.pass && m.depth() <= 6;
  }
  const CnnArchitecture def;
  bool rejects = false;
  try {
    CnnArchitecture a;
    a.merge_stages = {{3, 32, 64}};
    (void)make_cnn(a);
  } catch (const UsageError&) {
    rejects = true;
  }
  RunConfig cfg;
  o.pass = o.pass && def.input_length == 180 && cfg.features.window == 180 &&
           cfg.tree.max_depth == 6 && cfg.tree.num_trees == 1 && rejects;
  o.detail = fmt("deepest tree %.0f, default CNN input %.0f, exhausting pool stack ",
                 static_cast<double>(deepest), static_cast<double>(def.input_length)) +
             (rejects ? "rejected" : "accepted");
  if (!run.error.empty()) o.detail += "; " + run.error;
  return o;
}

}  // namespace

// Usage: stuckfdir_acceptance [work_dir] [--skip-desk]
int main(int argc, char** argv) {
  fs::path root = fs::temp_directory_path() / "stuckfdir_acceptance";
  bool skip_desk = false;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--skip-desk") skip_desk = true;
    else root = argv[i];
  }
  DeskRun a, b;
  if (skip_desk) {
    a.error = b.error = "desk-scale runs skipped";
  } else {
    std::printf("desk-scale runs under %s\n", root.string().c_str());
    std::fflush(stdout);
    a = desk_run(root / "run_a");
    b = desk_run(root / "run_b");
  }

  report(1, "CNN recall exceeds tree recall by 0.10 with precision >= 0.90",
         [&] { return criterion1(a); });
  report(2, "tree false negatives are noisy", [&] { return criterion2(a); });
  report(3, "tree noise-free recall >= 0.95", [&] { return criterion3(a); });
  report(4, "transfer lowers recall, keeps noise-free recall", [&] { return criterion4(a); });
  report(5, "split search matches brute-force oracle", criterion5);
  report(6, "backprop matches finite differences", criterion6);
  report(7, "seeded runs are byte-identical", [&] { return criterion7(a, b); });
  report(8, "fault injection properties", criterion8);
  report(9, "feature properties", criterion9);
  report(10, "depth-6 tree and 180-sample CNN input", [&] { return criterion10(a); });
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
