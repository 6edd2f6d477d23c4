#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "stuckfdir/convnet.hpp"
#include "stuckfdir/error.hpp"
#include "stuckfdir/rng.hpp"

using namespace stuckfdir;

namespace {

CnnArchitecture small_arch() {
  CnnArchitecture a;
  a.input_length = 24;
  a.branch_stages = {{3, 3, 2}, {3, 4, 2}};
  a.merge_stages = {{2, 3, 2}};
  return a;
}

std::vector<double> random_input(Rng& r, const CnnArchitecture& a) {
  std::vector<double> x(a.input_channels() * a.input_length);
  for (auto& v : x) v = r.uniform(-1.0, 1.0);
  return x;
}

void set_block(CnnModel& m, const std::string& name, const std::vector<float>& values) {
  const ParamBlock& b = m.block(name);
  ASSERT_EQ(values.size(), b.count) << name;
  std::copy(values.begin(), values.end(), m.params.begin() + static_cast<std::ptrdiff_t>(b.offset));
}

// One trajectory per window; flat windows are faults on both sensors.
std::vector<LabeledTrajectory> separable_set(std::size_t n, std::size_t length, std::uint64_t seed) {
  Rng r(seed);
  std::vector<LabeledTrajectory> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool flat = i % 2 == 0;
    auto& t = out[i];
    for (SensorTrace* s : {&t.imu, &t.acc}) {
      s->nominal_range.fill({-1.0, 1.0});
      const double level = r.uniform(-0.5, 0.5);
      for (auto& ch : s->channels) {
        ch.resize(length);
        for (auto& v : ch) v = flat ? level : r.uniform(-1.0, 1.0);
      }
    }
    t.imu_label = FaultLabel::nominal(length);
    t.acc_label = FaultLabel::nominal(length);
    if (flat) {
      t.imu_label.flags.back() = 1;
      t.imu_label.meta.back() = FaultCase{};
      t.acc_label.flags.back() = 1;
      t.acc_label.meta.back() = FaultCase{};
    }
  }
  return out;
}

std::vector<Window> windows_of(const std::vector<LabeledTrajectory>& set, std::size_t length) {
  std::vector<Window> w;
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto one = make_windows(set[i], i, length, 1);
    w.insert(w.end(), one.begin(), one.end());
  }
  return w;
}

}  // namespace

TEST(Cnn, DefaultShapes) {
  const CnnArchitecture a;
  EXPECT_EQ(a.input_length, 180u);
  EXPECT_EQ(a.input_channels(), 12u);
  EXPECT_EQ(a.branch_input_channels(0), 6u);
  // 180 -7+1 = 174 /2 = 87 -5+1 = 83 /2 = 41 -3+1 = 39 /2 = 19
  EXPECT_EQ(a.final_length(), 19u);
  EXPECT_EQ(a.flat_size(), 19u * 32u);
  const CnnModel m = make_cnn(a);
  std::size_t expected = 2 * (16 * 6 * 7 + 16 + 32 * 16 * 5 + 32) + 32 * 64 * 3 + 32 + 2 * 608 + 2;
  EXPECT_EQ(m.parameter_count(), expected);
  EXPECT_EQ(m.block("dense.weight").shape, (std::vector<std::size_t>{2, 608}));
}

TEST(Cnn, RejectsPoolingThatExhaustsInput) {
  CnnArchitecture a;
  a.merge_stages = {{3, 32, 40}};
  EXPECT_THROW(a.validate(), UsageError);
  EXPECT_THROW(make_cnn(a), UsageError);
  a = CnnArchitecture{};
  a.branch_stages = {{181, 4, 1}};
  EXPECT_THROW(a.validate(), UsageError);
  a = CnnArchitecture{};
  a.outputs = 3;
  EXPECT_THROW(a.validate(), UsageError);
}

TEST(Cnn, ZeroParametersGiveHalf) {
  const CnnModel m = make_cnn(CnnArchitecture{});
  Rng r(1);
  const auto out = forward(m, random_input(r, CnnArchitecture{}));
  EXPECT_EQ(out.prob[0], 0.5);
  EXPECT_EQ(out.prob[1], 0.5);
  const auto g = backward(m, random_input(r, CnnArchitecture{}), {1, 1});
  const ParamBlock& b = m.block("dense.bias");
  EXPECT_DOUBLE_EQ(g[b.offset], -0.5);
  EXPECT_DOUBLE_EQ(g[b.offset + 1], -0.5);
}

TEST(Cnn, ToyForwardMatchesHandComputation) {
  CnnArchitecture a;
  a.input_length = 4;
  a.derivative_channels = false;
  a.branch_stages = {};
  a.merge_stages = {{1, 1, 1}};
  CnnModel m = make_cnn(a);
  set_block(m, "merge.stage0.weight", {1, 0, 0, 0, 0, 0});
  set_block(m, "dense.weight", {0.25f, 0.5f, 0.75f, 0.125f, 1, 1, 1, 1});
  set_block(m, "dense.bias", {0.0625f, -1.0f});
  std::vector<double> x(6 * 4, 0.0);
  x[0] = 0.5;
  x[1] = -1.0;
  x[2] = 2.0;
  x[3] = 0.25;
  // relu -> [0.5, 0, 2, 0.25]
  const auto out = forward(m, x);
  EXPECT_DOUBLE_EQ(out.logits[0], 1.71875);
  EXPECT_DOUBLE_EQ(out.logits[1], 1.75);
  EXPECT_DOUBLE_EQ(out.prob[0], 1.0 / (1.0 + std::exp(-1.71875)));
  EXPECT_DOUBLE_EQ(out.prob[1], 1.0 / (1.0 + std::exp(-1.75)));
}

TEST(Cnn, InputStacksValuesThenDerivativesPerGroup) {
  LabeledTrajectory t;
  for (SensorTrace* s : {&t.imu, &t.acc}) {
    s->sample_rate_hz = 10.0;
    s->nominal_range.fill({-2.0, 2.0});
    for (auto& ch : s->channels) ch = {0.0, 0.5, 0.5, -1.0};
  }
  t.acc.channels[1] = {1.0, 1.0, 1.0, 1.0};
  t.imu_label = FaultLabel::nominal(4);
  t.acc_label = FaultLabel::nominal(4);
  CnnArchitecture a;
  a.input_length = 4;
  a.branch_stages = {};
  a.merge_stages = {{1, 1, 1}};
  CnnModel m = make_cnn(a);
  m.derivative_scale = {0.5, 2.0};
  const auto w = make_windows(t, 0, 4, 1);
  const auto x = cnn_input(m, w[0]);
  ASSERT_EQ(x.size(), 12u * 4u);
  auto row = [&](std::size_t r) { return std::vector<double>(x.begin() + 4 * r, x.begin() + 4 * r + 4); };
  // values: v / 2; derivatives: dv * 10 / scale, first sample 0
  EXPECT_EQ(row(0), (std::vector<double>{0.0, 0.25, 0.25, -0.5}));
  EXPECT_EQ(row(3), (std::vector<double>{0.0, 10.0, 0.0, -30.0}));
  EXPECT_EQ(row(6), (std::vector<double>{0.0, 0.25, 0.25, -0.5}));
  EXPECT_EQ(row(7), (std::vector<double>{0.5, 0.5, 0.5, 0.5}));
  EXPECT_EQ(row(9), (std::vector<double>{0.0, 2.5, 0.0, -7.5}));
  EXPECT_EQ(row(10), (std::vector<double>{0.0, 0.0, 0.0, 0.0}));
  a.derivative_channels = false;
  const CnnModel plain = make_cnn(a);
  EXPECT_EQ(cnn_input(plain, w[0]), w[0].normalized());
}

TEST(Cnn, LossExamples) {
  EXPECT_NEAR(bce_loss({0.5, 0.5}, {0, 1}), 2.0 * std::log(2.0), 1e-15);
  EXPECT_LT(bce_loss({1.0, 0.0}, {1, 0}), 1e-6);
  EXPECT_TRUE(std::isfinite(bce_loss({0.0, 1.0}, {1, 0})));
  Rng r(4);
  for (int i = 0; i < 100; ++i) {
    const std::array<double, 2> p{r.uniform(0.01, 0.99), r.uniform(0.01, 0.99)};
    const std::array<std::uint8_t, 2> y{static_cast<std::uint8_t>(i % 2),
                                        static_cast<std::uint8_t>((i / 2) % 2)};
    double want = 0.0;
    for (int h = 0; h < 2; ++h)
      want -= y[h] ? std::log(p[h]) : std::log(1.0 - p[h]);
    EXPECT_NEAR(bce_loss(p, y), want, 1e-12);
  }
}

TEST(Cnn, ZeroInputZeroKernelsGiveZeroKernelGradients) {
  CnnModel m = make_cnn(small_arch());
  const ParamBlock& b = m.block("dense.weight");
  for (std::size_t i = 0; i < b.count; ++i) m.params[b.offset + i] = 0.3f;
  const std::vector<double> x(m.arch.input_channels() * 24, 0.0);
  const auto g = backward(m, x, {1, 0});
  for (const auto& blk : m.layout) {
    if (blk.shape.size() != 3) continue;
    for (std::size_t i = 0; i < blk.count; ++i) ASSERT_EQ(g[blk.offset + i], 0.0) << blk.name;
  }
}

TEST(Cnn, GradientMatchesFiniteDifferences) {
  const CnnArchitecture a = small_arch();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    TrainConfig tc;
    tc.seed = seed;
    const CnnModel m = make_initialized_cnn(a, tc);
    ASSERT_LE(m.parameter_count(), 500u);
    Rng r(100 + seed);
    const std::array<std::uint8_t, 2> y{static_cast<std::uint8_t>(seed % 2), 1};
    auto x = random_input(r, a);
    while (!oracle::smooth_along_parameters(m, x, y, 1e-4)) x = random_input(r, a);
    const auto g = backward(m, x, y);
    const auto fd = oracle::finite_difference_gradient(m, x, y);
    for (std::size_t i = 0; i < g.size(); ++i)
      ASSERT_LT(oracle::relative_error(g[i], fd[i]), 1e-3)
          << "param " << i << " backprop " << g[i] << " fd " << fd[i];
  }
}

TEST(Cnn, TranslationEquivarianceWithoutPooling) {
  CnnArchitecture a;
  a.input_length = 30;
  a.derivative_channels = false;
  a.branch_stages = {{3, 4, 1}, {2, 3, 1}};
  a.merge_stages = {{3, 2, 1}};
  TrainConfig tc;
  tc.seed = 5;
  const CnnModel m = make_initialized_cnn(a, tc);
  Rng r(6);
  // One longer signal with a flat stretch; the second window is the first
  // shifted by one sample.
  std::vector<std::vector<double>> sig(6, std::vector<double>(31));
  for (auto& ch : sig)
    for (std::size_t t = 0; t < 31; ++t) ch[t] = (t >= 10 && t < 20) ? 0.2 : r.uniform(-1, 1);
  std::vector<double> xa(6 * 30), xb(6 * 30);
  for (std::size_t c = 0; c < 6; ++c)
    for (std::size_t t = 0; t < 30; ++t) {
      xa[c * 30 + t] = sig[c][t];
      xb[c * 30 + t] = sig[c][t + 1];
    }
  CnnWorkspace wa, wb;
  forward(m, xa, wa);
  forward(m, xb, wb);
  const std::size_t len = a.final_length();
  ASSERT_EQ(wa.features().size(), 2 * len);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i + 1 < len; ++i)
      EXPECT_DOUBLE_EQ(wb.features()[c * len + i], wa.features()[c * len + i + 1]);
}

TEST(Cnn, ZeroLearningRateChangesNothing) {
  const auto set = separable_set(40, 24, 1);
  const auto w = windows_of(set, 24);
  TrainConfig tc;
  tc.seed = 2;
  tc.learning_rate = 0.0;
  tc.epochs = 3;
  tc.augment = false;
  const CnnModel m = make_initialized_cnn(small_arch(), tc);
  const TrainResult res = train_cnn(m, w);
  EXPECT_EQ(res.model.params, m.params);
  ASSERT_EQ(res.loss_history.size(), 3u);
  EXPECT_EQ(res.loss_history[0], res.loss_history[1]);
  EXPECT_EQ(res.loss_history[1], res.loss_history[2]);
  tc.augment = true;
  const CnnModel ma = make_initialized_cnn(small_arch(), tc);
  EXPECT_EQ(train_cnn(ma, w).model.params, ma.params);
}

TEST(Cnn, TrainsOnSeparableWindowsDeterministically) {
  const auto set = separable_set(200, 24, 3);
  const auto w = windows_of(set, 24);
  TrainConfig tc;
  tc.seed = 9;
  tc.learning_rate = 0.01;
  tc.batch_size = 16;
  tc.epochs = 15;
  const CnnModel m = make_initialized_cnn(small_arch(), tc);
  const TrainResult a = train_cnn(m, w);
  for (std::size_t e = 1; e < a.loss_history.size(); ++e)
    EXPECT_LT(a.loss_history[e], a.loss_history[e - 1]) << "epoch " << e;
  std::size_t correct = 0;
  for (const auto& win : w) {
    const auto flags = predict_window(a.model, win);
    correct += flags[0] == win.label[0];
    correct += flags[1] == win.label[1];
  }
  EXPECT_GE(static_cast<double>(correct) / (2.0 * static_cast<double>(w.size())), 0.95);
  const TrainResult b = train_cnn(m, w);
  EXPECT_EQ(a.loss_history, b.loss_history);
  EXPECT_EQ(a.model.params, b.model.params);
}

TEST(Cnn, TrainingRejectsSingleClass) {
  auto set = separable_set(10, 24, 1);
  for (auto& t : set) {
    t.imu_label = FaultLabel::nominal(24);
  }
  TrainConfig tc;
  const CnnModel m = make_initialized_cnn(small_arch(), tc);
  EXPECT_THROW(train_cnn(m, windows_of(set, 24)), TrainingError);
}

TEST(Cnn, PredictThresholds) {
  const auto set = separable_set(2, 24, 1);
  const auto w = windows_of(set, 24);
  CnnModel m = make_cnn(small_arch());
  set_block(m, "dense.bias", {2.1972246f, -2.1972246f});  // p = (0.9, 0.1)
  EXPECT_EQ(predict_window(m, w[0]), (std::array<std::uint8_t, 2>{1, 0}));
  EXPECT_EQ(predict_window(m, w[0], 0.0), (std::array<std::uint8_t, 2>{1, 1}));
  CnnModel wrong = make_cnn(CnnArchitecture{});
  EXPECT_THROW(predict_window(wrong, w[0]), DataError);
}

TEST(Cnn, SerializationRoundTripsBitExactly) {
  TrainConfig tc;
  tc.seed = 17;
  tc.learning_rate = 0.002;
  CnnModel m = make_initialized_cnn(CnnArchitecture{}, tc);
  m.derivative_scale = {0.03, 0.25};
  const std::string bytes = cnn_to_bytes(m);
  const CnnModel back = cnn_from_bytes(bytes);
  EXPECT_EQ(back.params, m.params);
  EXPECT_EQ(back.train.learning_rate, 0.002);
  EXPECT_EQ(back.derivative_scale, m.derivative_scale);
  EXPECT_EQ(back.arch.branch_stages.size(), m.arch.branch_stages.size());
  EXPECT_EQ(cnn_to_bytes(back), bytes);
  EXPECT_THROW(cnn_from_bytes(bytes.substr(0, bytes.size() - 3)), DataError);
  EXPECT_THROW(cnn_from_bytes("garbage"), DataError);
}
