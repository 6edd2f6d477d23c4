#include "stuckfdir/convnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "stuckfdir/error.hpp"
#include "stuckfdir/gbtree.hpp"
#include "stuckfdir/rng.hpp"

namespace stuckfdir {

namespace {

std::size_t window_channels(const CnnArchitecture& a) {
  return std::accumulate(a.group_channels.begin(), a.group_channels.end(), std::size_t{0});
}

}  // namespace

std::size_t CnnArchitecture::input_channels() const {
  return window_channels(*this) * (derivative_channels ? 2 : 1);
}

std::size_t CnnArchitecture::branch_input_channels(std::size_t group) const {
  return group_channels.at(group) * (derivative_channels ? 2 : 1);
}

namespace {

std::size_t stage_output_length(std::size_t length, const ConvStage& s, const std::string& where) {
  if (s.kernel_size < 1 || s.num_filters < 1 || s.pool_size < 1)
    throw UsageError(where + ": kernel, filter count and pool size must be positive");
  if (length < s.kernel_size)
    throw UsageError(where + ": kernel " + std::to_string(s.kernel_size) +
                     " exceeds input length " + std::to_string(length));
  const std::size_t conv = length - s.kernel_size + 1;
  const std::size_t pooled = conv / s.pool_size;
  if (pooled < 1)
    throw UsageError(where + ": pooling exhausts the sequence (length " + std::to_string(conv) +
                     ", pool " + std::to_string(s.pool_size) + ")");
  return pooled;
}

}  // namespace

std::size_t CnnArchitecture::final_length() const {
  std::size_t len = input_length;
  for (std::size_t s = 0; s < branch_stages.size(); ++s)
    len = stage_output_length(len, branch_stages[s], "branch stage " + std::to_string(s));
  for (std::size_t s = 0; s < merge_stages.size(); ++s)
    len = stage_output_length(len, merge_stages[s], "merge stage " + std::to_string(s));
  return len;
}

std::size_t CnnArchitecture::flat_size() const {
  std::size_t channels;
  if (!merge_stages.empty())
    channels = merge_stages.back().num_filters;
  else if (!branch_stages.empty())
    channels = group_channels.size() * branch_stages.back().num_filters;
  else
    channels = input_channels();
  return channels * final_length();
}

void CnnArchitecture::validate() const {
  if (outputs != 2) throw UsageError("the CNN must have exactly two output heads");
  if (group_channels.empty()) throw UsageError("the CNN needs at least one channel group");
  for (auto c : group_channels)
    if (c == 0) throw UsageError("channel groups must be nonempty");
  if (window_channels(*this) != kWindowChannels)
    throw UsageError("channel groups must cover the " + std::to_string(kWindowChannels) +
                     " window channels");
  if (input_length < 2) throw UsageError("input length must be at least 2");
  (void)final_length();
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw UsageError("learning rate must be nonnegative");
  if (batch_size < 1) throw UsageError("batch size must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw UsageError("Adam betas must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw UsageError("Adam epsilon must be positive");
}

const ParamBlock& CnnModel::block(const std::string& name) const {
  for (const auto& b : layout)
    if (b.name == name) return b;
  throw DataError("no parameter block named '" + name + "'");
}

CnnModel make_cnn(const CnnArchitecture& arch, const TrainConfig& train) {
  arch.validate();
  train.validate();
  CnnModel m;
  m.arch = arch;
  m.train = train;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::vector<std::size_t> shape) {
    const std::size_t count =
        std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    m.layout.push_back({std::move(name), std::move(shape), offset, count});
    offset += count;
  };
  for (std::size_t g = 0; g < arch.group_channels.size(); ++g) {
    std::size_t in = arch.branch_input_channels(g);
    for (std::size_t s = 0; s < arch.branch_stages.size(); ++s) {
      const auto& st = arch.branch_stages[s];
      const std::string prefix = "branch" + std::to_string(g) + ".stage" + std::to_string(s);
      add(prefix + ".weight", {st.num_filters, in, st.kernel_size});
      add(prefix + ".bias", {st.num_filters});
      in = st.num_filters;
    }
  }
  std::size_t in = arch.branch_stages.empty()
                       ? arch.input_channels()
                       : arch.group_channels.size() * arch.branch_stages.back().num_filters;
  for (std::size_t s = 0; s < arch.merge_stages.size(); ++s) {
    const auto& st = arch.merge_stages[s];
    const std::string prefix = "merge.stage" + std::to_string(s);
    add(prefix + ".weight", {st.num_filters, in, st.kernel_size});
    add(prefix + ".bias", {st.num_filters});
    in = st.num_filters;
  }
  add("dense.weight", {arch.outputs, arch.flat_size()});
  add("dense.bias", {arch.outputs});
  m.params.assign(offset, 0.0f);
  return m;
}

CnnModel make_initialized_cnn(const CnnArchitecture& arch, const TrainConfig& train) {
  CnnModel m = make_cnn(arch, train);
  Rng rng(derive_seed(train.seed, "cnn/init"));
  for (const auto& b : m.layout) {
    if (b.shape.size() < 2) continue;  // biases stay zero
    double fan_in, fan_out;
    if (b.shape.size() == 3) {
      fan_in = static_cast<double>(b.shape[1] * b.shape[2]);
      fan_out = static_cast<double>(b.shape[0] * b.shape[2]);
    } else {
      fan_in = static_cast<double>(b.shape[1]);
      fan_out = static_cast<double>(b.shape[0]);
    }
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (std::size_t i = 0; i < b.count; ++i)
      m.params[b.offset + i] = static_cast<float>(rng.uniform(-limit, limit));
  }
  return m;
}

class CnnEngine {
 public:
  using StageCache = CnnWorkspace::StageCache;

  CnnEngine(const CnnModel& m, CnnWorkspace& ws) : m_(m), ws_(ws) {}

  CnnOutput forward(std::span<const double> input) {
    const auto& arch = m_.arch;
    if (input.size() != arch.input_channels() * arch.input_length)
      throw DataError("CNN input has " + std::to_string(input.size()) + " values, expected " +
                      std::to_string(arch.input_channels() * arch.input_length));
    ws_.input_.assign(input.begin(), input.end());
    const std::size_t groups = arch.group_channels.size();
    ws_.branches_.resize(groups);

    std::size_t block = 0;
    std::size_t channel_offset = 0;
    std::size_t branch_len = arch.input_length;
    std::vector<const double*> group_out(groups);
    std::vector<std::size_t> group_channels(groups);
    for (std::size_t g = 0; g < groups; ++g) {
      auto& caches = ws_.branches_[g];
      caches.resize(arch.branch_stages.size());
      const double* in = ws_.input_.data() + channel_offset * arch.input_length;
      std::size_t in_ch = arch.branch_input_channels(g);
      std::size_t len = arch.input_length;
      for (std::size_t s = 0; s < arch.branch_stages.size(); ++s) {
        run_stage(arch.branch_stages[s], in, in_ch, len, block, caches[s]);
        block += 2;
        in = caches[s].out.data();
        in_ch = arch.branch_stages[s].num_filters;
        len = caches[s].out_length;
      }
      group_out[g] = in;
      group_channels[g] = in_ch;
      branch_len = len;
      channel_offset += arch.branch_input_channels(g);
    }

    const std::size_t concat_ch =
        std::accumulate(group_channels.begin(), group_channels.end(), std::size_t{0});
    ws_.concat_.resize(concat_ch * branch_len);
    for (std::size_t g = 0, ch = 0; g < groups; ch += group_channels[g], ++g)
      std::copy_n(group_out[g], group_channels[g] * branch_len,
                  ws_.concat_.data() + ch * branch_len);

    ws_.merge_.resize(arch.merge_stages.size());
    const double* in = ws_.concat_.data();
    std::size_t in_ch = concat_ch;
    std::size_t len = branch_len;
    for (std::size_t s = 0; s < arch.merge_stages.size(); ++s) {
      run_stage(arch.merge_stages[s], in, in_ch, len, block, ws_.merge_[s]);
      block += 2;
      in = ws_.merge_[s].out.data();
      in_ch = arch.merge_stages[s].num_filters;
      len = ws_.merge_[s].out_length;
    }
    ws_.flat_.assign(in, in + in_ch * len);

    const ParamBlock& wd = m_.layout[block];
    const ParamBlock& bd = m_.layout[block + 1];
    const std::size_t flat = ws_.flat_.size();
    CnnOutput out;
    for (std::size_t o = 0; o < 2; ++o) {
      double z = m_.params[bd.offset + o];
      const float* w = m_.params.data() + wd.offset + o * flat;
      for (std::size_t i = 0; i < flat; ++i) z += static_cast<double>(w[i]) * ws_.flat_[i];
      out.logits[o] = z;
      out.prob[o] = sigmoid(z);
    }
    ws_.output_ = out;
    return out;
  }

  void backward(const std::array<std::uint8_t, 2>& labels, std::span<double> grad) {
    const auto& arch = m_.arch;
    if (grad.size() != m_.params.size()) throw DataError("gradient buffer has the wrong size");
    std::size_t block = 2 * arch.group_channels.size() * arch.branch_stages.size() +
                        2 * arch.merge_stages.size();

    // d(BCE)/d(logit) = p - y for each head.
    const ParamBlock& wd = m_.layout[block];
    const ParamBlock& bd = m_.layout[block + 1];
    const std::size_t flat = ws_.flat_.size();
    ws_.grad_flat_.assign(flat, 0.0);
    for (std::size_t o = 0; o < 2; ++o) {
      const double p = std::clamp(ws_.output_.prob[o], kProbClamp, 1.0 - kProbClamp);
      const double dz = p - static_cast<double>(labels[o]);
      grad[bd.offset + o] += dz;
      double* gw = grad.data() + wd.offset + o * flat;
      const float* w = m_.params.data() + wd.offset + o * flat;
      for (std::size_t i = 0; i < flat; ++i) {
        gw[i] += dz * ws_.flat_[i];
        ws_.grad_flat_[i] += dz * static_cast<double>(w[i]);
      }
    }

    // Merge stages, last to first.
    std::vector<double>* upstream = &ws_.grad_flat_;
    ws_.grad_concat_.assign(ws_.concat_.size(), 0.0);
    for (std::size_t s = arch.merge_stages.size(); s-- > 0;) {
      block -= 2;
      StageCache& c = ws_.merge_[s];
      const double* in = s == 0 ? ws_.concat_.data() : ws_.merge_[s - 1].out.data();
      std::vector<double>* grad_in = s == 0 ? &ws_.grad_concat_ : &ws_.merge_[s - 1].grad_out;
      if (s > 0) grad_in->assign(ws_.merge_[s - 1].out.size(), 0.0);
      stage_backward(arch.merge_stages[s], c, *upstream, in, block, grad, grad_in);
      upstream = grad_in;
    }
    if (arch.merge_stages.empty()) ws_.grad_concat_ = ws_.grad_flat_;

    // Split the concat gradient back to the groups and run each branch.
    const std::size_t groups = arch.group_channels.size();
    if (arch.branch_stages.empty()) return;  // concat is the raw input
    const std::size_t branch_len = ws_.branches_[0].back().out_length;
    const std::size_t group_ch = arch.branch_stages.back().num_filters;
    for (std::size_t g = groups; g-- > 0;) {
      auto& caches = ws_.branches_[g];
      auto& last = caches.back();
      last.grad_out.assign(ws_.grad_concat_.begin() + static_cast<std::ptrdiff_t>(g * group_ch * branch_len),
                           ws_.grad_concat_.begin() + static_cast<std::ptrdiff_t>((g + 1) * group_ch * branch_len));
      std::size_t channel_offset = 0;
      for (std::size_t h = 0; h < g; ++h) channel_offset += arch.branch_input_channels(h);
      std::size_t gblock = 2 * g * arch.branch_stages.size();
      for (std::size_t s = arch.branch_stages.size(); s-- > 0;) {
        const double* in = s == 0 ? ws_.input_.data() + channel_offset * arch.input_length
                                  : caches[s - 1].out.data();
        std::vector<double>* grad_in = nullptr;
        if (s > 0) {
          grad_in = &caches[s - 1].grad_out;
          grad_in->assign(caches[s - 1].out.size(), 0.0);
        }
        stage_backward(arch.branch_stages[s], caches[s], caches[s].grad_out, in, gblock + 2 * s,
                       grad, grad_in);
      }
    }
  }

 private:
  void run_stage(const ConvStage& st, const double* in, std::size_t in_ch, std::size_t len,
                 std::size_t block, StageCache& c) {
    const ParamBlock& wb = m_.layout[block];
    const ParamBlock& bb = m_.layout[block + 1];
    const std::size_t k = st.kernel_size;
    const std::size_t f_count = st.num_filters;
    c.in_channels = in_ch;
    c.in_length = len;
    c.conv_length = len - k + 1;
    c.out_length = c.conv_length / st.pool_size;
    const std::size_t cl = c.conv_length;
    c.pre.assign(f_count * cl, 0.0);
    for (std::size_t f = 0; f < f_count; ++f) {
      double* z = c.pre.data() + f * cl;
      const double bias = m_.params[bb.offset + f];
      std::fill(z, z + cl, bias);
      for (std::size_t ch = 0; ch < in_ch; ++ch) {
        const float* w = m_.params.data() + wb.offset + (f * in_ch + ch) * k;
        const double* x = in + ch * len;
        for (std::size_t j = 0; j < k; ++j) {
          const double wj = w[j];
          const double* xj = x + j;
          for (std::size_t t = 0; t < cl; ++t) z[t] += wj * xj[t];
        }
      }
    }
    // ReLU then max-pool; the first maximal position wins.
    const std::size_t p = st.pool_size;
    c.out.resize(f_count * c.out_length);
    c.arg.resize(f_count * c.out_length);
    for (std::size_t f = 0; f < f_count; ++f) {
      const double* z = c.pre.data() + f * cl;
      for (std::size_t o = 0; o < c.out_length; ++o) {
        std::size_t best = o * p;
        double best_v = std::max(z[best], 0.0);
        for (std::size_t i = o * p + 1; i < o * p + p; ++i) {
          const double v = std::max(z[i], 0.0);
          if (v > best_v) {
            best_v = v;
            best = i;
          }
        }
        c.out[f * c.out_length + o] = best_v;
        c.arg[f * c.out_length + o] = best;
      }
    }
  }

  void stage_backward(const ConvStage& st, StageCache& c, const std::vector<double>& grad_out,
                      const double* in, std::size_t block, std::span<double> grad,
                      std::vector<double>* grad_in) {
    const ParamBlock& wb = m_.layout[block];
    const ParamBlock& bb = m_.layout[block + 1];
    const std::size_t k = st.kernel_size;
    const std::size_t cl = c.conv_length;
    const std::size_t in_ch = c.in_channels;
    const std::size_t len = c.in_length;
    c.grad_pre.assign(st.num_filters * cl, 0.0);
    for (std::size_t f = 0; f < st.num_filters; ++f) {
      for (std::size_t o = 0; o < c.out_length; ++o) {
        const std::size_t pos = c.arg[f * c.out_length + o];
        // ReLU passes gradient only for strictly positive pre-activations.
        if (c.pre[f * cl + pos] > 0.0) c.grad_pre[f * cl + pos] += grad_out[f * c.out_length + o];
      }
    }
    for (std::size_t f = 0; f < st.num_filters; ++f) {
      const double* dz = c.grad_pre.data() + f * cl;
      double db = 0.0;
      for (std::size_t t = 0; t < cl; ++t) db += dz[t];
      grad[bb.offset + f] += db;
      for (std::size_t ch = 0; ch < in_ch; ++ch) {
        double* gw = grad.data() + wb.offset + (f * in_ch + ch) * k;
        const float* w = m_.params.data() + wb.offset + (f * in_ch + ch) * k;
        const double* x = in + ch * len;
        for (std::size_t j = 0; j < k; ++j) {
          double acc = 0.0;
          const double* xj = x + j;
          for (std::size_t t = 0; t < cl; ++t) acc += dz[t] * xj[t];
          gw[j] += acc;
          if (grad_in) {
            const double wj = w[j];
            double* gx = grad_in->data() + ch * len + j;
            for (std::size_t t = 0; t < cl; ++t) gx[t] += wj * dz[t];
          }
        }
      }
    }
  }

  const CnnModel& m_;
  CnnWorkspace& ws_;
};

CnnOutput forward(const CnnModel& model, std::span<const double> input, CnnWorkspace& ws) {
  return CnnEngine(model, ws).forward(input);
}

CnnOutput forward(const CnnModel& model, std::span<const double> input) {
  CnnWorkspace ws;
  return forward(model, input, ws);
}

namespace {

using ChannelMap = std::array<std::size_t, kWindowChannels>;
using ChannelSign = std::array<double, kWindowChannels>;

constexpr ChannelMap kIdentityMap{0, 1, 2, 3, 4, 5};
constexpr ChannelSign kNoFlip{1, 1, 1, 1, 1, 1};

void check_window(const CnnModel& model, const Window& window) {
  if (window.length != model.arch.input_length)
    throw DataError("window length " + std::to_string(window.length) +
                    " does not match the model input length " +
                    std::to_string(model.arch.input_length));
}

// Output channel c of the window reads source channel src[c] times sign[c].
void build_input(const CnnModel& model, const Window& window, const ChannelMap& src,
                 const ChannelSign& sign, std::vector<double>& norm, std::span<double> out) {
  const auto& arch = model.arch;
  const std::size_t len = window.length;
  if (out.size() != arch.input_channels() * len) throw DataError("CNN input buffer has the wrong size");
  norm.resize(kWindowChannels * len);
  window.normalized(norm);
  std::size_t c = 0, row = 0;
  for (std::size_t g = 0; g < arch.group_channels.size(); ++g) {
    const std::size_t n = arch.group_channels[g];
    for (std::size_t j = 0; j < n; ++j) {
      const double* v = norm.data() + src[c + j] * len;
      double* o = out.data() + (row + j) * len;
      for (std::size_t i = 0; i < len; ++i) o[i] = sign[c + j] * v[i];
      if (!arch.derivative_channels) continue;
      const std::size_t sc = src[c + j];
      const SensorTrace& tr = sc < 3 ? window.source->imu : window.source->acc;
      const double factor = sign[c + j] * tr.sample_rate_hz / model.derivative_scale[sc < 3 ? 0 : 1];
      const auto r = window.raw(sc);
      double* d = out.data() + (row + n + j) * len;
      d[0] = 0.0;
      for (std::size_t i = 1; i < len; ++i) d[i] = (r[i] - r[i - 1]) * factor;
    }
    c += n;
    row += arch.branch_input_channels(g);
  }
}

}  // namespace

void cnn_input(const CnnModel& model, const Window& window, std::span<double> out) {
  check_window(model, window);
  std::vector<double> norm;
  build_input(model, window, kIdentityMap, kNoFlip, norm, out);
}

std::vector<double> cnn_input(const CnnModel& model, const Window& window) {
  std::vector<double> out(model.arch.input_channels() * window.length);
  cnn_input(model, window, out);
  return out;
}

CnnOutput forward(const CnnModel& model, const Window& window) {
  return forward(model, cnn_input(model, window));
}

double bce_loss(const std::array<double, 2>& prob, const std::array<std::uint8_t, 2>& labels) {
  double loss = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    const double p = std::clamp(prob[i], kProbClamp, 1.0 - kProbClamp);
    loss -= labels[i] ? std::log(p) : std::log(1.0 - p);
  }
  return loss;
}

void accumulate_gradients(const CnnModel& model, CnnWorkspace& ws,
                          const std::array<std::uint8_t, 2>& labels, std::span<double> grad) {
  CnnEngine(model, ws).backward(labels, grad);
}

std::vector<double> backward(const CnnModel& model, std::span<const double> input,
                             const std::array<std::uint8_t, 2>& labels) {
  CnnWorkspace ws;
  forward(model, input, ws);
  std::vector<double> grad(model.params.size(), 0.0);
  accumulate_gradients(model, ws, labels, grad);
  return grad;
}

std::vector<double> backward(const CnnModel& model, const Window& window,
                             const std::array<std::uint8_t, 2>& labels) {
  return backward(model, cnn_input(model, window), labels);
}

TrainResult train_cnn(const CnnModel& initial, std::span<const Window> windows) {
  const TrainConfig& cfg = initial.train;
  cfg.validate();
  initial.arch.validate();
  if (windows.empty()) throw TrainingError("no training windows");
  std::array<std::size_t, 2> positives{};
  for (const auto& w : windows) {
    if (w.length != initial.arch.input_length)
      throw DataError("training window length does not match the model input length");
    positives[0] += w.label[0];
    positives[1] += w.label[1];
  }
  for (std::size_t h = 0; h < 2; ++h)
    if (positives[h] == 0 || positives[h] == windows.size())
      throw TrainingError(std::string("training windows contain a single class for the ") +
                          (h == 0 ? "IMU" : "accelerometer") + " head");

  TrainResult result{initial, {}};
  CnnModel& m = result.model;
  const std::size_t n_params = m.params.size();
  std::vector<double> grad(n_params), adam_m(n_params, 0.0), adam_v(n_params, 0.0);
  std::vector<double> window_loss(windows.size());
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> input(m.arch.input_channels() * m.arch.input_length);
  std::vector<double> norm;
  CnnWorkspace ws;
  Rng rng(derive_seed(cfg.seed, "cnn/shuffle"));
  Rng aug(derive_seed(cfg.seed, "cnn/augment"));
  ChannelMap src = kIdentityMap;
  ChannelSign sign = kNoFlip;
  std::uint64_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr =
        cfg.cosine_decay ? cfg.learning_rate * 0.5 *
                               (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) /
                                               static_cast<double>(cfg.epochs)))
                         : cfg.learning_rate;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(
                                  rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);

    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t i = b; i < end; ++i) {
        const Window& w = windows[order[i]];
        if (cfg.augment) {
          for (auto& x : sign) x = aug.uniform_int(0, 1) ? -1.0 : 1.0;
          std::size_t c = 0;
          for (std::size_t n : m.arch.group_channels) {
            std::iota(src.begin() + static_cast<std::ptrdiff_t>(c),
                      src.begin() + static_cast<std::ptrdiff_t>(c + n), c);
            for (std::size_t k = n; k > 1; --k)
              std::swap(src[c + k - 1],
                        src[c + static_cast<std::size_t>(
                                     aug.uniform_int(0, static_cast<std::int64_t>(k) - 1))]);
            c += n;
          }
        }
        build_input(m, w, src, sign, norm, input);
        const CnnOutput out = forward(m, input, ws);
        const double loss = bce_loss(out.prob, w.label);
        if (!std::isfinite(loss))
          throw TrainingError("training diverged: non-finite loss in epoch " +
                              std::to_string(epoch));
        window_loss[order[i]] = loss;
        accumulate_gradients(m, ws, w.label, grad);
      }
      const double scale = 1.0 / static_cast<double>(end - b);
      ++step;
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      for (std::size_t p = 0; p < n_params; ++p) {
        const double g = grad[p] * scale;
        adam_m[p] = cfg.beta1 * adam_m[p] + (1.0 - cfg.beta1) * g;
        adam_v[p] = cfg.beta2 * adam_v[p] + (1.0 - cfg.beta2) * g * g;
        const double update =
            lr * (adam_m[p] / c1) / (std::sqrt(adam_v[p] / c2) + cfg.epsilon);
        m.params[p] = static_cast<float>(static_cast<double>(m.params[p]) - update);
      }
    }
    double total = 0.0;
    for (double l : window_loss) total += l;
    const double mean = total / static_cast<double>(windows.size());
    if (!std::isfinite(mean)) throw TrainingError("training diverged: non-finite epoch loss");
    result.loss_history.push_back(mean);
  }
  for (float p : m.params)
    if (!std::isfinite(p)) throw TrainingError("training diverged: non-finite parameter");
  return result;
}

std::array<std::uint8_t, 2> predict_window(const CnnModel& model, const Window& window,
                                           double threshold) {
  const CnnOutput out = forward(model, window);
  return {static_cast<std::uint8_t>(out.prob[0] >= threshold ? 1 : 0),
          static_cast<std::uint8_t>(out.prob[1] >= threshold ? 1 : 0)};
}

using nlohmann::json;

namespace {

json stages_to_json(const std::vector<ConvStage>& stages) {
  json a = json::array();
  for (const auto& s : stages)
    a.push_back({{"kernel_size", s.kernel_size}, {"num_filters", s.num_filters},
                 {"pool_size", s.pool_size}});
  return a;
}

std::vector<ConvStage> stages_from_json(const json& a) {
  std::vector<ConvStage> out;
  for (const auto& s : a)
    out.push_back({s.at("kernel_size").get<std::size_t>(), s.at("num_filters").get<std::size_t>(),
                   s.at("pool_size").get<std::size_t>()});
  return out;
}

}  // namespace

std::string cnn_to_bytes(const CnnModel& model) {
  json h;
  h["format"] = "stuckfdir-cnn";
  h["version"] = 1;
  h["architecture"] = {{"input_length", model.arch.input_length},
                       {"group_channels", model.arch.group_channels},
                       {"branch_stages", stages_to_json(model.arch.branch_stages)},
                       {"merge_stages", stages_to_json(model.arch.merge_stages)},
                       {"outputs", model.arch.outputs},
                       {"derivative_channels", model.arch.derivative_channels}};
  h["training"] = {{"learning_rate", model.train.learning_rate},
                   {"batch_size", model.train.batch_size},
                   {"epochs", model.train.epochs},
                   {"seed", model.train.seed},
                   {"beta1", model.train.beta1},
                   {"beta2", model.train.beta2},
                   {"epsilon", model.train.epsilon},
                   {"augment", model.train.augment},
                   {"cosine_decay", model.train.cosine_decay}};
  h["derivative_scale"] = model.derivative_scale;
  json layout = json::array();
  for (const auto& b : model.layout)
    layout.push_back({{"name", b.name}, {"shape", b.shape}, {"offset", b.offset}, {"count", b.count}});
  h["layout"] = layout;
  h["dtype"] = "float32";
  h["byte_order"] = "little";
  h["param_count"] = model.params.size();

  std::string out = h.dump() + "\n";
  out.reserve(out.size() + 4 * model.params.size());
  for (float p : model.params) {
    const auto bits = std::bit_cast<std::uint32_t>(p);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
  }
  return out;
}

CnnModel cnn_from_bytes(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw DataError("CNN model file lacks a header line");
  try {
    const json h = json::parse(bytes.substr(0, nl));
    if (h.at("format").get<std::string>() != "stuckfdir-cnn")
      throw DataError("not a CNN model file");
    CnnArchitecture arch;
    const json& a = h.at("architecture");
    arch.input_length = a.at("input_length").get<std::size_t>();
    arch.group_channels = a.at("group_channels").get<std::vector<std::size_t>>();
    arch.branch_stages = stages_from_json(a.at("branch_stages"));
    arch.merge_stages = stages_from_json(a.at("merge_stages"));
    arch.outputs = a.at("outputs").get<std::size_t>();
    arch.derivative_channels = a.at("derivative_channels").get<bool>();
    TrainConfig tc;
    const json& t = h.at("training");
    tc.learning_rate = t.at("learning_rate").get<double>();
    tc.batch_size = t.at("batch_size").get<std::size_t>();
    tc.epochs = t.at("epochs").get<std::size_t>();
    tc.seed = t.at("seed").get<std::uint64_t>();
    tc.beta1 = t.at("beta1").get<double>();
    tc.beta2 = t.at("beta2").get<double>();
    tc.epsilon = t.at("epsilon").get<double>();
    tc.augment = t.at("augment").get<bool>();
    tc.cosine_decay = t.at("cosine_decay").get<bool>();
    CnnModel m = make_cnn(arch, tc);
    m.derivative_scale = h.at("derivative_scale").get<std::array<double, 2>>();
    for (double d : m.derivative_scale)
      if (!(d > 0.0) || !std::isfinite(d)) throw DataError("CNN derivative scale must be positive");
    const auto count = h.at("param_count").get<std::size_t>();
    if (count != m.params.size())
      throw DataError("CNN parameter count does not match its architecture");
    if (bytes.size() - nl - 1 != 4 * count) throw DataError("CNN parameter blob has the wrong size");
    const auto* blob = reinterpret_cast<const unsigned char*>(bytes.data() + nl + 1);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(blob[4 * i + b]) << (8 * b);
      m.params[i] = std::bit_cast<float>(bits);
    }
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed CNN model header: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(std::string("invalid CNN architecture in model file: ") + e.what());
  }
}

}  // namespace stuckfdir
