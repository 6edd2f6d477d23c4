#pragma once

// Multi-channel 1-D CNN over sensor windows.
//
// Input: per sensor group, its normalized channels and, when
// derivative_channels is set, one backward-difference channel per value
// channel, d[i] = (v[i] - v[i-1]) * rate / scale with d[0] = 0.
//
//   per sensor group: [conv -> ReLU -> max-pool] x branch_stages
//   concatenate the group feature maps along the channel axis
//   [conv -> ReLU -> max-pool] x merge_stages
//   flatten -> dense -> 2 logits -> elementwise sigmoid (IMU, accelerometer)
//
// Convolutions use valid padding; pooling drops a trailing remainder.
// Parameters are stored as float32 and every activation and gradient is
// accumulated in double.
//
// Parameter layout (flat, in this order):
//   for each group g, for each branch stage s:
//     branch{g}.stage{s}.weight [filters][in_channels][kernel], .bias [filters]
//   for each merge stage s:
//     merge.stage{s}.weight [filters][in_channels][kernel], .bias [filters]
//   dense.weight [2][flat], dense.bias [2]

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stuckfdir/featext.hpp"

namespace stuckfdir {

struct ConvStage {
  std::size_t kernel_size = 3;
  std::size_t num_filters = 8;
  std::size_t pool_size = 2;
};

struct CnnArchitecture {
  std::size_t input_length = kDefaultWindowLength;
  std::vector<std::size_t> group_channels{3, 3};
  std::vector<ConvStage> branch_stages{{7, 16, 2}, {5, 32, 2}};
  std::vector<ConvStage> merge_stages{{3, 32, 2}};
  std::size_t outputs = 2;
  bool derivative_channels = true;

  /// Channels fed to the network (window channels, doubled with derivatives).
  std::size_t input_channels() const;
  std::size_t branch_input_channels(std::size_t group) const;
  /// Spatial length after every stage; throws UsageError if the stack
  /// exhausts the input.
  std::size_t final_length() const;
  std::size_t flat_size() const;
  void validate() const;
};

struct TrainConfig {
  double learning_rate = 3e-3;
  std::size_t batch_size = 16;
  std::size_t epochs = 16;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Per window and step: random sign per sensor axis and a random axis
  /// order within each group.
  bool augment = true;
  /// Epoch e of E uses learning_rate * (1 + cos(pi e / E)) / 2.
  bool cosine_decay = true;

  void validate() const;
};

struct ParamBlock {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t count = 0;
};

struct CnnModel {
  CnnArchitecture arch;
  TrainConfig train;
  std::vector<ParamBlock> layout;
  std::vector<float> params;
  /// Derivative divisor per sensor kind (IMU, accelerometer).
  std::array<double, 2> derivative_scale{1.0, 1.0};

  std::size_t parameter_count() const { return params.size(); }
  const ParamBlock& block(const std::string& name) const;
};

/// Builds the layout with all parameters zero.
CnnModel make_cnn(const CnnArchitecture& arch, const TrainConfig& train = {});
/// Glorot-uniform weights (+/- sqrt(6 / (fan_in + fan_out))) from train.seed,
/// zero biases.
CnnModel make_initialized_cnn(const CnnArchitecture& arch, const TrainConfig& train);

struct CnnOutput {
  std::array<double, 2> logits{};
  std::array<double, 2> prob{};
};

/// Activation buffers for one forward/backward pass. Reusable across calls.
class CnnWorkspace {
 public:
  /// Flattened input of the dense layer from the last forward pass.
  std::span<const double> features() const { return flat_; }

 private:
  friend class CnnEngine;
  struct StageCache {
    std::size_t in_channels = 0, in_length = 0, conv_length = 0, out_length = 0;
    std::vector<double> pre;       // conv output before ReLU
    std::vector<double> out;       // pooled output
    std::vector<std::size_t> arg;  // argmax position in `pre` per pooled output
    std::vector<double> grad_pre;
    std::vector<double> grad_out;
  };
  std::vector<double> input_;
  std::vector<std::vector<StageCache>> branches_;
  std::vector<double> concat_;
  std::vector<double> grad_concat_;
  std::vector<StageCache> merge_;
  std::vector<double> flat_;
  std::vector<double> grad_flat_;
  CnnOutput output_;
};

/// Channel-major (input_channels x input_length) network input of a window.
void cnn_input(const CnnModel& model, const Window& window, std::span<double> out);
std::vector<double> cnn_input(const CnnModel& model, const Window& window);

/// Forward pass over a channel-major (input_channels x input_length) input.
CnnOutput forward(const CnnModel& model, std::span<const double> input, CnnWorkspace& ws);
CnnOutput forward(const CnnModel& model, std::span<const double> input);
CnnOutput forward(const CnnModel& model, const Window& window);

/// Summed binary cross-entropy of the two heads, p clamped to [1e-7, 1-1e-7].
double bce_loss(const std::array<double, 2>& prob, const std::array<std::uint8_t, 2>& labels);

/// Adds d loss / d params of the workspace's last forward pass to `grad`.
void accumulate_gradients(const CnnModel& model, CnnWorkspace& ws,
                          const std::array<std::uint8_t, 2>& labels, std::span<double> grad);

/// Gradient of bce_loss w.r.t. every parameter for one input.
std::vector<double> backward(const CnnModel& model, std::span<const double> input,
                             const std::array<std::uint8_t, 2>& labels);
std::vector<double> backward(const CnnModel& model, const Window& window,
                             const std::array<std::uint8_t, 2>& labels);

struct TrainResult {
  CnnModel model;
  std::vector<double> loss_history;  // mean training loss per epoch
};

/// Mini-batch Adam over `windows` for model.train.epochs epochs. The batch
/// order is a seeded Fisher-Yates shuffle per epoch; the epoch loss is the
/// mean of per-window losses observed during that epoch.
/// Throws TrainingError when a head sees a single class or the loss becomes
/// non-finite.
TrainResult train_cnn(const CnnModel& model, std::span<const Window> windows);

std::array<std::uint8_t, 2> predict_window(const CnnModel& model, const Window& window,
                                           double threshold = 0.5);

/// JSON header line, '\n', then the parameters as little-endian float32.
std::string cnn_to_bytes(const CnnModel& model);
CnnModel cnn_from_bytes(const std::string& bytes);

}  // namespace stuckfdir
