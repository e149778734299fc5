#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "physprior/adam.hpp"
#include "physprior/autodiff.hpp"
#include "physprior/checkpoint.hpp"
#include "physprior/dataset.hpp"
#include "physprior/raster.hpp"

namespace physprior::model {

// Convolution layer: weights plus the fixed geometry it is applied with.
struct Conv2d {
  ag::Tensor w;
  ag::Tensor b;  // undefined when the layer has no bias
  int stride = 1;
  int pad = 0;
  bool even_ok = false;

  ag::Tensor apply(ag::Tape& tape, const ag::Tensor& x) const;
};

// Stateful inference-time view over a recurrent frame model: owns the
// hidden state, shares the parameters. fork() deep-copies the state so
// imagination never disturbs the live state.
class FrameRoller {
 public:
  virtual ~FrameRoller() = default;
  virtual void reset() = 0;
  virtual ag::Tensor advance(const ag::Tensor& frame) = 0;  // returns the next-frame prediction
  virtual std::unique_ptr<FrameRoller> fork() const = 0;
  virtual const std::vector<ag::Tensor>& state() const = 0;
};

// Common surface of SpatialNet and the ConvLSTM baselines.
class RecurrentVideoModel {
 public:
  virtual ~RecurrentVideoModel() = default;
  virtual std::string arch() const = 0;
  virtual int channels() const = 0;
  virtual ag::DType dtype() const = 0;
  virtual std::vector<ag::Tensor> parameters() = 0;
  virtual ag::NamedTensors named_parameters() = 0;
  virtual void set_requires_grad(bool v) = 0;

  // Hidden-state tensors at the sequence start (zeros), shaped for HxW input.
  virtual std::vector<ag::Tensor> zero_state(int height, int width) const = 0;
  // One recurrent step on the tape; returns (predicted next frame, new state).
  virtual std::pair<ag::Tensor, std::vector<ag::Tensor>> step_state(
      ag::Tape& tape, const ag::Tensor& frame, const std::vector<ag::Tensor>& state) const = 0;

  // Sets the output conv bias to the logit of the per-channel pixel base
  // rate, so training starts at the background instead of spending most of
  // its budget escaping sigmoid saturation.
  virtual void calibrate_output_bias(const std::vector<double>& channel_means) = 0;

  std::unique_ptr<FrameRoller> roller(int height, int width) const;
};

struct SpatialNetConfig {
  int channels = 32;
  int memory_kernel = 3;  // odd
  ag::DType dtype = ag::DType::F32;
};

// Encoder (stride-2 conv + residual block), convolutional spatial memory
// (four kernels over concatenated inputs), decoder (residual block,
// nearest x2 upsample, conv to RGB, sigmoid).
class SpatialNet : public RecurrentVideoModel {
 public:
  SpatialNet(const SpatialNetConfig& cfg, uint64_t seed);

  const SpatialNetConfig& config() const { return cfg_; }
  std::string arch() const override { return "spatialnet"; }
  int channels() const override { return cfg_.channels; }
  ag::DType dtype() const override { return cfg_.dtype; }
  std::vector<ag::Tensor> parameters() override;
  ag::NamedTensors named_parameters() override;
  void set_requires_grad(bool v) override;

  ag::Tensor initial_state(int height, int width) const;
  // (predicted frame, next hidden state). The input must be a [0,1]
  // normalized [3,H,W] tensor with even H, W.
  std::pair<ag::Tensor, ag::Tensor> step(ag::Tape& tape, const ag::Tensor& frame,
                                         const ag::Tensor& hidden) const;

  std::vector<ag::Tensor> zero_state(int height, int width) const override;
  std::pair<ag::Tensor, std::vector<ag::Tensor>> step_state(
      ag::Tape& tape, const ag::Tensor& frame,
      const std::vector<ag::Tensor>& state) const override;
  void calibrate_output_bias(const std::vector<double>& channel_means) override;

  Conv2d enc_conv, enc_res1, enc_res2;
  ag::Tensor mem_in, mem_proposal, mem_dynamics, mem_out;
  Conv2d dec_res1, dec_res2, dec_out;

 private:
  SpatialNetConfig cfg_;
};

struct ConvLstmConfig {
  int channels = 32;
  int gate_kernel = 5;
  bool residual = false;  // adds the input encoding back before decoding
  ag::DType dtype = ag::DType::F32;
};

class ConvLstm : public RecurrentVideoModel {
 public:
  ConvLstm(const ConvLstmConfig& cfg, uint64_t seed);

  const ConvLstmConfig& config() const { return cfg_; }
  std::string arch() const override { return cfg_.residual ? "convlstm_res" : "convlstm"; }
  int channels() const override { return cfg_.channels; }
  ag::DType dtype() const override { return cfg_.dtype; }
  std::vector<ag::Tensor> parameters() override;
  ag::NamedTensors named_parameters() override;
  void set_requires_grad(bool v) override;

  std::vector<ag::Tensor> zero_state(int height, int width) const override;  // {h, c}
  std::pair<ag::Tensor, std::vector<ag::Tensor>> step_state(
      ag::Tape& tape, const ag::Tensor& frame,
      const std::vector<ag::Tensor>& state) const override;
  void calibrate_output_bias(const std::vector<double>& channel_means) override;

  Conv2d enc_conv, enc_res1, enc_res2;
  Conv2d gate_i, gate_f, gate_o, gate_g;
  Conv2d dec_res1, dec_res2, dec_out;

 private:
  ConvLstmConfig cfg_;
};

// Iterated self-fed prediction from a cloned state; `live` is untouched.
std::vector<ag::Tensor> rollout(const FrameRoller& live, const ag::Tensor& frame, int k);

// --- training ----------------------------------------------------------

struct TrainOptions {
  int bptt_len = 10;
  int batch = 8;
  double lr = 1e-4;
  int epochs = 4;
  double grad_clip = 5.0;  // global gradient-norm cap
  uint64_t seed = 0;
  int max_traj = -1;  // cap on trajectories per epoch; -1 = all
};

struct TrainResult {
  // (optimizer step, mean per-step train MSE of that batch)
  std::vector<std::pair<int, double>> loss_curve;
  std::vector<double> epoch_losses;
  double final_train_mse = 0;
};

// Teacher forcing with truncated BPTT windows starting from a zero state.
TrainResult train_predictor(RecurrentVideoModel& model, const data::DatasetReader& dataset,
                            const TrainOptions& opts);

// --- evaluation --------------------------------------------------------

struct EvalOptions {
  int warmup = 2;
  std::vector<int> horizons = {1, 5, 10};
  int objects_step = 20;  // <= 0 disables the objects-lost proxy
  double noise_eps = 0;   // corrupts ground-truth inputs only
  uint64_t noise_seed = 0;
  int max_traj = -1;
};

struct EvalReport {
  std::vector<std::pair<int, double>> mse;  // horizon -> mean over trajectories
  std::vector<std::vector<double>> per_traj_mse;  // [horizon index][trajectory]
  double objects_delta = 0;  // mean |count(true) - count(predicted)| at objects_step
  bool has_objects = false;
  int trajectories = 0;
};

// Feeds `warmup` ground-truth frames, then self-feeds predictions. The
// roller is reset exactly once per trajectory, in index order.
EvalReport eval_multistep(FrameRoller& roller, const data::DatasetReader& dataset,
                          const EvalOptions& opts);

// Mean per-step MSE of a roller that echoes its input (the natural floor).
double copy_baseline_mse(const data::DatasetReader& dataset, const EvalOptions& opts);

// --- physical-parameter probe -------------------------------------------

struct ProbeOptions {
  std::string property = "drag";  // or "elasticity"
  data::GenConfig base = data::GenConfig::desk();
  int clips_per_class = 60;
  int clip_len = 10;
  int clip_start = 25;
  double train_fraction = 0.75;
  int epochs = 200;
  double lr = 1e-2;
  uint64_t seed = 0;
};

// Per-class property values: drag {0.0, 0.15, 0.4}, elasticity
// {0.5, 0.75, 0.95}; class label is the index (low, medium, high).
std::vector<double> probe_property_values(const std::string& property);

// Two-layer classifier (features -> 64 -> 3 logits) trained with
// cross-entropy; returns held-out accuracy. Rejects class imbalance > 10%.
double train_probe(const std::vector<std::vector<double>>& features,
                   const std::vector<int>& labels, double train_fraction, int epochs, double lr,
                   uint64_t seed);

// Channel means of the final hidden state after running the frozen model
// over a clip.
std::vector<double> hidden_features(const RecurrentVideoModel& model,
                                    const std::vector<raster::Frame>& clip);

// Generates the three labeled sub-datasets, extracts features with the
// frozen model, trains the probe. Model parameters are never updated.
double probe_accuracy(const RecurrentVideoModel& model, const ProbeOptions& opts);

// --- visualization -------------------------------------------------------

// Channel mean per cell, min-max scaled to [0,255]; constant maps render
// mid-gray. Grayscale replicated across RGB.
raster::Frame visualize_hidden(const ag::Tensor& hidden);

// --- checkpoints ----------------------------------------------------------

void save_model(const std::string& path, RecurrentVideoModel& model,
                const ag::AdamState* adam = nullptr);
std::unique_ptr<RecurrentVideoModel> load_model(const std::string& path,
                                                ag::AdamState* adam = nullptr);

}  // namespace physprior::model
