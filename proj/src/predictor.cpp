#include "physprior/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace physprior::model {

using ag::DType;
using ag::Tape;
using ag::Tensor;

namespace {

Tensor init_weight(std::vector<int> shape, int fan_in, Rng& rng, DType dt) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor::uniform(std::move(shape), -bound, bound, rng, dt);
}

Conv2d make_conv(int cout, int cin, int k, int stride, int pad, bool bias, bool even_ok, Rng& rng,
                 DType dt) {
  Conv2d c;
  c.w = init_weight({cout, cin, k, k}, cin * k * k, rng, dt);
  if (bias) c.b = Tensor::zeros({cout}, dt);
  c.stride = stride;
  c.pad = pad;
  c.even_ok = even_ok;
  return c;
}

Tensor resblock(Tape& tape, const Tensor& x, const Conv2d& c1, const Conv2d& c2) {
  Tensor h = ag::elu(tape, c1.apply(tape, x));
  return ag::elu(tape, ag::residual_add(tape, x, c2.apply(tape, h)));
}

Tensor encode(Tape& tape, const Tensor& x, const Conv2d& in, const Conv2d& r1, const Conv2d& r2) {
  return resblock(tape, ag::elu(tape, in.apply(tape, x)), r1, r2);
}

Tensor decode(Tape& tape, const Tensor& o, const Conv2d& r1, const Conv2d& r2,
              const Conv2d& out) {
  Tensor d = resblock(tape, o, r1, r2);
  return ag::sigmoid(tape, out.apply(tape, ag::upsample_nearest(tape, d, 2)));
}

void check_frame_input(const Tensor& frame, DType dt) {
  ag::check(frame.defined() && frame.rank() == 3 && frame.dim(0) == 3,
            "predictor input must be a [3,h,w] tensor");
  ag::check(frame.dim(1) % 2 == 0 && frame.dim(2) % 2 == 0,
            "predictor input extents must be even, got " + ag::shape_str(frame.shape()));
  ag::check(frame.dtype() == dt, "predictor input dtype does not match the model");
}

void append_conv(ag::NamedTensors& out, const std::string& name, const Conv2d& c) {
  out.emplace_back(name + ".w", c.w);
  if (c.b.defined()) out.emplace_back(name + ".b", c.b);
}

class GenericRoller final : public FrameRoller {
 public:
  GenericRoller(const RecurrentVideoModel* model, int height, int width)
      : model_(model), height_(height), width_(width) {
    reset();
  }

  void reset() override { state_ = model_->zero_state(height_, width_); }

  ag::Tensor advance(const ag::Tensor& frame) override {
    Tape tape(false);
    auto [pred, next] = model_->step_state(tape, frame, state_);
    // states are replaced, never mutated in place, so forked rollers that
    // share older state tensors are unaffected
    state_ = std::move(next);
    return pred;
  }

  std::unique_ptr<FrameRoller> fork() const override {
    return std::make_unique<GenericRoller>(*this);
  }

  const std::vector<ag::Tensor>& state() const override { return state_; }

 private:
  const RecurrentVideoModel* model_;
  int height_, width_;
  std::vector<ag::Tensor> state_;
};

double frame_mse(const Tensor& pred, const Tensor& target) {
  double acc = 0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const double d = pred.at(i) - target.at(i);
    acc += d * d;
  }
  return acc / static_cast<double>(pred.numel());
}

class CopyRoller final : public FrameRoller {
 public:
  void reset() override {}
  ag::Tensor advance(const ag::Tensor& frame) override { return frame.clone(); }
  std::unique_ptr<FrameRoller> fork() const override { return std::make_unique<CopyRoller>(); }
  const std::vector<ag::Tensor>& state() const override { return empty_; }

 private:
  std::vector<ag::Tensor> empty_;
};

}  // namespace

Tensor Conv2d::apply(Tape& tape, const Tensor& x) const {
  Tensor y = ag::conv2d(tape, x, w, stride, pad, even_ok);
  if (b.defined()) y = ag::bias_channel(tape, y, b);
  return y;
}

std::unique_ptr<FrameRoller> RecurrentVideoModel::roller(int height, int width) const {
  return std::make_unique<GenericRoller>(this, height, width);
}

// --- SpatialNet ----------------------------------------------------------

SpatialNet::SpatialNet(const SpatialNetConfig& cfg, uint64_t seed) : cfg_(cfg) {
  ag::check(cfg.channels >= 1, "spatialnet: channels must be >= 1");
  ag::check(cfg.memory_kernel % 2 == 1, "spatialnet: memory kernel must be odd");
  Rng rng(seed);
  const int c = cfg.channels, k = cfg.memory_kernel, kp = (k - 1) / 2;
  const DType dt = cfg.dtype;
  enc_conv = make_conv(c, 3, 4, 2, 1, true, true, rng, dt);
  enc_res1 = make_conv(c, c, 3, 1, 1, true, false, rng, dt);
  enc_res2 = make_conv(c, c, 3, 1, 1, true, false, rng, dt);
  mem_in = init_weight({c, 2 * c, k, k}, 2 * c * k * k, rng, dt);
  mem_proposal = init_weight({c, 2 * c, k, k}, 2 * c * k * k, rng, dt);
  mem_dynamics = init_weight({c, c, k, k}, c * k * k, rng, dt);
  mem_out = init_weight({c, 2 * c, k, k}, 2 * c * k * k, rng, dt);
  dec_res1 = make_conv(c, c, 3, 1, 1, true, false, rng, dt);
  dec_res2 = make_conv(c, c, 3, 1, 1, true, false, rng, dt);
  dec_out = make_conv(3, c, 3, 1, 1, true, false, rng, dt);
  (void)kp;
}

std::vector<Tensor> SpatialNet::parameters() {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

ag::NamedTensors SpatialNet::named_parameters() {
  ag::NamedTensors out;
  append_conv(out, "enc.conv", enc_conv);
  append_conv(out, "enc.res1", enc_res1);
  append_conv(out, "enc.res2", enc_res2);
  out.emplace_back("mem.in", mem_in);
  out.emplace_back("mem.proposal", mem_proposal);
  out.emplace_back("mem.dynamics", mem_dynamics);
  out.emplace_back("mem.out", mem_out);
  append_conv(out, "dec.res1", dec_res1);
  append_conv(out, "dec.res2", dec_res2);
  append_conv(out, "dec.out", dec_out);
  return out;
}

void SpatialNet::set_requires_grad(bool v) {
  for (auto& [name, t] : named_parameters()) t.set_requires_grad(v);
}

Tensor SpatialNet::initial_state(int height, int width) const {
  ag::check(height % 2 == 0 && width % 2 == 0, "spatialnet: frame extents must be even");
  return Tensor::zeros({cfg_.channels, height / 2, width / 2}, cfg_.dtype);
}

std::pair<Tensor, Tensor> SpatialNet::step(Tape& tape, const Tensor& frame,
                                           const Tensor& hidden) const {
  check_frame_input(frame, cfg_.dtype);
  ag::check(hidden.defined() && hidden.rank() == 3 && hidden.dim(0) == cfg_.channels &&
                hidden.dim(1) == frame.dim(1) / 2 && hidden.dim(2) == frame.dim(2) / 2,
            "spatialnet: hidden state shape mismatch");
  const int kp = (cfg_.memory_kernel - 1) / 2;

  Tensor z = encode(tape, frame, enc_conv, enc_res1, enc_res2);
  Tensor i = ag::elu(tape, ag::conv2d(tape, ag::concat_channels(tape, hidden, z), mem_in, 1, kp));
  Tensor u =
      ag::elu(tape, ag::conv2d(tape, ag::concat_channels(tape, i, hidden), mem_proposal, 1, kp));
  Tensor h_next = ag::elu(tape, ag::conv2d(tape, u, mem_dynamics, 1, kp));
  Tensor o =
      ag::elu(tape, ag::conv2d(tape, ag::concat_channels(tape, z, h_next), mem_out, 1, kp));
  Tensor out = decode(tape, o, dec_res1, dec_res2, dec_out);
  return {out, h_next};
}

namespace {

void set_logit_bias(Conv2d& out_conv, const std::vector<double>& channel_means) {
  ag::check(out_conv.b.defined() && out_conv.b.numel() == 3 && channel_means.size() == 3,
            "calibrate_output_bias: expected a 3-channel output layer");
  for (int c = 0; c < 3; ++c) {
    const double p = std::clamp(channel_means[static_cast<size_t>(c)], 1e-3, 1.0 - 1e-3);
    out_conv.b.set_at(c, std::log(p / (1.0 - p)));
  }
}

}  // namespace

void SpatialNet::calibrate_output_bias(const std::vector<double>& channel_means) {
  set_logit_bias(dec_out, channel_means);
}

std::vector<Tensor> SpatialNet::zero_state(int height, int width) const {
  return {initial_state(height, width)};
}

std::pair<Tensor, std::vector<Tensor>> SpatialNet::step_state(
    Tape& tape, const Tensor& frame, const std::vector<Tensor>& state) const {
  ag::check(state.size() == 1, "spatialnet: state must hold a single tensor");
  auto [pred, h] = step(tape, frame, state[0]);
  return {pred, {h}};
}

// --- ConvLSTM -------------------------------------------------------------

ConvLstm::ConvLstm(const ConvLstmConfig& cfg, uint64_t seed) : cfg_(cfg) {
  ag::check(cfg.channels >= 1, "convlstm: channels must be >= 1");
  ag::check(cfg.gate_kernel % 2 == 1, "convlstm: gate kernel must be odd");
  Rng rng(seed);
  const int c = cfg.channels, k = cfg.gate_kernel, kp = (k - 1) / 2;
  const DType dt = cfg.dtype;
  enc_conv = make_conv(c, 3, 4, 2, 1, true, true, rng, dt);
  enc_res1 = make_conv(c, c, 3, 1, 1, true, false, rng, dt);
  enc_res2 = make_conv(c, c, 3, 1, 1, true, false, rng, dt);
  gate_i = make_conv(c, 2 * c, k, 1, kp, true, false, rng, dt);
  gate_f = make_conv(c, 2 * c, k, 1, kp, true, false, rng, dt);
  gate_o = make_conv(c, 2 * c, k, 1, kp, true, false, rng, dt);
  gate_g = make_conv(c, 2 * c, k, 1, kp, true, false, rng, dt);
  dec_res1 = make_conv(c, c, 3, 1, 1, true, false, rng, dt);
  dec_res2 = make_conv(c, c, 3, 1, 1, true, false, rng, dt);
  dec_out = make_conv(3, c, 3, 1, 1, true, false, rng, dt);
}

std::vector<Tensor> ConvLstm::parameters() {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

ag::NamedTensors ConvLstm::named_parameters() {
  ag::NamedTensors out;
  append_conv(out, "enc.conv", enc_conv);
  append_conv(out, "enc.res1", enc_res1);
  append_conv(out, "enc.res2", enc_res2);
  append_conv(out, "gate.i", gate_i);
  append_conv(out, "gate.f", gate_f);
  append_conv(out, "gate.o", gate_o);
  append_conv(out, "gate.g", gate_g);
  append_conv(out, "dec.res1", dec_res1);
  append_conv(out, "dec.res2", dec_res2);
  append_conv(out, "dec.out", dec_out);
  return out;
}

void ConvLstm::set_requires_grad(bool v) {
  for (auto& [name, t] : named_parameters()) t.set_requires_grad(v);
}

void ConvLstm::calibrate_output_bias(const std::vector<double>& channel_means) {
  set_logit_bias(dec_out, channel_means);
}

std::vector<Tensor> ConvLstm::zero_state(int height, int width) const {
  ag::check(height % 2 == 0 && width % 2 == 0, "convlstm: frame extents must be even");
  Tensor h = Tensor::zeros({cfg_.channels, height / 2, width / 2}, cfg_.dtype);
  Tensor c = Tensor::zeros({cfg_.channels, height / 2, width / 2}, cfg_.dtype);
  return {h, c};
}

std::pair<Tensor, std::vector<Tensor>> ConvLstm::step_state(
    Tape& tape, const Tensor& frame, const std::vector<Tensor>& state) const {
  check_frame_input(frame, cfg_.dtype);
  ag::check(state.size() == 2, "convlstm: state must hold h and c");
  const Tensor& h = state[0];
  const Tensor& c = state[1];
  Tensor z = encode(tape, frame, enc_conv, enc_res1, enc_res2);
  Tensor zh = ag::concat_channels(tape, z, h);
  Tensor i = ag::sigmoid(tape, gate_i.apply(tape, zh));
  Tensor f = ag::sigmoid(tape, gate_f.apply(tape, zh));
  Tensor o = ag::sigmoid(tape, gate_o.apply(tape, zh));
  Tensor g = ag::tanh(tape, gate_g.apply(tape, zh));
  Tensor c_next = ag::add(tape, ag::mul(tape, f, c), ag::mul(tape, i, g));
  Tensor h_next = ag::mul(tape, o, ag::tanh(tape, c_next));
  Tensor dec_in = cfg_.residual ? ag::residual_add(tape, h_next, z) : h_next;
  Tensor out = decode(tape, dec_in, dec_res1, dec_res2, dec_out);
  return {out, {h_next, c_next}};
}

// --- rollout ---------------------------------------------------------------

std::vector<Tensor> rollout(const FrameRoller& live, const Tensor& frame, int k) {
  ag::check(k >= 0, "rollout: k must be non-negative");
  std::vector<Tensor> preds;
  if (k == 0) return preds;
  preds.reserve(static_cast<size_t>(k));
  std::unique_ptr<FrameRoller> imagined = live.fork();
  Tensor current = frame;
  for (int i = 0; i < k; ++i) {
    current = imagined->advance(current);
    preds.push_back(current);
  }
  return preds;
}

// --- training ----------------------------------------------------------

TrainResult train_predictor(RecurrentVideoModel& model, const data::DatasetReader& dataset,
                            const TrainOptions& opts) {
  ag::check(opts.bptt_len >= 1 && opts.batch >= 1 && opts.epochs >= 1,
            "train_predictor: bptt_len, batch and epochs must be positive");
  ag::check(dataset.traj_len() >= opts.bptt_len + 1,
            "train_predictor: dataset trajectories are too short for bptt_len " +
                std::to_string(opts.bptt_len));
  const int n_traj =
      opts.max_traj > 0 ? std::min(opts.max_traj, dataset.n_traj()) : dataset.n_traj();
  ag::check(n_traj >= 1, "train_predictor: empty dataset");

  // start the sigmoid head at the dataset's per-channel base rate
  {
    std::vector<double> channel_sum(3, 0.0);
    int64_t count = 0;
    const int probe = std::min(n_traj, 8);
    for (int traj = 0; traj < probe; ++traj) {
      raster::Frame f = dataset.frame(traj, 0);
      for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x)
          for (int c = 0; c < 3; ++c) channel_sum[static_cast<size_t>(c)] += f.at(y, x, c) / 255.0;
      count += static_cast<int64_t>(f.height) * f.width;
    }
    for (double& s : channel_sum) s /= static_cast<double>(count);
    model.calibrate_output_bias(channel_sum);
  }

  std::vector<Tensor> params = model.parameters();
  model.set_requires_grad(true);
  for (Tensor& p : params) p.zero_grad();
  ag::AdamState adam;
  adam.lr = opts.lr;
  adam.init(params);

  Rng rng(derive_seed(opts.seed, 0x747261696eull));  // domain tag
  TrainResult result;
  int step = 0;

  std::vector<int> order(static_cast<size_t>(n_traj));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    for (int i = n_traj - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniform_int(0, i))]);
    double epoch_sum = 0;
    int batches = 0;
    for (int base = 0; base < n_traj; base += opts.batch) {
      const int m = std::min(opts.batch, n_traj - base);
      double batch_metric = 0;
      for (int bi = 0; bi < m; ++bi) {
        const int traj = order[static_cast<size_t>(base + bi)];
        const int t0 = rng.uniform_int(0, dataset.traj_len() - 1 - opts.bptt_len);
        Tape tape;
        std::vector<Tensor> state = model.zero_state(dataset.height(), dataset.width());
        Tensor x = raster::frame_to_tensor(dataset.frame(traj, t0), model.dtype());
        Tensor window_loss;
        for (int t = 0; t < opts.bptt_len; ++t) {
          auto [pred, next_state] = model.step_state(tape, x, state);
          state = std::move(next_state);
          Tensor target = raster::frame_to_tensor(dataset.frame(traj, t0 + t + 1), model.dtype());
          Tensor l = ag::mse(tape, pred, target);
          window_loss = t == 0 ? l : ag::add(tape, window_loss, l);
          x = target;
        }
        const double loss_value = window_loss.item();
        if (!std::isfinite(loss_value))
          throw std::runtime_error("train_predictor: non-finite loss at step " +
                                   std::to_string(step));
        batch_metric += loss_value / opts.bptt_len;
        tape.backward(ag::scale(tape, window_loss, 1.0 / m));
      }
      ag::clip_grad_norm(params, opts.grad_clip);
      ag::adam_step_attached(params, adam);
      ++step;
      batch_metric /= m;
      result.loss_curve.emplace_back(step, batch_metric);
      epoch_sum += batch_metric;
      ++batches;
    }
    result.epoch_losses.push_back(epoch_sum / batches);
  }
  result.final_train_mse = result.epoch_losses.back();
  return result;
}

// --- evaluation --------------------------------------------------------

EvalReport eval_multistep(FrameRoller& roller, const data::DatasetReader& dataset,
                          const EvalOptions& opts) {
  ag::check(!opts.horizons.empty(), "eval_multistep: no horizons requested");
  ag::check(opts.warmup >= 1, "eval_multistep: warmup must be >= 1");
  const int max_h = *std::max_element(opts.horizons.begin(), opts.horizons.end());
  ag::check(max_h >= 1, "eval_multistep: horizons must be positive");
  ag::check(opts.warmup + max_h <= dataset.traj_len(),
            "eval_multistep: horizon " + std::to_string(max_h) + " with warmup " +
                std::to_string(opts.warmup) + " exceeds trajectory length " +
                std::to_string(dataset.traj_len()));
  const bool want_objects =
      opts.objects_step > 0 && opts.warmup + opts.objects_step <= dataset.traj_len();
  const int chain_len = want_objects ? std::max(max_h, opts.objects_step) : max_h;

  EvalReport report;
  report.per_traj_mse.resize(opts.horizons.size());
  std::vector<double> sums(opts.horizons.size(), 0.0);
  double objects_sum = 0;

  const int n_traj =
      opts.max_traj > 0 ? std::min(opts.max_traj, dataset.n_traj()) : dataset.n_traj();
  for (int traj = 0; traj < n_traj; ++traj) {
    roller.reset();
    Tensor pred;
    for (int t = 0; t < opts.warmup; ++t) {
      Tensor x = raster::frame_to_tensor(dataset.frame(traj, t));
      if (opts.noise_eps > 0) {
        Rng noise(derive_seed(derive_seed(opts.noise_seed, static_cast<uint64_t>(traj)),
                              static_cast<uint64_t>(t)));
        x = data::corrupt_gaussian(x, opts.noise_eps, noise);
      }
      pred = roller.advance(x);
    }
    for (int h = 1; h <= chain_len; ++h) {
      const int frame_index = opts.warmup + h - 1;
      Tensor target = raster::frame_to_tensor(dataset.frame(traj, frame_index));
      for (size_t hi = 0; hi < opts.horizons.size(); ++hi) {
        if (opts.horizons[hi] == h) {
          const double m = frame_mse(pred, target);
          sums[hi] += m;
          report.per_traj_mse[hi].push_back(m);
        }
      }
      if (want_objects && h == opts.objects_step) {
        const int true_count = data::count_objects(dataset.frame(traj, frame_index));
        const int pred_count = data::count_objects(raster::tensor_to_frame(pred));
        objects_sum += std::abs(true_count - pred_count);
      }
      if (h < chain_len) pred = roller.advance(pred);
    }
  }
  report.trajectories = n_traj;
  for (size_t hi = 0; hi < opts.horizons.size(); ++hi)
    report.mse.emplace_back(opts.horizons[hi], sums[hi] / n_traj);
  if (want_objects) {
    report.objects_delta = objects_sum / n_traj;
    report.has_objects = true;
  }
  return report;
}

double copy_baseline_mse(const data::DatasetReader& dataset, const EvalOptions& opts) {
  CopyRoller copy;
  EvalOptions one = opts;
  one.horizons = {1};
  one.objects_step = 0;
  return eval_multistep(copy, dataset, one).mse[0].second;
}

// --- probe -----------------------------------------------------------------

std::vector<double> probe_property_values(const std::string& property) {
  if (property == "drag") return {0.0, 0.15, 0.4};
  if (property == "elasticity") return {0.5, 0.75, 0.95};
  throw std::invalid_argument("unknown probe property \"" + property +
                              "\" (expected drag or elasticity)");
}

std::vector<double> hidden_features(const RecurrentVideoModel& model,
                                    const std::vector<raster::Frame>& clip) {
  ag::check(!clip.empty(), "hidden_features: empty clip");
  auto roller = model.roller(clip[0].height, clip[0].width);
  for (const raster::Frame& f : clip)
    roller->advance(raster::frame_to_tensor(f, model.dtype()));
  const Tensor& h = roller->state()[0];
  const int c = h.dim(0);
  const int64_t hw = static_cast<int64_t>(h.dim(1)) * h.dim(2);
  std::vector<double> feats(static_cast<size_t>(c), 0.0);
  for (int ci = 0; ci < c; ++ci) {
    double acc = 0;
    for (int64_t i = 0; i < hw; ++i) acc += h.at(ci * hw + i);
    feats[static_cast<size_t>(ci)] = acc / static_cast<double>(hw);
  }
  return feats;
}

double train_probe(const std::vector<std::vector<double>>& features,
                   const std::vector<int>& labels, double train_fraction, int epochs, double lr,
                   uint64_t seed) {
  ag::check(!features.empty() && features.size() == labels.size(),
            "train_probe: features and labels must be non-empty and aligned");
  const int dim = static_cast<int>(features[0].size());
  std::array<std::vector<int>, 3> by_class;
  for (size_t i = 0; i < labels.size(); ++i) {
    ag::check(labels[i] >= 0 && labels[i] < 3, "train_probe: labels must be in {0,1,2}");
    ag::check(static_cast<int>(features[i].size()) == dim,
              "train_probe: inconsistent feature dimensions");
    by_class[static_cast<size_t>(labels[i])].push_back(static_cast<int>(i));
  }
  size_t min_count = features.size(), max_count = 0;
  for (const auto& idx : by_class) {
    min_count = std::min(min_count, idx.size());
    max_count = std::max(max_count, idx.size());
  }
  ag::check(min_count > 0 && static_cast<double>(max_count) <= 1.1 * min_count,
            "train_probe: class imbalance exceeds 10%");

  std::vector<int> train_idx, test_idx;
  for (const auto& idx : by_class) {
    const size_t n_train = static_cast<size_t>(train_fraction * idx.size());
    for (size_t i = 0; i < idx.size(); ++i)
      (i < n_train ? train_idx : test_idx).push_back(idx[i]);
  }
  ag::check(!train_idx.empty() && !test_idx.empty(), "train_probe: empty split");

  // standardize with train statistics
  std::vector<double> mean(static_cast<size_t>(dim), 0), sd(static_cast<size_t>(dim), 0);
  for (int i : train_idx)
    for (int d = 0; d < dim; ++d) mean[static_cast<size_t>(d)] += features[static_cast<size_t>(i)][static_cast<size_t>(d)];
  for (double& m : mean) m /= static_cast<double>(train_idx.size());
  for (int i : train_idx)
    for (int d = 0; d < dim; ++d) {
      const double v = features[static_cast<size_t>(i)][static_cast<size_t>(d)] - mean[static_cast<size_t>(d)];
      sd[static_cast<size_t>(d)] += v * v;
    }
  for (double& s : sd) s = std::sqrt(s / static_cast<double>(train_idx.size())) + 1e-8;

  auto standardized = [&](int i) {
    Tensor x = Tensor::zeros({dim}, DType::F32);
    for (int d = 0; d < dim; ++d)
      x.set_at(d, (features[static_cast<size_t>(i)][static_cast<size_t>(d)] -
                   mean[static_cast<size_t>(d)]) /
                      sd[static_cast<size_t>(d)]);
    return x;
  };

  Rng rng(derive_seed(seed, 0x70726f6265ull));
  Tensor w1 = init_weight({64, dim}, dim, rng, DType::F32).set_requires_grad(true);
  Tensor b1 = Tensor::zeros({64}, DType::F32).set_requires_grad(true);
  Tensor w2 = init_weight({3, 64}, 64, rng, DType::F32).set_requires_grad(true);
  Tensor b2 = Tensor::zeros({3}, DType::F32).set_requires_grad(true);
  std::vector<Tensor> params = {w1, b1, w2, b2};
  for (Tensor& p : params) p.zero_grad();
  ag::AdamState adam;
  adam.lr = lr;
  adam.init(params);

  auto logits_of = [&](Tape& tape, const Tensor& x) {
    Tensor hid = ag::elu(tape, ag::linear(tape, x, w1, b1));
    return ag::linear(tape, hid, w2, b2);
  };

  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (int i : train_idx) {
      Tape tape;
      Tensor x = standardized(i);
      Tensor loss = ag::scale(
          tape, ag::pick(tape, ag::log_softmax(tape, logits_of(tape, x)), labels[static_cast<size_t>(i)]),
          -1.0 / static_cast<double>(train_idx.size()));
      tape.backward(loss);
    }
    ag::adam_step_attached(params, adam);
  }

  int correct = 0;
  for (int i : test_idx) {
    Tape tape(false);
    Tensor logits = logits_of(tape, standardized(i));
    int best = 0;
    for (int a = 1; a < 3; ++a)
      if (logits.at(a) > logits.at(best)) best = a;
    if (best == labels[static_cast<size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test_idx.size());
}

double probe_accuracy(const RecurrentVideoModel& model, const ProbeOptions& opts) {
  const std::vector<double> values = probe_property_values(opts.property);
  data::GenConfig cfg = opts.base;
  ag::check(cfg.traj_len >= opts.clip_start + opts.clip_len,
            "probe: trajectories are too short for the requested clip window");
  std::vector<std::vector<double>> feats;
  std::vector<int> labels;
  for (int cls = 0; cls < 3; ++cls) {
    data::GenConfig class_cfg = cfg;
    if (opts.property == "drag")
      class_cfg.drag = values[static_cast<size_t>(cls)];
    else
      class_cfg.elasticity = values[static_cast<size_t>(cls)];
    for (int i = 0; i < opts.clips_per_class; ++i) {
      const uint64_t seed =
          derive_seed(opts.seed, static_cast<uint64_t>(cls) * 1000003ull + static_cast<uint64_t>(i));
      data::GenConfig one = class_cfg;
      one.traj_len = opts.clip_start + opts.clip_len;
      auto frames = data::generate_trajectory(seed, one);
      std::vector<raster::Frame> clip(frames.begin() + opts.clip_start, frames.end());
      feats.push_back(hidden_features(model, clip));
      labels.push_back(cls);
    }
  }
  return train_probe(feats, labels, opts.train_fraction, opts.epochs, opts.lr, opts.seed);
}

// --- visualization ---------------------------------------------------------

raster::Frame visualize_hidden(const ag::Tensor& hidden) {
  ag::check(hidden.defined() && hidden.rank() == 3, "visualize_hidden: expected [c,n,m]");
  const int c = hidden.dim(0), n = hidden.dim(1), m = hidden.dim(2);
  std::vector<double> map(static_cast<size_t>(n) * m, 0.0);
  for (int ci = 0; ci < c; ++ci)
    for (int i = 0; i < n * m; ++i)
      map[static_cast<size_t>(i)] += hidden.at(static_cast<int64_t>(ci) * n * m + i);
  double lo = map[0], hi = map[0];
  for (double v : map) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  raster::Frame frame(n, m);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < m; ++x) {
      uint8_t value = 128;
      if (hi - lo > 1e-12) {
        const double t = (map[static_cast<size_t>(y) * m + x] - lo) / (hi - lo);
        value = static_cast<uint8_t>(std::lround(t * 255.0));
      }
      frame.set_pixel(y, x, {value, value, value});
    }
  return frame;
}

// --- checkpoints -------------------------------------------------------------

namespace {

constexpr const char* kArchNames[] = {"spatialnet", "convlstm", "convlstm_res"};

int arch_code(const std::string& arch) {
  for (int i = 0; i < 3; ++i)
    if (arch == kArchNames[i]) return i;
  throw std::invalid_argument("unknown architecture \"" + arch + "\"");
}

void copy_values(Tensor& dst, const Tensor& src) {
  ag::check(dst.shape() == src.shape(), "checkpoint tensor shape mismatch");
  for (int64_t i = 0; i < dst.numel(); ++i) dst.set_at(i, src.at(i));
}

}  // namespace

void save_model(const std::string& path, RecurrentVideoModel& model, const ag::AdamState* adam) {
  ag::NamedTensors out;
  out.emplace_back("meta.arch", Tensor::scalar(arch_code(model.arch())));
  out.emplace_back("meta.channels", Tensor::scalar(model.channels()));
  int kernel = 3;
  if (auto* sn = dynamic_cast<SpatialNet*>(&model))
    kernel = sn->config().memory_kernel;
  else if (auto* cl = dynamic_cast<ConvLstm*>(&model))
    kernel = cl->config().gate_kernel;
  out.emplace_back("meta.kernel", Tensor::scalar(kernel));
  ag::NamedTensors params = model.named_parameters();
  for (auto& [name, t] : params) out.emplace_back(name, t);
  if (adam && adam->initialized()) {
    ag::check(adam->m.size() == params.size(), "save_model: optimizer/parameter count mismatch");
    out.emplace_back("adam.t", Tensor::scalar(static_cast<double>(adam->t)));
    for (size_t i = 0; i < params.size(); ++i) {
      out.emplace_back("adam.m." + params[i].first, adam->m[i]);
      out.emplace_back("adam.v." + params[i].first, adam->v[i]);
    }
  }
  ag::save_checkpoint(path, out);
}

std::unique_ptr<RecurrentVideoModel> load_model(const std::string& path, ag::AdamState* adam) {
  ag::NamedTensors stored = ag::load_checkpoint(path);
  const Tensor* arch_t = ag::checkpoint_find(stored, "meta.arch");
  const Tensor* channels_t = ag::checkpoint_find(stored, "meta.channels");
  const Tensor* kernel_t = ag::checkpoint_find(stored, "meta.kernel");
  if (!arch_t || !channels_t || !kernel_t)
    throw std::runtime_error("checkpoint " + path + " is not a predictor checkpoint");
  const int code = static_cast<int>(arch_t->item());
  const int channels = static_cast<int>(channels_t->item());
  const int kernel = static_cast<int>(kernel_t->item());

  std::unique_ptr<RecurrentVideoModel> model;
  if (code == 0) {
    SpatialNetConfig cfg;
    cfg.channels = channels;
    cfg.memory_kernel = kernel;
    model = std::make_unique<SpatialNet>(cfg, 0);
  } else if (code == 1 || code == 2) {
    ConvLstmConfig cfg;
    cfg.channels = channels;
    cfg.gate_kernel = kernel;
    cfg.residual = code == 2;
    model = std::make_unique<ConvLstm>(cfg, 0);
  } else {
    throw std::runtime_error("checkpoint " + path + " has unknown architecture code " +
                             std::to_string(code));
  }
  ag::NamedTensors params = model->named_parameters();
  for (auto& [name, t] : params) copy_values(t, ag::checkpoint_get(stored, name, t.shape()));
  if (adam) {
    const Tensor* t_step = ag::checkpoint_find(stored, "adam.t");
    if (t_step) {
      std::vector<Tensor> plist;
      for (auto& [name, t] : params) plist.push_back(t);
      adam->init(plist);
      adam->t = static_cast<int64_t>(t_step->item());
      for (size_t i = 0; i < params.size(); ++i) {
        copy_values(adam->m[i],
                    ag::checkpoint_get(stored, "adam.m." + params[i].first, params[i].second.shape()));
        copy_values(adam->v[i],
                    ag::checkpoint_get(stored, "adam.v." + params[i].first, params[i].second.shape()));
      }
    }
  }
  return model;
}

}  // namespace physprior::model
