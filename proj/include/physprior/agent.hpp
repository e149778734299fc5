#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "physprior/adam.hpp"
#include "physprior/autodiff.hpp"
#include "physprior/physworld.hpp"
#include "physprior/predictor.hpp"

namespace physprior::rl {

struct PPOConfig {
  double gamma = 0.99;
  double lam = 0.95;
  double clip_eps = 0.2;
  int epochs = 4;
  int minibatches = 4;
  double value_coef = 0.5;    // c1
  double entropy_coef = 0.01; // c2
  int horizon = 128;          // T
  int k = 3;                  // imagined future frames stacked with the input
  double policy_lr = 2.5e-4;
  double predictor_lr = 1e-4;
  double grad_clip = 0.5;
  int64_t total_frames = 50000;
  int finetune_pairs = 32;  // transitions per round used to fine-tune the predictor
  int finetune_batch = 8;
  uint64_t seed = 0;

  std::string to_json() const;
  static PPOConfig from_json(const std::string& json);  // unknown keys rejected
};

struct PolicyConfig {
  int in_channels = 12;  // (k+1)*3
  int height = 84, width = 84;
  int n_actions = 5;
  ag::DType dtype = ag::DType::F32;
};

// Nature-DQN torso (conv 32@8x8/4, conv 64@4x4/2, conv 64@3x3/1, dense 512)
// with shared action-logit and value heads. Paddings are the smallest ones
// making each stride divide exactly.
class PolicyNet {
 public:
  PolicyNet(const PolicyConfig& cfg, uint64_t seed);

  struct Out {
    ag::Tensor logits;
    ag::Tensor value;  // scalar
  };
  Out forward(ag::Tape& tape, const ag::Tensor& obs) const;

  const PolicyConfig& config() const { return cfg_; }
  std::vector<ag::Tensor> parameters();
  ag::NamedTensors named_parameters();
  void set_requires_grad(bool v);

 private:
  PolicyConfig cfg_;
  model::Conv2d c1_, c2_, c3_;
  ag::Tensor fc_w_, fc_b_, pi_w_, pi_b_, v_w_, v_b_;
  int flat_ = 0;
};

void save_policy(const std::string& path, PolicyNet& policy, int k,
                 const ag::AdamState* adam = nullptr);
struct LoadedPolicy {
  std::unique_ptr<PolicyNet> policy;
  int k = 0;
};
LoadedPolicy load_policy(const std::string& path, ag::AdamState* adam = nullptr);

// --- observation stacking -------------------------------------------------

struct IpaObservation {
  ag::Tensor stack;      // [(k+1)*3, H, W]
  ag::Tensor next_pred;  // predictor's 1-step prediction; undefined when k=0 or no predictor
};

// Advances the live roller one step on `frame`, imagines k futures from a
// fork, stacks [frame, s_{t+1..t+k}] along channels. The live state after
// the call does not depend on k. With a null roller the stack is the frame.
IpaObservation ipa_observe(model::FrameRoller* live, const ag::Tensor& frame, int k);

// Same stack without advancing the live state (bootstrap values).
IpaObservation peek_observe(const model::FrameRoller* live, const ag::Tensor& frame, int k);

// --- advantage estimation ---------------------------------------------------

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const uint8_t> dones, double gamma, double lam,
                      double bootstrap_value);

// In-place standardization to mean 0, std 1.
void normalize_advantages(std::vector<double>& advantages);

// --- buffer and updates ---------------------------------------------------

struct RolloutBuffer {
  std::vector<ag::Tensor> obs;
  std::vector<int> actions;
  std::vector<double> log_probs;
  std::vector<double> values;
  std::vector<double> rewards;
  std::vector<uint8_t> dones;
  // (pre-step predictor state, x_t, x_{t+1}) for 1-step fine-tuning
  std::vector<std::vector<ag::Tensor>> pred_states;
  std::vector<ag::Tensor> frames_now;
  std::vector<ag::Tensor> frames_next;
  std::vector<double> advantages;
  std::vector<double> returns;

  size_t size() const { return obs.size(); }
  void clear();
};

// Clipped-surrogate loss for one sample; exposed for the transcription
// oracle. Outputs the scalar loss tensor on the tape and reports the three
// raw terms.
ag::Tensor ppo_sample_loss(ag::Tape& tape, const PolicyNet& policy, const ag::Tensor& obs,
                           int action, double log_prob_old, double advantage, double value_target,
                           const PPOConfig& cfg, double* policy_term = nullptr,
                           double* value_term = nullptr, double* entropy_term = nullptr);

struct PPOStats {
  double policy_loss = 0;
  double value_loss = 0;
  double entropy = 0;
  int updates = 0;
};

// config.epochs passes over config.minibatches shuffled splits; gradient
// norm clipped at config.grad_clip. Advantages must already be normalized.
PPOStats ppo_update(PolicyNet& policy, ag::AdamState& adam, const RolloutBuffer& buffer,
                    const PPOConfig& cfg, Rng& rng);

// --- training / evaluation ---------------------------------------------------

struct RoundLog {
  int64_t frames = 0;
  double episode_reward = 0;  // mean of episodes completed so far (NaN if none)
  double predictor_mse = 0;   // online 1-step MSE during collection
  double policy_loss = 0;
  double value_loss = 0;
  double entropy = 0;
};

struct AgentTrainResult {
  std::vector<RoundLog> rounds;
  std::vector<std::pair<int64_t, double>> episodes;  // (frame count, episode reward)
};

// PPO with IPA input. `predictor` may be null (plain PPO; requires k=0).
// Policy gradients never reach the predictor: the observation stacks enter
// the policy as constant inputs, and the predictor is trained only by its
// own 1-step MSE on collected transitions.
AgentTrainResult train_agent(env::PhysEnv& env, PolicyNet& policy,
                             model::RecurrentVideoModel* predictor, const PPOConfig& cfg);

struct AgentEvalResult {
  double mean = 0;
  double stddev = 0;
  std::vector<double> episode_rewards;
};

// Greedy (argmax) action selection; deterministic given the seed.
AgentEvalResult evaluate_agent(env::PhysEnv& env, PolicyNet& policy,
                               model::RecurrentVideoModel* predictor, int episodes, int k,
                               uint64_t seed);

}  // namespace physprior::rl
