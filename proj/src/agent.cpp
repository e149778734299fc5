#include "physprior/agent.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

namespace physprior::rl {

using ag::DType;
using ag::Tape;
using ag::Tensor;
using nlohmann::json;

std::string PPOConfig::to_json() const {
  return json{{"gamma", gamma},
              {"lam", lam},
              {"clip_eps", clip_eps},
              {"epochs", epochs},
              {"minibatches", minibatches},
              {"value_coef", value_coef},
              {"entropy_coef", entropy_coef},
              {"horizon", horizon},
              {"k", k},
              {"policy_lr", policy_lr},
              {"predictor_lr", predictor_lr},
              {"grad_clip", grad_clip},
              {"total_frames", total_frames},
              {"finetune_pairs", finetune_pairs},
              {"finetune_batch", finetune_batch},
              {"seed", seed}}
      .dump(2);
}

PPOConfig PPOConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  PPOConfig c;
  const json known = json::parse(c.to_json());
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key))
      throw std::invalid_argument("unknown agent config key \"" + key + "\"");
    (void)value;
  }
  c.gamma = j.value("gamma", c.gamma);
  c.lam = j.value("lam", c.lam);
  c.clip_eps = j.value("clip_eps", c.clip_eps);
  c.epochs = j.value("epochs", c.epochs);
  c.minibatches = j.value("minibatches", c.minibatches);
  c.value_coef = j.value("value_coef", c.value_coef);
  c.entropy_coef = j.value("entropy_coef", c.entropy_coef);
  c.horizon = j.value("horizon", c.horizon);
  c.k = j.value("k", c.k);
  c.policy_lr = j.value("policy_lr", c.policy_lr);
  c.predictor_lr = j.value("predictor_lr", c.predictor_lr);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.total_frames = j.value("total_frames", c.total_frames);
  c.finetune_pairs = j.value("finetune_pairs", c.finetune_pairs);
  c.finetune_batch = j.value("finetune_batch", c.finetune_batch);
  c.seed = j.value("seed", c.seed);
  return c;
}

namespace {

int out_extent(int extent, int k, int stride, int pad) {
  return (extent + 2 * pad - k) / stride + 1;
}

bool pad_fits(int extent, int k, int stride, int pad) {
  const int num = extent + 2 * pad - k;
  return num >= 0 && num % stride == 0;
}

Tensor init_weight(std::vector<int> shape, int fan_in, Rng& rng, DType dt) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor::uniform(std::move(shape), -bound, bound, rng, dt);
}

}  // namespace

PolicyNet::PolicyNet(const PolicyConfig& cfg, uint64_t seed) : cfg_(cfg) {
  ag::check(cfg.height == cfg.width, "policy: frames must be square");
  ag::check(cfg.height >= 12, "policy: frame extent too small for the conv torso");
  ag::check(cfg.n_actions >= 1, "policy: need at least one action");
  Rng rng(seed);
  const DType dt = cfg.dtype;

  // joint padding search: a greedy minimal pad can leave a later stride
  // without an exact division
  int p1 = -1, p2 = -1, p3 = -1, e1 = 0, e2 = 0, e3 = 0;
  for (int a = 0; a < 4 && p3 < 0; ++a) {
    if (!pad_fits(cfg.height, 8, 4, a)) continue;
    const int ea = out_extent(cfg.height, 8, 4, a);
    if (ea < 1) continue;
    for (int b = 0; b < 2 && p3 < 0; ++b) {
      if (!pad_fits(ea, 4, 2, b)) continue;
      const int eb = out_extent(ea, 4, 2, b);
      if (eb < 1) continue;
      for (int c = 0; c < 2 && p3 < 0; ++c) {
        const int ec = out_extent(eb, 3, 1, c);
        if (ec < 1) continue;
        p1 = a;
        p2 = b;
        p3 = c;
        e1 = ea;
        e2 = eb;
        e3 = ec;
      }
    }
  }
  ag::check(p3 >= 0, "policy: no padding combination fits a " + std::to_string(cfg.height) +
                         "x" + std::to_string(cfg.width) + " frame");
  (void)e1;
  (void)e2;

  c1_.w = init_weight({32, cfg.in_channels, 8, 8}, cfg.in_channels * 64, rng, dt);
  c1_.b = Tensor::zeros({32}, dt);
  c1_.stride = 4;
  c1_.pad = p1;
  c1_.even_ok = true;
  c2_.w = init_weight({64, 32, 4, 4}, 32 * 16, rng, dt);
  c2_.b = Tensor::zeros({64}, dt);
  c2_.stride = 2;
  c2_.pad = p2;
  c2_.even_ok = true;
  c3_.w = init_weight({64, 64, 3, 3}, 64 * 9, rng, dt);
  c3_.b = Tensor::zeros({64}, dt);
  c3_.stride = 1;
  c3_.pad = p3;

  flat_ = 64 * e3 * e3;
  fc_w_ = init_weight({512, flat_}, flat_, rng, dt);
  fc_b_ = Tensor::zeros({512}, dt);
  pi_w_ = init_weight({cfg.n_actions, 512}, 512, rng, dt);
  pi_b_ = Tensor::zeros({cfg.n_actions}, dt);
  v_w_ = init_weight({1, 512}, 512, rng, dt);
  v_b_ = Tensor::zeros({1}, dt);
}

PolicyNet::Out PolicyNet::forward(Tape& tape, const Tensor& obs) const {
  ag::check(obs.defined() && obs.rank() == 3 && obs.dim(0) == cfg_.in_channels &&
                obs.dim(1) == cfg_.height && obs.dim(2) == cfg_.width,
            "policy: observation shape " + ag::shape_str(obs.shape()) + " does not match [" +
                std::to_string(cfg_.in_channels) + "," + std::to_string(cfg_.height) + "," +
                std::to_string(cfg_.width) + "]");
  Tensor h = ag::relu(tape, c1_.apply(tape, obs));
  h = ag::relu(tape, c2_.apply(tape, h));
  h = ag::relu(tape, c3_.apply(tape, h));
  Tensor flat = ag::reshape(tape, h, {flat_});
  Tensor dense = ag::relu(tape, ag::linear(tape, flat, fc_w_, fc_b_));
  Out out;
  out.logits = ag::linear(tape, dense, pi_w_, pi_b_);
  out.value = ag::linear(tape, dense, v_w_, v_b_);
  return out;
}

std::vector<Tensor> PolicyNet::parameters() {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

ag::NamedTensors PolicyNet::named_parameters() {
  return {{"policy.c1.w", c1_.w}, {"policy.c1.b", c1_.b}, {"policy.c2.w", c2_.w},
          {"policy.c2.b", c2_.b}, {"policy.c3.w", c3_.w}, {"policy.c3.b", c3_.b},
          {"policy.fc.w", fc_w_}, {"policy.fc.b", fc_b_}, {"policy.pi.w", pi_w_},
          {"policy.pi.b", pi_b_}, {"policy.v.w", v_w_},   {"policy.v.b", v_b_}};
}

void PolicyNet::set_requires_grad(bool v) {
  for (auto& [name, t] : named_parameters()) t.set_requires_grad(v);
}

void save_policy(const std::string& path, PolicyNet& policy, int k, const ag::AdamState* adam) {
  ag::NamedTensors out;
  const PolicyConfig& cfg = policy.config();
  out.emplace_back("meta.policy", Tensor::scalar(1));
  out.emplace_back("meta.in_channels", Tensor::scalar(cfg.in_channels));
  out.emplace_back("meta.height", Tensor::scalar(cfg.height));
  out.emplace_back("meta.width", Tensor::scalar(cfg.width));
  out.emplace_back("meta.n_actions", Tensor::scalar(cfg.n_actions));
  out.emplace_back("meta.k", Tensor::scalar(k));
  ag::NamedTensors params = policy.named_parameters();
  for (auto& [name, t] : params) out.emplace_back(name, t);
  if (adam && adam->initialized()) {
    out.emplace_back("adam.t", Tensor::scalar(static_cast<double>(adam->t)));
    for (size_t i = 0; i < params.size(); ++i) {
      out.emplace_back("adam.m." + params[i].first, adam->m[i]);
      out.emplace_back("adam.v." + params[i].first, adam->v[i]);
    }
  }
  ag::save_checkpoint(path, out);
}

LoadedPolicy load_policy(const std::string& path, ag::AdamState* adam) {
  ag::NamedTensors stored = ag::load_checkpoint(path);
  if (!ag::checkpoint_find(stored, "meta.policy"))
    throw std::runtime_error("checkpoint " + path + " is not a policy checkpoint");
  PolicyConfig cfg;
  cfg.in_channels = static_cast<int>(ag::checkpoint_get(stored, "meta.in_channels", {1}).item());
  cfg.height = static_cast<int>(ag::checkpoint_get(stored, "meta.height", {1}).item());
  cfg.width = static_cast<int>(ag::checkpoint_get(stored, "meta.width", {1}).item());
  cfg.n_actions = static_cast<int>(ag::checkpoint_get(stored, "meta.n_actions", {1}).item());
  LoadedPolicy loaded;
  loaded.k = static_cast<int>(ag::checkpoint_get(stored, "meta.k", {1}).item());
  loaded.policy = std::make_unique<PolicyNet>(cfg, 0);
  ag::NamedTensors params = loaded.policy->named_parameters();
  for (auto& [name, t] : params) {
    Tensor src = ag::checkpoint_get(stored, name, t.shape());
    for (int64_t i = 0; i < t.numel(); ++i) t.set_at(i, src.at(i));
  }
  if (adam && ag::checkpoint_find(stored, "adam.t")) {
    std::vector<Tensor> plist;
    for (auto& [name, t] : params) plist.push_back(t);
    adam->init(plist);
    adam->t = static_cast<int64_t>(ag::checkpoint_get(stored, "adam.t", {1}).item());
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor m = ag::checkpoint_get(stored, "adam.m." + params[i].first, params[i].second.shape());
      Tensor v = ag::checkpoint_get(stored, "adam.v." + params[i].first, params[i].second.shape());
      for (int64_t j = 0; j < m.numel(); ++j) {
        adam->m[i].set_at(j, m.at(j));
        adam->v[i].set_at(j, v.at(j));
      }
    }
  }
  return loaded;
}

// --- observation stacking -----------------------------------------------

IpaObservation ipa_observe(model::FrameRoller* live, const Tensor& frame, int k) {
  ag::check(k >= 0, "ipa_observe: k must be non-negative");
  IpaObservation out;
  if (!live) {
    ag::check(k == 0, "ipa_observe: k > 0 requires a predictor");
    out.stack = frame;
    return out;
  }
  Tensor first = live->advance(frame);
  out.next_pred = first;
  if (k == 0) {
    out.stack = frame;
    return out;
  }
  Tape tape(false);
  Tensor stack = frame;
  stack = ag::concat_channels(tape, stack, first);
  if (k > 1) {
    std::unique_ptr<model::FrameRoller> imagined = live->fork();
    Tensor cur = first;
    for (int i = 1; i < k; ++i) {
      cur = imagined->advance(cur);
      stack = ag::concat_channels(tape, stack, cur);
    }
  }
  out.stack = stack;
  return out;
}

IpaObservation peek_observe(const model::FrameRoller* live, const Tensor& frame, int k) {
  if (!live) return ipa_observe(nullptr, frame, k);
  std::unique_ptr<model::FrameRoller> fork = live->fork();
  return ipa_observe(fork.get(), frame, k);
}

// --- GAE ---------------------------------------------------------------

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const uint8_t> dones, double gamma, double lam,
                      double bootstrap_value) {
  ag::check(rewards.size() == values.size() && rewards.size() == dones.size(),
            "compute_gae: rewards, values and dones must have equal lengths");
  const int n = static_cast<int>(rewards.size());
  GaeResult out;
  out.advantages.assign(static_cast<size_t>(n), 0.0);
  out.returns.assign(static_cast<size_t>(n), 0.0);
  double carry = 0;
  for (int t = n - 1; t >= 0; --t) {
    const double not_done = dones[static_cast<size_t>(t)] ? 0.0 : 1.0;
    const double next_value = t == n - 1 ? bootstrap_value : values[static_cast<size_t>(t + 1)];
    const double delta =
        rewards[static_cast<size_t>(t)] + gamma * next_value * not_done - values[static_cast<size_t>(t)];
    carry = delta + gamma * lam * not_done * carry;
    out.advantages[static_cast<size_t>(t)] = carry;
    out.returns[static_cast<size_t>(t)] = carry + values[static_cast<size_t>(t)];
  }
  return out;
}

void normalize_advantages(std::vector<double>& advantages) {
  if (advantages.empty()) return;
  double mean = 0;
  for (double a : advantages) mean += a;
  mean /= static_cast<double>(advantages.size());
  double var = 0;
  for (double a : advantages) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / static_cast<double>(advantages.size())) + 1e-8;
  for (double& a : advantages) a = (a - mean) / sd;
}

// --- PPO -----------------------------------------------------------------

void RolloutBuffer::clear() {
  obs.clear();
  actions.clear();
  log_probs.clear();
  values.clear();
  rewards.clear();
  dones.clear();
  pred_states.clear();
  frames_now.clear();
  frames_next.clear();
  advantages.clear();
  returns.clear();
}

Tensor ppo_sample_loss(Tape& tape, const PolicyNet& policy, const Tensor& obs, int action,
                       double log_prob_old, double advantage, double value_target,
                       const PPOConfig& cfg, double* policy_term, double* value_term,
                       double* entropy_term) {
  PolicyNet::Out out = policy.forward(tape, obs);
  Tensor lsm = ag::log_softmax(tape, out.logits);
  Tensor lp = ag::pick(tape, lsm, action);
  Tensor ratio = ag::exp(tape, ag::sub(tape, lp, Tensor::scalar(log_prob_old, lp.dtype())));
  Tensor surr1 = ag::scale(tape, ratio, advantage);
  Tensor surr2 =
      ag::scale(tape, ag::clamp(tape, ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), advantage);
  Tensor policy_loss = ag::scale(tape, ag::min_elem(tape, surr1, surr2), -1.0);
  Tensor value_loss =
      ag::mse(tape, out.value, Tensor::scalar(value_target, out.value.dtype()));
  Tensor probs = ag::exp(tape, lsm);
  Tensor entropy = ag::scale(tape, ag::sum_all(tape, ag::mul(tape, probs, lsm)), -1.0);
  Tensor total = ag::add(
      tape,
      ag::add(tape, policy_loss, ag::scale(tape, value_loss, cfg.value_coef)),
      ag::scale(tape, entropy, -cfg.entropy_coef));
  if (policy_term) *policy_term = policy_loss.item();
  if (value_term) *value_term = value_loss.item();
  if (entropy_term) *entropy_term = entropy.item();
  return total;
}

PPOStats ppo_update(PolicyNet& policy, ag::AdamState& adam, const RolloutBuffer& buffer,
                    const PPOConfig& cfg, Rng& rng) {
  const int n = static_cast<int>(buffer.size());
  ag::check(n > 0, "ppo_update: empty buffer");
  ag::check(buffer.advantages.size() == buffer.size() && buffer.returns.size() == buffer.size(),
            "ppo_update: advantages not computed");
  policy.set_requires_grad(true);
  std::vector<Tensor> params = policy.parameters();
  for (Tensor& p : params)
    if (!p.has_grad()) p.zero_grad();

  PPOStats stats;
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int i = n - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.uniform_int(0, i))]);
    const int mb_size = std::max(1, n / std::max(1, cfg.minibatches));
    for (int start = 0; start < n; start += mb_size) {
      const int end = std::min(n, start + mb_size);
      const int m = end - start;
      for (int ii = start; ii < end; ++ii) {
        const int idx = order[static_cast<size_t>(ii)];
        Tape tape;
        double pl = 0, vl = 0, ent = 0;
        Tensor loss = ppo_sample_loss(tape, policy, buffer.obs[static_cast<size_t>(idx)],
                                      buffer.actions[static_cast<size_t>(idx)],
                                      buffer.log_probs[static_cast<size_t>(idx)],
                                      buffer.advantages[static_cast<size_t>(idx)],
                                      buffer.returns[static_cast<size_t>(idx)], cfg, &pl, &vl,
                                      &ent);
        const double value = loss.item();
        if (!std::isfinite(value))
          throw std::runtime_error(
              "ppo_update: non-finite loss (policy=" + std::to_string(pl) +
              ", value=" + std::to_string(vl) + ", entropy=" + std::to_string(ent) + ")");
        tape.backward(ag::scale(tape, loss, 1.0 / m));
        stats.policy_loss += pl;
        stats.value_loss += vl;
        stats.entropy += ent;
      }
      ag::clip_grad_norm(params, cfg.grad_clip);
      ag::adam_step_attached(params, adam);
      ++stats.updates;
    }
  }
  const double total_samples = static_cast<double>(n) * cfg.epochs;
  stats.policy_loss /= total_samples;
  stats.value_loss /= total_samples;
  stats.entropy /= total_samples;
  return stats;
}

// --- training loop -----------------------------------------------------------

AgentTrainResult train_agent(env::PhysEnv& env, PolicyNet& policy,
                             model::RecurrentVideoModel* predictor, const PPOConfig& cfg) {
  ag::check(cfg.horizon >= 1 && cfg.total_frames >= cfg.horizon,
            "train_agent: horizon and total_frames must be positive");
  if (!predictor) ag::check(cfg.k == 0, "train_agent: k > 0 requires a predictor");
  const int expected_channels = (cfg.k + 1) * 3;
  ag::check(policy.config().in_channels == expected_channels,
            "train_agent: policy expects " + std::to_string(policy.config().in_channels) +
                " channels but k=" + std::to_string(cfg.k) + " produces " +
                std::to_string(expected_channels));

  Rng action_rng(derive_seed(cfg.seed, 0xac71));
  Rng shuffle_rng(derive_seed(cfg.seed, 0x5f0f));
  uint64_t episode_seed = 0;

  ag::AdamState policy_adam;
  policy_adam.lr = cfg.policy_lr;
  {
    std::vector<Tensor> params = policy.parameters();
    policy.set_requires_grad(true);
    for (Tensor& p : params) p.zero_grad();
    policy_adam.init(params);
  }

  ag::AdamState predictor_adam;
  std::vector<Tensor> predictor_params;
  if (predictor) {
    predictor_params = predictor->parameters();
    predictor->set_requires_grad(true);
    for (Tensor& p : predictor_params) p.zero_grad();
    predictor_adam.lr = cfg.predictor_lr;
    predictor_adam.init(predictor_params);
  }

  std::unique_ptr<model::FrameRoller> live;
  if (predictor) live = predictor->roller(env.config().height, env.config().width);

  AgentTrainResult result;
  Tensor x = raster::frame_to_tensor(env.reset(derive_seed(cfg.seed, episode_seed++)));
  double episode_reward = 0;
  RolloutBuffer buffer;

  int64_t frames = 0;
  while (frames < cfg.total_frames) {
    buffer.clear();
    double online_mse_sum = 0;
    int online_mse_count = 0;
    for (int t = 0; t < cfg.horizon; ++t) {
      std::vector<Tensor> state_snapshot;
      if (live) state_snapshot = live->state();
      IpaObservation obs = ipa_observe(live.get(), x, cfg.k);

      Tape tape(false);
      PolicyNet::Out out = policy.forward(tape, obs.stack);
      ag::Categorical dist(out.logits);
      const int action = dist.sample(action_rng);

      env::StepResult sr = env.step(action);
      Tensor x_next = raster::frame_to_tensor(sr.observation);

      if (predictor && obs.next_pred.defined()) {
        double acc = 0;
        for (int64_t i = 0; i < x_next.numel(); ++i) {
          const double d = obs.next_pred.at(i) - x_next.at(i);
          acc += d * d;
        }
        online_mse_sum += acc / static_cast<double>(x_next.numel());
        ++online_mse_count;
      }

      buffer.obs.push_back(obs.stack);
      buffer.actions.push_back(action);
      buffer.log_probs.push_back(dist.log_prob(action));
      buffer.values.push_back(out.value.item());
      buffer.rewards.push_back(sr.reward);
      buffer.dones.push_back(sr.done ? 1 : 0);
      if (predictor) {
        buffer.pred_states.push_back(state_snapshot);
        buffer.frames_now.push_back(x);
        buffer.frames_next.push_back(x_next);
      }

      episode_reward += sr.reward;
      ++frames;
      if (sr.done) {
        result.episodes.emplace_back(frames, episode_reward);
        episode_reward = 0;
        x = raster::frame_to_tensor(env.reset(derive_seed(cfg.seed, episode_seed++)));
        if (live) live->reset();
      } else {
        x = x_next;
      }
    }

    // bootstrap from a forked state so the live predictor is untouched
    IpaObservation boot = peek_observe(live.get(), x, cfg.k);
    Tape boot_tape(false);
    const double bootstrap = policy.forward(boot_tape, boot.stack).value.item();

    GaeResult gae = compute_gae(buffer.rewards, buffer.values, buffer.dones, cfg.gamma, cfg.lam,
                                bootstrap);
    normalize_advantages(gae.advantages);
    buffer.advantages = std::move(gae.advantages);
    buffer.returns = std::move(gae.returns);

    PPOStats stats = ppo_update(policy, policy_adam, buffer, cfg, shuffle_rng);

    // predictor fine-tuning on this round's transitions; 1-step MSE from the
    // recorded pre-step states, never through the policy loss
    if (predictor && cfg.finetune_pairs > 0) {
      const int n = static_cast<int>(buffer.frames_now.size());
      const int pairs = std::min(cfg.finetune_pairs, n);
      std::vector<int> picks(static_cast<size_t>(pairs));
      for (int i = 0; i < pairs; ++i)
        picks[static_cast<size_t>(i)] = static_cast<int>(static_cast<int64_t>(i) * n / pairs);
      for (int start = 0; start < pairs; start += cfg.finetune_batch) {
        const int end = std::min(pairs, start + cfg.finetune_batch);
        const int m = end - start;
        for (int i = start; i < end; ++i) {
          const int idx = picks[static_cast<size_t>(i)];
          Tape tape;
          auto [pred, next_state] = predictor->step_state(
              tape, buffer.frames_now[static_cast<size_t>(idx)],
              buffer.pred_states[static_cast<size_t>(idx)]);
          Tensor loss = ag::mse(tape, pred, buffer.frames_next[static_cast<size_t>(idx)]);
          if (!std::isfinite(loss.item()))
            throw std::runtime_error("train_agent: non-finite predictor loss");
          tape.backward(ag::scale(tape, loss, 1.0 / m));
        }
        ag::adam_step_attached(predictor_params, predictor_adam);
      }
    }

    RoundLog log;
    log.frames = frames;
    double mean_ep = std::numeric_limits<double>::quiet_NaN();
    if (!result.episodes.empty()) {
      const size_t window = std::min<size_t>(result.episodes.size(), 20);
      double acc = 0;
      for (size_t i = result.episodes.size() - window; i < result.episodes.size(); ++i)
        acc += result.episodes[i].second;
      mean_ep = acc / static_cast<double>(window);
    }
    log.episode_reward = mean_ep;
    log.predictor_mse = online_mse_count ? online_mse_sum / online_mse_count : 0.0;
    log.policy_loss = stats.policy_loss;
    log.value_loss = stats.value_loss;
    log.entropy = stats.entropy;
    result.rounds.push_back(log);
  }
  return result;
}

AgentEvalResult evaluate_agent(env::PhysEnv& env, PolicyNet& policy,
                               model::RecurrentVideoModel* predictor, int episodes, int k,
                               uint64_t seed) {
  ag::check(episodes >= 1, "evaluate_agent: episodes must be >= 1");
  if (!predictor) ag::check(k == 0, "evaluate_agent: k > 0 requires a predictor");
  const int expected_channels = (k + 1) * 3;
  ag::check(policy.config().in_channels == expected_channels,
            "evaluate_agent: policy expects " + std::to_string(policy.config().in_channels) +
                " input channels but k=" + std::to_string(k) + " produces " +
                std::to_string(expected_channels));

  AgentEvalResult result;
  std::unique_ptr<model::FrameRoller> live;
  if (predictor) live = predictor->roller(env.config().height, env.config().width);

  for (int ep = 0; ep < episodes; ++ep) {
    Tensor x = raster::frame_to_tensor(env.reset(derive_seed(seed, static_cast<uint64_t>(ep))));
    if (live) live->reset();
    double total = 0;
    while (true) {
      IpaObservation obs = ipa_observe(live.get(), x, k);
      Tape tape(false);
      PolicyNet::Out out = policy.forward(tape, obs.stack);
      int best = 0;
      for (int a = 1; a < out.logits.dim(0); ++a)
        if (out.logits.at(a) > out.logits.at(best)) best = a;
      env::StepResult sr = env.step(best);
      total += sr.reward;
      if (sr.done) break;
      x = raster::frame_to_tensor(sr.observation);
    }
    result.episode_rewards.push_back(total);
  }
  double mean = 0;
  for (double r : result.episode_rewards) mean += r;
  mean /= static_cast<double>(episodes);
  double var = 0;
  for (double r : result.episode_rewards) var += (r - mean) * (r - mean);
  result.mean = mean;
  result.stddev = std::sqrt(var / static_cast<double>(episodes));
  return result;
}

}  // namespace physprior::rl
