#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "physprior/agent.hpp"

using namespace physprior;
using namespace physprior::rl;
using ag::DType;
using ag::Tape;
using ag::Tensor;

namespace {

// Brute-force discounted-sum oracle: A_t = sum_l (gamma*lam)^l delta_{t+l},
// truncated after the first done.
GaeResult gae_brute_force(const std::vector<double>& rewards, const std::vector<double>& values,
                          const std::vector<uint8_t>& dones, double gamma, double lam,
                          double bootstrap) {
  const int n = static_cast<int>(rewards.size());
  GaeResult out;
  out.advantages.resize(static_cast<size_t>(n));
  out.returns.resize(static_cast<size_t>(n));
  for (int t = 0; t < n; ++t) {
    double acc = 0, factor = 1;
    for (int l = t; l < n; ++l) {
      const double not_done = dones[static_cast<size_t>(l)] ? 0.0 : 1.0;
      const double next_v = l == n - 1 ? bootstrap : values[static_cast<size_t>(l + 1)];
      const double delta =
          rewards[static_cast<size_t>(l)] + gamma * next_v * not_done - values[static_cast<size_t>(l)];
      acc += factor * delta;
      if (dones[static_cast<size_t>(l)]) break;
      factor *= gamma * lam;
    }
    out.advantages[static_cast<size_t>(t)] = acc;
    out.returns[static_cast<size_t>(t)] = acc + values[static_cast<size_t>(t)];
  }
  return out;
}

PolicyConfig small_policy_cfg(int k, int extent = 16, int actions = 4) {
  PolicyConfig cfg;
  cfg.in_channels = (k + 1) * 3;
  cfg.height = extent;
  cfg.width = extent;
  cfg.n_actions = actions;
  return cfg;
}

}  // namespace

TEST_CASE("gae closed forms") {
  // gamma = 0 reduces to A_t = r_t - V_t
  std::vector<double> rewards = {1, -1, 0.5};
  std::vector<double> values = {0.2, 0.3, -0.1};
  std::vector<uint8_t> dones = {0, 0, 0};
  GaeResult g = compute_gae(rewards, values, dones, 0.0, 0.95, 7.0);
  for (size_t i = 0; i < rewards.size(); ++i)
    CHECK(g.advantages[i] == doctest::Approx(rewards[i] - values[i]));

  // single terminated step: A = r - V
  GaeResult single = compute_gae(std::vector<double>{2.0}, std::vector<double>{0.5},
                                 std::vector<uint8_t>{1}, 0.99, 0.95, 100.0);
  CHECK(single.advantages[0] == doctest::Approx(1.5));
  CHECK(single.returns[0] == doctest::Approx(2.0));

  // mismatched lengths rejected
  CHECK_THROWS_AS(compute_gae(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0},
                              std::vector<uint8_t>{0}, 0.9, 0.9, 0.0),
                  std::invalid_argument);
}

TEST_CASE("gae matches the brute-force oracle") {
  Rng rng(41);
  // random length-5 sequences
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> rewards(5), values(5);
    std::vector<uint8_t> dones(5);
    for (int i = 0; i < 5; ++i) {
      rewards[static_cast<size_t>(i)] = rng.uniform(-1, 1);
      values[static_cast<size_t>(i)] = rng.uniform(-1, 1);
      dones[static_cast<size_t>(i)] = rng.bernoulli(0.3) ? 1 : 0;
    }
    const double bootstrap = rng.uniform(-1, 1);
    GaeResult fast = compute_gae(rewards, values, dones, 0.99, 0.95, bootstrap);
    GaeResult slow = gae_brute_force(rewards, values, dones, 0.99, 0.95, bootstrap);
    for (int i = 0; i < 5; ++i) {
      CHECK(fast.advantages[static_cast<size_t>(i)] ==
            doctest::Approx(slow.advantages[static_cast<size_t>(i)]).epsilon(1e-9));
      CHECK(fast.returns[static_cast<size_t>(i)] ==
            doctest::Approx(slow.returns[static_cast<size_t>(i)]).epsilon(1e-9));
    }
  }
  // exhaustive done patterns up to length 6
  Rng rng2(42);
  for (int n = 1; n <= 6; ++n) {
    for (int pattern = 0; pattern < (1 << n); ++pattern) {
      std::vector<double> rewards(static_cast<size_t>(n)), values(static_cast<size_t>(n));
      std::vector<uint8_t> dones(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) {
        rewards[static_cast<size_t>(i)] = rng2.uniform(-1, 1);
        values[static_cast<size_t>(i)] = rng2.uniform(-1, 1);
        dones[static_cast<size_t>(i)] = (pattern >> i) & 1;
      }
      const double bootstrap = rng2.uniform(-1, 1);
      GaeResult fast = compute_gae(rewards, values, dones, 0.97, 0.9, bootstrap);
      GaeResult slow = gae_brute_force(rewards, values, dones, 0.97, 0.9, bootstrap);
      for (int i = 0; i < n; ++i)
        CHECK(std::abs(fast.advantages[static_cast<size_t>(i)] -
                       slow.advantages[static_cast<size_t>(i)]) < 1e-6);
    }
  }
}

TEST_CASE("advantage normalization keeps the argmax") {
  Rng rng(7);
  std::vector<double> a(50);
  for (double& v : a) v = rng.uniform(-3, 5);
  const auto argmax_before = std::distance(a.begin(), std::max_element(a.begin(), a.end()));
  std::vector<double> b = a;
  normalize_advantages(b);
  const auto argmax_after = std::distance(b.begin(), std::max_element(b.begin(), b.end()));
  CHECK(argmax_before == argmax_after);
  double mean = 0;
  for (double v : b) mean += v;
  CHECK(std::abs(mean / b.size()) < 1e-9);
}

TEST_CASE("ppo loss matches a straight-line transcription") {
  PPOConfig cfg;
  PolicyNet policy(small_policy_cfg(0), 5);
  Rng rng(9);
  Tensor obs = Tensor::uniform({3, 16, 16}, 0, 1, rng, DType::F32);

  // read off logits and value, then evaluate the written-out formula
  Tape probe(false);
  PolicyNet::Out out = policy.forward(probe, obs);
  const int n_actions = out.logits.dim(0);
  std::vector<double> logits(static_cast<size_t>(n_actions));
  double maxv = -1e30;
  for (int a = 0; a < n_actions; ++a) {
    logits[static_cast<size_t>(a)] = out.logits.at(a);
    maxv = std::max(maxv, logits[static_cast<size_t>(a)]);
  }
  double lse = 0;
  for (double l : logits) lse += std::exp(l - maxv);
  lse = maxv + std::log(lse);
  const double v = out.value.item();

  for (int action = 0; action < 2; ++action) {
    const double advantage = action == 0 ? 0.7 : -1.3;
    const double ret = 0.4;
    const double logp = logits[static_cast<size_t>(action)] - lse;
    const double logp_old = logp + (action == 0 ? -std::log(1.5) : 0.1);

    const double ratio = std::exp(logp - logp_old);
    const double s1 = ratio * advantage;
    const double s2 = std::clamp(ratio, 1 - cfg.clip_eps, 1 + cfg.clip_eps) * advantage;
    const double policy_term = -std::min(s1, s2);
    const double value_term = (v - ret) * (v - ret);
    double entropy = 0;
    for (double l : logits) {
      const double p = std::exp(l - lse);
      entropy -= p * (l - lse);
    }
    const double expected = policy_term + cfg.value_coef * value_term - cfg.entropy_coef * entropy;

    Tape tape;
    double pl = 0, vl = 0, ent = 0;
    Tensor loss =
        ppo_sample_loss(tape, policy, obs, action, logp_old, advantage, ret, cfg, &pl, &vl, &ent);
    CHECK(std::abs(loss.item() - expected) < 1e-6);
    CHECK(std::abs(pl - policy_term) < 1e-6);

    if (action == 0) {
      // ratio 1.5 with positive advantage selects the clipped branch
      CHECK(ratio == doctest::Approx(1.5));
      CHECK(pl == doctest::Approx(-(1 + cfg.clip_eps) * advantage));
    }
  }

  // pi == pi_old: ratio 1, clip inactive, policy term equals -A
  Tape tape;
  const double logp0 = logits[0] - lse;
  double pl = 0;
  ppo_sample_loss(tape, policy, obs, 0, logp0, 2.5, 0.0, cfg, &pl);
  CHECK(pl == doctest::Approx(-2.5).epsilon(1e-6));
}

TEST_CASE("ppo objective is invariant to logit shifts") {
  PPOConfig cfg;
  PolicyNet a(small_policy_cfg(0), 3);
  PolicyNet b(small_policy_cfg(0), 3);
  // copy a's parameters into b, then shift b's action-logit bias by a constant
  auto pa = a.named_parameters();
  auto pb = b.named_parameters();
  for (size_t i = 0; i < pa.size(); ++i)
    for (int64_t j = 0; j < pa[i].second.numel(); ++j)
      pb[i].second.set_at(j, pa[i].second.at(j));
  for (auto& [name, t] : pb)
    if (name == "policy.pi.b")
      for (int64_t j = 0; j < t.numel(); ++j) t.set_at(j, t.at(j) + 3.7);

  Rng rng(11);
  Tensor obs = Tensor::uniform({3, 16, 16}, 0, 1, rng, DType::F32);
  Tape ta, tb;
  Tensor la = ppo_sample_loss(ta, a, obs, 1, -1.2, 0.8, 0.3, cfg);
  Tensor lb = ppo_sample_loss(tb, b, obs, 1, -1.2, 0.8, 0.3, cfg);
  CHECK(std::abs(la.item() - lb.item()) < 1e-6);
}

TEST_CASE("ipa observation stacking") {
  model::SpatialNetConfig scfg;
  scfg.channels = 4;
  model::SpatialNet net(scfg, 3);
  Rng rng(5);
  Tensor x = Tensor::uniform({3, 16, 16}, 0, 1, rng, DType::F32);

  auto live = net.roller(16, 16);
  IpaObservation obs3 = ipa_observe(live.get(), x, 3);
  CHECK(obs3.stack.shape() == std::vector<int>{12, 16, 16});
  CHECK(obs3.next_pred.defined());

  // k = 0 without a predictor degenerates to the plain frame
  IpaObservation obs0 = ipa_observe(nullptr, x, 0);
  CHECK(obs0.stack.shape() == std::vector<int>{3, 16, 16});
  CHECK_THROWS_AS(ipa_observe(nullptr, x, 2), std::invalid_argument);

  // the live hidden state after ipa_observe does not depend on k
  auto live_a = net.roller(16, 16);
  auto live_b = net.roller(16, 16);
  ipa_observe(live_a.get(), x, 0);
  ipa_observe(live_b.get(), x, 3);
  const Tensor& ha = live_a->state()[0];
  const Tensor& hb = live_b->state()[0];
  REQUIRE(ha.numel() == hb.numel());
  for (int64_t i = 0; i < ha.numel(); ++i) CHECK(ha.at(i) == hb.at(i));

  // peek_observe leaves the live state alone entirely
  const Tensor before = live_a->state()[0];
  IpaObservation peek = peek_observe(live_a.get(), x, 3);
  CHECK(peek.stack.shape() == std::vector<int>{12, 16, 16});
  CHECK(live_a->state()[0].id() == before.id());
}

TEST_CASE("policy gradients never reach the predictor") {
  model::SpatialNetConfig scfg;
  scfg.channels = 4;
  model::SpatialNet net(scfg, 7);
  net.set_requires_grad(true);

  env::EnvConfig ecfg;
  ecfg.game = env::Game::PhysGoal;
  ecfg.height = 16;
  ecfg.width = 16;
  ecfg.obstacles_min = 2;
  ecfg.obstacles_max = 3;
  ecfg.step_cap = 50;
  env::PhysEnv environment(ecfg);

  PPOConfig cfg;
  cfg.k = 3;
  cfg.horizon = 8;
  cfg.epochs = 2;
  cfg.minibatches = 2;
  PolicyNet policy(small_policy_cfg(3, 16, environment.n_actions()), 1);

  // collect a small buffer through the real observation path
  auto live = net.roller(16, 16);
  RolloutBuffer buffer;
  Rng arng(3);
  Tensor x = raster::frame_to_tensor(environment.reset(5));
  for (int t = 0; t < cfg.horizon; ++t) {
    IpaObservation obs = ipa_observe(live.get(), x, cfg.k);
    Tape tape(false);
    PolicyNet::Out out = policy.forward(tape, obs.stack);
    ag::Categorical dist(out.logits);
    const int action = dist.sample(arng);
    env::StepResult sr = environment.step(action);
    buffer.obs.push_back(obs.stack);
    buffer.actions.push_back(action);
    buffer.log_probs.push_back(dist.log_prob(action));
    buffer.values.push_back(out.value.item());
    buffer.rewards.push_back(sr.reward);
    buffer.dones.push_back(sr.done ? 1 : 0);
    if (sr.done) {
      x = raster::frame_to_tensor(environment.reset(6));
      live->reset();
    } else {
      x = raster::frame_to_tensor(sr.observation);
    }
  }
  GaeResult gae = compute_gae(buffer.rewards, buffer.values, buffer.dones, cfg.gamma, cfg.lam, 0.0);
  normalize_advantages(gae.advantages);
  buffer.advantages = std::move(gae.advantages);
  buffer.returns = std::move(gae.returns);

  ag::AdamState adam;
  adam.lr = cfg.policy_lr;
  auto params = policy.parameters();
  policy.set_requires_grad(true);
  for (auto& p : params) p.zero_grad();
  adam.init(params);
  Rng shuffle(2);
  ppo_update(policy, adam, buffer, cfg, shuffle);

  for (auto& [name, t] : net.named_parameters()) {
    if (!t.has_grad()) continue;  // absent counts as zero
    for (int64_t i = 0; i < t.numel(); ++i) CHECK(t.grad_at(i) == 0.0);
  }
}

TEST_CASE("train_agent runs and logs for every predictor mode") {
  env::EnvConfig ecfg;
  ecfg.game = env::Game::PhysGoal;
  ecfg.height = 16;
  ecfg.width = 16;
  ecfg.obstacles_min = 2;
  ecfg.obstacles_max = 3;
  ecfg.step_cap = 40;

  // plain PPO (k = 0, no predictor)
  {
    env::PhysEnv environment(ecfg);
    PPOConfig cfg;
    cfg.k = 0;
    cfg.horizon = 32;
    cfg.total_frames = 64;
    cfg.epochs = 1;
    cfg.minibatches = 2;
    PolicyNet policy(small_policy_cfg(0, 16, environment.n_actions()), 2);
    AgentTrainResult r = train_agent(environment, policy, nullptr, cfg);
    CHECK(r.rounds.size() == 2);
    for (const RoundLog& log : r.rounds) {
      CHECK(std::isfinite(log.policy_loss));
      CHECK(log.predictor_mse == 0.0);
    }
  }
  // IPA with a random predictor
  {
    env::PhysEnv environment(ecfg);
    PPOConfig cfg;
    cfg.k = 2;
    cfg.horizon = 32;
    cfg.total_frames = 64;
    cfg.epochs = 1;
    cfg.minibatches = 2;
    cfg.finetune_pairs = 8;
    model::SpatialNetConfig scfg;
    scfg.channels = 4;
    model::SpatialNet net(scfg, 3);
    PolicyNet policy(small_policy_cfg(2, 16, environment.n_actions()), 2);
    AgentTrainResult r = train_agent(environment, policy, &net, cfg);
    CHECK(r.rounds.size() == 2);
    for (const RoundLog& log : r.rounds) {
      CHECK(std::isfinite(log.policy_loss));
      CHECK(log.predictor_mse > 0.0);
    }
    // mismatched k is rejected up front
    PPOConfig bad = cfg;
    bad.k = 1;
    CHECK_THROWS_AS(train_agent(environment, policy, &net, bad), std::invalid_argument);
  }
}

TEST_CASE("evaluate_agent determinism and preconditions") {
  env::EnvConfig ecfg;
  ecfg.game = env::Game::PhysShooter;
  ecfg.height = 16;
  ecfg.width = 16;
  ecfg.obstacles_min = 2;
  ecfg.obstacles_max = 3;
  ecfg.step_cap = 30;
  env::PhysEnv environment(ecfg);
  PolicyNet policy(small_policy_cfg(0, 16, environment.n_actions()), 4);

  CHECK_THROWS_AS(evaluate_agent(environment, policy, nullptr, 0, 0, 1), std::invalid_argument);

  AgentEvalResult a = evaluate_agent(environment, policy, nullptr, 3, 0, 11);
  AgentEvalResult b = evaluate_agent(environment, policy, nullptr, 3, 0, 11);
  CHECK(a.mean == b.mean);
  CHECK(a.episode_rewards == b.episode_rewards);
  CHECK(a.episode_rewards.size() == 3);

  // channel mismatch between the policy and k
  CHECK_THROWS_AS(evaluate_agent(environment, policy, nullptr, 1, 1, 1), std::invalid_argument);
}
