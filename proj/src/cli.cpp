#include "physprior/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "physprior/agent.hpp"
#include "physprior/dataset.hpp"
#include "physprior/physworld.hpp"
#include "physprior/predictor.hpp"

namespace physprior::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Seed domain tags, one per subsystem.
constexpr uint64_t kSeedData = 0x64617461;
constexpr uint64_t kSeedModel = 0x6d6f646c;
constexpr uint64_t kSeedAgent = 0x6167656e;
constexpr uint64_t kSeedEval = 0x6576616c;
constexpr uint64_t kSeedProbe = 0x70726f62;

void set_threads(int n) {
  if (n <= 0) return;
#ifdef _OPENMP
  omp_set_num_threads(n);
#endif
}

int default_threads() {
  if (const char* env = std::getenv("PHYSPRIOR_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 0;  // leave runtime defaults alone
}

struct PredictorSection {
  std::string arch = "spatialnet";
  int channels = 32;
  int memory_kernel = 3;
  model::TrainOptions train;

  json to_json() const {
    return json{{"arch", arch},
                {"channels", channels},
                {"memory_kernel", memory_kernel},
                {"bptt_len", train.bptt_len},
                {"batch", train.batch},
                {"lr", train.lr},
                {"epochs", train.epochs},
                {"max_traj", train.max_traj},
                {"seed", train.seed}};
  }
  static PredictorSection from_json(const json& j) {
    PredictorSection s;
    const json known = s.to_json();
    for (const auto& [key, value] : j.items()) {
      if (!known.contains(key))
        throw std::invalid_argument("unknown predictor config key \"" + key + "\"");
      (void)value;
    }
    s.arch = j.value("arch", s.arch);
    s.channels = j.value("channels", s.channels);
    s.memory_kernel = j.value("memory_kernel", s.memory_kernel);
    s.train.bptt_len = j.value("bptt_len", s.train.bptt_len);
    s.train.batch = j.value("batch", s.train.batch);
    s.train.lr = j.value("lr", s.train.lr);
    s.train.epochs = j.value("epochs", s.train.epochs);
    s.train.max_traj = j.value("max_traj", s.train.max_traj);
    s.train.seed = j.value("seed", s.train.seed);
    return s;
  }
};

struct EvalSection {
  int warmup = 2;
  std::vector<int> horizons = {1, 5, 10};
  int objects_step = 20;
  int max_traj = -1;
  // probe settings
  int clips_per_class = 60;
  int clip_len = 10;
  int clip_start = 25;
  int probe_epochs = 200;
  double probe_lr = 1e-2;
  double train_fraction = 0.75;

  json to_json() const {
    return json{{"warmup", warmup},
                {"horizons", horizons},
                {"objects_step", objects_step},
                {"max_traj", max_traj},
                {"clips_per_class", clips_per_class},
                {"clip_len", clip_len},
                {"clip_start", clip_start},
                {"probe_epochs", probe_epochs},
                {"probe_lr", probe_lr},
                {"train_fraction", train_fraction}};
  }
  static EvalSection from_json(const json& j) {
    EvalSection s;
    const json known = s.to_json();
    for (const auto& [key, value] : j.items()) {
      if (!known.contains(key))
        throw std::invalid_argument("unknown eval config key \"" + key + "\"");
      (void)value;
    }
    s.warmup = j.value("warmup", s.warmup);
    if (j.contains("horizons")) s.horizons = j["horizons"].get<std::vector<int>>();
    s.objects_step = j.value("objects_step", s.objects_step);
    s.max_traj = j.value("max_traj", s.max_traj);
    s.clips_per_class = j.value("clips_per_class", s.clips_per_class);
    s.clip_len = j.value("clip_len", s.clip_len);
    s.clip_start = j.value("clip_start", s.clip_start);
    s.probe_epochs = j.value("probe_epochs", s.probe_epochs);
    s.probe_lr = j.value("probe_lr", s.probe_lr);
    s.train_fraction = j.value("train_fraction", s.train_fraction);
    return s;
  }
};

struct RunConfig {
  data::GenConfig dataset;
  PredictorSection predictor;
  rl::PPOConfig agent;
  env::EnvConfig environment;
  EvalSection eval;
  uint64_t seed = 0;

  json to_json() const {
    return json{{"dataset", json::parse(dataset.to_json())},
                {"predictor", predictor.to_json()},
                {"agent", json::parse(agent.to_json())},
                {"env", json::parse(environment.to_json())},
                {"eval", eval.to_json()},
                {"seed", seed}};
  }
};

RunConfig load_config(const std::string& path) {
  RunConfig cfg;
  if (path.empty()) return cfg;
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config: " + path);
  json j = json::parse(is);
  for (const auto& [key, value] : j.items()) {
    if (key != "dataset" && key != "predictor" && key != "agent" && key != "env" &&
        key != "eval" && key != "seed")
      throw std::invalid_argument("unknown config section \"" + key + "\"");
    (void)value;
  }
  if (j.contains("dataset")) cfg.dataset = data::GenConfig::from_json(j["dataset"].dump());
  if (j.contains("predictor")) cfg.predictor = PredictorSection::from_json(j["predictor"]);
  if (j.contains("agent")) cfg.agent = rl::PPOConfig::from_json(j["agent"].dump());
  if (j.contains("env")) cfg.environment = env::EnvConfig::from_json(j["env"].dump());
  if (j.contains("eval")) cfg.eval = EvalSection::from_json(j["eval"]);
  if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
  return cfg;
}

// Section seeds of 0 mean "derive from the global seed".
void apply_global_seed(RunConfig& cfg) {
  if (cfg.dataset.master_seed == 0) cfg.dataset.master_seed = derive_seed(cfg.seed, kSeedData);
  if (cfg.predictor.train.seed == 0) cfg.predictor.train.seed = derive_seed(cfg.seed, kSeedModel);
  if (cfg.agent.seed == 0) cfg.agent.seed = derive_seed(cfg.seed, kSeedAgent);
}

void echo_config(const RunConfig& cfg, const std::string& next_to, const std::string& command) {
  json j = cfg.to_json();
  j["command"] = command;
  const std::string path = next_to + ".config.json";
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write config echo: " + path);
  os << j.dump(2) << "\n";
  std::cout << "config: " << path << "\n";
}

void write_csv(const std::string& path, const std::string& header,
               const std::vector<std::string>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write: " + path);
  os << header << "\n";
  for (const std::string& row : rows) os << row << "\n";
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.8g", v);
  return buf;
}

std::unique_ptr<model::RecurrentVideoModel> build_model(const PredictorSection& section,
                                                        uint64_t seed) {
  if (section.arch == "spatialnet") {
    model::SpatialNetConfig cfg;
    cfg.channels = section.channels;
    cfg.memory_kernel = section.memory_kernel;
    return std::make_unique<model::SpatialNet>(cfg, seed);
  }
  if (section.arch == "convlstm" || section.arch == "convlstm_res") {
    model::ConvLstmConfig cfg;
    cfg.channels = section.channels;
    cfg.residual = section.arch == "convlstm_res";
    return std::make_unique<model::ConvLstm>(cfg, seed);
  }
  throw std::invalid_argument("unknown model \"" + section.arch +
                              "\" (expected spatialnet, convlstm or convlstm_res)");
}

// --- subcommands --------------------------------------------------------

int cmd_gen_data(const std::string& config_path, const std::string& out,
                 const std::string& variant, int split, uint64_t seed, int threads) {
  RunConfig cfg = load_config(config_path);
  if (seed) cfg.seed = seed;
  apply_global_seed(cfg);
  data::GenConfig gen = cfg.dataset;
  if (!variant.empty()) gen = data::make_generalization_config(gen, variant);
  cfg.dataset = gen;

  std::cout << "master_seed: " << gen.master_seed << "\n";
  if (split > 0) {
    const fs::path base(out);
    const std::string stem = (base.parent_path() / base.stem()).string();
    const std::string ext = base.extension().string();
    const std::string train_path = stem + ".train" + ext;
    const std::string test_path = stem + ".test" + ext;
    data::generate_dataset_split(gen, split, train_path, test_path, threads);
    for (const std::string& p : {train_path, test_path}) {
      data::DatasetReader reader(p);  // validation
      std::cout << p << ": " << fs::file_size(p) << " bytes, " << reader.n_traj()
                << " trajectories\n";
    }
    echo_config(cfg, train_path, "gen-data");
  } else {
    data::generate_dataset(gen, out, threads);
    data::DatasetReader reader(out);
    std::cout << out << ": " << fs::file_size(out) << " bytes, " << reader.n_traj()
              << " trajectories\n";
    echo_config(cfg, out, "gen-data");
  }
  return 0;
}

int cmd_train_predictor(const std::string& config_path, const std::string& arch,
                        const std::string& data_path, const std::string& out, uint64_t seed) {
  RunConfig cfg = load_config(config_path);
  if (seed) cfg.seed = seed;
  if (!arch.empty()) cfg.predictor.arch = arch;
  apply_global_seed(cfg);

  data::DatasetReader dataset(data_path);
  auto net = build_model(cfg.predictor, cfg.predictor.train.seed);
  model::TrainResult result = model::train_predictor(*net, dataset, cfg.predictor.train);

  model::save_model(out, *net);
  model::load_model(out);  // validation

  std::vector<std::string> rows;
  for (const auto& [step, loss] : result.loss_curve)
    rows.push_back(std::to_string(step) + ",train,mse," + fmt(loss));
  write_csv(out + ".loss.csv", "step,split,metric,value", rows);

  model::EvalOptions eopts;
  eopts.warmup = cfg.eval.warmup;
  eopts.horizons = {1};
  eopts.objects_step = 0;
  eopts.max_traj = cfg.predictor.train.max_traj;
  const double baseline = model::copy_baseline_mse(dataset, eopts);
  std::cout << "checkpoint: " << out << "\n";
  std::cout << "loss_csv: " << out << ".loss.csv\n";
  std::cout << "final_train_mse: " << fmt(result.final_train_mse) << "\n";
  std::cout << "copy_baseline_mse: " << fmt(baseline) << "\n";
  echo_config(cfg, out, "train-predictor");
  return 0;
}

int cmd_eval_predictor(const std::string& config_path, const std::string& ckpt,
                       const std::string& data_path, double noise, const std::string& dump_dir,
                       uint64_t seed) {
  RunConfig cfg = load_config(config_path);
  if (seed) cfg.seed = seed;
  apply_global_seed(cfg);

  data::DatasetReader dataset(data_path);
  if (dataset.height() % 2 != 0 || dataset.width() % 2 != 0)
    throw std::runtime_error("dataset frame size " + std::to_string(dataset.height()) + "x" +
                             std::to_string(dataset.width()) +
                             " is not even; the predictor downsamples by 2");
  auto net = model::load_model(ckpt);

  model::EvalOptions opts;
  opts.warmup = cfg.eval.warmup;
  opts.horizons = cfg.eval.horizons;
  opts.objects_step = cfg.eval.objects_step;
  opts.max_traj = cfg.eval.max_traj;
  opts.noise_eps = noise;
  opts.noise_seed = derive_seed(cfg.seed, kSeedEval);

  auto roller = net->roller(dataset.height(), dataset.width());
  model::EvalReport report = model::eval_multistep(*roller, dataset, opts);
  for (const auto& [h, mse] : report.mse) std::cout << "mse@" << h << ": " << fmt(mse) << "\n";
  if (report.has_objects)
    std::cout << "objects_delta@" << opts.objects_step << ": " << fmt(report.objects_delta)
              << "\n";
  std::cout << "trajectories: " << report.trajectories << "\n";

  if (!dump_dir.empty()) {
    fs::create_directories(dump_dir);
    const int max_h = *std::max_element(opts.horizons.begin(), opts.horizons.end());
    const int n_dump = std::min(3, dataset.n_traj());
    for (int traj = 0; traj < n_dump; ++traj) {
      auto r = net->roller(dataset.height(), dataset.width());
      const int total = opts.warmup + max_h;
      raster::Frame strip(dataset.height(), dataset.width() * total);
      ag::Tensor pred;
      int column = 0;
      auto blit = [&](raster::Frame& dst, const raster::Frame& src, int col) {
        for (int y = 0; y < src.height; ++y)
          for (int x = 0; x < src.width; ++x) dst.set_pixel(y, col * src.width + x, src.pixel(y, x));
      };
      for (int t = 0; t < opts.warmup; ++t) {
        raster::Frame input = dataset.frame(traj, t);
        blit(strip, input, column++);
        pred = r->advance(raster::frame_to_tensor(input));
      }
      raster::Frame hidden_strip;
      const bool has_state = !r->state().empty();
      if (has_state)
        hidden_strip = raster::Frame(r->state()[0].dim(1), r->state()[0].dim(2) * max_h);
      for (int h = 1; h <= max_h; ++h) {
        blit(strip, raster::tensor_to_frame(pred), column++);
        if (has_state) blit(hidden_strip, model::visualize_hidden(r->state()[0]), h - 1);
        if (h < max_h) pred = r->advance(pred);
      }
      char name[64];
      std::snprintf(name, sizeof name, "strip_traj%03d.ppm", traj);
      raster::write_ppm(strip, (fs::path(dump_dir) / name).string());
      if (has_state) {
        std::snprintf(name, sizeof name, "hidden_traj%03d.ppm", traj);
        raster::write_ppm(hidden_strip, (fs::path(dump_dir) / name).string());
      }
    }
    std::cout << "dumped: " << dump_dir << "\n";
  }
  return 0;
}

int cmd_probe(const std::string& config_path, const std::string& ckpt,
              const std::string& property, uint64_t seed) {
  RunConfig cfg = load_config(config_path);
  if (seed) cfg.seed = seed;
  apply_global_seed(cfg);

  auto net = model::load_model(ckpt);
  model::ProbeOptions opts;
  opts.property = property;
  opts.base = cfg.dataset;
  opts.clips_per_class = cfg.eval.clips_per_class;
  opts.clip_len = cfg.eval.clip_len;
  opts.clip_start = cfg.eval.clip_start;
  opts.epochs = cfg.eval.probe_epochs;
  opts.lr = cfg.eval.probe_lr;
  opts.train_fraction = cfg.eval.train_fraction;
  opts.seed = derive_seed(cfg.seed, kSeedProbe);
  if (opts.base.traj_len < opts.clip_start + opts.clip_len)
    opts.base.traj_len = opts.clip_start + opts.clip_len;

  const double pretrained = model::probe_accuracy(*net, opts);

  PredictorSection control;
  control.arch = net->arch();
  control.channels = net->channels();
  auto random_net = build_model(control, derive_seed(cfg.seed, kSeedModel));
  const double random_init = model::probe_accuracy(*random_net, opts);

  std::cout << "property: " << property << "\n";
  std::cout << "accuracy_pretrained: " << fmt(pretrained) << "\n";
  std::cout << "accuracy_random_init: " << fmt(random_init) << "\n";
  std::cout << "accuracy_difference: " << fmt(pretrained - random_init) << "\n";
  return 0;
}

int cmd_train_agent(const std::string& config_path, const std::string& game,
                    const std::string& predictor_arg, const std::string& out_dir, uint64_t seed) {
  RunConfig cfg = load_config(config_path);
  if (seed) cfg.seed = seed;
  apply_global_seed(cfg);
  if (!game.empty()) cfg.environment.game = env::game_from_name(game);

  // resolve the predictor before training so missing checkpoints fail fast
  std::unique_ptr<model::RecurrentVideoModel> predictor;
  if (predictor_arg == "none") {
    cfg.agent.k = 0;
  } else if (predictor_arg == "random") {
    predictor = build_model(cfg.predictor, derive_seed(cfg.seed, kSeedModel));
  } else {
    predictor = model::load_model(predictor_arg);
  }

  env::PhysEnv environment(cfg.environment);
  rl::PolicyConfig pcfg;
  pcfg.in_channels = (cfg.agent.k + 1) * 3;
  pcfg.height = cfg.environment.height;
  pcfg.width = cfg.environment.width;
  pcfg.n_actions = environment.n_actions();
  rl::PolicyNet policy(pcfg, derive_seed(cfg.seed, kSeedAgent));

  rl::AgentTrainResult result = rl::train_agent(environment, policy, predictor.get(), cfg.agent);

  fs::create_directories(out_dir);
  const std::string policy_path = (fs::path(out_dir) / "policy.pckp").string();
  save_policy(policy_path, policy, cfg.agent.k);
  rl::load_policy(policy_path);  // validation
  if (predictor) {
    const std::string pred_path = (fs::path(out_dir) / "predictor.pckp").string();
    model::save_model(pred_path, *predictor);
    std::cout << "predictor: " << pred_path << "\n";
  }

  std::vector<std::string> rows;
  const bool with_predictor = predictor != nullptr;
  for (const rl::RoundLog& log : result.rounds) {
    std::string row = std::to_string(log.frames) + "," +
                      (std::isnan(log.episode_reward) ? "nan" : fmt(log.episode_reward));
    if (with_predictor) row += "," + fmt(log.predictor_mse);
    row += "," + fmt(log.policy_loss) + "," + fmt(log.value_loss) + "," + fmt(log.entropy);
    rows.push_back(row);
  }
  const std::string header =
      with_predictor ? "frames,episode_reward,predictor_mse,policy_loss,value_loss,entropy"
                     : "frames,episode_reward,policy_loss,value_loss,entropy";
  const std::string metrics_path = (fs::path(out_dir) / "metrics.csv").string();
  write_csv(metrics_path, header, rows);

  std::cout << "policy: " << policy_path << "\n";
  std::cout << "metrics: " << metrics_path << "\n";
  std::cout << "episodes: " << result.episodes.size() << "\n";
  if (!result.episodes.empty()) {
    double mean = 0;
    for (auto& [f, r] : result.episodes) mean += r;
    std::cout << "mean_episode_reward: " << fmt(mean / result.episodes.size()) << "\n";
  }
  echo_config(cfg, (fs::path(out_dir) / "run").string(), "train-agent");
  return 0;
}

int cmd_eval_agent(const std::string& config_path, const std::string& game,
                   const std::string& policy_path, const std::string& predictor_path,
                   int episodes, const std::string& out_csv, uint64_t seed) {
  RunConfig cfg = load_config(config_path);
  if (seed) cfg.seed = seed;
  apply_global_seed(cfg);
  if (!game.empty()) cfg.environment.game = env::game_from_name(game);

  rl::LoadedPolicy loaded = rl::load_policy(policy_path);
  std::unique_ptr<model::RecurrentVideoModel> predictor;
  if (!predictor_path.empty()) predictor = model::load_model(predictor_path);
  const int k = predictor ? loaded.k : 0;
  if (loaded.policy->config().in_channels != (k + 1) * 3)
    throw std::runtime_error(
        "channel mismatch: policy expects " + std::to_string(loaded.policy->config().in_channels) +
        " input channels but k=" + std::to_string(k) +
        (predictor ? "" : " (no --predictor given)") + " produces " +
        std::to_string((k + 1) * 3));
  if (loaded.policy->config().height != cfg.environment.height ||
      loaded.policy->config().width != cfg.environment.width)
    throw std::runtime_error("frame-size mismatch: policy was trained on " +
                             std::to_string(loaded.policy->config().height) + "x" +
                             std::to_string(loaded.policy->config().width) + " but the env is " +
                             std::to_string(cfg.environment.height) + "x" +
                             std::to_string(cfg.environment.width));

  env::PhysEnv environment(cfg.environment);
  rl::AgentEvalResult result = rl::evaluate_agent(environment, *loaded.policy, predictor.get(),
                                                  episodes, k, derive_seed(cfg.seed, kSeedEval));
  std::cout << "episodes: " << episodes << "\n";
  std::cout << "mean_reward: " << fmt(result.mean) << "\n";
  std::cout << "stddev: " << fmt(result.stddev) << "\n";
  std::vector<std::string> rows;
  for (size_t i = 0; i < result.episode_rewards.size(); ++i)
    rows.push_back(std::to_string(i) + "," + fmt(result.episode_rewards[i]));
  write_csv(out_csv, "episode,reward", rows);
  std::cout << "episodes_csv: " << out_csv << "\n";
  return 0;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"physprior: 2D physics videos, frame prediction and model-augmented RL"};
  app.require_subcommand(1);

  uint64_t seed = 0;
  int threads = default_threads();
  app.add_option("--seed", seed, "global seed; subsystem seeds derive from it");
  app.add_option("--threads", threads, "worker thread cap (or PHYSPRIOR_THREADS)");

  std::string config_path, out, variant, data_path, arch, ckpt, dump_dir, property;
  std::string game, predictor_arg, policy_path, predictor_path, out_csv = "eval_episodes.csv";
  int split = 0, episodes = 100;
  double noise = 0;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a trajectory dataset (PVD1)");
  gen->add_option("--config", config_path, "run config JSON");
  gen->add_option("--out", out, "output path")->required();
  gen->add_option("--variant", variant, "small_fast or large_scene");
  gen->add_option("--split", split, "train trajectory count; writes .train/.test files");

  CLI::App* trainp = app.add_subcommand("train-predictor", "train a frame predictor");
  trainp->add_option("--config", config_path, "run config JSON");
  trainp->add_option("--model", arch, "spatialnet, convlstm or convlstm_res");
  trainp->add_option("--data", data_path, "PVD1 dataset")->required();
  trainp->add_option("--out", out, "checkpoint path (PCKP)")->required();

  CLI::App* evalp = app.add_subcommand("eval-predictor", "multi-step MSE evaluation");
  evalp->add_option("--config", config_path, "run config JSON");
  evalp->add_option("--ckpt", ckpt, "predictor checkpoint")->required();
  evalp->add_option("--data", data_path, "PVD1 dataset")->required();
  evalp->add_option("--noise", noise, "gaussian input corruption magnitude");
  evalp->add_option("--dump-frames", dump_dir, "write PPM prediction strips here");

  CLI::App* probe = app.add_subcommand("probe", "physical-parameter probe");
  probe->add_option("--config", config_path, "run config JSON");
  probe->add_option("--ckpt", ckpt, "predictor checkpoint")->required();
  probe->add_option("--property", property, "drag or elasticity")->required();

  CLI::App* traina = app.add_subcommand("train-agent", "PPO with imagined future frames");
  traina->add_option("--config", config_path, "run config JSON");
  traina->add_option("--env", game, "physgoal, physforage or physshooter")->required();
  traina->add_option("--predictor", predictor_arg, "checkpoint path, 'random' or 'none'")
      ->required();
  traina->add_option("--out", out, "output directory")->required();

  CLI::App* evala = app.add_subcommand("eval-agent", "greedy policy evaluation");
  evala->add_option("--config", config_path, "run config JSON");
  evala->add_option("--env", game, "physgoal, physforage or physshooter")->required();
  evala->add_option("--policy", policy_path, "policy checkpoint")->required();
  evala->add_option("--predictor", predictor_path, "predictor checkpoint");
  evala->add_option("--episodes", episodes, "episode count");
  evala->add_option("--out", out_csv, "per-episode CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    set_threads(threads);
    if (gen->parsed())
      return cmd_gen_data(config_path, out, variant, split, seed, std::max(1, threads));
    if (trainp->parsed()) return cmd_train_predictor(config_path, arch, data_path, out, seed);
    if (evalp->parsed())
      return cmd_eval_predictor(config_path, ckpt, data_path, noise, dump_dir, seed);
    if (probe->parsed()) return cmd_probe(config_path, ckpt, property, seed);
    if (traina->parsed()) return cmd_train_agent(config_path, game, predictor_arg, out, seed);
    if (evala->parsed())
      return cmd_eval_agent(config_path, game, policy_path, predictor_path, episodes, out_csv,
                            seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace physprior::cli
