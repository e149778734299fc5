#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "physprior/dataset.hpp"
#include "physprior/predictor.hpp"

// Drives the installed binary the way a user would.

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

CmdResult run_cli(const std::string& args) {
  const std::string cmd = std::string(PHYSPRIOR_CLI_PATH) + " " + args + " 2>&1";
  std::array<char, 4096> buf{};
  CmdResult result;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) result.output.append(buf.data(), n);
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

std::vector<uint8_t> file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

struct Workspace {
  fs::path dir;
  Workspace() : dir(fs::temp_directory_path() / ("physprior_cli_" + std::to_string(::getpid()))) {
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

void write_config(const std::string& path, const std::string& body) {
  std::ofstream os(path);
  os << body;
}

const char* kTinyConfig = R"({
  "dataset": {"n_traj": 8, "traj_len": 14, "height": 24, "width": 24, "bodies_min": 2, "bodies_max": 4},
  "predictor": {"channels": 6, "epochs": 2, "batch": 4, "bptt_len": 4},
  "eval": {"warmup": 2, "horizons": [1, 3], "objects_step": 10}
})";

}  // namespace

TEST_CASE("gen-data writes a valid reproducible dataset") {
  Workspace ws;
  const std::string cfg = ws.path("cfg.json");
  write_config(cfg, kTinyConfig);

  CmdResult r1 = run_cli("--seed 5 gen-data --config " + cfg + " --out " + ws.path("a.pvd"));
  CHECK(r1.exit_code == 0);
  CHECK(r1.output.find("master_seed:") != std::string::npos);
  CHECK(fs::exists(ws.path("a.pvd.config.json")));

  physprior::data::DatasetReader reader(ws.path("a.pvd"));
  CHECK(reader.n_traj() == 8);
  CHECK(reader.traj_len() == 14);
  const size_t payload = 8ull * 14 * 24 * 24 * 3;
  CHECK(fs::file_size(ws.path("a.pvd")) > payload);

  // rerun: identical bytes
  CmdResult r2 = run_cli("--seed 5 gen-data --config " + cfg + " --out " + ws.path("b.pvd"));
  CHECK(r2.exit_code == 0);
  CHECK(file_bytes(ws.path("a.pvd")) == file_bytes(ws.path("b.pvd")));

  // split writes two consistent files
  CmdResult r3 =
      run_cli("--seed 5 gen-data --config " + cfg + " --out " + ws.path("c.pvd") + " --split 6");
  CHECK(r3.exit_code == 0);
  physprior::data::DatasetReader train(ws.path("c.train.pvd"));
  physprior::data::DatasetReader test(ws.path("c.test.pvd"));
  CHECK(train.n_traj() == 6);
  CHECK(test.n_traj() == 2);

  // variant flag is applied
  CmdResult r4 = run_cli("--seed 5 gen-data --config " + cfg + " --out " + ws.path("d.pvd") +
                         " --variant large_scene");
  CHECK(r4.exit_code == 0);
  physprior::data::DatasetReader large(ws.path("d.pvd"));
  CHECK(large.height() == 168);

  CmdResult bad = run_cli("--seed 5 gen-data --config " + cfg + " --out " + ws.path("e.pvd") +
                          " --variant bogus");
  CHECK(bad.exit_code == 1);
  CHECK(bad.output.find("unknown generalization variant") != std::string::npos);
}

TEST_CASE("unknown config keys are rejected up front") {
  Workspace ws;
  const std::string cfg = ws.path("bad.json");
  write_config(cfg, R"({"dataset": {"bogus_key": 3}})");
  CmdResult r = run_cli("gen-data --config " + cfg + " --out " + ws.path("x.pvd"));
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("unknown dataset config key") != std::string::npos);

  write_config(cfg, R"({"bogus_section": {}})");
  CmdResult r2 = run_cli("gen-data --config " + cfg + " --out " + ws.path("x.pvd"));
  CHECK(r2.exit_code == 1);
  CHECK(r2.output.find("unknown config section") != std::string::npos);
}

TEST_CASE("predictor training, evaluation and probing through the CLI") {
  Workspace ws;
  const std::string cfg = ws.path("cfg.json");
  write_config(cfg, kTinyConfig);
  REQUIRE(run_cli("--seed 5 gen-data --config " + cfg + " --out " + ws.path("d.pvd")).exit_code ==
          0);

  // invalid model name is a usage error
  CmdResult bad_model = run_cli("--seed 5 train-predictor --model resnet --data " +
                                ws.path("d.pvd") + " --out " + ws.path("m.pckp"));
  CHECK(bad_model.exit_code == 1);
  CHECK(bad_model.output.find("unknown model") != std::string::npos);

  CmdResult train = run_cli("--seed 5 train-predictor --config " + cfg +
                            " --model spatialnet --data " + ws.path("d.pvd") + " --out " +
                            ws.path("m.pckp"));
  CHECK(train.exit_code == 0);
  CHECK(train.output.find("copy_baseline_mse:") != std::string::npos);

  // checkpoint loads; loss CSV has a strictly increasing step column
  auto reloaded = physprior::model::load_model(ws.path("m.pckp"));
  CHECK(reloaded->arch() == "spatialnet");
  {
    std::ifstream is(ws.path("m.pckp.loss.csv"));
    std::string line;
    std::getline(is, line);
    CHECK(line == "step,split,metric,value");
    int last = 0, count = 0;
    while (std::getline(is, line)) {
      const int step = std::stoi(line.substr(0, line.find(',')));
      CHECK(step > last);
      last = step;
      ++count;
    }
    CHECK(count > 0);
  }

  // eval: requested horizons only; noise 0 equals no flag byte-for-byte
  CmdResult eval_plain = run_cli("--seed 5 eval-predictor --config " + cfg + " --ckpt " +
                                 ws.path("m.pckp") + " --data " + ws.path("d.pvd"));
  CHECK(eval_plain.exit_code == 0);
  CHECK(eval_plain.output.find("mse@1:") != std::string::npos);
  CHECK(eval_plain.output.find("mse@3:") != std::string::npos);
  CHECK(eval_plain.output.find("mse@5:") == std::string::npos);
  CHECK(eval_plain.output.find("objects_delta@10:") != std::string::npos);

  CmdResult eval_noise0 = run_cli("--seed 5 eval-predictor --config " + cfg + " --ckpt " +
                                  ws.path("m.pckp") + " --data " + ws.path("d.pvd") +
                                  " --noise 0");
  CHECK(eval_noise0.output == eval_plain.output);

  CmdResult eval_noisy = run_cli("--seed 5 eval-predictor --config " + cfg + " --ckpt " +
                                 ws.path("m.pckp") + " --data " + ws.path("d.pvd") +
                                 " --noise 0.5");
  CHECK(eval_noisy.exit_code == 0);
  CHECK(eval_noisy.output != eval_plain.output);

  // dump strips: warmup + max horizon frames wide
  CmdResult dump = run_cli("--seed 5 eval-predictor --config " + cfg + " --ckpt " +
                           ws.path("m.pckp") + " --data " + ws.path("d.pvd") +
                           " --dump-frames " + ws.path("dumps"));
  CHECK(dump.exit_code == 0);
  auto strip = physprior::raster::read_ppm(ws.path("dumps") + "/strip_traj000.ppm");
  CHECK(strip.width == 24 * (2 + 3));
  CHECK(strip.height == 24);
  auto hidden = physprior::raster::read_ppm(ws.path("dumps") + "/hidden_traj000.ppm");
  CHECK(hidden.width == 12 * 3);

  // probe prints both accuracies and their difference (tiny settings)
  write_config(ws.path("probe.json"), R"({
    "dataset": {"n_traj": 4, "traj_len": 14, "height": 24, "width": 24, "bodies_min": 2, "bodies_max": 3},
    "eval": {"clips_per_class": 8, "clip_len": 6, "clip_start": 4, "probe_epochs": 20}
  })");
  CmdResult probe = run_cli("--seed 5 probe --config " + ws.path("probe.json") + " --ckpt " +
                            ws.path("m.pckp") + " --property drag");
  CHECK(probe.exit_code == 0);
  CHECK(probe.output.find("accuracy_pretrained:") != std::string::npos);
  CHECK(probe.output.find("accuracy_random_init:") != std::string::npos);
  CHECK(probe.output.find("accuracy_difference:") != std::string::npos);

  CmdResult bad_prop = run_cli("--seed 5 probe --ckpt " + ws.path("m.pckp") + " --property mass");
  CHECK(bad_prop.exit_code == 1);
}

TEST_CASE("agent training and evaluation through the CLI") {
  Workspace ws;
  const std::string cfg = ws.path("agent.json");
  write_config(cfg, R"({
    "dataset": {"n_traj": 4, "traj_len": 10, "height": 16, "width": 16, "bodies_min": 2, "bodies_max": 3},
    "predictor": {"channels": 4},
    "env": {"game": "physgoal", "height": 16, "width": 16, "obstacles_min": 2, "obstacles_max": 3, "step_cap": 40},
    "agent": {"k": 2, "horizon": 32, "total_frames": 64, "epochs": 1, "minibatches": 2, "finetune_pairs": 4}
  })");

  // missing checkpoint fails before any training
  CmdResult missing = run_cli("--seed 3 train-agent --config " + cfg +
                              " --env physgoal --predictor /nonexistent.pckp --out " +
                              ws.path("run0"));
  CHECK(missing.exit_code == 1);
  CHECK(!fs::exists(ws.path("run0/metrics.csv")));

  // all three predictor modes run on a small budget
  CmdResult none = run_cli("--seed 3 train-agent --config " + cfg +
                           " --env physgoal --predictor none --out " + ws.path("run_none"));
  CHECK(none.exit_code == 0);
  CmdResult random = run_cli("--seed 3 train-agent --config " + cfg +
                             " --env physgoal --predictor random --out " + ws.path("run_rand"));
  CHECK(random.exit_code == 0);
  CmdResult from_ckpt = run_cli("--seed 3 train-agent --config " + cfg +
                                " --env physgoal --predictor " +
                                ws.path("run_rand/predictor.pckp") + " --out " + ws.path("run_ck"));
  CHECK(from_ckpt.exit_code == 0);

  // predictor_mse column appears exactly when a predictor is used
  {
    std::ifstream is(ws.path("run_none/metrics.csv"));
    std::string header;
    std::getline(is, header);
    CHECK(header.find("predictor_mse") == std::string::npos);
  }
  {
    std::ifstream is(ws.path("run_rand/metrics.csv"));
    std::string header;
    std::getline(is, header);
    CHECK(header.find("predictor_mse") != std::string::npos);
  }

  // eval-agent: row count, determinism, channel mismatch
  CmdResult eval1 = run_cli("--seed 9 eval-agent --config " + cfg +
                            " --env physgoal --policy " + ws.path("run_rand/policy.pckp") +
                            " --predictor " + ws.path("run_rand/predictor.pckp") +
                            " --episodes 3 --out " + ws.path("ep.csv"));
  CHECK(eval1.exit_code == 0);
  {
    std::ifstream is(ws.path("ep.csv"));
    std::string line;
    int rows = -1;  // header
    while (std::getline(is, line)) ++rows;
    CHECK(rows == 3);
  }
  CmdResult eval2 = run_cli("--seed 9 eval-agent --config " + cfg +
                            " --env physgoal --policy " + ws.path("run_rand/policy.pckp") +
                            " --predictor " + ws.path("run_rand/predictor.pckp") +
                            " --episodes 3 --out " + ws.path("ep2.csv"));
  CHECK(file_bytes(ws.path("ep.csv")) == file_bytes(ws.path("ep2.csv")));

  // k-trained policy without a predictor is a channel mismatch
  CmdResult mismatch = run_cli("--seed 9 eval-agent --config " + cfg +
                               " --env physgoal --policy " + ws.path("run_rand/policy.pckp") +
                               " --episodes 1 --out " + ws.path("ep3.csv"));
  CHECK(mismatch.exit_code == 1);
  CHECK(mismatch.output.find("channel mismatch") != std::string::npos);

  // unknown env name is a usage error
  CmdResult bad_env = run_cli("--seed 9 eval-agent --env pong --policy " +
                              ws.path("run_rand/policy.pckp") + " --episodes 1");
  CHECK(bad_env.exit_code == 1);
}
