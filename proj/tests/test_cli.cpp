#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ocl/config.hpp"

using namespace ocl;
namespace fs = std::filesystem;

namespace {

const std::string kWork = "/tmp/ocl_cli_test";

struct CmdResult {
  int code = -1;
  std::string out;
};

CmdResult run(const std::string& args) {
  const std::string cmd = std::string(OCLAB_BIN) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::string out;
  char buf[4096];
  size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, n);
  const int status = pclose(p);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

void put(const std::string& path, const std::string& text) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream f(path);
  f << text;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

const char* kTinyTrainer = R"({
  "schema_version": 1,
  "seed": 5,
  "output_dir": "/tmp/ocl_cli_test/run",
  "trainer": {"env_count": 4, "rollout_steps": 4, "iterations": 2,
              "checkpoint_every": 2},
  "policy": {"hidden": [8]}
})";

}  // namespace

TEST_CASE("config: minimal document gets full defaults") {
  const ExperimentConfig cfg = parse_config_text(R"({"schema_version": 1})");
  CHECK(cfg.seed == 1);
  CHECK(cfg.model.geometry.kind == LinkageKind::Planar);
  CHECK(cfg.model.chain == ChainForm::ClosedLoop);
  CHECK(!cfg.model.wheel.has_value());
  CHECK(cfg.terrain.type == TerrainSection::Type::Flat);
  CHECK(cfg.terrain.seed == 1);   // inherited
  CHECK(cfg.trainer.seed == 1);   // inherited
  CHECK(cfg.bench.traverse.seed == 1);
  CHECK(cfg.trainer.env_count == 256);
  CHECK(cfg.rewards.weight(RewardTerm::kTorques) == 0.0);  // legged preset
  CHECK(cfg.policy.hidden == std::vector<int>{256, 128, 64});
  CHECK(!cfg.fixed_command.has_value());
}

TEST_CASE("config: every section parses into the library types") {
  const ExperimentConfig cfg = parse_config_text(R"({
    "schema_version": 1,
    "seed": 42,
    "output_dir": "exp9",
    "model": {
      "kind": "bennett",
      "link_len_a": 0.11, "link_len_b": 0.11,
      "twist_alpha": 0.7, "twist_beta": 0.7,
      "body": {"dimensions": [0.32, 0.22, 0.09], "mass": 3.0},
      "motor": {"torque_limit": 5.0, "kp": 50.0},
      "wheels": {"radius": 0.04},
      "chain": "closed_loop"
    },
    "terrain": {"type": "curriculum", "seed": 99},
    "sim": {"dt": 0.004, "decimation": 5, "torque_scale": 1.5,
            "contact": {"c_n": 18.0, "mu": 0.7}},
    "rewards": {"preset": "wheel_legged",
                "weights": {"tracking_lin_vel": 2.0},
                "tracking_sigma": 0.3},
    "policy": {"hidden": [32, 16], "action_scale": 0.4},
    "trainer": {"env_count": 32, "iterations": 10, "lr": 0.001,
                "workers": 2},
    "fixed_command": [1.0, 0.0, 0.0],
    "bench": {"n_robots": 5, "direction": "sideways", "timeout": 30.0,
              "runs": [{"label": "a", "checkpoint": "a.bin"},
                        {"label": "b", "checkpoint": "b.bin",
                         "model": {"kind": "planar"}}]}
  })");
  CHECK(cfg.seed == 42);
  CHECK(cfg.output_dir == "exp9");
  CHECK(cfg.model.geometry.kind == LinkageKind::Bennett);
  CHECK(cfg.model.geometry.link_len_a == 0.11);
  CHECK(cfg.model.body.mass == 3.0);
  CHECK(cfg.model.body.dimensions.y() == 0.22);
  // inertia follows the overridden mass and dimensions
  CHECK(cfg.model.body.inertia(0, 0) ==
        doctest::Approx(solid_box_inertia(3.0, {0.32, 0.22, 0.09})(0, 0)));
  CHECK(cfg.model.motor.torque_limit == 5.0);
  CHECK(cfg.model.motor.kp == 50.0);
  CHECK(cfg.model.motor.kd == MotorSpec{}.kd);  // untouched default
  REQUIRE(cfg.model.wheel.has_value());
  CHECK(cfg.model.wheel->radius == 0.04);
  CHECK(cfg.terrain.type == TerrainSection::Type::Curriculum);
  CHECK(cfg.terrain.seed == 99);  // explicit beats inherited
  CHECK(cfg.sim.dt == 0.004);
  CHECK(cfg.sim.decimation == 5);
  CHECK(cfg.sim.torque_scale == 1.5);
  CHECK(cfg.sim.contact.c_n == 18.0);
  CHECK(cfg.sim.contact.mu == 0.7);
  CHECK(cfg.sim.contact.k_n == ContactParams{}.k_n);
  CHECK(cfg.rewards.weight(RewardTerm::kTrackingLinVel) == 2.0);
  CHECK(cfg.rewards.tracking_sigma == 0.3);
  CHECK(cfg.policy.hidden == std::vector<int>{32, 16});
  CHECK(cfg.policy.action_scale == 0.4);
  CHECK(cfg.policy.wheel_joints == 4);
  CHECK(cfg.trainer.env_count == 32);
  CHECK(cfg.trainer.workers == 2);
  CHECK(cfg.trainer.seed == 42);  // inherited
  REQUIRE(cfg.fixed_command.has_value());
  CHECK(cfg.fixed_command->vx == 1.0);
  CHECK(cfg.bench.direction == TraverseDirection::Sideways);
  CHECK(cfg.bench.traverse.n_robots == 5);
  CHECK(cfg.bench.traverse.timeout == 30.0);
  REQUIRE(cfg.bench.runs.size() == 2);
  CHECK(cfg.bench.runs[0].label == "a");
  CHECK(!cfg.bench.runs[0].model.has_value());
  REQUIRE(cfg.bench.runs[1].model.has_value());
  CHECK(cfg.bench.runs[1].model->geometry.kind == LinkageKind::Planar);
}

TEST_CASE("config: unknown keys, bad types, bad version all rejected") {
  auto rejects = [](const std::string& text, const std::string& needle) {
    try {
      parse_config_text(text);
      FAIL("expected ConfigError for: " << text);
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  rejects(R"({"schema_version": 1, "bogus": 1})", "unknown key 'bogus'");
  rejects(R"({"schema_version": 1, "model": {"colour": "red"}})",
          "unknown key 'colour'");
  rejects(R"({"schema_version": 1, "sim": {"contact": {"kn": 1}}})",
          "unknown key 'kn'");
  rejects(R"({"schema_version": 1, "trainer": {"learning_rate": 1}})",
          "unknown key 'learning_rate'");
  rejects(R"({"schema_version": 1,
              "rewards": {"weights": {"track_lin_vel": 1.0}}})",
          "unknown reward term");
  rejects(R"({"seed": 1})", "missing schema_version");
  rejects(R"({"schema_version": 2})", "schema_version");
  rejects(R"({"schema_version": 1, "seed": "seven"})", "integer");
  rejects(R"({"schema_version": 1, "model": {"kind": "hexapod"}})",
          "planar, bennett, or spherical");
  rejects(R"({"schema_version": 1, "sim": {"dt": -0.01}})", "positive");
  rejects(R"({"schema_version": 1, "fixed_command": [1.0, 0.0]})",
          "[vx, vy, heading]");
  rejects(R"({"schema_version": 1, "policy": {"hidden": [0]}})",
          "positive integers");
  rejects("{", "");  // syntax error is a ConfigError too
}

TEST_CASE("config: wheels flip the default preset, explicit preset wins") {
  const ExperimentConfig wheeled = parse_config_text(
      R"({"schema_version": 1, "model": {"wheels": {"radius": 0.03}}})");
  CHECK(wheeled.rewards.weight(RewardTerm::kTorques) == -1e-5);
  CHECK(wheeled.rewards.weight(RewardTerm::kFeetAirTime) == 0.0);
  CHECK(wheeled.policy.wheel_joints == 4);

  const ExperimentConfig forced = parse_config_text(
      R"({"schema_version": 1, "model": {"wheels": {"radius": 0.03}},
          "rewards": {"preset": "legged"}})");
  CHECK(forced.rewards.weight(RewardTerm::kTorques) == 0.0);
}

TEST_CASE("config: build_model assembles and converts") {
  ExperimentConfig cfg = parse_config_text(R"({
    "schema_version": 1,
    "model": {"kind": "spherical", "chain": "pseudo_open"}
  })");
  const RobotModel model = build_model(cfg.model);
  CHECK(model.chain == ChainForm::PseudoOpen);
  CHECK(model.limbs[0].geometry.kind == LinkageKind::Spherical);

  cfg.model.geometry.kind = LinkageKind::Bennett;
  cfg.model.geometry.twist_alpha = 0.7;
  cfg.model.geometry.twist_beta = 0.2;  // breaks the Bennett condition
  CHECK_THROWS_AS(build_model(cfg.model), KinematicsError);
}

TEST_CASE("config: output root env var applies to relative paths only") {
  setenv("OCLAB_OUT", "/tmp/ocl_root", 1);
  CHECK(resolve_under_output_root("exp1") == "/tmp/ocl_root/exp1");
  CHECK(resolve_under_output_root("/abs/exp1") == "/abs/exp1");
  unsetenv("OCLAB_OUT");
  CHECK(resolve_under_output_root("exp1") == "exp1");
}

TEST_CASE("config: atomic writes create directories and leave no temps") {
  const std::string dir = kWork + "/atomic";
  fs::remove_all(dir);
  write_file_atomic(dir + "/a/b/file.txt", "payload");
  CHECK(slurp(dir + "/a/b/file.txt") == "payload");
  int entries = 0;
  for (const auto& e : fs::directory_iterator(dir + "/a/b")) {
    (void)e;
    ++entries;
  }
  CHECK(entries == 1);  // no .tmp lingering
  write_file_atomic(dir + "/a/b/file.txt", "shorter");
  CHECK(slurp(dir + "/a/b/file.txt") == "shorter");
}

TEST_CASE("cli: help and usage errors") {
  CHECK(run("--help").code == 0);
  CHECK(run("--help").out.find("train") != std::string::npos);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("train").code == 2);  // --config is required
  CHECK(run("model").code == 2);  // needs a subcommand
}

TEST_CASE("cli: model validate exit codes and diagnostics") {
  fs::remove_all(kWork + "/model");
  put(kWork + "/model/good.json",
      R"({"schema_version": 1,
          "model": {"kind": "bennett", "twist_alpha": 0.7,
                     "twist_beta": 0.7}})");
  put(kWork + "/model/bad.json",
      R"({"schema_version": 1,
          "model": {"kind": "bennett", "link_len_a": 0.1, "link_len_b": 0.2,
                     "twist_alpha": 0.7, "twist_beta": 0.7}})");
  put(kWork + "/model/unknown.json",
      R"({"schema_version": 1, "model": {"knid": "planar"}})");

  const CmdResult good = run("model validate " + kWork + "/model/good.json");
  CHECK(good.code == 0);
  CHECK(good.out.find("\"status\":\"ok\"") != std::string::npos);
  CHECK(good.out.find("\"kind\":\"bennett\"") != std::string::npos);

  const CmdResult bad = run("model validate " + kWork + "/model/bad.json");
  CHECK(bad.code == 1);
  CHECK(bad.out.find("BennettConditionViolated") != std::string::npos);

  const CmdResult unk =
      run("model validate " + kWork + "/model/unknown.json");
  CHECK(unk.code == 1);
  CHECK(unk.out.find("unknown key") != std::string::npos);

  CHECK(run("model validate " + kWork + "/model/absent.json").code == 2);
}

TEST_CASE("cli: model export and convert emit parseable descriptions") {
  put(kWork + "/model/sph.json",
      R"({"schema_version": 1, "model": {"kind": "spherical"}})");
  const std::string exported = kWork + "/model/model.xml";
  const std::string converted = kWork + "/model/open.xml";
  CHECK(run("model export " + kWork + "/model/sph.json --out " + exported)
            .code == 0);
  CHECK(run("model convert " + kWork + "/model/sph.json --out " + converted)
            .code == 0);
  const RobotModel closed = parse_description(slurp(exported));
  const RobotModel open = parse_description(slurp(converted));
  CHECK(closed.chain == ChainForm::ClosedLoop);
  CHECK(open.chain == ChainForm::PseudoOpen);
  CHECK(closed.limbs[0].geometry.kind == LinkageKind::Spherical);
}

TEST_CASE("cli: terrain generation is deterministic and summarized") {
  fs::remove_all(kWork + "/ter1");
  fs::remove_all(kWork + "/ter2");
  const CmdResult a =
      run("terrain gen curriculum --seed 7 --out " + kWork + "/ter1");
  const CmdResult b =
      run("terrain gen curriculum --seed 7 --out " + kWork + "/ter2");
  CHECK(a.code == 0);
  CHECK(b.code == 0);
  CHECK(a.out.find("\"histogram\":[2,2,7,5,4]") != std::string::npos);
  CHECK(slurp(kWork + "/ter1/curriculum_heightfield.csv") ==
        slurp(kWork + "/ter2/curriculum_heightfield.csv"));

  const CmdResult t =
      run("terrain gen traverse --seed 7 --out " + kWork + "/ter1");
  CHECK(t.code == 0);
  CHECK(t.out.find("\"course_length\":24.0") != std::string::npos);
  CHECK(fs::exists(kWork + "/ter1/traverse_heightfield.csv"));
  CHECK(fs::exists(kWork + "/ter1/traverse_summary.json"));
}

TEST_CASE("cli: train writes checkpoint and log; workers do not matter") {
  fs::remove_all(kWork + "/run");
  put(kWork + "/tiny.json", kTinyTrainer);
  const CmdResult r = run("train --config " + kWork + "/tiny.json");
  CHECK(r.code == 0);
  CHECK(fs::exists(kWork + "/run/train_log.csv"));
  CHECK(fs::exists(kWork + "/run/checkpoint_iter2.bin"));
  CHECK(fs::exists(kWork + "/run/train_summary.json"));
  const std::string log1 = slurp(kWork + "/run/train_log.csv");
  CHECK(log1.find("iteration,mean_reward") == 0);

  fs::remove_all(kWork + "/run");
  const CmdResult r4 =
      run("train --config " + kWork + "/tiny.json --workers 4");
  CHECK(r4.code == 0);
  CHECK(slurp(kWork + "/run/train_log.csv") == log1);
}

TEST_CASE("cli: exploding learning rate exits 3") {
  fs::remove_all(kWork + "/boom");
  put(kWork + "/boom.json", R"({
    "schema_version": 1,
    "seed": 5,
    "output_dir": "/tmp/ocl_cli_test/boom",
    "trainer": {"env_count": 4, "rollout_steps": 4, "iterations": 8,
                "lr": 1e300},
    "policy": {"hidden": [8]}
  })");
  const CmdResult r = run("train --config " + kWork + "/boom.json");
  CHECK(r.code == 3);
  CHECK(r.out.find("NonFiniteLoss") != std::string::npos);
}

TEST_CASE("cli: bench produces artifacts, missing checkpoint exits 2") {
  // train a checkpoint to bench with
  fs::remove_all(kWork + "/run");
  put(kWork + "/tiny.json", kTinyTrainer);
  REQUIRE(run("train --config " + kWork + "/tiny.json").code == 0);
  const std::string ckpt = kWork + "/run/checkpoint_iter2.bin";
  REQUIRE(fs::exists(ckpt));

  put(kWork + "/benchcfg.json", R"({
    "schema_version": 1,
    "seed": 5,
    "output_dir": "/tmp/ocl_cli_test/bench",
    "policy": {"hidden": [8]},
    "bench": {"n_robots": 2, "timeout": 1.0,
              "runs": [{"label": "a", "checkpoint": "CKPT"},
                        {"label": "b", "checkpoint": "CKPT"}]}
  })");
  // patch in the real checkpoint path
  std::string cfg = slurp(kWork + "/benchcfg.json");
  for (size_t p = cfg.find("CKPT"); p != std::string::npos;
       p = cfg.find("CKPT"))
    cfg.replace(p, 4, ckpt);
  put(kWork + "/benchcfg.json", cfg);

  fs::remove_all(kWork + "/bench");
  const CmdResult r = run("bench --config " + kWork + "/benchcfg.json");
  CHECK(r.code == 0);
  for (const char* f : {"curves.csv", "report.csv", "speed.svg", "cot.svg",
                        "metrics_a.csv", "metrics_b.csv"})
    CHECK(fs::exists(kWork + "/bench/" + std::string(f)));
  const std::string report = slurp(kWork + "/bench/report.csv");
  CHECK(report.find("\na,") != std::string::npos);
  CHECK(report.find("\nb,") != std::string::npos);

  // identical runs: identical curves for both labels
  const std::string curves = slurp(kWork + "/bench/curves.csv");
  CHECK(curves.find("a_mean_speed,a_mean_cot,b_mean_speed,b_mean_cot") !=
        std::string::npos);

  // a missing checkpoint fails fast without partial outputs
  fs::remove_all(kWork + "/bench");
  const CmdResult miss = run("bench --config " + kWork +
                             "/benchcfg.json --checkpoint " + ckpt +
                             " --checkpoint /tmp/ocl_cli_absent.bin");
  CHECK(miss.code == 2);
  CHECK(!fs::exists(kWork + "/bench/report.csv"));
  CHECK(!fs::exists(kWork + "/bench/curves.csv"));

  // checkpoint/run count mismatch is a usage error
  CHECK(run("bench --config " + kWork + "/benchcfg.json --checkpoint " +
            ckpt)
            .code == 2);
}

TEST_CASE("cli: plot renders curves and training logs") {
  // depends on artifacts from the bench test above; regenerate if absent
  if (!fs::exists(kWork + "/bench/curves.csv")) {
    put(kWork + "/tiny.json", kTinyTrainer);
    REQUIRE(run("train --config " + kWork + "/tiny.json").code == 0);
    REQUIRE(run("bench --config " + kWork + "/benchcfg.json").code == 0);
  }
  fs::remove_all(kWork + "/plots");
  const CmdResult r = run("plot --curves " + kWork +
                          "/bench/curves.csv --train-log " + kWork +
                          "/run/train_log.csv --out " + kWork + "/plots");
  CHECK(r.code == 0);
  for (const char* f : {"speed.svg", "cot.svg", "reward.svg"}) {
    const std::string svg = slurp(kWork + "/plots/" + std::string(f));
    CHECK(svg.rfind("<?xml", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
  }
  CHECK(run("plot --out " + kWork + "/plots").code == 2);  // no inputs
  CHECK(run("plot --curves /tmp/ocl_cli_absent.csv --out " + kWork +
            "/plots")
            .code == 2);
}
