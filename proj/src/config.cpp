#include "ocl/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace ocl {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& ctx, const std::string& what) {
  throw ConfigError(ctx + ": " + what);
}

void reject_unknown(const json& obj, const std::string& ctx,
                    std::initializer_list<const char*> allowed) {
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        known = true;
        break;
      }
    if (!known) fail(ctx, "unknown key '" + item.key() + "'");
  }
}

const json* find(const json& obj, const char* key) {
  const auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

void get_num(const json& obj, const std::string& ctx, const char* key,
             double* out) {
  if (const json* v = find(obj, key)) {
    if (!v->is_number()) fail(ctx + "." + key, "expected a number");
    *out = v->get<double>();
  }
}

void get_int(const json& obj, const std::string& ctx, const char* key,
             int* out) {
  if (const json* v = find(obj, key)) {
    if (!v->is_number_integer()) fail(ctx + "." + key, "expected an integer");
    *out = v->get<int>();
  }
}

void get_u64(const json& obj, const std::string& ctx, const char* key,
             uint64_t* out) {
  if (const json* v = find(obj, key)) {
    if (!v->is_number_integer() || (v->is_number_integer() && v->get<int64_t>() < 0))
      fail(ctx + "." + key, "expected a non-negative integer");
    *out = v->get<uint64_t>();
  }
}

void get_bool(const json& obj, const std::string& ctx, const char* key,
              bool* out) {
  if (const json* v = find(obj, key)) {
    if (!v->is_boolean()) fail(ctx + "." + key, "expected a boolean");
    *out = v->get<bool>();
  }
}

void get_str(const json& obj, const std::string& ctx, const char* key,
             std::string* out) {
  if (const json* v = find(obj, key)) {
    if (!v->is_string()) fail(ctx + "." + key, "expected a string");
    *out = v->get<std::string>();
  }
}

MotorSpec parse_motor(const json& obj, const std::string& ctx,
                      MotorSpec base) {
  reject_unknown(obj, ctx, {"torque_limit", "velocity_limit", "kp", "kd"});
  get_num(obj, ctx, "torque_limit", &base.torque_limit);
  get_num(obj, ctx, "velocity_limit", &base.velocity_limit);
  get_num(obj, ctx, "kp", &base.kp);
  get_num(obj, ctx, "kd", &base.kd);
  return base;
}

ModelSection parse_model(const json& obj, const std::string& ctx) {
  reject_unknown(obj, ctx,
                 {"kind", "link_len_a", "link_len_b", "twist_alpha",
                  "twist_beta", "body", "motor", "wheels", "chain"});
  ModelSection m;
  std::string kind = "planar";
  get_str(obj, ctx, "kind", &kind);
  if (kind == "planar") m.geometry.kind = LinkageKind::Planar;
  else if (kind == "bennett") m.geometry.kind = LinkageKind::Bennett;
  else if (kind == "spherical") m.geometry.kind = LinkageKind::Spherical;
  else fail(ctx + ".kind", "expected planar, bennett, or spherical");

  if (m.geometry.kind == LinkageKind::Spherical) {
    // usable spherical defaults; this kind needs zero lengths and
    // nonzero twists, the opposite of the planar defaults
    m.geometry.link_len_a = 0.0;
    m.geometry.link_len_b = 0.0;
    m.geometry.twist_alpha = deg2rad(45.0);
    m.geometry.twist_beta = deg2rad(45.0);
  }
  get_num(obj, ctx, "link_len_a", &m.geometry.link_len_a);
  get_num(obj, ctx, "link_len_b", &m.geometry.link_len_b);
  get_num(obj, ctx, "twist_alpha", &m.geometry.twist_alpha);
  get_num(obj, ctx, "twist_beta", &m.geometry.twist_beta);

  if (const json* body = find(obj, "body")) {
    if (!body->is_object()) fail(ctx + ".body", "expected an object");
    reject_unknown(*body, ctx + ".body", {"dimensions", "mass"});
    if (const json* dims = find(*body, "dimensions")) {
      if (!dims->is_array() || dims->size() != 3)
        fail(ctx + ".body.dimensions", "expected [x, y, z] meters");
      for (int i = 0; i < 3; ++i) {
        if (!(*dims)[i].is_number())
          fail(ctx + ".body.dimensions", "expected numbers");
        m.body.dimensions[i] = (*dims)[i].get<double>();
      }
    }
    get_num(*body, ctx + ".body", "mass", &m.body.mass);
    m.body.inertia = solid_box_inertia(m.body.mass, m.body.dimensions);
  }

  if (const json* motor = find(obj, "motor")) {
    if (!motor->is_object()) fail(ctx + ".motor", "expected an object");
    m.motor = parse_motor(*motor, ctx + ".motor", MotorSpec{});
  }

  if (const json* wheels = find(obj, "wheels")) {
    if (!wheels->is_object()) fail(ctx + ".wheels", "expected an object");
    reject_unknown(*wheels, ctx + ".wheels", {"radius", "motor"});
    WheelOption w;
    get_num(*wheels, ctx + ".wheels", "radius", &w.radius);
    if (const json* wm = find(*wheels, "motor"))
      w.motor = parse_motor(*wm, ctx + ".wheels.motor", w.motor);
    m.wheel = w;
  }

  std::string chain = "closed_loop";
  get_str(obj, ctx, "chain", &chain);
  if (chain == "closed_loop") m.chain = ChainForm::ClosedLoop;
  else if (chain == "pseudo_open") m.chain = ChainForm::PseudoOpen;
  else fail(ctx + ".chain", "expected closed_loop or pseudo_open");
  return m;
}

TerrainSection parse_terrain(const json& obj) {
  reject_unknown(obj, "terrain", {"type", "seed", "size", "noise_amp"});
  TerrainSection t;
  std::string type = "flat";
  get_str(obj, "terrain", "type", &type);
  if (type == "flat") t.type = TerrainSection::Type::Flat;
  else if (type == "curriculum") t.type = TerrainSection::Type::Curriculum;
  else if (type == "traverse") t.type = TerrainSection::Type::Traverse;
  else fail("terrain.type", "expected flat, curriculum, or traverse");
  get_u64(obj, "terrain", "seed", &t.seed);
  get_num(obj, "terrain", "size", &t.size);
  get_num(obj, "terrain", "noise_amp", &t.noise_amp);
  if (t.size <= 0.0) fail("terrain.size", "must be positive");
  return t;
}

SimParams parse_sim(const json& obj) {
  reject_unknown(obj, "sim",
                 {"dt", "decimation", "torque_scale", "joint_inertia",
                  "reset_joint_noise", "contact"});
  SimParams s;
  get_num(obj, "sim", "dt", &s.dt);
  get_int(obj, "sim", "decimation", &s.decimation);
  get_num(obj, "sim", "torque_scale", &s.torque_scale);
  get_num(obj, "sim", "joint_inertia", &s.joint_inertia);
  get_num(obj, "sim", "reset_joint_noise", &s.reset_joint_noise);
  if (const json* c = find(obj, "contact")) {
    if (!c->is_object()) fail("sim.contact", "expected an object");
    reject_unknown(*c, "sim.contact", {"k_n", "c_n", "c_t", "mu"});
    get_num(*c, "sim.contact", "k_n", &s.contact.k_n);
    get_num(*c, "sim.contact", "c_n", &s.contact.c_n);
    get_num(*c, "sim.contact", "c_t", &s.contact.c_t);
    get_num(*c, "sim.contact", "mu", &s.contact.mu);
  }
  if (s.dt <= 0.0) fail("sim.dt", "must be positive");
  if (s.decimation < 1) fail("sim.decimation", "must be at least 1");
  return s;
}

RewardConfig parse_rewards(const json& obj, bool has_wheels) {
  reject_unknown(obj, "rewards",
                 {"preset", "weights", "tracking_sigma", "base_height_target",
                  "episode_time_limit", "only_positive_rewards",
                  "max_contact_force", "tilt_limit"});
  std::string preset = has_wheels ? "wheel_legged" : "legged";
  get_str(obj, "rewards", "preset", &preset);
  RewardConfig r;
  if (preset == "legged") r = reward_preset(RewardPreset::Legged);
  else if (preset == "wheel_legged") r = reward_preset(RewardPreset::WheelLegged);
  else fail("rewards.preset", "expected legged or wheel_legged");

  if (const json* w = find(obj, "weights")) {
    if (!w->is_object()) fail("rewards.weights", "expected an object");
    for (const auto& item : w->items()) {
      const int idx = reward_term_index(item.key());
      if (idx < 0)
        fail("rewards.weights", "unknown reward term '" + item.key() + "'");
      if (!item.value().is_number())
        fail("rewards.weights." + item.key(), "expected a number");
      r.weights[idx] = item.value().get<double>();
    }
  }
  get_num(obj, "rewards", "tracking_sigma", &r.tracking_sigma);
  get_num(obj, "rewards", "base_height_target", &r.base_height_target);
  get_num(obj, "rewards", "episode_time_limit", &r.episode_time_limit);
  get_num(obj, "rewards", "max_contact_force", &r.max_contact_force);
  get_num(obj, "rewards", "tilt_limit", &r.tilt_limit);
  get_bool(obj, "rewards", "only_positive_rewards", &r.only_positive_rewards);
  return r;
}

PolicySpec parse_policy(const json& obj) {
  reject_unknown(obj, "policy",
                 {"hidden", "action_scale", "wheel_action_scale",
                  "init_log_std"});
  PolicySpec p;
  if (const json* h = find(obj, "hidden")) {
    if (!h->is_array() || h->empty())
      fail("policy.hidden", "expected a non-empty array of layer widths");
    p.hidden.clear();
    for (const auto& v : *h) {
      if (!v.is_number_integer() || v.get<int>() < 1)
        fail("policy.hidden", "layer widths must be positive integers");
      p.hidden.push_back(v.get<int>());
    }
  }
  get_num(obj, "policy", "action_scale", &p.action_scale);
  get_num(obj, "policy", "wheel_action_scale", &p.wheel_action_scale);
  get_num(obj, "policy", "init_log_std", &p.init_log_std);
  return p;
}

TrainerConfig parse_trainer(const json& obj) {
  reject_unknown(obj, "trainer",
                 {"env_count", "rollout_steps", "gamma", "gae_lambda",
                  "clip_eps", "lr", "epochs", "minibatches", "entropy_coef",
                  "value_coef", "max_grad_norm", "iterations", "seed",
                  "workers", "checkpoint_every"});
  TrainerConfig t;
  t.seed = 0;  // 0: inherit the experiment seed
  get_int(obj, "trainer", "env_count", &t.env_count);
  get_int(obj, "trainer", "rollout_steps", &t.rollout_steps);
  get_num(obj, "trainer", "gamma", &t.gamma);
  get_num(obj, "trainer", "gae_lambda", &t.gae_lambda);
  get_num(obj, "trainer", "clip_eps", &t.clip_eps);
  get_num(obj, "trainer", "lr", &t.lr);
  get_int(obj, "trainer", "epochs", &t.epochs);
  get_int(obj, "trainer", "minibatches", &t.minibatches);
  get_num(obj, "trainer", "entropy_coef", &t.entropy_coef);
  get_num(obj, "trainer", "value_coef", &t.value_coef);
  get_num(obj, "trainer", "max_grad_norm", &t.max_grad_norm);
  get_int(obj, "trainer", "iterations", &t.iterations);
  get_u64(obj, "trainer", "seed", &t.seed);
  get_int(obj, "trainer", "workers", &t.workers);
  get_int(obj, "trainer", "checkpoint_every", &t.checkpoint_every);
  if (t.env_count < 1) fail("trainer.env_count", "must be positive");
  if (t.rollout_steps < 1) fail("trainer.rollout_steps", "must be positive");
  if (t.iterations < 1) fail("trainer.iterations", "must be positive");
  if (t.workers < 1) fail("trainer.workers", "must be positive");
  if (t.minibatches < 1) fail("trainer.minibatches", "must be positive");
  if (t.epochs < 1) fail("trainer.epochs", "must be positive");
  return t;
}

BenchSection parse_bench(const json& obj) {
  reject_unknown(obj, "bench",
                 {"n_robots", "seed", "timeout", "command_speed", "bin_width",
                  "direction", "stochastic_actions", "instantaneous_cot",
                  "runs"});
  BenchSection b;
  b.traverse.seed = 0;  // 0: inherit the experiment seed
  get_int(obj, "bench", "n_robots", &b.traverse.n_robots);
  get_u64(obj, "bench", "seed", &b.traverse.seed);
  get_num(obj, "bench", "timeout", &b.traverse.timeout);
  get_num(obj, "bench", "command_speed", &b.traverse.command_speed);
  get_num(obj, "bench", "bin_width", &b.traverse.bin_width);
  get_bool(obj, "bench", "stochastic_actions", &b.traverse.stochastic_actions);
  get_bool(obj, "bench", "instantaneous_cot", &b.traverse.instantaneous_cot);
  std::string dir = "forward";
  get_str(obj, "bench", "direction", &dir);
  if (dir == "forward") b.direction = TraverseDirection::Forward;
  else if (dir == "sideways") b.direction = TraverseDirection::Sideways;
  else fail("bench.direction", "expected forward or sideways");
  if (b.traverse.n_robots < 1) fail("bench.n_robots", "must be positive");
  if (b.traverse.bin_width <= 0.0) fail("bench.bin_width", "must be positive");

  if (const json* runs = find(obj, "runs")) {
    if (!runs->is_array()) fail("bench.runs", "expected an array");
    int i = 0;
    for (const auto& r : *runs) {
      const std::string ctx = "bench.runs[" + std::to_string(i) + "]";
      if (!r.is_object()) fail(ctx, "expected an object");
      reject_unknown(r, ctx, {"label", "checkpoint", "model"});
      BenchRun run;
      get_str(r, ctx, "label", &run.label);
      get_str(r, ctx, "checkpoint", &run.checkpoint);
      if (const json* m = find(r, "model")) {
        if (!m->is_object()) fail(ctx + ".model", "expected an object");
        run.model = parse_model(*m, ctx + ".model");
      }
      b.runs.push_back(std::move(run));
      ++i;
    }
  }
  return b;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text,
                                   const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  if (!j.is_object()) fail(origin, "top level must be an object");
  reject_unknown(j, origin,
                 {"schema_version", "seed", "output_dir", "model", "terrain",
                  "sim", "rewards", "policy", "trainer", "fixed_command",
                  "bench"});

  const json* ver = find(j, "schema_version");
  if (!ver) fail(origin, "missing schema_version");
  if (!ver->is_number_integer() || ver->get<int>() != kConfigSchemaVersion)
    fail(origin + ".schema_version",
         "expected " + std::to_string(kConfigSchemaVersion));

  ExperimentConfig cfg;
  get_u64(j, origin, "seed", &cfg.seed);
  get_str(j, origin, "output_dir", &cfg.output_dir);

  bool has_wheels = false;
  if (const json* m = find(j, "model")) {
    if (!m->is_object()) fail("model", "expected an object");
    cfg.model = parse_model(*m, "model");
    has_wheels = cfg.model.wheel.has_value();
  }
  if (const json* t = find(j, "terrain")) {
    if (!t->is_object()) fail("terrain", "expected an object");
    cfg.terrain = parse_terrain(*t);
  }
  if (const json* s = find(j, "sim")) {
    if (!s->is_object()) fail("sim", "expected an object");
    cfg.sim = parse_sim(*s);
  }
  cfg.rewards = reward_preset(has_wheels ? RewardPreset::WheelLegged
                                         : RewardPreset::Legged);
  if (const json* r = find(j, "rewards")) {
    if (!r->is_object()) fail("rewards", "expected an object");
    cfg.rewards = parse_rewards(*r, has_wheels);
  }
  if (const json* p = find(j, "policy")) {
    if (!p->is_object()) fail("policy", "expected an object");
    cfg.policy = parse_policy(*p);
  }
  cfg.trainer.seed = 0;
  if (const json* t = find(j, "trainer")) {
    if (!t->is_object()) fail("trainer", "expected an object");
    cfg.trainer = parse_trainer(*t);
  }
  if (const json* c = find(j, "fixed_command")) {
    if (!c->is_array() || c->size() != 3)
      fail("fixed_command", "expected [vx, vy, heading]");
    for (const auto& v : *c)
      if (!v.is_number()) fail("fixed_command", "expected numbers");
    cfg.fixed_command =
        Command{(*c)[0].get<double>(), (*c)[1].get<double>(),
                (*c)[2].get<double>()};
  }
  if (const json* b = find(j, "bench")) {
    if (!b->is_object()) fail("bench", "expected an object");
    cfg.bench = parse_bench(*b);
  }

  // Late defaults: zero seeds inherit the experiment seed.
  if (cfg.terrain.seed == 0) cfg.terrain.seed = cfg.seed;
  if (cfg.trainer.seed == 0) cfg.trainer.seed = cfg.seed;
  if (cfg.bench.traverse.seed == 0) cfg.bench.traverse.seed = cfg.seed;
  cfg.policy.wheel_joints = has_wheels ? 4 : 0;
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read config file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str(), path);
}

RobotModel build_model(const ModelSection& m) {
  RobotModel model =
      assemble_quadruped(m.geometry, m.body, m.motor, m.wheel);
  if (m.chain == ChainForm::PseudoOpen) model = to_pseudo_open_chain(model);
  return model;
}

std::string resolve_under_output_root(const std::string& dir) {
  std::filesystem::path p(dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv("OCLAB_OUT")) p = root / p;
  }
  return p.string();
}

std::string resolve_output_dir(const ExperimentConfig& cfg) {
  return resolve_under_output_root(cfg.output_dir);
}

void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  std::error_code ec;
  if (target.has_parent_path()) {
    fs::create_directories(target.parent_path(), ec);
    if (ec) throw IoError("cannot create " + target.parent_path().string() +
                          ": " + ec.message());
  }
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f << content;
    f.flush();
    if (!f) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, target, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path +
                        ": " + ec.message());
}

}  // namespace ocl
