// oclab: command-line front end for the locomotion laboratory. One JSON
// config drives model tooling, terrain generation, training, benchmarking,
// and plotting; flags only override scalar fields. Exit codes: 0 success,
// 1 validation failure, 2 usage or I/O failure, 3 numerical failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "ocl/bench.hpp"
#include "ocl/config.hpp"
#include "ocl/learn.hpp"
#include "ocl/morphology.hpp"
#include "ocl/rewards.hpp"
#include "ocl/simcore.hpp"
#include "ocl/terrain.hpp"

using namespace ocl;
using nlohmann::json;

namespace {

void diag(const std::string& status, const std::string& error,
          const std::string& detail) {
  json j;
  j["status"] = status;
  if (!error.empty()) j["error"] = error;
  if (!detail.empty()) j["detail"] = detail;
  std::cout << j.dump() << "\n";
}

/// Runs a command body and maps exceptions onto the exit-code contract.
template <typename F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    diag("invalid", "ConfigError", e.what());
    return 1;
  } catch (const KinematicsError& e) {
    diag("invalid", "KinematicsError", e.what());
    return 1;
  } catch (const DescriptionError& e) {
    diag("invalid", "DescriptionError", e.what());
    return 1;
  } catch (const MismatchedBinning& e) {
    diag("invalid", "MismatchedBinning", e.what());
    return 1;
  } catch (const NonFiniteLoss& e) {
    diag("numerical", "NonFiniteLoss", e.what());
    return 3;
  } catch (const SpeedBelowFloor& e) {
    diag("numerical", "SpeedBelowFloor", e.what());
    return 3;
  } catch (const IoError& e) {
    diag("io", "IoError", e.what());
    return 2;
  } catch (const std::exception& e) {
    diag("error", "Error", e.what());
    return 2;
  }
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// --- model ------------------------------------------------------------------

int cmd_model_validate(const std::string& config_path) {
  const ExperimentConfig cfg = load_config_file(config_path);
  const GeometryCheck check = validate_geometry(cfg.model.geometry);
  if (!check.ok()) {
    diag("invalid", to_string(check.fault), check.message);
    return 1;
  }
  const RobotModel model = build_model(cfg.model);  // throws on deeper faults
  json j;
  j["status"] = "ok";
  j["kind"] = to_string(model.limbs[0].geometry.kind);
  j["chain"] = model.chain == ChainForm::ClosedLoop ? "closed_loop"
                                                    : "pseudo_open";
  j["joints"] = model.joint_count();
  j["foothold_ratio"] = foothold_width(model, nominal_stance(model)).ratio;
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_model_emit(const std::string& config_path, std::string out,
                   bool convert) {
  const ExperimentConfig cfg = load_config_file(config_path);
  RobotModel model = build_model(cfg.model);
  if (convert) model = to_pseudo_open_chain(model);
  if (out.empty())
    out = resolve_output_dir(cfg) +
          (convert ? "/model_open_chain.xml" : "/model.xml");
  else
    out = resolve_under_output_root(out);
  write_file_atomic(out, emit_description(model));
  json j;
  j["status"] = "ok";
  j["file"] = out;
  j["chain"] = model.chain == ChainForm::ClosedLoop ? "closed_loop"
                                                    : "pseudo_open";
  std::cout << j.dump() << "\n";
  return 0;
}

// --- terrain ----------------------------------------------------------------

int cmd_terrain_gen(const std::string& which, uint64_t seed,
                    std::string out_dir, double noise_amp) {
  out_dir = resolve_under_output_root(out_dir);
  json summary;
  std::stringstream field_csv;
  const std::string field_path = out_dir + "/" + which + "_heightfield.csv";

  if (which == "curriculum") {
    const Curriculum cur = make_curriculum(seed);
    write_csv(cur.field, field_csv);
    std::array<int, 5> hist{};
    json kinds = json::array();
    for (TerrainKind k : cur.grid.column_kinds) {
      ++hist[static_cast<int>(k)];
      kinds.push_back(to_string(k));
    }
    summary["type"] = "curriculum";
    summary["tile_size"] = cur.grid.tile_size;
    summary["cols"] = CurriculumGrid::kCols;
    summary["rows"] = CurriculumGrid::kRows;
    summary["histogram"] = hist;  // smooth, rough, up, down, discrete
    summary["histogram_kinds"] = {"smooth_slope", "rough_slope", "stairs_up",
                                  "stairs_down", "discrete"};
    summary["column_kinds"] = kinds;
  } else {
    const Heightfield course = make_traverse_course(seed, 32.0, noise_amp);
    write_csv(course, field_csv);
    summary["type"] = "traverse";
    summary["course_length"] = 24.0;
    summary["block_depth"] = 6.0;
    summary["blocks"] = {"flat", "flat", "smooth_slope", "rough_slope"};
    summary["smooth_slope_rate"] = 0.25;
    summary["smooth_plateau"] = 2.0;
    summary["rough_plateau"] = 0.625;
    summary["noise_amp"] = noise_amp;
    summary["width"] = course.width();
  }
  summary["seed"] = seed;
  summary["heightfield"] = field_path;

  write_file_atomic(field_path, field_csv.str());
  write_file_atomic(out_dir + "/" + which + "_summary.json",
                    summary.dump(2) + "\n");
  std::cout << summary.dump() << "\n";
  return 0;
}

// --- train ------------------------------------------------------------------

int cmd_train(const std::string& config_path, int iterations_override,
              int workers_override, int64_t seed_override,
              const std::string& resume, std::string out_dir) {
  ExperimentConfig cfg = load_config_file(config_path);
  if (seed_override >= 0) {
    cfg.seed = static_cast<uint64_t>(seed_override);
    cfg.trainer.seed = cfg.seed;
    cfg.terrain.seed = cfg.seed;
  }
  if (iterations_override > 0) cfg.trainer.iterations = iterations_override;
  if (workers_override > 0) cfg.trainer.workers = workers_override;
  out_dir = out_dir.empty() ? resolve_output_dir(cfg)
                            : resolve_under_output_root(out_dir);

  const RobotModel model = build_model(cfg.model);

  Heightfield field;
  Curriculum curriculum;
  VecEnvConfig ecfg;
  ecfg.env_count = cfg.trainer.env_count;
  ecfg.seed = cfg.seed;
  ecfg.workers = cfg.trainer.workers;
  ecfg.action_scale = cfg.policy.action_scale;
  ecfg.wheel_action_scale = cfg.policy.wheel_action_scale;
  ecfg.fixed_command = cfg.fixed_command;

  std::unique_ptr<VecEnv> env;
  switch (cfg.terrain.type) {
    case TerrainSection::Type::Flat:
      field = make_flat(cfg.terrain.size, cfg.terrain.size);
      env = std::make_unique<VecEnv>(model, &field, cfg.sim, cfg.rewards,
                                     ecfg);
      break;
    case TerrainSection::Type::Curriculum:
      curriculum = make_curriculum(cfg.terrain.seed);
      env = std::make_unique<VecEnv>(model, &curriculum, cfg.sim, cfg.rewards,
                                     ecfg);
      break;
    case TerrainSection::Type::Traverse:
      field = make_traverse_course(cfg.terrain.seed, 32.0,
                                   cfg.terrain.noise_amp);
      env = std::make_unique<VecEnv>(model, &field, cfg.sim, cfg.rewards,
                                     ecfg);
      break;
  }

  PolicySpec spec = cfg.policy;
  spec.obs_dim = env->obs_dim();
  spec.act_dim = env->act_dim();
  Rng policy_rng(cfg.trainer.seed);
  Policy policy(spec, policy_rng);

  TrainPaths paths;
  paths.log_csv = out_dir + "/train_log.csv";
  paths.checkpoint_prefix = out_dir + "/checkpoint";
  write_file_atomic(out_dir + "/.keep", "");  // fail early if unwritable

  const TrainRunStats stats =
      train(*env, policy, cfg.trainer, paths, resume, &std::cout);

  json j;
  j["status"] = "ok";
  j["iterations"] = stats.iterations_run;
  j["final_mean_reward"] = stats.final_mean_reward;
  j["final_mean_speed"] = stats.final_mean_speed;
  j["log"] = paths.log_csv;
  j["last_checkpoint"] = stats.last_checkpoint;
  write_file_atomic(out_dir + "/train_summary.json", j.dump(2) + "\n");
  std::cout << j.dump() << "\n";
  return 0;
}

// --- bench ------------------------------------------------------------------

int cmd_bench(const std::string& config_path,
              std::vector<std::string> checkpoints,
              const std::string& direction_override, std::string out_dir) {
  ExperimentConfig cfg = load_config_file(config_path);
  out_dir = out_dir.empty() ? resolve_output_dir(cfg)
                            : resolve_under_output_root(out_dir);
  TraverseDirection direction = cfg.bench.direction;
  if (direction_override == "forward") direction = TraverseDirection::Forward;
  else if (direction_override == "sideways")
    direction = TraverseDirection::Sideways;
  else if (!direction_override.empty())
    throw std::runtime_error("--direction must be forward or sideways");

  std::vector<BenchRun> runs = cfg.bench.runs;
  if (runs.empty()) {
    runs.resize(std::max<size_t>(1, checkpoints.size()));
    for (BenchRun& r : runs) r.model = cfg.model;
  }
  if (!checkpoints.empty()) {
    if (checkpoints.size() != runs.size())
      throw std::runtime_error(
          "got " + std::to_string(checkpoints.size()) +
          " --checkpoint flags for " + std::to_string(runs.size()) +
          " bench runs");
    for (size_t i = 0; i < runs.size(); ++i)
      runs[i].checkpoint = checkpoints[i];
  }

  // Load everything before writing anything: a missing checkpoint must not
  // leave partial outputs behind.
  std::vector<RobotModel> models;
  std::vector<Policy> policies;
  for (const BenchRun& r : runs) {
    if (r.checkpoint.empty())
      throw std::runtime_error("bench run has no checkpoint path");
    models.push_back(build_model(r.model ? *r.model : cfg.model));
    policies.push_back(load_policy_file(r.checkpoint));
    const Heightfield probe = make_flat(4.0, 4.0);
    const Simulator sim(models.back(), &probe);
    if (policies.back().spec().obs_dim != sim.observation_size() ||
        policies.back().spec().act_dim != sim.joint_count())
      throw ConfigError("checkpoint " + r.checkpoint +
                        " does not match the bench run's model dimensions");
  }

  std::vector<TraverseResult> results;
  for (size_t i = 0; i < runs.size(); ++i) {
    TraverseConfig tc = cfg.bench.traverse;
    tc.label = runs[i].label;
    results.push_back(run_traverse(policies[i], models[i], direction, tc));
  }
  const BenchReport report = compare(results, 0);

  for (const TraverseResult& r : results) {
    std::stringstream ss;
    export_metrics_csv(r, ss);
    write_file_atomic(out_dir + "/metrics_" + r.morphology + ".csv",
                      ss.str());
  }
  std::stringstream curves, rep;
  export_curves_csv(report, curves);
  export_report_csv(report, rep);
  write_file_atomic(out_dir + "/curves.csv", curves.str());
  write_file_atomic(out_dir + "/report.csv", rep.str());

  std::vector<PlotSeries> speed_series, cot_series;
  for (const MorphologySummary& m : report.morphologies) {
    speed_series.push_back({m.name, report.bin_centers, m.curve_speed});
    cot_series.push_back({m.name, report.bin_centers, m.curve_cot});
  }
  std::stringstream speed_svg, cot_svg;
  write_svg_plot(speed_svg, "mean speed vs distance", "distance [m]",
                 "speed [m/s]", speed_series);
  write_svg_plot(cot_svg, "cost of transport vs distance", "distance [m]",
                 "COT", cot_series);
  write_file_atomic(out_dir + "/speed.svg", speed_svg.str());
  write_file_atomic(out_dir + "/cot.svg", cot_svg.str());

  json j;
  j["status"] = "ok";
  j["direction"] = to_string(direction);
  j["report"] = out_dir + "/report.csv";
  json morphs = json::array();
  for (const MorphologySummary& m : report.morphologies) {
    json e;
    e["name"] = m.name;
    e["completed"] = m.completed;
    e["dnf"] = m.dnf;
    e["savings_pct"] = m.savings_pct;
    e["foothold_ratio"] = m.foothold.ratio;
    morphs.push_back(e);
  }
  j["morphologies"] = morphs;
  std::cout << j.dump() << "\n";
  return 0;
}

// --- plot -------------------------------------------------------------------

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  return cells;
}

int cmd_plot(const std::string& curves_path, const std::string& log_path,
             std::string out_dir) {
  out_dir = resolve_under_output_root(out_dir);
  if (curves_path.empty() && log_path.empty())
    throw std::runtime_error("plot needs --curves and/or --train-log");
  json j;
  j["status"] = "ok";

  if (!curves_path.empty()) {
    std::stringstream in(read_file(curves_path));
    std::string line;
    if (!std::getline(in, line))
      throw std::runtime_error(curves_path + ": empty curves file");
    const std::vector<std::string> head = split_csv_line(line);
    if (head.empty() || head[0] != "bin_center_m" || head.size() % 2 == 0)
      throw std::runtime_error(curves_path + ": not a curves.csv header");
    const size_t n_morphs = (head.size() - 1) / 2;
    std::vector<PlotSeries> speed(n_morphs), cots(n_morphs);
    for (size_t m = 0; m < n_morphs; ++m) {
      std::string name = head[1 + 2 * m];
      const std::string suffix = "_mean_speed";
      if (name.size() > suffix.size() &&
          name.compare(name.size() - suffix.size(), suffix.size(), suffix) ==
              0)
        name = name.substr(0, name.size() - suffix.size());
      speed[m].name = name;
      cots[m].name = name;
    }
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const std::vector<std::string> cells = split_csv_line(line);
      if (cells.size() != head.size())
        throw std::runtime_error(curves_path + ": ragged row");
      const double x = std::stod(cells[0]);
      for (size_t m = 0; m < n_morphs; ++m) {
        speed[m].x.push_back(x);
        speed[m].y.push_back(std::stod(cells[1 + 2 * m]));
        cots[m].x.push_back(x);
        cots[m].y.push_back(std::stod(cells[2 + 2 * m]));
      }
    }
    std::stringstream sp, cp;
    write_svg_plot(sp, "mean speed vs distance", "distance [m]",
                   "speed [m/s]", speed);
    write_svg_plot(cp, "cost of transport vs distance", "distance [m]", "COT",
                   cots);
    write_file_atomic(out_dir + "/speed.svg", sp.str());
    write_file_atomic(out_dir + "/cot.svg", cp.str());
    j["speed_svg"] = out_dir + "/speed.svg";
    j["cot_svg"] = out_dir + "/cot.svg";
  }

  if (!log_path.empty()) {
    std::stringstream in(read_file(log_path));
    std::string line;
    if (!std::getline(in, line))
      throw std::runtime_error(log_path + ": empty log file");
    const std::vector<std::string> head = split_csv_line(line);
    size_t it_col = 0, rew_col = 1;
    bool found = false;
    for (size_t i = 0; i + 1 < head.size(); ++i)
      if (head[i] == "iteration" && head[i + 1] == "mean_reward") {
        it_col = i;
        rew_col = i + 1;
        found = true;
      }
    if (!found)
      throw std::runtime_error(log_path + ": not a training log header");
    PlotSeries reward{"mean reward", {}, {}};
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const std::vector<std::string> cells = split_csv_line(line);
      if (cells.size() <= rew_col) continue;
      reward.x.push_back(std::stod(cells[it_col]));
      reward.y.push_back(std::stod(cells[rew_col]));
    }
    std::stringstream rp;
    write_svg_plot(rp, "training reward", "iteration", "mean reward",
                   {reward});
    write_file_atomic(out_dir + "/reward.svg", rp.str());
    j["reward_svg"] = out_dir + "/reward.svg";
  }
  std::cout << j.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "oclab — reconfigurable-limb quadruped locomotion laboratory"};
  app.require_subcommand(1);

  // model
  auto* model = app.add_subcommand("model", "model validation and export");
  model->require_subcommand(1);
  std::string model_config, model_out;
  auto* validate =
      model->add_subcommand("validate", "check the configured geometry");
  validate->add_option("config", model_config, "experiment config JSON")
      ->required();
  auto* exp = model->add_subcommand(
      "export", "write the model description (URDF dialect)");
  exp->add_option("config", model_config, "experiment config JSON")
      ->required();
  exp->add_option("--out", model_out, "output file path");
  auto* convert = model->add_subcommand(
      "convert", "write the pseudo-open-chain equivalent description");
  convert->add_option("config", model_config, "experiment config JSON")
      ->required();
  convert->add_option("--out", model_out, "output file path");

  // terrain
  auto* terrain = app.add_subcommand("terrain", "heightfield generation");
  terrain->require_subcommand(1);
  auto* gen = terrain->add_subcommand("gen", "generate a terrain");
  gen->require_subcommand(1);
  uint64_t terrain_seed = 1;
  std::string terrain_out = "terrain";
  double terrain_noise = 0.05;
  auto* gen_cur =
      gen->add_subcommand("curriculum", "20x5 difficulty-graded tile grid");
  auto* gen_trav =
      gen->add_subcommand("traverse", "24 m four-block benchmark course");
  for (CLI::App* g : {gen_cur, gen_trav}) {
    g->add_option("--seed", terrain_seed, "generation seed");
    g->add_option("--out", terrain_out, "output directory");
  }
  gen_trav->add_option("--noise-amp", terrain_noise,
                       "rough-block noise amplitude, m");

  // train
  auto* train_cmd = app.add_subcommand("train", "PPO training run");
  std::string train_config, train_resume, train_out;
  int train_iters = 0, train_workers = 0;
  int64_t train_seed = -1;
  train_cmd->add_option("--config", train_config, "experiment config JSON")
      ->required();
  train_cmd->add_option("--iterations", train_iters,
                        "override trainer.iterations");
  train_cmd->add_option("--workers", train_workers,
                        "override trainer.workers (results are identical "
                        "for any value)");
  train_cmd->add_option("--seed", train_seed, "override the experiment seed");
  train_cmd->add_option("--resume", train_resume,
                        "checkpoint file to resume from");
  train_cmd->add_option("--out", train_out, "override the output directory");

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "traverse benchmark");
  std::string bench_config, bench_direction, bench_out;
  std::vector<std::string> bench_checkpoints;
  bench_cmd->add_option("--config", bench_config, "experiment config JSON")
      ->required();
  bench_cmd->add_option("--checkpoint", bench_checkpoints,
                        "policy checkpoint (repeat per bench run)");
  bench_cmd->add_option("--direction", bench_direction,
                        "forward or sideways");
  bench_cmd->add_option("--out", bench_out, "override the output directory");

  // plot
  auto* plot_cmd = app.add_subcommand("plot", "render CSV artifacts as SVG");
  std::string plot_curves, plot_log, plot_out = ".";
  plot_cmd->add_option("--curves", plot_curves, "curves.csv from bench");
  plot_cmd->add_option("--train-log", plot_log, "train_log.csv from train");
  plot_cmd->add_option("--out", plot_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;  // usage problems exit 2, --help exits 0
  }

  if (validate->parsed())
    return guarded([&] { return cmd_model_validate(model_config); });
  if (exp->parsed())
    return guarded([&] { return cmd_model_emit(model_config, model_out,
                                               false); });
  if (convert->parsed())
    return guarded([&] { return cmd_model_emit(model_config, model_out,
                                               true); });
  if (gen_cur->parsed())
    return guarded([&] {
      return cmd_terrain_gen("curriculum", terrain_seed, terrain_out,
                             terrain_noise);
    });
  if (gen_trav->parsed())
    return guarded([&] {
      return cmd_terrain_gen("traverse", terrain_seed, terrain_out,
                             terrain_noise);
    });
  if (train_cmd->parsed())
    return guarded([&] {
      return cmd_train(train_config, train_iters, train_workers, train_seed,
                       train_resume, train_out);
    });
  if (bench_cmd->parsed())
    return guarded([&] {
      return cmd_bench(bench_config, bench_checkpoints, bench_direction,
                       bench_out);
    });
  if (plot_cmd->parsed())
    return guarded([&] { return cmd_plot(plot_curves, plot_log, plot_out); });
  return 2;
}
