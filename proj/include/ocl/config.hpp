#pragma once
// Experiment configuration: one JSON document drives model construction,
// terrain choice, sim parameters, reward shaping, the trainer, and the
// benchmark. The schema is strict — unknown keys, wrong types, and version
// mismatches are rejected up front so a config that loads is a config that
// runs.

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocl/bench.hpp"
#include "ocl/learn.hpp"
#include "ocl/morphology.hpp"
#include "ocl/rewards.hpp"
#include "ocl/simcore.hpp"

namespace ocl {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr int kConfigSchemaVersion = 1;

struct ModelSection {
  LinkageGeometry geometry;
  BodyConfig body;
  MotorSpec motor;
  std::optional<WheelOption> wheel;
  ChainForm chain = ChainForm::ClosedLoop;
};

struct TerrainSection {
  enum class Type { Flat, Curriculum, Traverse };
  Type type = Type::Flat;
  uint64_t seed = 0;        // 0 falls back to the experiment seed
  double size = 40.0;       // flat extent, m
  double noise_amp = 0.05;  // traverse rough-block noise, m
};

struct BenchRun {
  std::string label;
  std::string checkpoint;
  std::optional<ModelSection> model;  // defaults to the experiment model
};

struct BenchSection {
  TraverseConfig traverse;  // traverse.seed == 0 falls back to experiment seed
  TraverseDirection direction = TraverseDirection::Forward;
  std::vector<BenchRun> runs;  // empty: one run on the experiment model
};

struct ExperimentConfig {
  uint64_t seed = 1;
  std::string output_dir = "out";
  ModelSection model;
  TerrainSection terrain;
  SimParams sim;
  RewardConfig rewards;  // preset resolved and overrides applied at parse
  PolicySpec policy;     // obs/act dims filled in at run time
  TrainerConfig trainer;
  std::optional<Command> fixed_command;  // evaluation-style training runs
  BenchSection bench;
};

/// Parse and validate a config document. `origin` names the source in
/// diagnostics. Throws ConfigError on syntax, schema, type, or range
/// problems.
ExperimentConfig parse_config_text(const std::string& text,
                                   const std::string& origin = "config");

/// Reads the file (IoError when unreadable) and parses it.
ExperimentConfig load_config_file(const std::string& path);

/// Assemble the robot, applying the chain conversion when requested.
/// Throws KinematicsError on invalid geometry.
RobotModel build_model(const ModelSection& m);

/// A relative output path joins under $OCLAB_OUT when that is set; absolute
/// paths and unset environments pass through unchanged.
std::string resolve_under_output_root(const std::string& dir);

/// resolve_under_output_root applied to the configured output_dir.
std::string resolve_output_dir(const ExperimentConfig& cfg);

/// Create parent directories and write via temp-file-then-rename so a
/// re-run never leaves a half-written artifact. Throws IoError.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace ocl
