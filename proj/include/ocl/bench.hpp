#pragma once
// Traverse benchmark: a squad of robots walks the four-block course under a
// constant 1 m/s command while we record trajectories, distance-binned speed
// and cost-of-transport curves, and cross-morphology comparison reports.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocl/learn.hpp"
#include "ocl/morphology.hpp"
#include "ocl/simcore.hpp"
#include "ocl/terrain.hpp"

namespace ocl {

struct SpeedBelowFloor : std::runtime_error {
  explicit SpeedBelowFloor(double v)
      : std::runtime_error("SpeedBelowFloor: " + std::to_string(v) +
                           " m/s is under the 0.05 m/s COT floor") {}
};

struct MismatchedBinning : std::runtime_error {
  explicit MismatchedBinning(const std::string& what)
      : std::runtime_error("MismatchedBinning: " + what) {}
};

/// Below this speed the COT denominator is considered degenerate and the
/// bin is marked invalid instead of reported.
constexpr double kCotSpeedFloor = 0.05;  // m/s

/// Cost of transport P / (m g v). Throws SpeedBelowFloor under the floor.
double cot(double power, double mass, double gravity, double speed);

enum class TraverseDirection { Forward, Sideways };

const char* to_string(TraverseDirection d);

struct TraverseConfig {
  int n_robots = 30;
  uint64_t seed = 1;            // course noise + action sampling
  double timeout = 120.0;       // s, 3x the slowest reference completion
  double command_speed = 1.0;   // m/s along world +y
  double course_length = 24.0;  // m, completion when base y passes this
  double bin_width = 0.5;       // m
  bool stochastic_actions = true;  // sample the policy vs use its mean
  /// COT per bin from bin-mean power over bin-mean speed by default; set to
  /// average the per-tick instantaneous COT instead.
  bool instantaneous_cot = false;
  std::string label;  // defaults to the linkage kind name
};

struct TrajectorySample {
  double t = 0.0;
  double x = 0.0, y = 0.0, z = 0.0;
  double speed = 0.0;  // horizontal, m/s
  double power = 0.0;  // W, tick mean
};

struct EpisodeMetrics {
  int robot_id = 0;
  std::vector<TrajectorySample> trajectory;  // one row per control tick
  bool completed = false;
  double completion_time = 0.0;   // s, valid when completed
  double total_energy = 0.0;      // J, simulator accumulator at episode end
  double integrated_power = 0.0;  // J, sum of tick power * tick dt
  std::vector<double> bin_speed;  // m/s per distance bin, NaN if unvisited
  std::vector<double> bin_cot;    // NaN if unvisited or below speed floor
};

/// Reference completion times reported for full-scale forward walking
/// (Bennett / planar / spherical); recorded in reports for context only,
/// this desk-scale model is not expected to reproduce them.
constexpr double kReferenceCompletionBennett = 35.45;    // s
constexpr double kReferenceCompletionPlanar = 38.28;     // s
constexpr double kReferenceCompletionSpherical = 44.91;  // s

struct TraverseResult {
  std::string morphology;
  TraverseDirection direction = TraverseDirection::Forward;
  uint64_t course_seed = 0;
  double bin_width = 0.5;
  double course_length = 24.0;
  double robot_mass = 0.0;     // kg
  double gravity = 9.81;       // m/s^2
  FootholdMetrics foothold;    // at the nominal stance
  std::vector<EpisodeMetrics> robots;

  int bin_count() const;
  double bin_center(int k) const { return (k + 0.5) * bin_width; }
};

/// Runs n identical robots over make_traverse_course(seed). Forward spawns
/// the body facing +y and commands body-x speed; Sideways faces +x and
/// commands body-y speed. A robot ends by crossing course_length (complete)
/// or by falling / timing out (DNF — recorded, not an error). Deterministic
/// for a fixed config; robots differ only through action sampling.
TraverseResult run_traverse(Policy& policy, const RobotModel& model,
                            TraverseDirection direction,
                            const TraverseConfig& cfg = {});

struct MorphologySummary {
  std::string name;
  int completed = 0;
  int dnf = 0;
  double mean_completion = 0.0;  // s over completers, NaN if none
  double sd_completion = 0.0;
  double mean_energy = 0.0;      // J over completers, NaN if none
  double sd_energy = 0.0;
  double mean_cot = 0.0;         // E/(m g d) over completers, NaN if none
  double savings_pct = 0.0;      // 100*(1 - E/E_baseline), NaN if undefined
  FootholdMetrics foothold;
  std::vector<double> curve_speed;  // per-bin mean over robots seen in bin
  std::vector<double> curve_cot;
  std::vector<int> curve_count;     // contributing robots per bin
};

struct BenchReport {
  double bin_width = 0.5;
  uint64_t course_seed = 0;
  int baseline = 0;  // index into morphologies
  std::vector<double> bin_centers;
  std::vector<MorphologySummary> morphologies;
};

/// Aggregates per-morphology runs sharing one course seed and binning into
/// curves, completion tables and pairwise energy savings against
/// morphologies[baseline]. Throws MismatchedBinning when the runs do not
/// share course seed, bin width, or course length.
BenchReport compare(const std::vector<TraverseResult>& results,
                    int baseline = 0);

/// metrics.csv: robot_id,t,x,y,z,speed,power — all robots, env-index order.
void export_metrics_csv(const TraverseResult& result, std::ostream& os);
std::vector<EpisodeMetrics> read_metrics_csv(std::istream& is);

/// curves.csv: bin_center_m then <name>_mean_speed,<name>_mean_cot per
/// morphology. Invalid bins are written as nan.
void export_curves_csv(const BenchReport& report, std::ostream& os);

/// report.csv: one row per morphology with completion, energy, savings and
/// foothold columns; a leading comment line documents the savings formula.
void export_report_csv(const BenchReport& report, std::ostream& os);

struct PlotSeries {
  std::string name;
  std::vector<double> x, y;  // NaN points are skipped
};

/// Minimal line plot, one polyline per series, with axis labels and a
/// legend. Well-formed standalone SVG.
void write_svg_plot(std::ostream& os, const std::string& title,
                    const std::string& x_label, const std::string& y_label,
                    const std::vector<PlotSeries>& series);

}  // namespace ocl
